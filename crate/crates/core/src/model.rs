//! The planning-enhanced policy: state encoder, single-action planner
//! (discrete policy, GRU world model, stop predictor), recovery head,
//! per-action path decoder and ensemble aggregation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::domain::{DialogStateVector, MacroAction};
use crate::error::{PedpError, Result};
use crate::optim::glorot;
use crate::sampling::{self, GumbelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedpConfig {
    /// State width `S`.
    pub state_width: usize,
    /// Embedding width `H`.
    pub hidden: usize,
    /// Action count `M`.
    pub actions: usize,
    /// Planned paths `K`.
    pub paths: usize,
    /// Planning horizon cap.
    pub max_plan_len: usize,
    /// Action-embedding width `E`.
    pub action_embedding: usize,
    pub decoder_hidden: usize,
    pub gumbel: GumbelConfig,
}

impl PedpConfig {
    pub fn new(state_width: usize, actions: usize) -> Self {
        PedpConfig {
            state_width,
            hidden: 64,
            actions,
            paths: 3,
            max_plan_len: 10,
            action_embedding: 32,
            decoder_hidden: 32,
            gumbel: GumbelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("state_width", self.state_width),
            ("hidden", self.hidden),
            ("actions", self.actions),
            ("paths", self.paths),
            ("max_plan_len", self.max_plan_len),
            ("action_embedding", self.action_embedding),
            ("decoder_hidden", self.decoder_hidden),
        ] {
            if v == 0 {
                return Err(PedpError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.actions < 2 {
            return Err(PedpError::Config("the policy needs at least 2 actions".into()));
        }
        self.gumbel.validate()
    }
}

/// Horizon cap from the training corpus: longest macro-action plus two, at least 10.
pub fn default_max_plan_len(max_macro_len: usize) -> usize {
    (max_macro_len + 2).max(10)
}

/// Trainable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Policy,
    World,
    Stop,
    Recovery,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Encoder,
        ParamGroup::Policy,
        ParamGroup::World,
        ParamGroup::Stop,
        ParamGroup::Recovery,
        ParamGroup::Decoder,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder.",
            ParamGroup::Policy => "policy.",
            ParamGroup::World => "world.",
            ParamGroup::Stop => "stop.",
            ParamGroup::Recovery => "recover.",
            ParamGroup::Decoder => "decoder.",
        }
    }

    pub fn of(name: &str) -> Option<ParamGroup> {
        Self::ALL.into_iter().find(|g| name.starts_with(g.prefix()))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zero,
    Glorot { fan_in: usize, fan_out: usize },
}

pub(crate) fn layout(c: &PedpConfig) -> Vec<(&'static str, Vec<usize>, Init)> {
    let (s, h, m, e, d) = (
        c.state_width,
        c.hidden,
        c.actions,
        c.action_embedding,
        c.decoder_hidden,
    );
    let w = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
    let mut out = vec![
        ("encoder.w1", vec![s, h], w(s, h)),
        ("encoder.b1", vec![h], Init::Zero),
        ("encoder.w2", vec![h, h], w(h, h)),
        ("encoder.b2", vec![h], Init::Zero),
        ("policy.w", vec![h, m], w(h, m)),
        ("policy.b", vec![m], Init::Zero),
    ];
    out.extend(gru_layout(WORLD_NAMES, m, e, h));
    out.extend([
        ("stop.w1", vec![2 * h, h], w(2 * h, h)),
        ("stop.b1", vec![h], Init::Zero),
        ("stop.w2", vec![h, 2], w(h, 2)),
        ("stop.b2", vec![2], Init::Zero),
        ("recover.w1", vec![h, h], w(h, h)),
        ("recover.b1", vec![h], Init::Zero),
        ("recover.w2", vec![h, s], w(h, s)),
        ("recover.b2", vec![s], Init::Zero),
        ("decoder.w1", vec![m, 2 * h, d], w(2 * h, d)),
        ("decoder.b1", vec![m, d], Init::Zero),
        ("decoder.w2", vec![m, d], w(d, 1)),
        ("decoder.b2", vec![m], Init::Zero),
    ]);
    out
}

pub(crate) type GruNames = [&'static str; 13];

const WORLD_NAMES: GruNames = [
    "world.emb", "world.w_ir", "world.w_iz", "world.w_in", "world.b_ir", "world.b_iz", "world.b_in",
    "world.w_hr", "world.w_hz", "world.w_hn", "world.b_hr", "world.b_hz", "world.b_hn",
];

/// Embedding `[tokens, e]` and GRU weights for hidden width `h`.
pub(crate) fn gru_layout(names: GruNames, tokens: usize, e: usize, h: usize) -> Vec<(&'static str, Vec<usize>, Init)> {
    let w = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
    let mut out = vec![(names[0], vec![tokens, e], w(tokens, e))];
    for n in &names[1..4] {
        out.push((n, vec![e, h], w(e, h)));
    }
    for n in &names[4..7] {
        out.push((n, vec![h], Init::Zero));
    }
    for n in &names[7..10] {
        out.push((n, vec![h, h], w(h, h)));
    }
    for n in &names[10..13] {
        out.push((n, vec![h], Init::Zero));
    }
    out
}

/// Allocates every array of `layout` in order.
pub(crate) fn init_params<R: Rng + ?Sized>(layout: &[(&'static str, Vec<usize>, Init)], rng: &mut R) -> ParamStore {
    let mut params = ParamStore::new();
    for (name, shape, init) in layout {
        let n = shape.iter().product();
        let data = match *init {
            Init::Zero => vec![0.0; n],
            Init::Glorot { fan_in, fan_out } => glorot(n, fan_in, fan_out, rng),
        };
        params.add(name, shape, data);
    }
    params
}

/// Checks that `params` holds exactly the named arrays the config implies.
pub(crate) fn check_params(
    params: &ParamStore,
    expected: &[(&'static str, Vec<usize>)],
) -> Result<Vec<ParamId>> {
    if params.len() != expected.len() {
        return Err(PedpError::Checkpoint(format!(
            "expected {} parameter arrays, found {}",
            expected.len(),
            params.len()
        )));
    }
    expected
        .iter()
        .map(|(name, shape)| {
            let id = params
                .id(name)
                .ok_or_else(|| PedpError::Checkpoint(format!("missing parameter {name}")))?;
            let found = &params.entry(id).shape;
            if found != shape {
                return Err(PedpError::Checkpoint(format!(
                    "parameter {name} has shape {found:?}, expected {shape:?}"
                )));
            }
            Ok(id)
        })
        .collect()
}

/// Embedding plus PyTorch-layout GRU cell weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GruIds {
    emb: ParamId,
    w_ir: ParamId,
    w_iz: ParamId,
    w_in: ParamId,
    b_ir: ParamId,
    b_iz: ParamId,
    b_in: ParamId,
    w_hr: ParamId,
    w_hz: ParamId,
    w_hn: ParamId,
    b_hr: ParamId,
    b_hz: ParamId,
    b_hn: ParamId,
}

impl GruIds {
    /// Ids in `gru_layout` order.
    pub(crate) fn from_list(v: &[ParamId]) -> Self {
        GruIds {
            emb: v[0],
            w_ir: v[1],
            w_iz: v[2],
            w_in: v[3],
            b_ir: v[4],
            b_iz: v[5],
            b_in: v[6],
            w_hr: v[7],
            w_hz: v[8],
            w_hn: v[9],
            b_hr: v[10],
            b_hz: v[11],
            b_hn: v[12],
        }
    }

    /// `r`, `z`, `n` gates; `h' = (1 - z) * n + z * h`.
    pub(crate) fn step<'a>(&self, t: &mut Tape<'a>, h: Var, token: Var) -> Var {
        let x = t.linear(token, self.emb, None);
        let xr = t.linear(x, self.w_ir, Some(self.b_ir));
        let hr = t.linear(h, self.w_hr, Some(self.b_hr));
        let r = t.add(xr, hr);
        let r = t.sigmoid(r);
        let xz = t.linear(x, self.w_iz, Some(self.b_iz));
        let hz = t.linear(h, self.w_hz, Some(self.b_hz));
        let z = t.add(xz, hz);
        let z = t.sigmoid(z);
        let xn = t.linear(x, self.w_in, Some(self.b_in));
        let hn = t.linear(h, self.w_hn, Some(self.b_hn));
        let rhn = t.mul(r, hn);
        let n = t.add(xn, rhn);
        let n = t.tanh(n);
        let keep = t.mul(z, h);
        let one_minus_z = t.one_minus(z);
        let fresh = t.mul(one_minus_z, n);
        t.add(fresh, keep)
    }
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    enc: [ParamId; 4],
    policy: [ParamId; 2],
    gru: GruIds,
    stop: [ParamId; 4],
    recover: [ParamId; 4],
    decoder: [ParamId; 4],
}

impl Ids {
    fn from_list(v: &[ParamId]) -> Self {
        Ids {
            enc: [v[0], v[1], v[2], v[3]],
            policy: [v[4], v[5]],
            gru: GruIds::from_list(&v[6..19]),
            stop: [v[19], v[20], v[21], v[22]],
            recover: [v[23], v[24], v[25], v[26]],
            decoder: [v[27], v[28], v[29], v[30]],
        }
    }
}

/// How the final macro-action is drawn from the aggregated probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    /// Gumbel-Sigmoid sample, then threshold.
    Sample,
    /// Threshold the probabilities at 0.5.
    Threshold,
}

/// What the Gumbel-Sigmoid is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmoidInput {
    /// `log(P / (1 - P))`: with zero noise and unit temperature this reduces to thresholding.
    Logit,
    /// The probabilities themselves.
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub mode: DecodeMode,
    /// Overrides the configured path count.
    pub paths: Option<usize>,
    /// `false` plans a single path.
    pub ensemble: bool,
    /// `false` decodes from `[h0 : h0]` without planning.
    pub planning: bool,
    pub sigmoid_input: SigmoidInput,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            mode: DecodeMode::Sample,
            paths: None,
            ensemble: true,
            planning: true,
            sigmoid_input: SigmoidInput::Logit,
        }
    }
}

/// One executed planning step, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct StepTrace {
    pub action: usize,
    pub sample: Var,
    pub logits: Var,
    pub next: Var,
    pub stop_logits: Var,
    pub stop: bool,
}

#[derive(Debug, Clone)]
pub struct PathTrace {
    pub initial: Var,
    pub steps: Vec<StepTrace>,
    pub terminal: Var,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub action: usize,
    pub one_hot: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopSample {
    pub stop: bool,
    pub logits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStep {
    pub action: usize,
    pub one_hot: Vec<f64>,
    pub logits: Vec<f64>,
    /// `h_{n+1}`.
    pub embedding: Vec<f64>,
    pub stop_logits: [f64; 2],
    pub stop: bool,
}

/// A simulated single-action fragment.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub initial: Vec<f64>,
    pub steps: Vec<PlannedStep>,
    pub terminal: Vec<f64>,
    pub truncated: bool,
}

impl PlannedPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub macro_action: MacroAction,
    /// Aggregated per-action probabilities `P_t`.
    pub probs: Vec<f64>,
    pub paths: Vec<PlannedPath>,
}

#[derive(Debug, Clone)]
pub struct PedpModel {
    config: PedpConfig,
    params: ParamStore,
    ids: Ids,
}

impl PedpModel {
    pub fn new<R: Rng + ?Sized>(config: PedpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = init_params(&layout(&config), rng);
        Self::from_params(config, params)
    }

    pub fn from_params(config: PedpConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected: Vec<_> = layout(&config)
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let ids = Ids::from_list(&check_params(&params, &expected)?);
        if !params.all_finite() {
            return Err(PedpError::NonFinite("model parameters".into()));
        }
        Ok(PedpModel { config, params, ids })
    }

    pub fn config(&self) -> &PedpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn set_gumbel(&mut self, gumbel: GumbelConfig) -> Result<()> {
        gumbel.validate()?;
        self.config.gumbel = gumbel;
        Ok(())
    }

    // ---- tape-level building blocks ----

    /// `ReLU(s W1 + b1) W2 + b2`.
    pub fn encode_on<'a>(&'a self, t: &mut Tape<'a>, state: &[f64]) -> Var {
        let [w1, b1, w2, b2] = self.ids.enc;
        let s = t.input(state.to_vec());
        let a = t.linear(s, w1, Some(b1));
        let a = t.relu(a);
        t.linear(a, w2, Some(b2))
    }

    pub fn policy_logits_on<'a>(&'a self, t: &mut Tape<'a>, h: Var) -> Var {
        let [w, b] = self.ids.policy;
        t.linear(h, w, Some(b))
    }

    /// One GRU step with hidden `h` and input `action · Emb`.
    pub fn world_step_on<'a>(&'a self, t: &mut Tape<'a>, h: Var, action: Var) -> Var {
        self.ids.gru.step(t, h, action)
    }

    /// Two logits from `FFN([h0 : h_next])`; class 1 means stop.
    pub fn stop_logits_on<'a>(&'a self, t: &mut Tape<'a>, h0: Var, next: Var) -> Var {
        let [w1, b1, w2, b2] = self.ids.stop;
        let x = t.concat(&[h0, next]);
        let a = t.linear(x, w1, Some(b1));
        let a = t.relu(a);
        t.linear(a, w2, Some(b2))
    }

    pub fn recover_on<'a>(&'a self, t: &mut Tape<'a>, h: Var) -> Var {
        let [w1, b1, w2, b2] = self.ids.recover;
        let a = t.linear(h, w1, Some(b1));
        let a = t.relu(a);
        let o = t.linear(a, w2, Some(b2));
        t.sigmoid(o)
    }

    /// Per-action probabilities from `[h0 : terminal]`.
    pub fn decode_on<'a>(&'a self, t: &mut Tape<'a>, h0: Var, terminal: Var) -> Var {
        let [w1, b1, w2, b2] = self.ids.decoder;
        let x = t.concat(&[h0, terminal]);
        let logits = t.multi_head(x, w1, b1, w2, b2);
        t.sigmoid(logits)
    }

    /// Free-running rollout from `h0` until the stop flag fires or the cap is hit.
    pub fn plan_on<'a, R: Rng + ?Sized>(&'a self, t: &mut Tape<'a>, h0: Var, rng: &mut R) -> PathTrace {
        let g = self.config.gumbel;
        let mut h = h0;
        let mut steps = Vec::new();
        let mut truncated = false;
        for n in 0..self.config.max_plan_len {
            let logits = self.policy_logits_on(t, h);
            let (sample, action) = t.gumbel_softmax(logits, g.tau_policy, g.hard, rng);
            let next = self.world_step_on(t, h, sample);
            let stop_logits = self.stop_logits_on(t, h0, next);
            let (_, flag) = t.gumbel_softmax(stop_logits, g.tau_stop, g.hard, rng);
            let stop = flag == 1;
            steps.push(StepTrace {
                action,
                sample,
                logits,
                next,
                stop_logits,
                stop,
            });
            h = next;
            if stop {
                break;
            }
            if n + 1 == self.config.max_plan_len {
                truncated = true;
            }
        }
        if truncated {
            log::trace!("planned path truncated at {} steps", self.config.max_plan_len);
        }
        PathTrace {
            initial: h0,
            steps,
            terminal: h,
            truncated,
        }
    }

    /// Aggregated probabilities over `paths` planned paths, or the
    /// plan-free decoding `[h0 : h0]` when `planning` is false.
    pub fn predict_probs_on<'a, R: Rng + ?Sized>(
        &'a self,
        t: &mut Tape<'a>,
        h0: Var,
        paths: usize,
        planning: bool,
        rng: &mut R,
    ) -> (Var, Vec<PathTrace>) {
        if !planning {
            return (self.decode_on(t, h0, h0), Vec::new());
        }
        let traces: Vec<PathTrace> = (0..paths.max(1)).map(|_| self.plan_on(t, h0, rng)).collect();
        let probs: Vec<Var> = traces
            .iter()
            .map(|p| self.decode_on(t, h0, p.terminal))
            .collect();
        (t.mean(&probs), traces)
    }

    // ---- value-level operations ----

    fn check_width(&self, what: &str, v: &[f64], expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(PedpError::shape(what, expected, v.len()));
        }
        Ok(())
    }

    pub fn encode_state(&self, state: &DialogStateVector) -> Result<Vec<f64>> {
        self.check_width("state", &state.to_f64(), self.config.state_width)?;
        let mut t = Tape::new(&self.params);
        let h = self.encode_on(&mut t, &state.to_f64());
        Ok(t.value(h).to_vec())
    }

    pub fn policy_step<R: Rng + ?Sized>(&self, h: &[f64], rng: &mut R) -> Result<PolicySample> {
        self.check_width("embedding", h, self.config.hidden)?;
        let mut t = Tape::new(&self.params);
        let hv = t.input(h.to_vec());
        let logits = self.policy_logits_on(&mut t, hv);
        let logits = t.value(logits).to_vec();
        let s = sampling::gumbel_softmax(&logits, self.config.gumbel.tau_policy, rng, true)?;
        Ok(PolicySample {
            action: s.index,
            one_hot: s.value(),
            logits,
        })
    }

    pub fn world_step(&self, h: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.check_width("embedding", h, self.config.hidden)?;
        self.check_width("action", action, self.config.actions)?;
        let mut t = Tape::new(&self.params);
        let hv = t.input(h.to_vec());
        let a = t.input(action.to_vec());
        let next = self.world_step_on(&mut t, hv, a);
        Ok(t.value(next).to_vec())
    }

    pub fn stop_predict<R: Rng + ?Sized>(&self, h0: &[f64], next: &[f64], rng: &mut R) -> Result<StopSample> {
        self.check_width("initial embedding", h0, self.config.hidden)?;
        self.check_width("next embedding", next, self.config.hidden)?;
        let mut t = Tape::new(&self.params);
        let a = t.input(h0.to_vec());
        let b = t.input(next.to_vec());
        let l = self.stop_logits_on(&mut t, a, b);
        let logits = [t.value(l)[0], t.value(l)[1]];
        let s = sampling::gumbel_softmax(&logits, self.config.gumbel.tau_stop, rng, true)?;
        Ok(StopSample {
            stop: s.index == 1,
            logits,
        })
    }

    pub fn plan_path<R: Rng + ?Sized>(&self, h0: &[f64], rng: &mut R) -> Result<PlannedPath> {
        self.check_width("embedding", h0, self.config.hidden)?;
        let mut t = Tape::new(&self.params);
        let h = t.input(h0.to_vec());
        let trace = self.plan_on(&mut t, h, rng);
        Ok(materialize(&t, &trace))
    }

    pub fn recover_state(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_width("embedding", h, self.config.hidden)?;
        let mut t = Tape::new(&self.params);
        let hv = t.input(h.to_vec());
        let out = self.recover_on(&mut t, hv);
        Ok(t.value(out).to_vec())
    }

    pub fn decode_path(&self, h0: &[f64], terminal: &[f64]) -> Result<Vec<f64>> {
        self.check_width("initial embedding", h0, self.config.hidden)?;
        self.check_width("terminal embedding", terminal, self.config.hidden)?;
        let mut t = Tape::new(&self.params);
        let a = t.input(h0.to_vec());
        let b = t.input(terminal.to_vec());
        let p = self.decode_on(&mut t, a, b);
        Ok(t.value(p).to_vec())
    }

    pub fn predict_macro<R: Rng + ?Sized>(
        &self,
        state: &DialogStateVector,
        rng: &mut R,
        opts: &PredictOptions,
    ) -> Result<Prediction> {
        self.check_width("state", &state.to_f64(), self.config.state_width)?;
        let mut t = Tape::new(&self.params);
        let h0 = self.encode_on(&mut t, &state.to_f64());
        let k = if opts.ensemble {
            opts.paths.unwrap_or(self.config.paths)
        } else {
            1
        };
        let (probs, traces) = self.predict_probs_on(&mut t, h0, k, opts.planning, rng);
        let probs = t.value(probs).to_vec();
        let macro_action = select_actions(&probs, opts, self.config.gumbel.tau_out, rng);
        Ok(Prediction {
            macro_action,
            probs,
            paths: traces.iter().map(|p| materialize(&t, p)).collect(),
        })
    }
}

/// Draws the macro-action from aggregated probabilities.
pub fn select_actions<R: Rng + ?Sized>(
    probs: &[f64],
    opts: &PredictOptions,
    tau_out: f64,
    rng: &mut R,
) -> MacroAction {
    let bits = match opts.mode {
        DecodeMode::Threshold => sampling::hard_binarize(probs),
        DecodeMode::Sample => {
            let pre: Vec<f64> = match opts.sigmoid_input {
                SigmoidInput::Logit => probs.iter().map(|&p| sampling::logit(p)).collect(),
                SigmoidInput::Probability => probs.to_vec(),
            };
            sampling::hard_binarize(&sampling::gumbel_sigmoid(&pre, tau_out, rng))
        }
    };
    MacroAction::from_bits(&bits)
}

fn materialize(t: &Tape, trace: &PathTrace) -> PlannedPath {
    PlannedPath {
        initial: t.value(trace.initial).to_vec(),
        steps: trace
            .steps
            .iter()
            .map(|s| PlannedStep {
                action: s.action,
                one_hot: t.value(s.sample).to_vec(),
                logits: t.value(s.logits).to_vec(),
                embedding: t.value(s.next).to_vec(),
                stop_logits: [t.value(s.stop_logits)[0], t.value(s.stop_logits)[1]],
                stop: s.stop,
            })
            .collect(),
        terminal: t.value(trace.terminal).to_vec(),
        truncated: trace.truncated,
    }
}

/// Elementwise arithmetic mean.
pub fn aggregate(paths: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = paths
        .first()
        .ok_or_else(|| PedpError::Config("aggregate needs at least one path".into()))?;
    let mut out = vec![0.0; first.len()];
    for p in paths {
        if p.len() != first.len() {
            return Err(PedpError::shape("path probabilities", first.len(), p.len()));
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let k = paths.len() as f64;
    out.iter_mut().for_each(|v| *v /= k);
    Ok(out)
}
