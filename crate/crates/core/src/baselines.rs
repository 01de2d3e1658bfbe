//! Supervised comparison policies: a sigmoid multi-label classifier, the
//! plan-free dense decoder, and a recurrent sequence decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, ParamId, ParamStore, Tape, Var};
use crate::domain::{DialogStateVector, MacroAction, TurnSample};
use crate::error::{PedpError, Result};
use crate::model::{check_params, gru_layout, init_params, select_actions, GruIds, GruNames, Init, PedpModel, PredictOptions};
use crate::sampling::{self, one_hot};
use crate::training::{LossBreakdown, LossWeights, PedpTrainer, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    MultiClass,
    MultiDense,
    Seq,
}

impl std::str::FromStr for BaselineKind {
    type Err = PedpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(BaselineKind::MultiClass),
            "multidense" => Ok(BaselineKind::MultiDense),
            "seq" => Ok(BaselineKind::Seq),
            _ => Err(PedpError::Config(format!("unknown baseline {s:?}"))),
        }
    }
}

// ---- DiaMultiClass ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiClassConfig {
    pub state_width: usize,
    pub hidden: usize,
    pub actions: usize,
    pub tau_out: f64,
}

/// `sigmoid(W2 ReLU(W1 s + b1) + b2)`.
#[derive(Debug, Clone)]
pub struct MultiClass {
    config: MultiClassConfig,
    params: ParamStore,
    ids: [ParamId; 4],
    pub predict: PredictOptions,
}

fn multiclass_layout(c: &MultiClassConfig) -> Vec<(&'static str, Vec<usize>, Init)> {
    let w = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
    vec![
        ("multiclass.w1", vec![c.state_width, c.hidden], w(c.state_width, c.hidden)),
        ("multiclass.b1", vec![c.hidden], Init::Zero),
        ("multiclass.w2", vec![c.hidden, c.actions], w(c.hidden, c.actions)),
        ("multiclass.b2", vec![c.actions], Init::Zero),
    ]
}

fn check_widths(pairs: &[(&str, usize)]) -> Result<()> {
    for (name, v) in pairs {
        if *v == 0 {
            return Err(PedpError::Config(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

fn shapes(layout: Vec<(&'static str, Vec<usize>, Init)>) -> Vec<(&'static str, Vec<usize>)> {
    layout.into_iter().map(|(n, s, _)| (n, s)).collect()
}

impl MultiClass {
    pub fn new<R: Rng + ?Sized>(config: MultiClassConfig, rng: &mut R) -> Result<Self> {
        check_widths(&[
            ("state_width", config.state_width),
            ("hidden", config.hidden),
            ("actions", config.actions),
        ])?;
        let params = init_params(&multiclass_layout(&config), rng);
        Self::from_params(config, params)
    }

    pub fn from_params(config: MultiClassConfig, params: ParamStore) -> Result<Self> {
        let ids = check_params(&params, &shapes(multiclass_layout(&config)))?;
        Ok(MultiClass {
            config,
            params,
            ids: [ids[0], ids[1], ids[2], ids[3]],
            predict: PredictOptions {
                mode: crate::model::DecodeMode::Threshold,
                ..Default::default()
            },
        })
    }

    pub fn config(&self) -> &MultiClassConfig {
        &self.config
    }

    fn probs_on<'a>(&'a self, t: &mut Tape<'a>, state: &[f64]) -> Var {
        let [w1, b1, w2, b2] = self.ids;
        let x = t.input(state.to_vec());
        let a = t.linear(x, w1, Some(b1));
        let a = t.relu(a);
        let o = t.linear(a, w2, Some(b2));
        t.sigmoid(o)
    }

    pub fn probabilities(&self, state: &DialogStateVector) -> Result<Vec<f64>> {
        if state.len() != self.config.state_width {
            return Err(PedpError::shape("state", self.config.state_width, state.len()));
        }
        let mut t = Tape::new(&self.params);
        let p = self.probs_on(&mut t, &state.to_f64());
        Ok(t.value(p).to_vec())
    }
}

impl Trainable for MultiClass {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn accumulate(&self, sample: &TurnSample, scale: f64, _: &mut ChaCha8Rng, grads: &mut Grads) -> Result<LossBreakdown> {
        if sample.state.len() != self.config.state_width {
            return Err(PedpError::shape("state", self.config.state_width, sample.state.len()));
        }
        let mut t = Tape::new(&self.params);
        let p = self.probs_on(&mut t, &sample.state.to_f64());
        let l = t.bce(p, &sample.macro_action.to_vector(self.config.actions));
        t.backward(l, scale, grads);
        let v = t.scalar(l);
        Ok(LossBreakdown {
            total: v,
            map: Some(v),
            ..Default::default()
        })
    }

    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction> {
        let p = self.probabilities(state)?;
        Ok(select_actions(&p, &self.predict, self.config.tau_out, rng))
    }
}

// ---- DiaMultiDense ----

/// The planner's encoder and decoder with the terminal embedding replaced by `h0`.
#[derive(Debug, Clone)]
pub struct MultiDense(pub PedpTrainer);

impl MultiDense {
    pub fn new(model: PedpModel, predict: PredictOptions) -> Self {
        MultiDense(PedpTrainer {
            model,
            weights: LossWeights {
                w_dap: 0.0,
                w_sfp: 0.0,
                w_sr: 0.0,
                w_map: 1.0,
            },
            predict: PredictOptions {
                planning: false,
                ..predict
            },
        })
    }

    pub fn model(&self) -> &PedpModel {
        &self.0.model
    }

    pub fn probabilities(&self, state: &DialogStateVector) -> Result<Vec<f64>> {
        let h0 = self.0.model.encode_state(state)?;
        self.0.model.decode_path(&h0, &h0)
    }
}

impl Trainable for MultiDense {
    fn params(&self) -> &ParamStore {
        self.0.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.0.params_mut()
    }

    fn accumulate(&self, sample: &TurnSample, scale: f64, rng: &mut ChaCha8Rng, grads: &mut Grads) -> Result<LossBreakdown> {
        self.0.accumulate(sample, scale, rng, grads)
    }

    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction> {
        self.0.predict(state, rng)
    }
}

// ---- DiaSeq ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SeqDecode {
    Greedy,
    Sample { temperature: f64 },
    Beam { width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqConfig {
    pub state_width: usize,
    pub hidden: usize,
    pub actions: usize,
    pub embedding: usize,
    /// Longest emitted sequence, end token excluded.
    pub max_len: usize,
    pub decode: SeqDecode,
}

impl SeqConfig {
    pub fn validate(&self) -> Result<()> {
        check_widths(&[
            ("state_width", self.state_width),
            ("hidden", self.hidden),
            ("actions", self.actions),
            ("embedding", self.embedding),
            ("max_len", self.max_len),
        ])?;
        match self.decode {
            SeqDecode::Beam { width: 0 } => Err(PedpError::Config("beam width must be at least 1".into())),
            SeqDecode::Sample { temperature } if !(temperature > 0.0) => {
                Err(PedpError::Config("sampling temperature must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Output tokens: actions then END.
    pub fn end_token(&self) -> usize {
        self.actions
    }
}

const SEQ_GRU: GruNames = [
    "seq.emb", "seq.w_ir", "seq.w_iz", "seq.w_in", "seq.b_ir", "seq.b_iz", "seq.b_in", "seq.w_hr", "seq.w_hz",
    "seq.w_hn", "seq.b_hr", "seq.b_hz", "seq.b_hn",
];

fn seq_layout(c: &SeqConfig) -> Vec<(&'static str, Vec<usize>, Init)> {
    let w = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
    let (s, h) = (c.state_width, c.hidden);
    let mut out = vec![
        ("seq.enc.w1", vec![s, h], w(s, h)),
        ("seq.enc.b1", vec![h], Init::Zero),
        ("seq.enc.w2", vec![h, h], w(h, h)),
        ("seq.enc.b2", vec![h], Init::Zero),
    ];
    // input tokens: actions then START
    out.extend(gru_layout(SEQ_GRU, c.actions + 1, c.embedding, h));
    out.push(("seq.out.w", vec![h, c.actions + 1], w(h, c.actions + 1)));
    out.push(("seq.out.b", vec![c.actions + 1], Init::Zero));
    out
}

/// FFN state encoder feeding a GRU that emits actions until END.
#[derive(Debug, Clone)]
pub struct SeqModel {
    config: SeqConfig,
    params: ParamStore,
    enc: [ParamId; 4],
    gru: GruIds,
    out: [ParamId; 2],
}

impl SeqModel {
    pub fn new<R: Rng + ?Sized>(config: SeqConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = init_params(&seq_layout(&config), rng);
        Self::from_params(config, params)
    }

    pub fn from_params(config: SeqConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let ids = check_params(&params, &shapes(seq_layout(&config)))?;
        Ok(SeqModel {
            config,
            params,
            enc: [ids[0], ids[1], ids[2], ids[3]],
            gru: GruIds::from_list(&ids[4..17]),
            out: [ids[17], ids[18]],
        })
    }

    pub fn config(&self) -> &SeqConfig {
        &self.config
    }

    pub fn set_decode(&mut self, decode: SeqDecode) -> Result<()> {
        let c = SeqConfig { decode, ..self.config };
        c.validate()?;
        self.config = c;
        Ok(())
    }

    fn encode_on<'a>(&'a self, t: &mut Tape<'a>, state: &[f64]) -> Var {
        let [w1, b1, w2, b2] = self.enc;
        let x = t.input(state.to_vec());
        let a = t.linear(x, w1, Some(b1));
        let a = t.relu(a);
        t.linear(a, w2, Some(b2))
    }

    /// Consumes input token `prev` (START is `actions`) and returns the new hidden state and output logits.
    fn step_on<'a>(&'a self, t: &mut Tape<'a>, h: Var, prev: usize) -> (Var, Var) {
        let x = t.input(one_hot(prev, self.config.actions + 1));
        let h = self.gru.step(t, h, x);
        let [w, b] = self.out;
        (h, t.linear(h, w, Some(b)))
    }

    /// Log-probabilities over the next output token.
    fn next_log_probs(&self, state: &[f64], prefix: &[usize]) -> Vec<f64> {
        let mut t = Tape::new(&self.params);
        let mut h = self.encode_on(&mut t, state);
        let mut prev = self.config.actions;
        let mut logits = None;
        for &tok in prefix.iter().chain(std::iter::once(&usize::MAX)) {
            let (nh, l) = self.step_on(&mut t, h, prev);
            h = nh;
            logits = Some(l);
            prev = tok;
        }
        let l = t.value(logits.unwrap());
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        l.iter().map(|v| v - lse).collect()
    }

    pub fn decode(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if state.len() != self.config.state_width {
            return Err(PedpError::shape("state", self.config.state_width, state.len()));
        }
        let s = state.to_f64();
        match self.config.decode {
            SeqDecode::Greedy => Ok(self.greedy(&s)),
            SeqDecode::Sample { temperature } => Ok(self.sample(&s, temperature, rng)),
            SeqDecode::Beam { width } => Ok(self.beam(&s, width)),
        }
    }

    fn greedy(&self, s: &[f64]) -> Vec<usize> {
        let mut seq = Vec::new();
        while seq.len() < self.config.max_len {
            let tok = sampling::argmax(&self.next_log_probs(s, &seq));
            if tok == self.config.end_token() {
                break;
            }
            seq.push(tok);
        }
        seq
    }

    fn sample(&self, s: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut seq = Vec::new();
        while seq.len() < self.config.max_len {
            let lp: Vec<f64> = self.next_log_probs(s, &seq).iter().map(|v| v / temperature).collect();
            let p = sampling::softmax(&lp);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = p.len() - 1;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    tok = i;
                    break;
                }
            }
            if tok == self.config.end_token() {
                break;
            }
            seq.push(tok);
        }
        seq
    }

    /// Highest-scoring terminated hypothesis; ties go to the lexicographically smaller sequence.
    fn beam(&self, s: &[f64], width: usize) -> Vec<usize> {
        let end = self.config.end_token();
        let mut beams: Vec<(f64, Vec<usize>)> = vec![(0.0, Vec::new())];
        let mut finished: Vec<(f64, Vec<usize>)> = Vec::new();
        let better = |a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1));
        while !beams.is_empty() {
            let mut cands: Vec<(f64, Vec<usize>, bool)> = Vec::new();
            for (score, seq) in &beams {
                let lp = self.next_log_probs(s, seq);
                for (tok, l) in lp.iter().enumerate() {
                    if tok == end {
                        cands.push((score + l, seq.clone(), true));
                    } else if seq.len() < self.config.max_len {
                        let mut next = seq.clone();
                        next.push(tok);
                        cands.push((score + l, next, false));
                    }
                }
            }
            cands.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| b.2.cmp(&a.2))
            });
            cands.truncate(width);
            beams.clear();
            for (score, seq, done) in cands {
                if done {
                    finished.push((score, seq));
                } else {
                    beams.push((score, seq));
                }
            }
            // stop once no open hypothesis can beat the best finished one
            if let Some(best) = finished.iter().min_by(|a, b| better(a, b)) {
                if beams.iter().all(|b| b.0 < best.0) {
                    break;
                }
            }
        }
        finished.sort_by(better);
        finished.into_iter().next().map(|(_, s)| s).unwrap_or_default()
    }
}

impl Trainable for SeqModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Teacher-forced cross-entropy over the canonical action order plus END.
    fn accumulate(&self, sample: &TurnSample, scale: f64, _: &mut ChaCha8Rng, grads: &mut Grads) -> Result<LossBreakdown> {
        if sample.state.len() != self.config.state_width {
            return Err(PedpError::shape("state", self.config.state_width, sample.state.len()));
        }
        let mut targets: Vec<usize> = sample.macro_action.iter().take(self.config.max_len).collect();
        targets.push(self.config.end_token());
        let mut t = Tape::new(&self.params);
        let mut h = self.encode_on(&mut t, &sample.state.to_f64());
        let mut prev = self.config.actions;
        let mut terms = Vec::new();
        for &y in &targets {
            let (nh, logits) = self.step_on(&mut t, h, prev);
            h = nh;
            terms.push((t.cross_entropy(logits, y), 1.0 / targets.len() as f64));
            prev = y;
        }
        let l = t.weighted_sum(&terms);
        t.backward(l, scale, grads);
        let v = t.scalar(l);
        Ok(LossBreakdown {
            total: v,
            map: Some(v),
            ..Default::default()
        })
    }

    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction> {
        Ok(MacroAction::new(self.decode(state, rng)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecodeMode, PedpConfig};
    use crate::optim::OptimizerSettings;
    use crate::training::{evaluate_standard, fit, FitSettings};
    use rand::SeedableRng;

    fn data(n: usize, width: usize, actions: usize, seed: u64) -> Vec<TurnSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let bits: Vec<u8> = (0..width).map(|_| rng.gen_range(0..2)).collect();
                let members: Vec<usize> = (0..actions).filter(|&j| bits[j] == 1).take(3).collect();
                TurnSample {
                    dialog_id: format!("b-{i}"),
                    turn_id: 0,
                    state: DialogStateVector::new(bits.clone()).unwrap(),
                    macro_action: MacroAction::new(members),
                    next_state: DialogStateVector::new(bits).unwrap(),
                }
            })
            .collect()
    }

    fn overfit<T: Trainable>(model: &mut T, samples: &[TurnSample], epochs: usize) -> f64 {
        let settings = FitSettings {
            epochs,
            optimizer: OptimizerSettings {
                learning_rate: 1e-2,
                batch_size: 4,
                ..Default::default()
            },
            val_fraction: 0.0,
            seed: 1,
        };
        fit(model, samples, &settings, |_| {}).unwrap();
        evaluate_standard(&*model, samples, 0).unwrap().f1
    }

    fn mc(seed: u64) -> MultiClass {
        let cfg = MultiClassConfig {
            state_width: 10,
            hidden: 16,
            actions: 6,
            tau_out: 1.0,
        };
        MultiClass::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn multiclass_range_and_determinism() {
        let m = mc(0);
        let s = DialogStateVector::new(vec![1, 0, 1, 1, 0, 0, 1, 0, 1, 1]).unwrap();
        let p = m.probabilities(&s).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let a = m.predict(&s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = m.predict(&s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multiclass_overfits() {
        let mut m = mc(1);
        assert!(overfit(&mut m, &data(20, 10, 6, 3), 300) >= 0.99);
    }

    fn pedp(seed: u64) -> PedpModel {
        let cfg = PedpConfig {
            hidden: 12,
            action_embedding: 6,
            decoder_hidden: 8,
            ..PedpConfig::new(10, 6)
        };
        PedpModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn multidense_equals_plan_free_prediction() {
        let model = pedp(2);
        let dense = MultiDense::new(model.clone(), PredictOptions::default());
        let opts = PredictOptions {
            planning: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..50u64 {
            let bits: Vec<u8> = (0..10).map(|_| rng.gen_range(0..2)).collect();
            let s = DialogStateVector::new(bits).unwrap();
            let a = dense.predict(&s, &mut ChaCha8Rng::seed_from_u64(i)).unwrap();
            let b = model.predict_macro(&s, &mut ChaCha8Rng::seed_from_u64(i), &opts).unwrap();
            assert_eq!(a, b.macro_action);
            assert_eq!(dense.probabilities(&s).unwrap(), b.probs);
        }
    }

    #[test]
    fn multidense_overfits() {
        let mut d = MultiDense::new(
            pedp(3),
            PredictOptions {
                mode: DecodeMode::Threshold,
                ..Default::default()
            },
        );
        assert!(overfit(&mut d, &data(20, 10, 6, 4), 300) >= 0.99);
    }

    fn seq(seed: u64, decode: SeqDecode) -> SeqModel {
        let cfg = SeqConfig {
            state_width: 10,
            hidden: 16,
            actions: 6,
            embedding: 8,
            max_len: 5,
            decode,
        };
        SeqModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn immediate_end_gives_empty_macro() {
        let mut m = seq(0, SeqDecode::Greedy);
        let b = m.params().id("seq.out.b").unwrap();
        m.params_mut().get_mut(b)[6] = 100.0;
        let s = DialogStateVector::zeros(10);
        assert!(m.predict(&s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_empty());
        m.set_decode(SeqDecode::Beam { width: 4 }).unwrap();
        assert!(m.predict(&s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_empty());
    }

    #[test]
    fn beam_of_one_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            let mut m = seq(seed, SeqDecode::Greedy);
            let bits: Vec<u8> = (0..10).map(|_| rng.gen_range(0..2)).collect();
            let s = DialogStateVector::new(bits).unwrap();
            let g = m.decode(&s, &mut rng).unwrap();
            assert_eq!(g, m.decode(&s, &mut rng).unwrap());
            m.set_decode(SeqDecode::Beam { width: 1 }).unwrap();
            assert_eq!(g, m.decode(&s, &mut rng).unwrap());
        }
    }

    #[test]
    fn seq_config_validation() {
        let m = seq(0, SeqDecode::Greedy);
        assert!(SeqConfig {
            decode: SeqDecode::Beam { width: 0 },
            ..*m.config()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn seq_overfits_with_every_decoder() {
        let samples = data(20, 10, 6, 5);
        let mut m = seq(4, SeqDecode::Greedy);
        assert!(overfit(&mut m, &samples, 300) >= 0.99);
        m.set_decode(SeqDecode::Beam { width: 4 }).unwrap();
        assert!(evaluate_standard(&m, &samples, 0).unwrap().f1 >= 0.99);
        m.set_decode(SeqDecode::Sample { temperature: 0.05 }).unwrap();
        assert!(evaluate_standard(&m, &samples, 0).unwrap().f1 >= 0.95);
    }
}
