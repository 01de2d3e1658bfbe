//! Planning targets, the four training losses and the minibatch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Grads, ParamStore, Tape, Var};
use crate::domain::{decompose_macro, DialogStateVector, MacroAction, TurnSample};
use crate::error::{PedpError, Result};
use crate::evaluation::{standard_metrics, StandardReport};
use crate::model::{PedpModel, PredictOptions};
use crate::optim::{Adam, OptimizerSettings};
use crate::sampling::one_hot;

/// Supervision for the planner on one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningTargets {
    pub action_sequence: Vec<usize>,
    /// `0 ... 0 1`.
    pub stop_sequence: Vec<usize>,
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub macro_vector: Vec<f64>,
}

/// Targets for a turn, or `None` for an empty macro-action (MAP-only sample).
pub fn build_targets(sample: &TurnSample, actions: usize) -> Option<PlanningTargets> {
    let seq = match decompose_macro(&sample.macro_action) {
        Ok(seq) => seq,
        Err(_) => return None,
    };
    let n = seq.len();
    let mut stops = vec![0; n];
    stops[n - 1] = 1;
    Some(PlanningTargets {
        action_sequence: seq,
        stop_sequence: stops,
        state: sample.state.to_f64(),
        next_state: sample.next_state.to_f64(),
        macro_vector: sample.macro_action.to_vector(actions),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_dap: f64,
    pub w_sfp: f64,
    pub w_sr: f64,
    pub w_map: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_dap: 1.0,
            w_sfp: 1.0,
            w_sr: 1.0,
            w_map: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_dap, self.w_sfp, self.w_sr, self.w_map];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PedpError::Config("loss weights must be finite and nonnegative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(PedpError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Teacher-forced rollout handles.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub policy_logits: Vec<Var>,
    pub stop_logits: Vec<Var>,
    pub terminal: Var,
}

/// Runs exactly `N` steps, feeding the target action into the world model.
pub fn rollout_teacher_forced<'a>(
    model: &'a PedpModel,
    t: &mut Tape<'a>,
    h0: Var,
    targets: &PlanningTargets,
) -> Rollout {
    let m = model.config().actions;
    let mut h = h0;
    let mut policy_logits = Vec::with_capacity(targets.action_sequence.len());
    let mut stop_logits = Vec::with_capacity(targets.action_sequence.len());
    for &a in &targets.action_sequence {
        policy_logits.push(model.policy_logits_on(t, h));
        let x = t.input(one_hot(a, m));
        h = model.world_step_on(t, h, x);
        stop_logits.push(model.stop_logits_on(t, h0, h));
    }
    Rollout {
        policy_logits,
        stop_logits,
        terminal: h,
    }
}

fn mean_ce(t: &mut Tape, logits: &[Var], targets: &[usize]) -> Var {
    let terms: Vec<(Var, f64)> = logits
        .iter()
        .zip(targets)
        .map(|(&l, &y)| (t.cross_entropy(l, y), 1.0 / targets.len() as f64))
        .collect();
    t.weighted_sum(&terms)
}

pub fn loss_dap(t: &mut Tape, policy_logits: &[Var], actions: &[usize]) -> Var {
    mean_ce(t, policy_logits, actions)
}

pub fn loss_sfp(t: &mut Tape, stop_logits: &[Var], stops: &[usize]) -> Var {
    mean_ce(t, stop_logits, stops)
}

pub fn loss_sr(t: &mut Tape, recovered: Var, recovered_next: Var, state: &[f64], next_state: &[f64]) -> Var {
    let a = t.bce(recovered, state);
    let b = t.bce(recovered_next, next_state);
    t.weighted_sum(&[(a, 0.5), (b, 0.5)])
}

pub fn loss_map(t: &mut Tape, probs: Var, macro_vector: &[f64]) -> Var {
    t.bce(probs, macro_vector)
}

/// Per-task values of one sample; absent tasks are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub dap: Option<f64>,
    pub sfp: Option<f64>,
    pub sr: Option<f64>,
    pub map: Option<f64>,
}

/// Builds the weighted objective on `t`. Planning tasks are skipped for
/// empty macro-actions and when `planning` is off.
pub fn total_loss<'a, R: Rng + ?Sized>(
    model: &'a PedpModel,
    t: &mut Tape<'a>,
    sample: &TurnSample,
    weights: &LossWeights,
    planning: bool,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let cfg = model.config();
    if sample.state.len() != cfg.state_width {
        return Err(PedpError::shape("state", cfg.state_width, sample.state.len()));
    }
    let h0 = model.encode_on(t, &sample.state.to_f64());
    let mut terms = Vec::new();
    let mut out = LossBreakdown::default();
    let targets = if planning {
        build_targets(sample, cfg.actions)
    } else {
        None
    };
    if let Some(tg) = &targets {
        let roll = rollout_teacher_forced(model, t, h0, tg);
        if weights.w_dap > 0.0 {
            let l = loss_dap(t, &roll.policy_logits, &tg.action_sequence);
            out.dap = Some(t.scalar(l));
            terms.push((l, weights.w_dap));
        }
        if weights.w_sfp > 0.0 {
            let l = loss_sfp(t, &roll.stop_logits, &tg.stop_sequence);
            out.sfp = Some(t.scalar(l));
            terms.push((l, weights.w_sfp));
        }
        if weights.w_sr > 0.0 {
            let r0 = model.recover_on(t, h0);
            let rn = model.recover_on(t, roll.terminal);
            let l = loss_sr(t, r0, rn, &tg.state, &tg.next_state);
            out.sr = Some(t.scalar(l));
            terms.push((l, weights.w_sr));
        }
    }
    if weights.w_map > 0.0 {
        let (probs, _) = model.predict_probs_on(t, h0, cfg.paths, planning, rng);
        let l = loss_map(t, probs, &sample.macro_action.to_vector(cfg.actions));
        out.map = Some(t.scalar(l));
        terms.push((l, weights.w_map));
    }
    if terms.is_empty() {
        // planning-only weights on an empty macro-action
        let zero = t.input(vec![0.0]);
        terms.push((zero, 1.0));
    }
    let total = t.weighted_sum(&terms);
    out.total = t.scalar(total);
    Ok((total, out))
}

/// A model the generic loop can optimize.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Adds `scale * d(loss)/d(params)` into `grads` and returns the loss values.
    fn accumulate(&self, sample: &TurnSample, scale: f64, rng: &mut ChaCha8Rng, grads: &mut Grads)
        -> Result<LossBreakdown>;
    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction>;
}

/// The planner together with its objective settings.
#[derive(Debug, Clone)]
pub struct PedpTrainer {
    pub model: PedpModel,
    pub weights: LossWeights,
    /// Also selects plan-free training when `predict.planning` is off.
    pub predict: PredictOptions,
}

impl Trainable for PedpTrainer {
    fn params(&self) -> &ParamStore {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.model.params_mut()
    }

    fn accumulate(
        &self,
        sample: &TurnSample,
        scale: f64,
        rng: &mut ChaCha8Rng,
        grads: &mut Grads,
    ) -> Result<LossBreakdown> {
        let mut t = Tape::new(self.model.params());
        let (loss, parts) = total_loss(&self.model, &mut t, sample, &self.weights, self.predict.planning, rng)?;
        t.backward(loss, scale, grads);
        Ok(parts)
    }

    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction> {
        Ok(self.model.predict_macro(state, rng, &self.predict)?.macro_action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub epochs: usize,
    pub optimizer: OptimizerSettings,
    /// Fraction of dialogs held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            epochs: 30,
            optimizer: OptimizerSettings::default(),
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_dap: f64,
    pub loss_sfp: f64,
    pub loss_sr: f64,
    pub loss_map: f64,
    pub val_f1: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub n_train: usize,
    pub n_val: usize,
}

/// Whether a dialog lands in the validation split; stable across runs.
pub fn is_validation_dialog(dialog_id: &str, fraction: f64) -> bool {
    let digest = Sha256::digest(dialog_id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    let bucket = u64::from_le_bytes(bytes) % 10_000;
    (bucket as f64) < fraction * 10_000.0
}

pub fn split_by_dialog(samples: &[TurnSample], fraction: f64) -> (Vec<TurnSample>, Vec<TurnSample>) {
    samples
        .iter()
        .cloned()
        .partition(|s| !is_validation_dialog(&s.dialog_id, fraction))
}

pub fn evaluate_standard<T: Trainable>(model: &T, samples: &[TurnSample], seed: u64) -> Result<StandardReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds = samples
        .iter()
        .map(|s| model.predict(&s.state, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let golds: Vec<MacroAction> = samples.iter().map(|s| s.macro_action.clone()).collect();
    standard_metrics(&preds, &golds)
}

#[derive(Default)]
struct Running {
    sum: f64,
    n: usize,
}

impl Running {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Minibatch training with Adam. Restores the best-validation parameters
/// before returning. `on_epoch` sees every log record as it is produced.
pub fn fit<T: Trainable>(
    model: &mut T,
    samples: &[TurnSample],
    settings: &FitSettings,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    if samples.is_empty() {
        return Err(PedpError::EmptyCorpus);
    }
    if settings.optimizer.batch_size == 0 {
        return Err(PedpError::Config("batch size must be at least 1".into()));
    }
    let (train, mut val) = split_by_dialog(samples, settings.val_fraction);
    let (train, n_val) = if train.is_empty() {
        (val.clone(), val.len())
    } else {
        (train, val.len())
    };
    if val.is_empty() {
        log::warn!("validation split is empty; validating on the training set");
        val = train.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut adam = Adam::new(settings.optimizer, model.params());
    let mut grads = Grads::zeros_like(model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut total, mut dap, mut sfp, mut sr, mut map) = (
            Running::default(),
            Running::default(),
            Running::default(),
            Running::default(),
            Running::default(),
        );
        for batch in order.chunks(settings.optimizer.batch_size) {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let parts = model.accumulate(&train[i], scale, &mut rng, &mut grads)?;
                if !parts.total.is_finite() {
                    return Err(PedpError::Divergence {
                        epoch,
                        detail: format!("non-finite loss on dialog {} turn {}", train[i].dialog_id, train[i].turn_id),
                    });
                }
                total.add(Some(parts.total));
                dap.add(parts.dap);
                sfp.add(parts.sfp);
                sr.add(parts.sr);
                map.add(parts.map);
            }
            if !grads.all_finite() {
                return Err(PedpError::Divergence {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(model.params_mut(), &mut grads);
        }
        if !model.params().all_finite() {
            return Err(PedpError::Divergence {
                epoch,
                detail: "non-finite parameters after update".into(),
            });
        }
        let report = evaluate_standard(&*model, &val, settings.seed ^ 0x5eed_0000 ^ epoch as u64)?;
        let record = EpochRecord {
            epoch,
            loss_total: total.mean(),
            loss_dap: dap.mean(),
            loss_sfp: sfp.mean(),
            loss_sr: sr.mean(),
            loss_map: map.mean(),
            val_f1: report.f1,
            val_precision: report.precision,
            val_recall: report.recall,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val f1 {:.4}",
            record.loss_total,
            record.val_f1
        );
        on_epoch(&record);
        if best.as_ref().map_or(true, |(f1, _, _)| report.f1 > *f1) {
            best = Some((report.f1, epoch, model.params().clone()));
        }
        log.push(record);
    }
    let (best_val_f1, best_epoch) = match best {
        Some((f1, epoch, params)) => {
            *model.params_mut() = params;
            (f1, epoch)
        }
        None => (0.0, 0),
    };
    Ok(FitOutcome {
        log,
        best_epoch,
        best_val_f1,
        n_train: train.len(),
        n_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PedpConfig;
    use crate::sampling::GumbelConfig;

    fn tiny(hard: bool) -> PedpConfig {
        PedpConfig {
            state_width: 8,
            hidden: 6,
            actions: 5,
            paths: 2,
            max_plan_len: 3,
            action_embedding: 4,
            decoder_hidden: 3,
            gumbel: GumbelConfig {
                hard,
                ..GumbelConfig::default()
            },
        }
    }

    fn sample(macro_members: &[usize]) -> TurnSample {
        TurnSample {
            dialog_id: "d0".into(),
            turn_id: 0,
            state: DialogStateVector::new(vec![1, 0, 1, 1, 0, 0, 1, 0]).unwrap(),
            macro_action: MacroAction::new(macro_members.iter().copied()),
            next_state: DialogStateVector::new(vec![0, 1, 1, 0, 1, 0, 1, 1]).unwrap(),
        }
    }

    fn zero(model: &mut PedpModel, names: &[&str]) {
        for n in names {
            let id = model.params().id(n).unwrap();
            model.params_mut().get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn targets_sort_and_stop() {
        let t = build_targets(&sample(&[3]), 5).unwrap();
        assert_eq!((t.action_sequence, t.stop_sequence), (vec![3], vec![1]));
        let t = build_targets(&sample(&[1, 4, 2]), 5).unwrap();
        assert_eq!(t.action_sequence, vec![1, 2, 4]);
        assert_eq!(t.stop_sequence, vec![0, 0, 1]);
        assert_eq!(t.macro_vector, vec![0.0, 1.0, 1.0, 0.0, 1.0]);
        assert!(build_targets(&sample(&[]), 5).is_none());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let z = LossWeights {
            w_dap: 0.0,
            w_sfp: 0.0,
            w_sr: 0.0,
            w_map: 0.0,
        };
        assert!(z.validate().is_err());
        assert!(LossWeights { w_sr: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn uniform_predictions_give_analytic_losses() {
        let mut m = PedpModel::new(tiny(true), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        zero(
            &mut m,
            &[
                "policy.w", "policy.b", "stop.w2", "stop.b2", "recover.w2", "recover.b2", "decoder.w2", "decoder.b2",
            ],
        );
        let mut t = Tape::new(m.params());
        let (_, parts) = total_loss(
            &m,
            &mut t,
            &sample(&[0, 2, 3]),
            &LossWeights::default(),
            true,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((parts.dap.unwrap() - 5f64.ln()).abs() < 1e-6);
        assert!((parts.sfp.unwrap() - ln2).abs() < 1e-6);
        assert!((parts.sr.unwrap() - ln2).abs() < 1e-6);
        assert!((parts.map.unwrap() - ln2).abs() < 1e-6);
        assert!((parts.total - (5f64.ln() + 3.0 * ln2)).abs() < 1e-6);
    }

    #[test]
    fn saturated_losses_vanish() {
        let m = PedpModel::new(tiny(true), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut t = Tape::new(m.params());
        let logits = t.input(vec![0.0, 40.0, 0.0, 0.0, 0.0]);
        let l = loss_dap(&mut t, &[logits], &[1]);
        assert!(t.scalar(l) < 1e-3);
        let stop = t.input(vec![-20.0, 20.0]);
        let l = loss_sfp(&mut t, &[stop], &[1]);
        assert!(t.scalar(l) < 1e-3);
        let p = t.input(vec![0.999, 0.001, 0.999]);
        let l = loss_map(&mut t, p, &[1.0, 0.0, 1.0]);
        assert!((t.scalar(l) - -(0.999f64.ln())).abs() < 1e-12);
        let r = t.input(vec![1.0, 0.0]);
        let l = loss_sr(&mut t, r, r, &[1.0, 0.0], &[1.0, 0.0]);
        assert!(t.scalar(l) < 1e-9);
    }

    #[test]
    fn degenerate_weights_select_one_task() {
        let m = PedpModel::new(tiny(true), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let w = LossWeights {
            w_dap: 1.0,
            w_sfp: 0.0,
            w_sr: 0.0,
            w_map: 0.0,
        };
        let mut t = Tape::new(m.params());
        let (_, parts) = total_loss(&m, &mut t, &sample(&[1, 2]), &w, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(parts.total, parts.dap.unwrap());
        let mut t = Tape::new(m.params());
        let (_, all) = total_loss(
            &m,
            &mut t,
            &sample(&[1, 2]),
            &LossWeights::default(),
            true,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(all.total.is_finite() && all.total > 0.0);
    }

    #[test]
    fn teacher_forced_components_ignore_the_seed() {
        let m = PedpModel::new(tiny(true), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let run = |seed| {
            let mut t = Tape::new(m.params());
            total_loss(
                &m,
                &mut t,
                &sample(&[0, 4]),
                &LossWeights::default(),
                true,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
            .1
        };
        let (a, b) = (run(1), run(2));
        assert_eq!((a.dap, a.sfp, a.sr), (b.dap, b.sfp, b.sr));
    }

    fn loss_at(m: &PedpModel, s: &TurnSample, w: &LossWeights, seed: u64) -> f64 {
        let mut t = Tape::new(m.params());
        let (l, _) = total_loss(m, &mut t, s, w, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        t.scalar(l)
    }

    /// Central differences on every scalar of every parameter array.
    pub(crate) fn check_gradients(m: &mut PedpModel, s: &TurnSample, w: &LossWeights, seed: u64) -> Vec<String> {
        let mut grads = Grads::zeros_like(m.params());
        {
            let mut t = Tape::new(m.params());
            let (l, _) = total_loss(m, &mut t, s, w, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            t.backward(l, 1.0, &mut grads);
        }
        let mut failures = Vec::new();
        let ids: Vec<_> = m.params().ids().collect();
        let eps = 1e-6;
        for id in ids {
            let name = m.params().entry(id).name.clone();
            for i in 0..m.params().get(id).len() {
                let orig = m.params().get(id)[i];
                m.params_mut().get_mut(id)[i] = orig + eps;
                let up = loss_at(m, s, w, seed);
                m.params_mut().get_mut(id)[i] = orig - eps;
                let down = loss_at(m, s, w, seed);
                m.params_mut().get_mut(id)[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.get(id)[i];
                let scale = analytic.abs().max(numeric.abs());
                if (analytic - numeric).abs() > 1e-4 * scale + 1e-8 {
                    failures.push(format!("{name}[{i}]: analytic {analytic} numeric {numeric}"));
                }
            }
        }
        failures
    }

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let mut m = PedpModel::new(tiny(false), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let failures = check_gradients(&mut m, &sample(&[1, 3]), &LossWeights::default(), 9);
        assert!(failures.is_empty(), "{failures:#?}");
    }

    #[test]
    fn map_gradient_reaches_the_policy_head() {
        let mut m = PedpModel::new(tiny(false), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let w = LossWeights {
            w_dap: 0.0,
            w_sfp: 0.0,
            w_sr: 0.0,
            w_map: 1.0,
        };
        let s = sample(&[0, 2]);
        let failures = check_gradients(&mut m, &s, &w, 3);
        assert!(failures.is_empty(), "{failures:#?}");
        let mut grads = Grads::zeros_like(m.params());
        let mut t = Tape::new(m.params());
        let (l, _) = total_loss(&m, &mut t, &s, &w, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        t.backward(l, 1.0, &mut grads);
        let pw = m.params().id("policy.w").unwrap();
        assert!(grads.get(pw).iter().any(|g| *g != 0.0));
    }

    #[test]
    fn zero_map_weight_leaves_decoder_untouched() {
        let m = PedpModel::new(tiny(true), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let w = LossWeights {
            w_map: 0.0,
            ..Default::default()
        };
        let mut grads = Grads::zeros_like(m.params());
        let mut t = Tape::new(m.params());
        let (l, _) = total_loss(&m, &mut t, &sample(&[1, 2, 4]), &w, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        t.backward(l, 1.0, &mut grads);
        for name in ["decoder.w1", "decoder.b1", "decoder.w2", "decoder.b2"] {
            let id = m.params().id(name).unwrap();
            assert!(grads.get(id).iter().all(|g| *g == 0.0), "{name}");
        }
    }

    #[test]
    fn validation_split_is_stable_and_near_fraction() {
        let ids: Vec<String> = (0..2000).map(|i| format!("dlg-{i}")).collect();
        let held = ids.iter().filter(|d| is_validation_dialog(d, 0.1)).count();
        assert!((held as f64 / 2000.0 - 0.1).abs() < 0.03);
        assert!(ids.iter().all(|d| is_validation_dialog(d, 0.1) == is_validation_dialog(d, 0.1)));
        assert!(!ids.iter().any(|d| is_validation_dialog(d, 0.0)));
    }

    fn synthetic(n: usize, seed: u64) -> Vec<TurnSample> {
        // macro-action is a fixed function of the first five state bits
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let bits: Vec<u8> = (0..8).map(|_| rng.gen_range(0..2)).collect();
                let members: Vec<usize> = (0..5).filter(|&j| bits[j] == 1 && bits[(j + 1) % 8] == 0).collect();
                let mut next = bits.clone();
                for &j in &members {
                    next[j] = 0;
                }
                TurnSample {
                    dialog_id: format!("syn-{}", i / 5),
                    turn_id: (i % 5) as u32,
                    state: DialogStateVector::new(bits).unwrap(),
                    macro_action: MacroAction::new(members),
                    next_state: DialogStateVector::new(next).unwrap(),
                }
            })
            .collect()
    }

    fn trainer(seed: u64) -> PedpTrainer {
        let cfg = PedpConfig {
            hidden: 16,
            action_embedding: 8,
            decoder_hidden: 8,
            max_plan_len: 7,
            ..tiny(true)
        };
        PedpTrainer {
            model: PedpModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(),
            weights: LossWeights::default(),
            predict: PredictOptions::default(),
        }
    }

    #[test]
    fn fit_is_reproducible_and_learns() {
        let data = synthetic(40, 1);
        let settings = FitSettings {
            epochs: 60,
            optimizer: OptimizerSettings {
                learning_rate: 1e-2,
                batch_size: 8,
                ..Default::default()
            },
            val_fraction: 0.0,
            seed: 11,
        };
        let mut a = trainer(2);
        let out_a = fit(&mut a, &data, &settings, |_| {}).unwrap();
        let mut b = trainer(2);
        let out_b = fit(&mut b, &data, &settings, |_| {}).unwrap();
        assert_eq!(a.model.params().entries(), b.model.params().entries());
        let strip = |l: &[EpochRecord]| -> Vec<EpochRecord> {
            l.iter().cloned().map(|r| EpochRecord { seconds: 0.0, ..r }).collect()
        };
        assert_eq!(strip(&out_a.log), strip(&out_b.log));
        assert!(out_a.log.last().unwrap().loss_total < out_a.log[0].loss_total);
        assert!(out_a.best_val_f1 > 0.8, "{}", out_a.best_val_f1);
    }

    #[test]
    fn fit_rejects_empty_data() {
        let mut t = trainer(0);
        assert!(matches!(
            fit(&mut t, &[], &FitSettings::default(), |_| {}),
            Err(PedpError::EmptyCorpus)
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut t = trainer(0);
        let id = t.model.params().id("encoder.w1").unwrap();
        t.model.params_mut().get_mut(id)[0] = f64::NAN;
        let err = fit(&mut t, &synthetic(10, 0), &FitSettings::default(), |_| {}).unwrap_err();
        assert!(matches!(err, PedpError::Divergence { epoch: 1, .. }), "{err}");
    }
}
