//! Standard (corpus) metrics, interactive (simulator) metrics and run comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DialogStateVector, MacroAction};
use crate::error::{PedpError, Result};
use crate::training::Trainable;
use crate::user_sim::{run_episode, sample_goal, DialogPolicy, EpisodeLog, ToyWorld, UserGoal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardReport {
    pub precision: f64,
    pub recall: f64,
    /// Mean of per-sample F1.
    pub f1: f64,
    pub n_samples: usize,
    pub per_sample: Vec<SampleScore>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn sample_score(pred: &MacroAction, gold: &MacroAction) -> SampleScore {
    let tp = pred.intersection_len(gold) as f64;
    let precision = match (pred.is_empty(), gold.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => tp / pred.len() as f64,
    };
    let recall = if gold.is_empty() { 1.0 } else { tp / gold.len() as f64 };
    SampleScore {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

pub fn standard_metrics(predictions: &[MacroAction], golds: &[MacroAction]) -> Result<StandardReport> {
    if predictions.len() != golds.len() {
        return Err(PedpError::Metrics(format!(
            "{} predictions for {} gold turns",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(PedpError::Metrics("no samples to score".into()));
    }
    let per_sample: Vec<SampleScore> = predictions.iter().zip(golds).map(|(p, g)| sample_score(p, g)).collect();
    let n = per_sample.len() as f64;
    let mean = |f: fn(&SampleScore) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    Ok(StandardReport {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        n_samples: per_sample.len(),
        per_sample,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub inform_precision: f64,
    pub inform_recall: f64,
    pub inform_f1: f64,
    pub matched: bool,
    pub success: bool,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveReport {
    pub inform_precision: f64,
    pub inform_recall: f64,
    pub inform_f1: f64,
    pub match_rate: f64,
    pub avg_turns: f64,
    pub success_rate: f64,
    pub n_episodes: usize,
    pub episodes: Vec<EpisodeScore>,
}

pub fn episode_score(log: &EpisodeLog) -> EpisodeScore {
    let hit = log.provided.intersection(&log.requested).count() as f64;
    let inform_recall = if log.requested.is_empty() {
        1.0
    } else {
        hit / log.requested.len() as f64
    };
    let inform_precision = if log.provided.is_empty() {
        if log.requested.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        hit / log.provided.len() as f64
    };
    EpisodeScore {
        inform_precision,
        inform_recall,
        inform_f1: f1(inform_precision, inform_recall),
        matched: log.matched,
        success: success(inform_recall, log.matched),
        turns: log.n_turns,
    }
}

/// Success is exactly full inform recall together with a correct booking.
pub fn success(inform_recall: f64, matched: bool) -> bool {
    inform_recall == 1.0 && matched
}

pub fn interactive_metrics(episodes: &[EpisodeLog]) -> Result<InteractiveReport> {
    if episodes.is_empty() {
        return Err(PedpError::Metrics("no episodes to score".into()));
    }
    let scores: Vec<EpisodeScore> = episodes.iter().map(episode_score).collect();
    let n = scores.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(InteractiveReport {
        inform_precision: mean(&|s| s.inform_precision),
        inform_recall: mean(&|s| s.inform_recall),
        inform_f1: mean(&|s| s.inform_f1),
        match_rate: mean(&|s| s.matched as u8 as f64),
        avg_turns: mean(&|s| s.turns as f64),
        success_rate: mean(&|s| s.success as u8 as f64),
        n_episodes: scores.len(),
        episodes: scores,
    })
}

/// Flat metric view used for comparisons.
pub trait MetricSet {
    fn metrics(&self) -> BTreeMap<String, f64>;
}

impl MetricSet for StandardReport {
    fn metrics(&self) -> BTreeMap<String, f64> {
        [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

impl MetricSet for InteractiveReport {
    fn metrics(&self) -> BTreeMap<String, f64> {
        [
            ("inform_precision", self.inform_precision),
            ("inform_recall", self.inform_recall),
            ("inform_f1", self.inform_f1),
            ("match_rate", self.match_rate),
            ("avg_turns", self.avg_turns),
            ("success_rate", self.success_rate),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: 0.0, std: 0.0, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n }
}

/// Per-metric mean and deviation over runs (seeds).
pub fn summarize_runs(runs: &[BTreeMap<String, f64>]) -> Result<BTreeMap<String, Summary>> {
    let Some(first) = runs.first() else {
        return Err(PedpError::Metrics("no runs to summarize".into()));
    };
    for r in runs {
        if r.keys().ne(first.keys()) {
            return Err(PedpError::Metrics("runs report different metric sets".into()));
        }
    }
    Ok(first
        .keys()
        .map(|k| {
            let vals: Vec<f64> = runs.iter().map(|r| r[k]).collect();
            (k.clone(), summarize(&vals))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDiff {
    pub a: Summary,
    pub b: Summary,
    /// `b.mean - a.mean`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub metrics: BTreeMap<String, MetricDiff>,
}

pub fn compare_runs(
    label_a: &str,
    runs_a: &[BTreeMap<String, f64>],
    label_b: &str,
    runs_b: &[BTreeMap<String, f64>],
) -> Result<Comparison> {
    let a = summarize_runs(runs_a)?;
    let b = summarize_runs(runs_b)?;
    if a.keys().ne(b.keys()) {
        return Err(PedpError::Metrics("compared runs report different metric sets".into()));
    }
    let metrics = a
        .into_iter()
        .map(|(k, sa)| {
            let sb = b[&k];
            let diff = MetricDiff {
                a: sa,
                b: sb,
                delta: sb.mean - sa.mean,
            };
            (k, diff)
        })
        .collect();
    Ok(Comparison {
        label_a: label_a.into(),
        label_b: label_b.into(),
        metrics,
    })
}

impl Comparison {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self.metrics.keys().map(|k| k.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>20}  {:>20}  {:>9}",
            "metric", self.label_a, self.label_b, "delta"
        );
        for (k, d) in &self.metrics {
            let cell = |s: &Summary| format!("{:.4} ± {:.4}", s.mean, s.std);
            let _ = writeln!(
                out,
                "{:<width$}  {:>20}  {:>20}  {:>+9.4}",
                k,
                cell(&d.a),
                cell(&d.b),
                d.delta
            );
        }
        out
    }
}

/// Wraps a trained model as a dialog policy.
pub struct ModelPolicy<'m, T: Trainable>(pub &'m T);

impl<T: Trainable> DialogPolicy for ModelPolicy<'_, T> {
    fn act(&mut self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction> {
        self.0.predict(state, rng)
    }
}

/// `n` goals and per-episode seeds drawn from one stream, so every policy
/// evaluated with the same seed meets the same users.
pub fn episode_plan(world: &ToyWorld, n: usize, seed: u64) -> Result<Vec<(UserGoal, u64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let goal = sample_goal(world, &mut rng)?;
            Ok((goal, rng.gen()))
        })
        .collect()
}

pub fn simulate(
    world: &ToyWorld,
    policy: &mut dyn DialogPolicy,
    n_episodes: usize,
    max_turns: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>> {
    episode_plan(world, n_episodes, seed)?
        .into_iter()
        .map(|(goal, s)| run_episode(world, policy, &goal, max_turns, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::user_sim::{EmptyPolicy, ExpertPolicy};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn m(v: &[usize]) -> MacroAction {
        MacroAction::new(v.iter().copied())
    }

    #[test]
    fn standard_examples() {
        let r = standard_metrics(&[m(&[0, 1])], &[m(&[0, 1])]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = standard_metrics(&[m(&[0, 1])], &[m(&[0])]).unwrap();
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        let r = standard_metrics(&[m(&[])], &[m(&[0])]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let r = standard_metrics(&[m(&[])], &[m(&[])]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(standard_metrics(&[m(&[])], &[]).is_err());
        assert!(standard_metrics(&[], &[]).is_err());
    }

    fn log(requested: &[&str], provided: &[&str], matched: bool, turns: usize) -> EpisodeLog {
        EpisodeLog {
            goal: UserGoal { domains: vec![] },
            turns: vec![],
            n_turns: turns,
            done: true,
            matched,
            provided: provided.iter().map(|s| s.to_string()).collect(),
            requested: requested.iter().map(|s| s.to_string()).collect(),
            booked: BTreeMap::new(),
        }
    }

    #[test]
    fn half_recall_is_not_success() {
        let l = log(&["a", "b", "c", "d"], &["a", "b"], true, 4);
        let s = episode_score(&l);
        assert_eq!(s.inform_recall, 0.5);
        assert!(!s.success);
    }

    #[test]
    fn expert_and_silent_policies() {
        let w = ToyWorld::toy();
        let logs = simulate(&w, &mut ExpertPolicy(&w), 200, 20, 3).unwrap();
        let r = interactive_metrics(&logs).unwrap();
        assert_eq!((r.success_rate, r.inform_recall, r.match_rate), (1.0, 1.0, 1.0));
        let logs = simulate(&w, &mut EmptyPolicy, 20, 20, 3).unwrap();
        let r = interactive_metrics(&logs).unwrap();
        assert_eq!(r.success_rate, 0.0);
        assert_eq!(r.avg_turns, 20.0);
    }

    #[test]
    fn identical_runs_have_zero_delta() {
        let run: BTreeMap<String, f64> = [("f1".to_string(), 0.7), ("recall".to_string(), 0.5)].into();
        let c = compare_runs("a", &[run.clone(), run.clone()], "b", &[run.clone(), run]).unwrap();
        assert!(c.metrics.values().all(|d| d.delta == 0.0));
        assert!(c.to_table().lines().count() == 3);
    }

    #[test]
    fn std_uses_n_minus_one() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_metric_sets_are_rejected() {
        let a: BTreeMap<String, f64> = [("f1".to_string(), 0.7)].into();
        let b: BTreeMap<String, f64> = [("recall".to_string(), 0.7)].into();
        assert!(compare_runs("a", &[a], "b", &[b]).is_err());
    }

    fn macro_strategy() -> impl Strategy<Value = MacroAction> {
        proptest::collection::btree_set(0usize..8, 0..5).prop_map(MacroAction::new)
    }

    proptest! {
        #[test]
        fn success_is_recall_and_match(
            req in proptest::collection::btree_set("[a-e]", 0..5),
            prov in proptest::collection::btree_set("[a-e]", 0..5),
            matched: bool,
            turns in 1usize..20,
        ) {
            let l = EpisodeLog {
                goal: UserGoal { domains: vec![] },
                turns: vec![],
                n_turns: turns,
                done: true,
                matched,
                provided: prov.clone(),
                requested: req.clone(),
                booked: BTreeMap::new(),
            };
            let s = episode_score(&l);
            prop_assert_eq!(s.success, s.inform_recall == 1.0 && matched);
            prop_assert!((0.0..=1.0).contains(&s.inform_f1));
            let full = req.is_subset(&prov);
            prop_assert_eq!(s.inform_recall == 1.0, full);
            let _: BTreeSet<String> = prov;
        }

        #[test]
        fn standard_metrics_are_bounded_and_order_free(
            pairs in proptest::collection::vec((macro_strategy(), macro_strategy()), 1..20),
            rot in 0usize..20,
        ) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let a = standard_metrics(&p, &g).unwrap();
            for v in [a.precision, a.recall, a.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let k = rot % pairs.len();
            let mut rotated = pairs.clone();
            rotated.rotate_left(k);
            let (p2, g2): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
            let b = standard_metrics(&p2, &g2).unwrap();
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }
    }
}
