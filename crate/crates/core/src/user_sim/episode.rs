//! Episodes between a policy and the simulated user, and corpus generation.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{decompose_macro, Corpus, DialogStateVector, MacroAction, TurnSample};
use crate::error::{PedpError, Result};

use super::agenda::UserSimulator;
use super::expert::expert_macro;
use super::schema::{sample_goal, ToyWorld, UserGoal};
use super::tracker::{apply_system_acts, Tracker};

pub const DEFAULT_MAX_TURNS: usize = 20;

/// Anything that maps a dialog state to a macro-action.
pub trait DialogPolicy {
    fn act(&mut self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction>;
}

pub struct ExpertPolicy<'w>(pub &'w ToyWorld);

impl DialogPolicy for ExpertPolicy<'_> {
    fn act(&mut self, state: &DialogStateVector, _: &mut ChaCha8Rng) -> Result<MacroAction> {
        Ok(expert_macro(self.0, state))
    }
}

/// Always stays silent.
pub struct EmptyPolicy;

impl DialogPolicy for EmptyPolicy {
    fn act(&mut self, _: &DialogStateVector, _: &mut ChaCha8Rng) -> Result<MacroAction> {
        Ok(MacroAction::empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTurn {
    pub user_acts: Vec<String>,
    pub system_acts: Vec<String>,
    pub state: Vec<u8>,
    /// State right after the system acts.
    pub next_state: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub goal: UserGoal,
    pub turns: Vec<EpisodeTurn>,
    pub n_turns: usize,
    /// The user's agenda emptied before the turn cap.
    pub done: bool,
    pub matched: bool,
    pub provided: BTreeSet<String>,
    pub requested: BTreeSet<String>,
    pub booked: BTreeMap<String, String>,
}

/// Alternates user and system turns until the user is done or `max_turns`
/// system turns have passed.
pub fn run_episode(
    world: &ToyWorld,
    policy: &mut dyn DialogPolicy,
    goal: &UserGoal,
    max_turns: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeLog> {
    if max_turns == 0 {
        return Err(PedpError::Config("max_turns must be at least 1".into()));
    }
    let mut user_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut user = UserSimulator::new(world, goal.clone(), &mut user_rng)?;
    let mut tracker = Tracker::new(world);
    let (mut user_acts, mut done) = user.next_acts();
    let mut turns = Vec::new();
    while !done && turns.len() < max_turns {
        tracker.apply_user(&user_acts)?;
        let state = tracker.state().clone();
        let system = policy.act(&state, rng)?;
        if let Some(bad) = system.iter().find(|&i| i >= world.system_vocab().len()) {
            return Err(PedpError::ActionIndex {
                index: bad,
                size: world.system_vocab().len(),
            });
        }
        tracker.apply_system(&system)?;
        turns.push(EpisodeTurn {
            user_acts: user_acts.iter().map(|a| a.label()).collect(),
            system_acts: world.system_vocab().macro_to_strings(&system),
            state: state.bits().to_vec(),
            next_state: tracker.state().bits().to_vec(),
        });
        (user_acts, done) = user.respond(&system)?;
    }
    Ok(EpisodeLog {
        goal: goal.clone(),
        n_turns: turns.len(),
        turns,
        done,
        matched: user.matched(),
        provided: user.provided().clone(),
        requested: goal.requested(),
        booked: user.booked(),
    })
}

/// Replays `acts` one at a time from `state`, as single-action turns.
pub fn replay_sequential(world: &ToyWorld, state: &DialogStateVector, acts: &[usize]) -> Result<Vec<DialogStateVector>> {
    let mut out = Vec::with_capacity(acts.len());
    let mut cur = state.clone();
    for (k, &a) in acts.iter().enumerate() {
        cur = apply_system_acts(world, &cur, &MacroAction::new([a]), k == 0)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Expert dialogs against the simulator. Multi-action mode keeps one
/// macro-action per turn; otherwise each macro is split into single-action
/// turns in canonical order.
pub fn generate_corpus<R: Rng + ?Sized>(
    world: &ToyWorld,
    n_dialogs: usize,
    multi_action: bool,
    rng: &mut R,
) -> Result<Corpus> {
    if n_dialogs == 0 {
        return Err(PedpError::Config("n_dialogs must be at least 1".into()));
    }
    let mut samples = Vec::new();
    let mut expert = ExpertPolicy(world);
    for i in 0..n_dialogs {
        let goal = sample_goal(world, rng)?;
        let mut ep_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let log = run_episode(world, &mut expert, &goal, DEFAULT_MAX_TURNS, &mut ep_rng)?;
        if !log.done {
            return Err(PedpError::Simulator(format!("expert dialog {i} did not finish")));
        }
        let dialog_id = format!("dlg-{i:05}");
        let mut turn_id = 0u32;
        for t in &log.turns {
            let state = DialogStateVector::new(t.state.clone())?;
            let next_state = DialogStateVector::new(t.next_state.clone())?;
            let macro_action = world.system_vocab().macro_from_strings(&t.system_acts)?;
            if multi_action || macro_action.len() <= 1 {
                samples.push(TurnSample {
                    dialog_id: dialog_id.clone(),
                    turn_id,
                    state,
                    macro_action,
                    next_state,
                });
                turn_id += 1;
                continue;
            }
            let seq = decompose_macro(&macro_action)?;
            let states = replay_sequential(world, &state, &seq)?;
            let mut prev = state;
            for (&a, s) in seq.iter().zip(states) {
                samples.push(TurnSample {
                    dialog_id: dialog_id.clone(),
                    turn_id,
                    state: prev,
                    macro_action: MacroAction::new([a]),
                    next_state: s.clone(),
                });
                turn_id += 1;
                prev = s;
            }
        }
    }
    Ok(Corpus {
        schema: world.corpus_schema(),
        vocab: world.system_vocab().clone(),
        layout: world.layout().clone(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_vocab, load_corpus, to_raw, write_corpus};

    #[test]
    fn expert_succeeds_on_every_goal() {
        let w = ToyWorld::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let goal = sample_goal(&w, &mut rng).unwrap();
            let log = run_episode(&w, &mut ExpertPolicy(&w), &goal, DEFAULT_MAX_TURNS, &mut rng).unwrap();
            assert!(log.done && log.matched, "{log:#?}");
            assert!(log.requested.is_subset(&log.provided));
            assert!(log.n_turns < DEFAULT_MAX_TURNS);
        }
    }

    #[test]
    fn silent_policy_runs_out_of_turns() {
        let w = ToyWorld::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let goal = sample_goal(&w, &mut rng).unwrap();
        let log = run_episode(&w, &mut EmptyPolicy, &goal, 7, &mut rng).unwrap();
        assert_eq!(log.n_turns, 7);
        assert!(!log.done && log.provided.is_empty());
    }

    #[test]
    fn episodes_are_reproducible() {
        let w = ToyWorld::toy();
        let goal = sample_goal(&w, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let a = run_episode(&w, &mut ExpertPolicy(&w), &goal, 20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = run_episode(&w, &mut ExpertPolicy(&w), &goal, 20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    struct Bad;
    impl DialogPolicy for Bad {
        fn act(&mut self, _: &DialogStateVector, _: &mut ChaCha8Rng) -> Result<MacroAction> {
            Ok(MacroAction::new([500]))
        }
    }

    #[test]
    fn invalid_indices_are_rejected() {
        let w = ToyWorld::toy();
        let goal = sample_goal(&w, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let err = run_episode(&w, &mut Bad, &goal, 20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap_err();
        assert!(matches!(err, PedpError::ActionIndex { index: 500, .. }));
    }

    #[test]
    fn decomposition_replay_reproduces_next_state() {
        let w = ToyWorld::toy();
        let corpus = generate_corpus(&w, 200, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut sizes = BTreeSet::new();
        for s in &corpus.samples {
            sizes.insert(s.macro_action.len());
            if s.macro_action.is_empty() {
                continue;
            }
            let seq = decompose_macro(&s.macro_action).unwrap();
            let states = replay_sequential(&w, &s.state, &seq).unwrap();
            assert_eq!(states.last().unwrap(), &s.next_state);
        }
        for k in 1..=4 {
            assert!(sizes.contains(&k), "{sizes:?}");
        }
    }

    #[test]
    fn generated_corpus_loads_and_matches_schema_vocab() {
        let w = ToyWorld::toy();
        let corpus = generate_corpus(&w, 30, true, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("corpus.jsonl");
        write_corpus(&p, &corpus).unwrap();
        let loaded = load_corpus(&p).unwrap();
        assert_eq!(loaded.samples, corpus.samples);
        let raws: Vec<_> = corpus.samples.iter().map(|s| to_raw(s, &corpus.vocab)).collect();
        assert!(build_vocab(&raws).unwrap().len() <= w.system_vocab().len());
    }

    #[test]
    fn single_action_corpus_chains_states() {
        let w = ToyWorld::toy();
        let single = generate_corpus(&w, 20, false, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let multi = generate_corpus(&w, 20, true, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(single.samples.iter().all(|s| s.macro_action.len() <= 1));
        assert!(single.samples.len() > multi.samples.len());
        let multi_ends: BTreeSet<_> = multi.samples.iter().map(|s| (s.dialog_id.clone(), s.next_state.bits().to_vec())).collect();
        let single_ends: BTreeSet<_> = single.samples.iter().map(|s| (s.dialog_id.clone(), s.next_state.bits().to_vec())).collect();
        assert!(multi_ends.is_subset(&single_ends));
    }
}
