//! Rule-based state tracker producing the multi-hot dialog state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{AtomicAction, DialogStateVector, MacroAction};
use crate::error::{PedpError, Result};

use super::schema::{availability_bucket, BeliefField, ToyWorld, AVAILABILITY_BUCKETS};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserIntent {
    Inform { slot: String, value: String },
    Request { slot: String },
    Book,
}

/// A user dialog act with its value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserAct {
    pub domain: String,
    pub intent: UserIntent,
}

impl UserAct {
    pub fn atomic(&self) -> AtomicAction {
        match &self.intent {
            UserIntent::Inform { slot, .. } => AtomicAction::new(&self.domain, "inform", slot),
            UserIntent::Request { slot } => AtomicAction::new(&self.domain, "request", slot),
            UserIntent::Book => AtomicAction::new(&self.domain, "book", "none"),
        }
    }

    /// `domain-intent-slot`, with `=value` for informs.
    pub fn label(&self) -> String {
        match &self.intent {
            UserIntent::Inform { value, .. } => format!("{}={value}", self.atomic()),
            _ => self.atomic().to_string(),
        }
    }
}

/// Applies system acts to a state. The system-action segment is cleared
/// first when `fresh` (first system act since the last user act), and
/// accumulates otherwise; all belief updates are order-independent.
pub fn apply_system_acts(
    world: &ToyWorld,
    state: &DialogStateVector,
    acts: &MacroAction,
    fresh: bool,
) -> Result<DialogStateVector> {
    let vocab = world.system_vocab();
    let mut next = state.clone();
    if fresh && !acts.is_empty() {
        let seg = world.layout().segment("system_action").unwrap();
        for i in seg.start..seg.start + seg.len {
            next.set(i, false);
        }
    }
    for a in acts.iter() {
        let act = vocab.get(a).ok_or(PedpError::ActionIndex {
            index: a,
            size: vocab.len(),
        })?;
        next.set(world.system_bit(a), true);
        let d = world
            .domain_index(&act.domain)
            .ok_or_else(|| PedpError::Simulator(format!("unknown domain in {act}")))?;
        let spec = world.domain(d);
        match (act.intent.as_str(), act.slot.as_str()) {
            ("inform", "name") => next.set(world.belief_bit(d, BeliefField::Offered), true),
            ("book", _) => next.set(world.belief_bit(d, BeliefField::Booked), true),
            ("inform", slot) => {
                if let Some(r) = spec.requestable_index(slot) {
                    next.set(world.belief_bit(d, BeliefField::Outstanding(r)), false);
                    next.set(world.belief_bit(d, BeliefField::SysInformed(r)), true);
                }
            }
            _ => {}
        }
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct Tracker<'w> {
    world: &'w ToyWorld,
    state: DialogStateVector,
    told: Vec<BTreeMap<String, String>>,
    fresh: bool,
}

impl<'w> Tracker<'w> {
    pub fn new(world: &'w ToyWorld) -> Self {
        let mut t = Tracker {
            world,
            state: DialogStateVector::zeros(world.state_width()),
            told: vec![BTreeMap::new(); world.schema().domains.len()],
            fresh: true,
        };
        t.refresh_availability();
        t
    }

    pub fn state(&self) -> &DialogStateVector {
        &self.state
    }

    fn refresh_availability(&mut self) {
        for (d, told) in self.told.iter().enumerate() {
            let count = self.world.domain(d).matching(told).count();
            let bucket = availability_bucket(count);
            for b in 0..AVAILABILITY_BUCKETS {
                self.state.set(self.world.availability_bit(d, b), b == bucket);
            }
        }
    }

    pub fn apply_user(&mut self, acts: &[UserAct]) -> Result<()> {
        let seg = self.world.layout().segment("user_action").unwrap().clone();
        for i in seg.start..seg.start + seg.len {
            self.state.set(i, false);
        }
        for act in acts {
            let idx = self
                .world
                .user_vocab()
                .index_of(&act.atomic())
                .ok_or_else(|| PedpError::Simulator(format!("unknown user act {}", act.atomic())))?;
            self.state.set(self.world.user_bit(idx), true);
            let d = self.world.domain_index(&act.domain).unwrap();
            let spec = self.world.domain(d);
            match &act.intent {
                UserIntent::Inform { slot, value } => {
                    let i = spec.informable_index(slot).unwrap();
                    self.state.set(self.world.belief_bit(d, BeliefField::Informed(i)), true);
                    self.told[d].insert(slot.clone(), value.clone());
                }
                UserIntent::Request { slot } => {
                    let r = spec.requestable_index(slot).unwrap();
                    self.state.set(self.world.belief_bit(d, BeliefField::Outstanding(r)), true);
                }
                UserIntent::Book => self.state.set(self.world.belief_bit(d, BeliefField::BookRequested), true),
            }
        }
        self.refresh_availability();
        self.fresh = true;
        Ok(())
    }

    pub fn apply_system(&mut self, acts: &MacroAction) -> Result<()> {
        self.state = apply_system_acts(self.world, &self.state, acts, self.fresh)?;
        if !acts.is_empty() {
            self.fresh = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inform(domain: &str, slot: &str, value: &str) -> UserAct {
        UserAct {
            domain: domain.into(),
            intent: UserIntent::Inform {
                slot: slot.into(),
                value: value.into(),
            },
        }
    }

    #[test]
    fn availability_tracks_constraints() {
        let w = ToyWorld::toy();
        let mut t = Tracker::new(&w);
        assert!(t.state().get(w.availability_bit(0, 3)));
        let e = &w.domain(0).entities[0];
        let acts: Vec<UserAct> = w.domain(0)
            .informable
            .iter()
            .map(|s| inform("hotel", &s.slot, &e.values[&s.slot]))
            .collect();
        t.apply_user(&acts).unwrap();
        let count = w.domain(0).matching(&t.told[0]).count();
        assert!(count >= 1);
        assert!(t.state().get(w.availability_bit(0, availability_bucket(count))));
        for i in 0..4 {
            assert!(t.state().get(w.belief_bit(0, BeliefField::Informed(i))));
        }
        assert!(t.state().get(w.availability_bit(1, 3)));
    }

    #[test]
    fn system_segment_accumulates_until_user_speaks() {
        let w = ToyWorld::toy();
        let mut t = Tracker::new(&w);
        t.apply_user(&[inform("hotel", "area", "north")]).unwrap();
        let a = w.system_index("hotel", "request", "price").unwrap();
        let b = w.system_index("hotel", "inform", "name").unwrap();
        t.apply_system(&MacroAction::new([a])).unwrap();
        t.apply_system(&MacroAction::new([b])).unwrap();
        assert!(t.state().get(w.system_bit(a)) && t.state().get(w.system_bit(b)));
        t.apply_user(&[inform("hotel", "price", "cheap")]).unwrap();
        t.apply_system(&MacroAction::new([b])).unwrap();
        assert!(!t.state().get(w.system_bit(a)));
        assert!(t.state().get(w.belief_bit(0, BeliefField::Offered)));
    }

    #[test]
    fn inform_clears_outstanding_request() {
        let w = ToyWorld::toy();
        let mut t = Tracker::new(&w);
        t.apply_user(&[UserAct {
            domain: "restaurant".into(),
            intent: UserIntent::Request { slot: "phone".into() },
        }])
        .unwrap();
        let r = w.domain(1).requestable_index("phone").unwrap();
        assert!(t.state().get(w.belief_bit(1, BeliefField::Outstanding(r))));
        let a = w.system_index("restaurant", "inform", "phone").unwrap();
        t.apply_system(&MacroAction::new([a])).unwrap();
        assert!(!t.state().get(w.belief_bit(1, BeliefField::Outstanding(r))));
        assert!(t.state().get(w.belief_bit(1, BeliefField::SysInformed(r))));
        assert!(t.apply_system(&MacroAction::new([99])).is_err());
    }
}
