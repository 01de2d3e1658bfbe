//! Scripted expert: a deterministic function of the state vector.

use crate::domain::{DialogStateVector, MacroAction};

use super::schema::{BeliefField, ToyWorld};

/// Domain of the lowest-indexed active user act.
pub fn current_domain(world: &ToyWorld, state: &DialogStateVector) -> Option<usize> {
    (0..world.user_vocab().len())
        .find(|&i| state.get(world.user_bit(i)))
        .and_then(|i| world.domain_index(&world.user_vocab().get(i).unwrap().domain))
}

pub fn expert_macro(world: &ToyWorld, state: &DialogStateVector) -> MacroAction {
    let mut out = MacroAction::empty();
    let Some(d) = current_domain(world, state) else {
        return out;
    };
    let spec = world.domain(d);
    let bit = |f| state.get(world.belief_bit(d, f));
    let idx = |intent: &str, slot: &str| world.system_index(&spec.name, intent, slot).unwrap();

    let missing: Vec<usize> = (0..spec.informable.len())
        .filter(|&i| !bit(BeliefField::Informed(i)))
        .collect();
    if !missing.is_empty() {
        for &i in missing.iter().take(2) {
            out.insert(idx("request", &spec.informable[i].slot));
        }
        if state.get(world.availability_bit(d, 3)) {
            out.insert(idx("inform", "choice"));
        }
        return out;
    }
    let offered = bit(BeliefField::Offered);
    if !offered {
        out.insert(idx("inform", "name"));
    }
    for (r, slot) in spec.requestable.iter().enumerate() {
        if bit(BeliefField::Outstanding(r)) {
            out.insert(idx("inform", slot));
        }
    }
    if bit(BeliefField::BookRequested) && !bit(BeliefField::Booked) {
        out.insert(idx("book", "none"));
    }
    out
}
