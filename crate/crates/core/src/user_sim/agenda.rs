//! Agenda-based user simulator.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::domain::MacroAction;
use crate::error::{PedpError, Result};

use super::schema::{ToyWorld, UserGoal, DONTCARE};
use super::tracker::{UserAct, UserIntent};

/// Agenda-driven user holding a fixed goal.
#[derive(Debug, Clone)]
pub struct UserSimulator<'w> {
    world: &'w ToyWorld,
    goal: UserGoal,
    /// Stack of act groups; the last group is on top.
    agenda: Vec<Vec<UserAct>>,
    told: BTreeMap<String, BTreeMap<String, String>>,
    offered: BTreeMap<String, usize>,
    booked: BTreeMap<String, usize>,
    received: BTreeSet<String>,
    provided: BTreeSet<String>,
}

impl<'w> UserSimulator<'w> {
    /// Per goal domain (first domain on top): constraint informs, requests
    /// (merged into the first group with probability 0.5), then booking.
    pub fn new<R: Rng + ?Sized>(world: &'w ToyWorld, goal: UserGoal, rng: &mut R) -> Result<Self> {
        for g in &goal.domains {
            let d = world
                .domain_index(&g.domain)
                .ok_or_else(|| PedpError::Simulator(format!("goal names unknown domain {}", g.domain)))?;
            let spec = world.domain(d);
            if g.requests.is_empty() {
                return Err(PedpError::Simulator(format!("goal for {} requests nothing", g.domain)));
            }
            if g.constraints.keys().any(|s| spec.informable_index(s).is_none())
                || g.requests.iter().any(|r| spec.requestable_index(r).is_none())
            {
                return Err(PedpError::Simulator(format!("goal for {} uses unknown slots", g.domain)));
            }
        }
        let mut agenda = Vec::new();
        for g in goal.domains.iter().rev() {
            let requests: Vec<UserAct> = g
                .requests
                .iter()
                .map(|r| UserAct {
                    domain: g.domain.clone(),
                    intent: UserIntent::Request { slot: r.clone() },
                })
                .collect();
            let mut first: Vec<UserAct> = Vec::new();
            loop {
                for (slot, value) in &g.constraints {
                    if rng.gen_bool(0.5) {
                        first.push(UserAct {
                            domain: g.domain.clone(),
                            intent: UserIntent::Inform {
                                slot: slot.clone(),
                                value: value.clone(),
                            },
                        });
                    }
                }
                if !first.is_empty() || g.constraints.is_empty() {
                    break;
                }
            }
            if g.book {
                agenda.push(vec![UserAct {
                    domain: g.domain.clone(),
                    intent: UserIntent::Book,
                }]);
            }
            if rng.gen_bool(0.5) {
                first.extend(requests);
            } else {
                agenda.push(requests);
            }
            if !first.is_empty() {
                agenda.push(first);
            }
        }
        Ok(UserSimulator {
            world,
            goal,
            agenda,
            told: BTreeMap::new(),
            offered: BTreeMap::new(),
            booked: BTreeMap::new(),
            received: BTreeSet::new(),
            provided: BTreeSet::new(),
        })
    }

    pub fn goal(&self) -> &UserGoal {
        &self.goal
    }

    /// `domain-slot` names the system informed while an entity was on offer.
    pub fn provided(&self) -> &BTreeSet<String> {
        &self.provided
    }

    /// Booked entity name per domain.
    pub fn booked(&self) -> BTreeMap<String, String> {
        self.booked
            .iter()
            .map(|(d, &e)| {
                let spec = self.world.domain(self.world.domain_index(d).unwrap());
                (d.clone(), spec.entities[e].name.clone())
            })
            .collect()
    }

    /// Every booking-required domain has a booked entity meeting its constraints.
    pub fn matched(&self) -> bool {
        self.goal.domains.iter().filter(|g| g.book).all(|g| {
            let spec = self.world.domain(self.world.domain_index(&g.domain).unwrap());
            self.booked.get(&g.domain).is_some_and(|&e| {
                let entity = &spec.entities[e];
                g.constraints.iter().all(|(s, v)| entity.values.get(s) == Some(v))
            })
        })
    }

    fn satisfied(&self, act: &UserAct) -> bool {
        match &act.intent {
            UserIntent::Inform { .. } => false,
            UserIntent::Request { slot } => self.received.contains(&format!("{}-{slot}", act.domain)),
            UserIntent::Book => self.booked.contains_key(&act.domain),
        }
    }

    fn answer(&self, domain: &str, slot: &str) -> UserAct {
        let value = self
            .goal
            .get(domain)
            .and_then(|g| g.constraints.get(slot))
            .cloned()
            .unwrap_or_else(|| DONTCARE.to_string());
        UserAct {
            domain: domain.into(),
            intent: UserIntent::Inform {
                slot: slot.into(),
                value,
            },
        }
    }

    /// Emits the top group (dropping satisfied acts); informs are popped,
    /// requests and booking stay until satisfied. Empty agenda means done.
    pub fn next_acts(&mut self) -> (Vec<UserAct>, bool) {
        let agenda = std::mem::take(&mut self.agenda);
        self.agenda = agenda
            .into_iter()
            .map(|g| g.into_iter().filter(|a| !self.satisfied(a)).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect();
        let Some(top) = self.agenda.pop() else {
            return (Vec::new(), true);
        };
        for a in &top {
            if let UserIntent::Inform { slot, value } = &a.intent {
                self.told
                    .entry(a.domain.clone())
                    .or_default()
                    .insert(slot.clone(), value.clone());
            }
        }
        let sticky: Vec<UserAct> = top
            .iter()
            .filter(|a| !matches!(a.intent, UserIntent::Inform { .. }))
            .cloned()
            .collect();
        if !sticky.is_empty() {
            self.agenda.push(sticky);
        }
        let mut acts = top;
        acts.sort();
        (acts, false)
    }

    /// Reacts to a system macro-action, then produces the next user acts.
    pub fn respond(&mut self, system: &MacroAction) -> Result<(Vec<UserAct>, bool)> {
        let vocab = self.world.system_vocab();
        let acts = system
            .iter()
            .map(|i| {
                vocab.get(i).cloned().ok_or(PedpError::ActionIndex {
                    index: i,
                    size: vocab.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let in_goal = |d: &str| self.goal.get(d).is_some();
        for a in acts.iter().filter(|a| a.intent == "inform" && a.slot == "name") {
            if !in_goal(&a.domain) {
                continue;
            }
            let spec = self.world.domain(self.world.domain_index(&a.domain).unwrap());
            let told = self.told.get(&a.domain).cloned().unwrap_or_default();
            let first = spec.matching(&told).next();
            if let Some(e) = first {
                self.offered.insert(a.domain.clone(), e);
            }
        }
        for a in &acts {
            if !in_goal(&a.domain) {
                continue;
            }
            let spec = self.world.domain(self.world.domain_index(&a.domain).unwrap());
            match a.intent.as_str() {
                "inform" if spec.requestable_index(&a.slot).is_some() => {
                    if self.offered.contains_key(&a.domain) {
                        let key = format!("{}-{}", a.domain, a.slot);
                        self.provided.insert(key.clone());
                        self.received.insert(key);
                    }
                }
                "book" => {
                    if let Some(&e) = self.offered.get(&a.domain) {
                        self.booked.insert(a.domain.clone(), e);
                    }
                }
                _ => {}
            }
        }
        let answers: Vec<UserAct> = acts
            .iter()
            .filter(|a| a.intent == "request" && in_goal(&a.domain))
            .map(|a| self.answer(&a.domain, &a.slot))
            .collect();
        if !answers.is_empty() {
            self.agenda.push(answers);
        }
        Ok(self.next_acts())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::user_sim::schema::DomainGoal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn goal(book: bool) -> UserGoal {
        let w = ToyWorld::toy();
        let e = &w.domain(0).entities[0];
        UserGoal {
            domains: vec![DomainGoal {
                domain: "hotel".into(),
                constraints: [("area".to_string(), e.values["area"].clone())].into(),
                requests: vec!["phone".into()],
                book,
            }],
        }
    }

    #[test]
    fn informing_the_only_request_finishes() {
        let w = ToyWorld::toy();
        let mut u = UserSimulator::new(&w, goal(false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (first, done) = u.next_acts();
        assert!(!done && !first.is_empty());
        let name = w.system_index("hotel", "inform", "name").unwrap();
        let phone = w.system_index("hotel", "inform", "phone").unwrap();
        let mut done = false;
        for _ in 0..3 {
            let (_, d) = u.respond(&MacroAction::new([name, phone])).unwrap();
            done = d;
            if done {
                break;
            }
        }
        assert!(done);
        assert_eq!(u.provided().iter().cloned().collect::<Vec<_>>(), vec!["hotel-phone".to_string()]);
        assert!(u.matched());
    }

    #[test]
    fn irrelevant_macro_repeats_the_agenda_top() {
        let w = ToyWorld::toy();
        let mut u = UserSimulator::new(&w, goal(true), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let _ = u.next_acts();
        let (a, _) = u.respond(&MacroAction::empty()).unwrap();
        let (b, done) = u.respond(&MacroAction::empty()).unwrap();
        assert!(!done);
        assert_eq!(a, b);
        assert!(!u.matched());
    }

    #[test]
    fn system_request_gets_goal_value_or_dontcare() {
        let w = ToyWorld::toy();
        let mut u = UserSimulator::new(&w, goal(false), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let _ = u.next_acts();
        let area = w.system_index("hotel", "request", "area").unwrap();
        let stars = w.system_index("hotel", "request", "stars").unwrap();
        let (acts, _) = u.respond(&MacroAction::new([area, stars])).unwrap();
        let labels: Vec<String> = acts.iter().map(|a| a.label()).collect();
        let want_area = format!("hotel-inform-area={}", w.domain(0).entities[0].values["area"]);
        assert!(labels.contains(&want_area), "{labels:?}");
        assert!(labels.contains(&"hotel-inform-stars=dontcare".to_string()));
    }

    #[test]
    fn informs_without_offer_do_not_count() {
        let w = ToyWorld::toy();
        let mut u = UserSimulator::new(&w, goal(false), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let _ = u.next_acts();
        let phone = w.system_index("hotel", "inform", "phone").unwrap();
        let (_, done) = u.respond(&MacroAction::new([phone])).unwrap();
        assert!(!done);
        assert!(u.provided().is_empty());
    }
}
