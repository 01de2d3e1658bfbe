//! Toy domain schema, action inventories and the state layout derived from them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{write_json_pretty, ActionVocab, AtomicAction, CorpusSchema, StateLayout};
use crate::error::{PedpError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    /// Informable and requestable slot values.
    pub values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub informable: Vec<SlotSpec>,
    pub requestable: Vec<String>,
    pub entities: Vec<Entity>,
}

impl DomainSpec {
    pub fn informable_index(&self, slot: &str) -> Option<usize> {
        self.informable.iter().position(|s| s.slot == slot)
    }

    pub fn requestable_index(&self, slot: &str) -> Option<usize> {
        self.requestable.iter().position(|s| s == slot)
    }

    /// Entities agreeing with every non-`dontcare` constraint.
    pub fn matching<'a>(&'a self, constraints: &'a BTreeMap<String, String>) -> impl Iterator<Item = usize> + 'a {
        self.entities.iter().enumerate().filter_map(move |(i, e)| {
            constraints
                .iter()
                .all(|(slot, v)| v == DONTCARE || e.values.get(slot) == Some(v))
                .then_some(i)
        })
    }
}

pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub domains: Vec<DomainSpec>,
}

fn check_name(what: &str, name: &str) -> Result<()> {
    if name.is_empty() || name.contains('-') || name.contains(char::is_whitespace) {
        return Err(PedpError::Config(format!("invalid {what} name {name:?}")));
    }
    Ok(())
}

impl DomainSchema {
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(PedpError::Config("schema declares no domains".into()));
        }
        let mut names = BTreeSet::new();
        for d in &self.domains {
            check_name("domain", &d.name)?;
            if !names.insert(&d.name) {
                return Err(PedpError::Config(format!("duplicate domain {}", d.name)));
            }
            if d.informable.is_empty() || d.requestable.is_empty() || d.entities.is_empty() {
                return Err(PedpError::Config(format!(
                    "domain {} needs informable slots, requestable slots and entities",
                    d.name
                )));
            }
            let mut slots = BTreeSet::new();
            for s in &d.informable {
                check_name("slot", &s.slot)?;
                if s.values.is_empty() || s.values.iter().any(|v| v == DONTCARE) {
                    return Err(PedpError::Config(format!("slot {}-{} has a bad value set", d.name, s.slot)));
                }
                if !slots.insert(s.slot.as_str()) {
                    return Err(PedpError::Config(format!("duplicate slot {}-{}", d.name, s.slot)));
                }
            }
            for r in &d.requestable {
                check_name("slot", r)?;
                if matches!(r.as_str(), "name" | "choice" | "none") || !slots.insert(r.as_str()) {
                    return Err(PedpError::Config(format!("slot name {}-{r} is reserved or duplicated", d.name)));
                }
            }
            for e in &d.entities {
                for s in &d.informable {
                    match e.values.get(&s.slot) {
                        Some(v) if s.values.contains(v) => {}
                        _ => {
                            return Err(PedpError::Config(format!(
                                "entity {} lacks a valid {} value",
                                e.name, s.slot
                            )))
                        }
                    }
                }
                for r in &d.requestable {
                    if e.values.get(r).map_or(true, |v| v.is_empty()) {
                        return Err(PedpError::Config(format!("entity {} lacks {r}", e.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PedpError::io(path, e))?;
        let schema: DomainSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json_pretty(path, self)
    }

    /// Two domains, four informable and three requestable slots each, 20 entities per domain.
    pub fn toy() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x70f1);
        let slot = |name: &str, values: &[&str]| SlotSpec {
            slot: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        };
        let areas = ["north", "south", "east", "west"];
        let prices = ["cheap", "moderate", "expensive"];
        let hotel = vec![
            slot("area", &areas),
            slot("price", &prices),
            slot("stars", &["3", "4", "5"]),
            slot("parking", &["yes", "no"]),
        ];
        let restaurant = vec![
            slot("area", &areas),
            slot("price", &prices),
            slot("food", &["italian", "chinese", "indian", "british"]),
            slot("seating", &["indoor", "outdoor"]),
        ];
        let requestable: Vec<String> = ["address", "phone", "postcode"].iter().map(|s| s.to_string()).collect();
        let streets = ["mill road", "regent street", "hills road", "trumpington street", "castle street"];
        let mut domain = |name: &str, informable: Vec<SlotSpec>| {
            let entities = (0..20)
                .map(|i| {
                    let mut values = BTreeMap::new();
                    for s in &informable {
                        values.insert(s.slot.clone(), s.values.choose(&mut rng).unwrap().clone());
                    }
                    let street = streets.choose(&mut rng).unwrap();
                    values.insert("address".into(), format!("{} {street}", rng.gen_range(1..200)));
                    values.insert("phone".into(), format!("01223{:06}", rng.gen_range(0..1_000_000)));
                    values.insert("postcode".into(), format!("cb{} {}{}", rng.gen_range(1..6), rng.gen_range(1..10), ["aa", "bd", "ex", "qf"].choose(&mut rng).unwrap()));
                    Entity {
                        name: format!("{name}_{i:02}"),
                        values,
                    }
                })
                .collect();
            DomainSpec {
                name: name.into(),
                informable,
                requestable: requestable.clone(),
                entities,
            }
        };
        DomainSchema {
            domains: vec![domain("hotel", hotel), domain("restaurant", restaurant)],
        }
    }
}

/// Per-domain belief fields in the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeliefField {
    Informed(usize),
    Outstanding(usize),
    SysInformed(usize),
    Offered,
    BookRequested,
    Booked,
}

/// Match-count buckets: 0, 1, 2-5, more than 5.
pub const AVAILABILITY_BUCKETS: usize = 4;

pub fn availability_bucket(count: usize) -> usize {
    match count {
        0 => 0,
        1 => 1,
        2..=5 => 2,
        _ => 3,
    }
}

/// A schema together with its system/user inventories and state layout.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    schema: DomainSchema,
    system_vocab: ActionVocab,
    user_vocab: ActionVocab,
    layout: StateLayout,
    belief_offsets: Vec<usize>,
}

pub fn system_actions(schema: &DomainSchema) -> Vec<AtomicAction> {
    let mut out = Vec::new();
    for d in &schema.domains {
        for s in &d.informable {
            out.push(AtomicAction::new(&d.name, "request", &s.slot));
        }
        for r in &d.requestable {
            out.push(AtomicAction::new(&d.name, "inform", r));
        }
        out.push(AtomicAction::new(&d.name, "inform", "name"));
        out.push(AtomicAction::new(&d.name, "inform", "choice"));
        out.push(AtomicAction::new(&d.name, "book", "none"));
    }
    out
}

pub fn user_actions(schema: &DomainSchema) -> Vec<AtomicAction> {
    let mut out = Vec::new();
    for d in &schema.domains {
        for s in &d.informable {
            out.push(AtomicAction::new(&d.name, "inform", &s.slot));
        }
        for r in &d.requestable {
            out.push(AtomicAction::new(&d.name, "request", r));
        }
        out.push(AtomicAction::new(&d.name, "book", "none"));
    }
    out
}

impl ToyWorld {
    pub fn new(schema: DomainSchema) -> Result<Self> {
        schema.validate()?;
        let system_vocab = ActionVocab::from_actions(system_actions(&schema));
        let user_vocab = ActionVocab::from_actions(user_actions(&schema));
        let belief_widths: Vec<usize> = schema
            .domains
            .iter()
            .map(|d| d.informable.len() + 2 * d.requestable.len() + 3)
            .collect();
        let belief_width: usize = belief_widths.iter().sum();
        let layout = StateLayout::sequential([
            ("entity_availability", AVAILABILITY_BUCKETS * schema.domains.len()),
            ("user_action", user_vocab.len()),
            ("system_action", system_vocab.len()),
            ("belief", belief_width),
        ]);
        let base = layout.segment("belief").unwrap().start;
        let mut belief_offsets = Vec::new();
        let mut at = base;
        for w in belief_widths {
            belief_offsets.push(at);
            at += w;
        }
        Ok(ToyWorld {
            schema,
            system_vocab,
            user_vocab,
            layout,
            belief_offsets,
        })
    }

    pub fn toy() -> Self {
        Self::new(DomainSchema::toy()).expect("built-in schema is valid")
    }

    pub fn schema(&self) -> &DomainSchema {
        &self.schema
    }

    pub fn system_vocab(&self) -> &ActionVocab {
        &self.system_vocab
    }

    pub fn user_vocab(&self) -> &ActionVocab {
        &self.user_vocab
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn state_width(&self) -> usize {
        self.layout.width()
    }

    pub fn corpus_schema(&self) -> CorpusSchema {
        CorpusSchema::new(&self.layout, &self.system_vocab)
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.schema.domains.iter().position(|d| d.name == name)
    }

    pub fn domain(&self, index: usize) -> &DomainSpec {
        &self.schema.domains[index]
    }

    pub fn availability_bit(&self, domain: usize, bucket: usize) -> usize {
        self.layout.segment("entity_availability").unwrap().start + domain * AVAILABILITY_BUCKETS + bucket
    }

    pub fn user_bit(&self, user_action: usize) -> usize {
        self.layout.segment("user_action").unwrap().start + user_action
    }

    pub fn system_bit(&self, system_action: usize) -> usize {
        self.layout.segment("system_action").unwrap().start + system_action
    }

    pub fn belief_bit(&self, domain: usize, field: BeliefField) -> usize {
        let d = self.domain(domain);
        let (ni, nr) = (d.informable.len(), d.requestable.len());
        let off = match field {
            BeliefField::Informed(i) => i,
            BeliefField::Outstanding(r) => ni + r,
            BeliefField::SysInformed(r) => ni + nr + r,
            BeliefField::Offered => ni + 2 * nr,
            BeliefField::BookRequested => ni + 2 * nr + 1,
            BeliefField::Booked => ni + 2 * nr + 2,
        };
        self.belief_offsets[domain] + off
    }

    pub fn system_index(&self, domain: &str, intent: &str, slot: &str) -> Option<usize> {
        self.system_vocab.index_of(&AtomicAction::new(domain, intent, slot))
    }
}

/// One domain's part of a user goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGoal {
    pub domain: String,
    /// Informable slot to required value; unlisted slots are `dontcare`.
    pub constraints: BTreeMap<String, String>,
    pub requests: Vec<String>,
    pub book: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub domains: Vec<DomainGoal>,
}

impl UserGoal {
    pub fn get(&self, domain: &str) -> Option<&DomainGoal> {
        self.domains.iter().find(|g| g.domain == domain)
    }

    /// `domain-slot` names of every requested slot.
    pub fn requested(&self) -> BTreeSet<String> {
        self.domains
            .iter()
            .flat_map(|g| g.requests.iter().map(move |r| format!("{}-{r}", g.domain)))
            .collect()
    }
}

fn nonempty_subset<T: Clone, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> Vec<T> {
    loop {
        let pick: Vec<T> = items.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
        if !pick.is_empty() {
            return pick;
        }
    }
}

/// One or two domains; constraints copied from a random entity so the goal is satisfiable.
pub fn sample_goal<R: Rng + ?Sized>(world: &ToyWorld, rng: &mut R) -> Result<UserGoal> {
    let schema = world.schema();
    for _ in 0..100 {
        let n = if schema.domains.len() > 1 && rng.gen_bool(0.5) { 2 } else { 1 };
        let mut order: Vec<usize> = (0..schema.domains.len()).collect();
        order.shuffle(rng);
        let mut domains = Vec::new();
        for &di in &order[..n] {
            let d = &schema.domains[di];
            let entity = d.entities.choose(rng).unwrap();
            let slots: Vec<&SlotSpec> = d.informable.iter().collect();
            let constraints = nonempty_subset(&slots, rng)
                .into_iter()
                .map(|s| (s.slot.clone(), entity.values[&s.slot].clone()))
                .collect();
            let requests = nonempty_subset(&d.requestable, rng);
            domains.push(DomainGoal {
                domain: d.name.clone(),
                constraints,
                requests,
                book: rng.gen_bool(0.5),
            });
        }
        let ok = domains.iter().all(|g| {
            let d = &schema.domains[world.domain_index(&g.domain).unwrap()];
            d.matching(&g.constraints).next().is_some()
        });
        if ok {
            return Ok(UserGoal { domains });
        }
    }
    Err(PedpError::Simulator("no satisfiable goal after 100 draws".into()))
}
