//! Action vocabulary, macro-actions, the multi-hot dialog state and corpus I/O.
//!
//! An atomic action is a `domain-intent-slot` triple. A macro-action is the set
//! of atomic actions a system emits in one turn and is interchangeably viewed
//! as a binary vector over the vocabulary.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PedpError, Result};

/// One `domain-intent-slot` triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomicAction {
    pub domain: String,
    pub intent: String,
    pub slot: String,
}

impl AtomicAction {
    pub fn new(domain: impl Into<String>, intent: impl Into<String>, slot: impl Into<String>) -> Self {
        AtomicAction {
            domain: domain.into(),
            intent: intent.into(),
            slot: slot.into(),
        }
    }
}

impl fmt::Display for AtomicAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.domain, self.intent, self.slot)
    }
}

impl FromStr for AtomicAction {
    type Err = PedpError;

    fn from_str(s: &str) -> Result<Self> {
        parse_action(s)
    }
}

/// Parses `domain-intent-slot`. Exactly two dashes, every part nonempty.
pub fn parse_action(text: &str) -> Result<AtomicAction> {
    let err = |reason| PedpError::ParseAction {
        text: text.to_string(),
        reason,
    };
    let parts: Vec<&str> = text.split('-').collect();
    if parts.len() != 3 {
        return Err(err("expected exactly three dash-separated parts"));
    }
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty part"));
    }
    Ok(AtomicAction::new(parts[0], parts[1], parts[2]))
}

/// Lexicographically ordered action inventory with a stable content digest.
#[derive(Debug, Clone)]
pub struct ActionVocab {
    actions: Vec<AtomicAction>,
    index: HashMap<AtomicAction, usize>,
    digest: String,
}

impl PartialEq for ActionVocab {
    fn eq(&self, other: &Self) -> bool {
        self.actions == other.actions
    }
}

impl ActionVocab {
    /// Sorts and deduplicates. Indices equal positions in the sorted list.
    pub fn from_actions(actions: impl IntoIterator<Item = AtomicAction>) -> Self {
        let actions: Vec<AtomicAction> = actions
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = actions
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        let digest = vocab_digest(actions.iter().map(|a| a.to_string()));
        ActionVocab {
            actions,
            index,
            digest,
        }
    }

    pub fn from_strings<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let parsed = names
            .iter()
            .map(|s| parse_action(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_actions(parsed))
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn actions(&self) -> &[AtomicAction] {
        &self.actions
    }

    pub fn get(&self, index: usize) -> Option<&AtomicAction> {
        self.actions.get(index)
    }

    pub fn index_of(&self, action: &AtomicAction) -> Option<usize> {
        self.index.get(action).copied()
    }

    pub fn names(&self) -> Vec<String> {
        self.actions.iter().map(|a| a.to_string()).collect()
    }

    /// Vector view of a set of actions; every unknown action is reported.
    pub fn encode_macro<'a>(
        &self,
        actions: impl IntoIterator<Item = &'a AtomicAction>,
    ) -> Result<Vec<u8>> {
        let mut out = vec![0u8; self.len()];
        let mut unknown = Vec::new();
        for a in actions {
            match self.index_of(a) {
                Some(i) => out[i] = 1,
                None => unknown.push(a.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(PedpError::UnknownActions(unknown));
        }
        Ok(out)
    }

    pub fn macro_from_strings<S: AsRef<str>>(&self, names: &[S]) -> Result<MacroAction> {
        let mut members = BTreeSet::new();
        let mut unknown = Vec::new();
        for name in names {
            let a = parse_action(name.as_ref())?;
            match self.index_of(&a) {
                Some(i) => {
                    members.insert(i);
                }
                None => unknown.push(a.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(PedpError::UnknownActions(unknown));
        }
        Ok(MacroAction { members })
    }

    pub fn macro_to_strings(&self, m: &MacroAction) -> Vec<String> {
        m.iter()
            .filter_map(|i| self.get(i).map(|a| a.to_string()))
            .collect()
    }
}

/// sha256 over newline-terminated action names.
pub fn vocab_digest(names: impl IntoIterator<Item = String>) -> String {
    let mut hasher = Sha256::new();
    for n in names {
        hasher.update(n.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Builds the vocabulary from every action appearing in any macro-action label.
pub fn build_vocab(corpus: &[RawTurn]) -> Result<ActionVocab> {
    if corpus.is_empty() {
        return Err(PedpError::EmptyCorpus);
    }
    let mut actions = BTreeSet::new();
    for turn in corpus {
        for name in &turn.macro_action {
            actions.insert(parse_action(name)?);
        }
    }
    Ok(ActionVocab::from_actions(actions))
}

/// A set of atomic-action indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacroAction {
    members: BTreeSet<usize>,
}

impl MacroAction {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        MacroAction {
            members: members.into_iter().collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Validated construction: every index must lie in `[0, size)`.
    pub fn checked(members: impl IntoIterator<Item = usize>, size: usize) -> Result<Self> {
        let m = Self::new(members);
        if let Some(&bad) = m.members.iter().find(|&&i| i >= size) {
            return Err(PedpError::ActionIndex { index: bad, size });
        }
        Ok(m)
    }

    /// Entries > 0.5 are members.
    pub fn from_vector(v: &[f64]) -> Self {
        Self::new(v.iter().enumerate().filter(|(_, &x)| x > 0.5).map(|(i, _)| i))
    }

    pub fn from_bits(v: &[u8]) -> Self {
        Self::new(v.iter().enumerate().filter(|(_, &x)| x != 0).map(|(i, _)| i))
    }

    pub fn to_vector(&self, size: usize) -> Vec<f64> {
        let mut v = vec![0.0; size];
        for &i in &self.members {
            v[i] = 1.0;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.members.contains(&index)
    }

    pub fn insert(&mut self, index: usize) -> bool {
        self.members.insert(index)
    }

    /// Ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn intersection_len(&self, other: &MacroAction) -> usize {
        self.members.intersection(&other.members).count()
    }
}

impl FromIterator<usize> for MacroAction {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self::new(iter)
    }
}

/// Canonical single-action order: members sorted by vocabulary index.
pub fn decompose_macro(m: &MacroAction) -> Result<Vec<usize>> {
    if m.is_empty() {
        return Err(PedpError::EmptyMacro);
    }
    Ok(m.iter().collect())
}

/// A named span of the state vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Disjoint named segments covering `[0, width)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    segments: Vec<Segment>,
}

impl StateLayout {
    /// Segments are laid out back to back in the given order.
    pub fn sequential<S: Into<String>>(spans: impl IntoIterator<Item = (S, usize)>) -> Self {
        let mut start = 0;
        let segments = spans
            .into_iter()
            .map(|(name, len)| {
                let s = Segment {
                    name: name.into(),
                    start,
                    len,
                };
                start += len;
                s
            })
            .collect();
        StateLayout { segments }
    }

    pub fn from_segments(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by_key(|s| s.start);
        let mut expected = 0;
        for s in &segments {
            if s.start != expected {
                return Err(PedpError::Config(format!(
                    "segment {:?} starts at {} but previous coverage ends at {}",
                    s.name, s.start, expected
                )));
            }
            expected += s.len;
        }
        Ok(StateLayout { segments })
    }

    pub fn width(&self) -> usize {
        self.segments.last().map_or(0, |s| s.start + s.len)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Multi-hot dialog state. Every entry is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DialogStateVector {
    bits: Vec<u8>,
}

impl DialogStateVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(PedpError::Config(format!(
                "state entry {pos} is {} (must be 0 or 1)",
                bits[pos]
            )));
        }
        Ok(DialogStateVector { bits })
    }

    pub fn zeros(width: usize) -> Self {
        DialogStateVector {
            bits: vec![0; width],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i] == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on as u8;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

/// One supervised turn: state, gold macro-action, next state.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnSample {
    pub dialog_id: String,
    pub turn_id: u32,
    pub state: DialogStateVector,
    pub macro_action: MacroAction,
    pub next_state: DialogStateVector,
}

/// JSON-lines record as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTurn {
    pub dialog_id: String,
    pub turn_id: u32,
    pub state: Vec<u8>,
    pub macro_action: Vec<String>,
    pub next_state: Vec<u8>,
}

pub const CORPUS_SCHEMA_VERSION: &str = "pedp-corpus/1";

/// Sidecar describing the state layout and the action list of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub format_version: String,
    pub state_width: usize,
    pub segments: Vec<Segment>,
    pub actions: Vec<String>,
    pub vocab_digest: String,
}

impl CorpusSchema {
    pub fn new(layout: &StateLayout, vocab: &ActionVocab) -> Self {
        CorpusSchema {
            format_version: CORPUS_SCHEMA_VERSION.to_string(),
            state_width: layout.width(),
            segments: layout.segments().to_vec(),
            actions: vocab.names(),
            vocab_digest: vocab.digest().to_string(),
        }
    }

    /// Rebuilds the vocabulary and checks it against the declared digest.
    pub fn vocab(&self) -> Result<ActionVocab> {
        let vocab = ActionVocab::from_strings(&self.actions)?;
        if vocab.digest() != self.vocab_digest {
            return Err(PedpError::VocabDigest {
                expected: self.vocab_digest.clone(),
                found: vocab.digest().to_string(),
            });
        }
        Ok(vocab)
    }

    pub fn layout(&self) -> Result<StateLayout> {
        let layout = StateLayout::from_segments(self.segments.clone())?;
        if layout.width() != self.state_width {
            return Err(PedpError::shape("segment coverage", self.state_width, layout.width()));
        }
        Ok(layout)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| PedpError::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json_pretty(path, self)
    }
}

/// `corpus.jsonl` → `corpus.schema.json`.
pub fn sidecar_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("schema.json")
}

/// A validated corpus sharing one layout and one vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub schema: CorpusSchema,
    pub vocab: ActionVocab,
    pub layout: StateLayout,
    pub samples: Vec<TurnSample>,
}

impl Corpus {
    pub fn state_width(&self) -> usize {
        self.layout.width()
    }

    pub fn max_macro_len(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.macro_action.len())
            .max()
            .unwrap_or(0)
    }
}

/// Loads a corpus using its sidecar schema.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let schema = CorpusSchema::read(&sidecar_path(path))?;
    load_corpus_with_schema(path, schema)
}

pub fn load_corpus_with_schema(path: &Path, schema: CorpusSchema) -> Result<Corpus> {
    let vocab = schema.vocab()?;
    let layout = schema.layout()?;
    let file = File::open(path).map_err(|e| PedpError::io(path, e))?;
    let width = layout.width();
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PedpError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| PedpError::Corpus {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let raw: RawTurn = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let sample = validate_turn(raw, &vocab, width).map_err(|e| err(e.to_string()))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        log::warn!("corpus {} contains no turns", path.display());
    }
    Ok(Corpus {
        schema,
        vocab,
        layout,
        samples,
    })
}

pub fn validate_turn(raw: RawTurn, vocab: &ActionVocab, width: usize) -> Result<TurnSample> {
    if raw.state.len() != width {
        return Err(PedpError::shape("state", width, raw.state.len()));
    }
    if raw.next_state.len() != width {
        return Err(PedpError::shape("next_state", width, raw.next_state.len()));
    }
    Ok(TurnSample {
        dialog_id: raw.dialog_id,
        turn_id: raw.turn_id,
        state: DialogStateVector::new(raw.state)?,
        macro_action: vocab.macro_from_strings(&raw.macro_action)?,
        next_state: DialogStateVector::new(raw.next_state)?,
    })
}

pub fn to_raw(sample: &TurnSample, vocab: &ActionVocab) -> RawTurn {
    RawTurn {
        dialog_id: sample.dialog_id.clone(),
        turn_id: sample.turn_id,
        state: sample.state.bits().to_vec(),
        macro_action: vocab.macro_to_strings(&sample.macro_action),
        next_state: sample.next_state.bits().to_vec(),
    }
}

/// Writes the JSON-lines corpus and its sidecar.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let file = File::create(path).map_err(|e| PedpError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in &corpus.samples {
        serde_json::to_writer(&mut w, &to_raw(s, &corpus.vocab))?;
        w.write_all(b"\n").map_err(|e| PedpError::io(path, e))?;
    }
    w.flush().map_err(|e| PedpError::io(path, e))?;
    corpus.schema.write(&sidecar_path(path))
}

pub(crate) fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PedpError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_example_action() {
        let a = parse_action("hotel-inform-area").unwrap();
        assert_eq!(a, AtomicAction::new("hotel", "inform", "area"));
        assert_eq!(a.to_string(), "hotel-inform-area");
    }

    #[test]
    fn rejects_two_part_action() {
        let err = parse_action("hotel-inform").unwrap_err();
        assert!(err.to_string().contains("hotel-inform"));
        assert!(parse_action("hotel--area").is_err());
        assert!(parse_action("a-b-c-d").is_err());
    }

    #[test]
    fn vocab_is_lexicographic_and_stable() {
        let raw = |acts: &[&str]| RawTurn {
            dialog_id: "d".into(),
            turn_id: 0,
            state: vec![],
            macro_action: acts.iter().map(|s| s.to_string()).collect(),
            next_state: vec![],
        };
        let corpus = vec![raw(&["b-x-y"]), raw(&["a-x-y", "b-x-y"])];
        let v = build_vocab(&corpus).unwrap();
        assert_eq!(v.names(), vec!["a-x-y", "b-x-y"]);
        assert_eq!(v.len(), 2);
        assert_eq!(build_vocab(&corpus).unwrap().digest(), v.digest());
        assert!(matches!(build_vocab(&[]), Err(PedpError::EmptyCorpus)));
    }

    #[test]
    fn encode_macro_examples() {
        let v = ActionVocab::from_strings(&["a-i-s", "b-i-s", "c-i-s", "d-i-s"]).unwrap();
        assert_eq!(v.encode_macro([]).unwrap(), vec![0, 0, 0, 0]);
        let c = v.get(2).unwrap().clone();
        assert_eq!(v.encode_macro([&c]).unwrap(), vec![0, 0, 1, 0]);
        let unknown = AtomicAction::new("z", "i", "s");
        match v.encode_macro([&c, &unknown]) {
            Err(PedpError::UnknownActions(list)) => assert_eq!(list, vec!["z-i-s"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decompose_sorts_by_index() {
        let m = MacroAction::new([7, 5]);
        assert_eq!(decompose_macro(&m).unwrap(), vec![5, 7]);
        assert_eq!(decompose_macro(&MacroAction::new([3])).unwrap(), vec![3]);
        assert_eq!(
            decompose_macro(&MacroAction::new([9, 1, 4])).unwrap(),
            decompose_macro(&MacroAction::new([4, 9, 1])).unwrap()
        );
        assert!(matches!(
            decompose_macro(&MacroAction::empty()),
            Err(PedpError::EmptyMacro)
        ));
    }

    #[test]
    fn layout_rejects_gaps() {
        let ok = StateLayout::sequential([("a", 2), ("b", 3)]);
        assert_eq!(ok.width(), 5);
        let gap = vec![
            Segment { name: "a".into(), start: 0, len: 2 },
            Segment { name: "b".into(), start: 3, len: 1 },
        ];
        assert!(StateLayout::from_segments(gap).is_err());
    }

    #[test]
    fn state_rejects_non_binary() {
        assert!(DialogStateVector::new(vec![0, 1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn action_text_round_trips(d in "[a-z]{1,8}", i in "[a-z]{1,8}", s in "[a-z]{1,8}") {
            let text = format!("{d}-{i}-{s}");
            prop_assert_eq!(parse_action(&text).unwrap().to_string(), text);
        }

        #[test]
        fn macro_vector_round_trips(members in proptest::collection::btree_set(0usize..40, 0..10)) {
            let m = MacroAction::new(members.iter().copied());
            let v = m.to_vector(40);
            prop_assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), m.len());
            prop_assert_eq!(MacroAction::from_vector(&v), m.clone());
            let decomposed = if m.is_empty() { vec![] } else { decompose_macro(&m).unwrap() };
            prop_assert_eq!(decomposed.len(), m.len());
        }
    }
}
