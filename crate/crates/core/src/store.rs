//! Triple store with an entity index.
//!
//! [`DkgStore`] holds the symbolic half of the domain knowledge graph: the
//! set of normalized `(head, relation, tail)` triples, keyed by a monotonic
//! [`TripleId`], and an index from entity text to the triples mentioning it as
//! head or tail. Embeddings are not stored here; see [`crate::embedding`].
//!
//! [`SharedStore`] wraps a store for concurrent use: readers take cheap
//! immutable snapshots while all writes go through a single writer lane and
//! are published atomically.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("triple field `{0}` is empty after normalization")]
    EmptyField(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// One knowledge fact. Fields are always stored in normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawTriple")]
pub struct Triple {
    head: String,
    relation: String,
    tail: String,
}

#[derive(Deserialize)]
struct RawTriple {
    head: String,
    relation: String,
    tail: String,
}

impl TryFrom<RawTriple> for Triple {
    type Error = StoreError;

    fn try_from(raw: RawTriple) -> Result<Self, Self::Error> {
        Triple::new(&raw.head, &raw.relation, &raw.tail)
    }
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Result<Self, StoreError> {
        let head = normalize(head);
        let relation = normalize(relation);
        let tail = normalize(tail);
        if head.is_empty() {
            return Err(StoreError::EmptyField("head"));
        }
        if relation.is_empty() {
            return Err(StoreError::EmptyField("relation"));
        }
        if tail.is_empty() {
            return Err(StoreError::EmptyField("tail"));
        }
        Ok(Self { head, relation, tail })
    }

    pub fn head(&self) -> &str {
        &self.head
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn tail(&self) -> &str {
        &self.tail
    }

    /// Text used to embed the triple: `"head relation tail"`.
    pub fn text(&self) -> String {
        format!("{} {} {}", self.head, self.relation, self.tail)
    }

    pub fn mentions(&self, entity: &str) -> bool {
        self.head == entity || self.tail == entity
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripleId(pub u64);

impl fmt::Display for TripleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Added(TripleId),
    RejectedDuplicate(TripleId),
}

impl AddOutcome {
    pub fn added(self) -> Option<TripleId> {
        match self {
            AddOutcome::Added(id) => Some(id),
            AddOutcome::RejectedDuplicate(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StoreStats {
    pub triple_count: usize,
    pub entity_count: usize,
    pub relation_count: usize,
}

/// On-disk record: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct StoredRecord {
    id: u64,
    head: String,
    relation: String,
    tail: String,
}

#[derive(Debug, Clone, Default)]
pub struct DkgStore {
    triples: BTreeMap<TripleId, Triple>,
    ids: HashMap<Triple, TripleId>,
    entity_index: HashMap<String, BTreeSet<TripleId>>,
    relations: HashMap<String, usize>,
    next_id: u64,
}

impl DkgStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn add_triple(&mut self, triple: Triple) -> AddOutcome {
        if let Some(&id) = self.ids.get(&triple) {
            return AddOutcome::RejectedDuplicate(id);
        }
        self.next_id += 1;
        let id = TripleId(self.next_id);
        self.insert_with_id(id, triple);
        AddOutcome::Added(id)
    }

    fn insert_with_id(&mut self, id: TripleId, triple: Triple) {
        self.entity_index
            .entry(triple.head.clone())
            .or_default()
            .insert(id);
        self.entity_index
            .entry(triple.tail.clone())
            .or_default()
            .insert(id);
        *self.relations.entry(triple.relation.clone()).or_default() += 1;
        self.ids.insert(triple.clone(), id);
        self.triples.insert(id, triple);
        self.next_id = self.next_id.max(id.0);
    }

    /// Admin-only removal. Ids are never handed out again by this store.
    pub fn remove(&mut self, id: TripleId) -> Option<Triple> {
        let triple = self.triples.remove(&id)?;
        self.ids.remove(&triple);
        for entity in [&triple.head, &triple.tail] {
            if let Some(set) = self.entity_index.get_mut(entity) {
                set.remove(&id);
                if set.is_empty() {
                    self.entity_index.remove(entity);
                }
            }
        }
        if let Some(count) = self.relations.get_mut(&triple.relation) {
            *count -= 1;
            if *count == 0 {
                self.relations.remove(&triple.relation);
            }
        }
        Some(triple)
    }

    pub fn get(&self, id: TripleId) -> Option<&Triple> {
        self.triples.get(&id)
    }

    pub fn id_of(&self, triple: &Triple) -> Option<TripleId> {
        self.ids.get(triple).copied()
    }

    pub fn contains_exact(&self, triple: &Triple) -> bool {
        self.ids.contains_key(triple)
    }

    /// Ids of all triples whose head or tail equals the normalized entity,
    /// in ascending id order.
    pub fn exact_match_ids(&self, entity: &str) -> Vec<TripleId> {
        self.entity_index
            .get(&normalize(entity))
            .map(|set| set.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn exact_match(&self, entity: &str) -> Vec<(TripleId, &Triple)> {
        self.exact_match_ids(entity)
            .into_iter()
            .map(|id| (id, &self.triples[&id]))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TripleId, &Triple)> {
        self.triples.iter().map(|(id, t)| (*id, t))
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entity_index.keys().map(String::as_str)
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            triple_count: self.triples.len(),
            entity_count: self.entity_index.len(),
            relation_count: self.relations.len(),
        }
    }

    /// Entity index recomputed from the triple table alone.
    pub fn rebuilt_entity_index(&self) -> HashMap<String, BTreeSet<TripleId>> {
        let mut index: HashMap<String, BTreeSet<TripleId>> = HashMap::new();
        for (id, t) in &self.triples {
            index.entry(t.head.clone()).or_default().insert(*id);
            index.entry(t.tail.clone()).or_default().insert(*id);
        }
        index
    }

    pub fn index_is_consistent(&self) -> bool {
        self.rebuilt_entity_index() == self.entity_index
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            self.write_jsonl(&mut out)?;
            out.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn write_jsonl(&self, out: &mut impl Write) -> Result<(), StoreError> {
        for (id, t) in &self.triples {
            let record = StoredRecord {
                id: id.0,
                head: t.head.clone(),
                relation: t.relation.clone(),
                tail: t.tail.clone(),
            };
            serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, StoreError> {
        let mut store = DkgStore::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let format_err = |reason: String| StoreError::Format {
                line: line_no,
                reason,
            };
            let record: StoredRecord =
                serde_json::from_str(&line).map_err(|e| format_err(e.to_string()))?;
            let triple = Triple::new(&record.head, &record.relation, &record.tail)
                .map_err(|e| format_err(e.to_string()))?;
            let id = TripleId(record.id);
            if id.0 == 0 || store.triples.contains_key(&id) {
                return Err(format_err(format!("invalid or repeated id {}", record.id)));
            }
            if store.contains_exact(&triple) {
                return Err(format_err(format!("duplicate triple {triple}")));
            }
            store.insert_with_id(id, triple);
        }
        Ok(store)
    }
}

/// A store shared between concurrent readers and a single serialized writer.
///
/// Readers get an `Arc` snapshot that never changes underneath them. Writers
/// are serialized by an internal lane; each write works on a private copy that
/// is published in one swap, so a batch is visible all at once or not at all.
#[derive(Debug, Default)]
pub struct SharedStore {
    current: RwLock<Arc<DkgStore>>,
    writer: Mutex<()>,
}

impl SharedStore {
    pub fn new(store: DkgStore) -> Self {
        Self {
            current: RwLock::new(Arc::new(store)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<DkgStore> {
        self.current.read().clone()
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut DkgStore) -> R) -> R {
        let _lane = self.writer.lock();
        let mut next = (**self.current.read()).clone();
        let out = f(&mut next);
        *self.current.write() = Arc::new(next);
        out
    }
}
