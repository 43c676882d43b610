//! Knowledge-graph data: entities, relations, triple splits and the
//! known-triple index used for filtered ranking.

mod clean;
mod load;
mod split;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::{clean_relation, clean_synset, normalize_whitespace};
pub use load::{load_dataset, load_dataset_dir, DatasetPaths, SurfaceStyle, UNSEEN_MANIFEST};
pub use split::{make_unseen_split, split_by_entities, SplitSpec, UnseenManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    /// Identifier as it appears in the dataset files.
    pub raw_id: String,
    pub surface: String,
    /// May be empty.
    pub definition: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub id: RelationId,
    pub raw_id: String,
    pub surface: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            rel: RelationId(rel),
            tail: EntityId(tail),
        }
    }

    pub fn touches(&self, e: EntityId) -> bool {
        self.head == e || self.tail == e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

/// Entities held out of training by an unseen-entity split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UnseenEntities {
    pub seed: u64,
    pub valid: BTreeSet<EntityId>,
    pub test: BTreeSet<EntityId>,
}

impl UnseenEntities {
    /// Which sides of `triple` are evaluated when it belongs to `split`:
    /// the sides holding an entity from that split's own entity list.
    pub fn unseen_sides(&self, split: SplitKind, triple: &Triple) -> (bool, bool) {
        let set = match split {
            SplitKind::Train => return (false, false),
            SplitKind::Valid => &self.valid,
            SplitKind::Test => &self.test,
        };
        (set.contains(&triple.head), set.contains(&triple.tail))
    }
}

/// An immutable knowledge graph with its filtering index.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    known: HashSet<Triple>,
    tails_by_head: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads_by_tail: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    unseen: Option<UnseenEntities>,
}

impl KnowledgeGraph {
    /// Builds a graph, checking id contiguity, surface uniqueness and that
    /// every triple references valid ids.
    pub fn new(
        entities: Vec<Entity>,
        relations: Vec<Relation>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let mut seen: HashMap<&str, &str> = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if e.id.index() != i {
                return Err(Error::Config(format!(
                    "entity ids must be contiguous: position {i} holds id {}",
                    e.id
                )));
            }
            if let Some(first) = seen.insert(&e.surface, &e.raw_id) {
                return Err(Error::DuplicateSurface {
                    kind: "entity",
                    surface: e.surface.clone(),
                    first: first.to_string(),
                    second: e.raw_id.clone(),
                });
            }
        }
        let mut seen: HashMap<&str, &str> = HashMap::with_capacity(relations.len());
        for (i, r) in relations.iter().enumerate() {
            if r.id.index() != i {
                return Err(Error::Config(format!(
                    "relation ids must be contiguous: position {i} holds id {}",
                    r.id
                )));
            }
            if let Some(first) = seen.insert(&r.surface, &r.raw_id) {
                return Err(Error::DuplicateSurface {
                    kind: "relation",
                    surface: r.surface.clone(),
                    first: first.to_string(),
                    second: r.raw_id.clone(),
                });
            }
        }

        let (n, m) = (entities.len(), relations.len());
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head.index() >= n || t.tail.index() >= n || t.rel.index() >= m {
                return Err(Error::Config(format!(
                    "triple ({}, {}, {}) out of range for {n} entities / {m} relations",
                    t.head, t.rel, t.tail
                )));
            }
        }

        let mut kg = KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            known: HashSet::new(),
            tails_by_head: HashMap::new(),
            heads_by_tail: HashMap::new(),
            unseen: None,
        };
        kg.build_index();
        Ok(kg)
    }

    fn build_index(&mut self) {
        let mut known =
            HashSet::with_capacity(self.train.len() + self.valid.len() + self.test.len());
        let mut tails: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut heads: HashMap<(RelationId, EntityId), Vec<EntityId>> = HashMap::new();
        for t in self.train.iter().chain(&self.valid).chain(&self.test) {
            if known.insert(*t) {
                tails.entry((t.head, t.rel)).or_default().push(t.tail);
                heads.entry((t.rel, t.tail)).or_default().push(t.head);
            }
        }
        self.known = known;
        self.tails_by_head = tails;
        self.heads_by_tail = heads;
    }

    pub(crate) fn with_unseen(mut self, unseen: UnseenEntities) -> Self {
        self.unseen = Some(unseen);
        self
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn entity(&self, id: EntityId) -> &Entity {
        &self.entities[id.index()]
    }

    pub fn relation(&self, id: RelationId) -> &Relation {
        &self.relations[id.index()]
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, kind: SplitKind) -> &[Triple] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Valid => &self.valid,
            SplitKind::Test => &self.test,
        }
    }

    /// Membership in the union of train, valid and test.
    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    pub fn known_count(&self) -> usize {
        self.known.len()
    }

    /// All tails `t` with `(head, rel, t)` known.
    pub fn known_tails(&self, head: EntityId, rel: RelationId) -> &[EntityId] {
        self.tails_by_head
            .get(&(head, rel))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// All heads `h` with `(h, rel, tail)` known.
    pub fn known_heads(&self, rel: RelationId, tail: EntityId) -> &[EntityId] {
        self.heads_by_tail
            .get(&(rel, tail))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn unseen(&self) -> Option<&UnseenEntities> {
        self.unseen.as_ref()
    }

    pub fn entity_by_raw_id(&self) -> HashMap<&str, EntityId> {
        self.entities
            .iter()
            .map(|e| (e.raw_id.as_str(), e.id))
            .collect()
    }
}
