//! Unseen-entity splits: hold out sampled entities so that evaluated
//! entities never occur in training triples.

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EntityId, KnowledgeGraph, Triple, UnseenEntities};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            valid_fraction: 0.05,
            test_fraction: 0.05,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if !ok(self.valid_fraction) || !ok(self.test_fraction) {
            return Err(Error::InvalidSplit(format!(
                "fractions must lie in (0, 1), got valid={} test={}",
                self.valid_fraction, self.test_fraction
            )));
        }
        if self.valid_fraction + self.test_fraction >= 1.0 {
            return Err(Error::InvalidSplit(format!(
                "fractions must sum to less than 1, got {}",
                self.valid_fraction + self.test_fraction
            )));
        }
        Ok(())
    }
}

/// On-disk record of an unseen split, keyed by raw entity ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnseenManifest {
    pub seed: u64,
    pub valid_entities: Vec<String>,
    pub test_entities: Vec<String>,
}

impl UnseenManifest {
    pub fn from_graph(kg: &KnowledgeGraph) -> Option<Self> {
        let unseen = kg.unseen()?;
        let raw =
            |set: &BTreeSet<EntityId>| set.iter().map(|&e| kg.entity(e).raw_id.clone()).collect();
        Some(UnseenManifest {
            seed: unseen.seed,
            valid_entities: raw(&unseen.valid),
            test_entities: raw(&unseen.test),
        })
    }
}

/// Samples validation and test entities and re-partitions every triple.
pub fn make_unseen_split(kg: &KnowledgeGraph, spec: &SplitSpec) -> Result<KnowledgeGraph> {
    spec.validate()?;
    let n = kg.num_entities();
    let n_valid = (spec.valid_fraction * n as f64).round() as usize;
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    if n_valid == 0 || n_test == 0 {
        return Err(Error::InvalidSplit(format!(
            "fractions valid={} test={} of {n} entities sample zero entities",
            spec.valid_fraction, spec.test_fraction
        )));
    }
    if n_valid + n_test > n {
        return Err(Error::InvalidSplit(format!(
            "cannot sample {n_valid}+{n_test} entities from {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let picked = rand::seq::index::sample(&mut rng, n, n_valid + n_test).into_vec();
    let valid: BTreeSet<EntityId> = picked[..n_valid]
        .iter()
        .map(|&i| EntityId(i as u32))
        .collect();
    let test: BTreeSet<EntityId> = picked[n_valid..]
        .iter()
        .map(|&i| EntityId(i as u32))
        .collect();
    split_by_entities(kg, valid, test, spec.seed)
}

/// Partitions all triples of `kg` given explicit held-out entity sets:
/// train has neither kind of entity, valid has at least one validation
/// entity, test has at least one test entity and no validation entity.
pub fn split_by_entities(
    kg: &KnowledgeGraph,
    valid_entities: BTreeSet<EntityId>,
    test_entities: BTreeSet<EntityId>,
    seed: u64,
) -> Result<KnowledgeGraph> {
    if let Some(e) = valid_entities.intersection(&test_entities).next() {
        return Err(Error::InvalidSplit(format!(
            "entity {e} is in both the validation and the test set"
        )));
    }
    let touches =
        |set: &BTreeSet<EntityId>, t: &Triple| set.contains(&t.head) || set.contains(&t.tail);

    let mut seen: HashSet<Triple> = HashSet::new();
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for t in kg.train().iter().chain(kg.valid()).chain(kg.test()) {
        if !seen.insert(*t) {
            continue;
        }
        if touches(&valid_entities, t) {
            valid.push(*t);
        } else if touches(&test_entities, t) {
            test.push(*t);
        } else {
            train.push(*t);
        }
    }
    let out = KnowledgeGraph::new(
        kg.entities().to_vec(),
        kg.relations().to_vec(),
        train,
        valid,
        test,
    )?;
    Ok(out.with_unseen(UnseenEntities {
        seed,
        valid: valid_entities,
        test: test_entities,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::testutil::toy_kg;
    use crate::kg::SplitKind;

    fn set(ids: &[u32]) -> BTreeSet<EntityId> {
        ids.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn hand_enumerated_toy_split() {
        // A=0 B=1 C=2 D=3, validation {B}, test {C}
        let triples = vec![
            Triple::new(0, 0, 1),
            Triple::new(0, 0, 2),
            Triple::new(0, 0, 3),
            Triple::new(1, 0, 2),
        ];
        let kg = toy_kg(4, 1, triples, vec![], vec![]);
        let s = split_by_entities(&kg, set(&[1]), set(&[2]), 0).unwrap();
        assert_eq!(s.train(), &[Triple::new(0, 0, 3)]);
        assert_eq!(s.valid(), &[Triple::new(0, 0, 1), Triple::new(1, 0, 2)]);
        assert_eq!(s.test(), &[Triple::new(0, 0, 2)]);

        let unseen = s.unseen().unwrap();
        assert_eq!(
            unseen.unseen_sides(SplitKind::Valid, &Triple::new(1, 0, 2)),
            (true, false)
        );
        assert_eq!(
            unseen.unseen_sides(SplitKind::Test, &Triple::new(0, 0, 2)),
            (false, true)
        );
    }

    #[test]
    fn empty_entity_sets_keep_everything_in_train() {
        let triples = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)];
        let kg = toy_kg(3, 1, triples.clone(), vec![], vec![]);
        let s = split_by_entities(&kg, BTreeSet::new(), BTreeSet::new(), 0).unwrap();
        assert_eq!(s.train(), triples.as_slice());
        assert!(s.valid().is_empty() && s.test().is_empty());
    }

    #[test]
    fn same_seed_same_split() {
        let triples: Vec<Triple> = (0..200)
            .map(|i| Triple::new(i % 100, 0, (i * 7 + 3) % 100))
            .collect();
        let kg = toy_kg(100, 1, triples, vec![], vec![]);
        let spec = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        };
        let a = make_unseen_split(&kg, &spec).unwrap();
        let b = make_unseen_split(&kg, &spec).unwrap();
        assert_eq!(a.train(), b.train());
        assert_eq!(a.valid(), b.valid());
        assert_eq!(a.test(), b.test());
        assert_eq!(a.unseen(), b.unseen());
        let u = a.unseen().unwrap();
        assert_eq!((u.valid.len(), u.test.len()), (5, 5));
        assert!(u.valid.is_disjoint(&u.test));
    }

    #[test]
    fn invalid_specs() {
        let kg = toy_kg(10, 1, vec![], vec![], vec![]);
        for (v, t) in [(0.0, 0.05), (0.05, 1.0), (0.6, 0.5), (-0.1, 0.1)] {
            let spec = SplitSpec {
                seed: 0,
                valid_fraction: v,
                test_fraction: t,
            };
            assert!(matches!(
                make_unseen_split(&kg, &spec),
                Err(Error::InvalidSplit(_))
            ));
        }
        // 5% of 10 entities rounds to one entity; 1% rounds to zero
        let spec = SplitSpec {
            seed: 0,
            valid_fraction: 0.01,
            test_fraction: 0.05,
        };
        assert!(matches!(
            make_unseen_split(&kg, &spec),
            Err(Error::InvalidSplit(_))
        ));
    }

    #[test]
    fn overlapping_sets_rejected() {
        let kg = toy_kg(3, 1, vec![], vec![], vec![]);
        assert!(split_by_entities(&kg, set(&[1]), set(&[1, 2]), 0).is_err());
    }
}
