//! Model-free scorers: a constant table, token-position frequencies from the
//! training split, and uniformly random entity scores.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_dims, mean_gather, LogitTable, ScoreSource, ScoreVector};
use crate::error::Result;
use crate::eval::stream_rng;
use crate::kg::KnowledgeGraph;
use crate::prompt::{Direction, Query};
use crate::tokenizer::EntityCatalog;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinKind {
    Constant,
    Frequency,
    Random,
}

/// Produces a logit table per query without a model.
pub trait TableGenerator: Sync {
    fn l_max(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn values(&self, query: &Query) -> Cow<'_, [f32]>;

    fn table(&self, query: &Query) -> LogitTable {
        LogitTable {
            query_id: query.query_id,
            l_max: self.l_max(),
            vocab_size: self.vocab_size(),
            values: self.values(query).into_owned(),
        }
    }
}

/// All-zero tables, so every entity ties.
#[derive(Clone, Debug)]
pub struct ConstantScorer {
    l_max: usize,
    vocab_size: usize,
    zeros: Vec<f32>,
}

impl ConstantScorer {
    pub fn new(catalog: &EntityCatalog) -> Self {
        ConstantScorer {
            l_max: catalog.l_max(),
            vocab_size: catalog.vocab_size(),
            zeros: vec![0.0; catalog.l_max() * catalog.vocab_size()],
        }
    }
}

impl TableGenerator for ConstantScorer {
    fn l_max(&self) -> usize {
        self.l_max
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn values(&self, _: &Query) -> Cow<'_, [f32]> {
        Cow::Borrowed(&self.zeros)
    }
}

/// `ln(1 + count)` of each token at each position over the training gold
/// entities of the query's direction (tails for tail prediction, heads for
/// head prediction).
#[derive(Clone, Debug)]
pub struct FrequencyScorer {
    l_max: usize,
    vocab_size: usize,
    heads: Vec<f32>,
    tails: Vec<f32>,
}

impl FrequencyScorer {
    pub fn new(kg: &KnowledgeGraph, catalog: &EntityCatalog) -> Self {
        let (l, v) = (catalog.l_max(), catalog.vocab_size());
        let mut heads = vec![0u32; l * v];
        let mut tails = vec![0u32; l * v];
        for t in kg.train() {
            for (counts, e) in [(&mut heads, t.head), (&mut tails, t.tail)] {
                for (j, &tok) in catalog.entity_tokens(e.index()).iter().enumerate() {
                    counts[j * v + tok as usize] += 1;
                }
            }
        }
        let log1p = |c: Vec<u32>| c.into_iter().map(|n| (n as f64).ln_1p() as f32).collect();
        FrequencyScorer {
            l_max: l,
            vocab_size: v,
            heads: log1p(heads),
            tails: log1p(tails),
        }
    }
}

impl TableGenerator for FrequencyScorer {
    fn l_max(&self) -> usize {
        self.l_max
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn values(&self, query: &Query) -> Cow<'_, [f32]> {
        match query.direction {
            Direction::PredictHead => Cow::Borrowed(&self.heads),
            Direction::PredictTail => Cow::Borrowed(&self.tails),
        }
    }
}

/// Scores a catalog with tables from a generator.
pub struct TableScorer<'c, G> {
    generator: G,
    catalog: &'c EntityCatalog,
}

impl<'c, G: TableGenerator> TableScorer<'c, G> {
    pub fn new(generator: G, catalog: &'c EntityCatalog) -> Result<Self> {
        check_dims(generator.l_max(), generator.vocab_size(), catalog)?;
        Ok(TableScorer { generator, catalog })
    }

    pub fn generator(&self) -> &G {
        &self.generator
    }
}

impl<G: TableGenerator> ScoreSource for TableScorer<'_, G> {
    fn score(&self, query: &Query, _seed: u64) -> Result<ScoreVector> {
        let values = self.generator.values(query);
        let mut scores = Vec::new();
        mean_gather(
            &values,
            self.generator.vocab_size(),
            self.catalog,
            &mut scores,
        );
        Ok(ScoreVector {
            query_id: query.query_id,
            scores,
        })
    }
}

/// Independent uniform scores in `[0, 1)` per entity, drawn from a stream
/// keyed by (seed, query id).
#[derive(Clone, Copy, Debug)]
pub struct RandomScorer {
    entities: usize,
}

impl RandomScorer {
    /// Stream index separating score draws from tie-break draws.
    const STREAM: u64 = 1;

    pub fn new(entities: usize) -> Self {
        RandomScorer { entities }
    }
}

impl ScoreSource for RandomScorer {
    fn seed_dependent(&self) -> bool {
        true
    }

    fn score(&self, query: &Query, seed: u64) -> Result<ScoreVector> {
        let mut rng = stream_rng(seed, query.query_id, Self::STREAM);
        Ok(ScoreVector {
            query_id: query.query_id,
            scores: (0..self.entities).map(|_| rng.gen::<f64>()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, EntityId, Relation, RelationId, Triple};
    use crate::tokenizer::Vocabulary;

    #[test]
    fn constant_scores_are_all_zero() {
        let c = EntityCatalog::from_rows(&[vec![4], vec![5, 6]], Vocabulary::PAD, 8).unwrap();
        let kg = crate::kg::testutil::toy_kg(2, 1, vec![], vec![], vec![Triple::new(0, 0, 1)]);
        let q = Query::new(Triple::new(0, 0, 1), Direction::PredictTail, &kg).unwrap();
        let s = TableScorer::new(ConstantScorer::new(&c), &c).unwrap();
        assert_eq!(s.score(&q, 0).unwrap().scores, vec![0.0, 0.0]);
        assert_eq!(ConstantScorer::new(&c).table(&q).values(), &[0.0; 16]);
    }

    /// Hand-counted: training tails are w x, w y, w, z w, w x; token `w`
    /// (id 4) opens four of five tails.
    #[test]
    fn frequency_favours_dominant_first_token() {
        let (w, x, y, z) = (4u32, 5u32, 6u32, 7u32);
        let rows = vec![
            vec![9],
            vec![w, x],
            vec![w, y],
            vec![w],
            vec![z, w],
            vec![x, y],
            vec![z, x],
        ];
        let c = EntityCatalog::from_rows(&rows, Vocabulary::PAD, 10).unwrap();
        let entities = (0..7)
            .map(|i| Entity {
                id: EntityId(i),
                raw_id: format!("e{i}"),
                surface: format!("e{i}"),
                definition: String::new(),
            })
            .collect();
        let relations = vec![Relation {
            id: RelationId(0),
            raw_id: "r".into(),
            surface: "r".into(),
        }];
        let train = [1, 2, 3, 4, 1]
            .iter()
            .map(|&t| Triple::new(0, 0, t))
            .collect();
        let kg = KnowledgeGraph::new(entities, relations, train, vec![], vec![]).unwrap();
        let f = FrequencyScorer::new(&kg, &c);
        let q = Query::new(Triple::new(0, 0, 2), Direction::PredictTail, &kg).unwrap();
        let t = f.table(&q);
        // position 0: w x4 (duplicate line counts twice), z x1
        assert_eq!(t.get(0, w as usize), (5.0f64).ln() as f32);
        assert_eq!(t.get(0, z as usize), (2.0f64).ln() as f32);
        assert_eq!(t.get(1, x as usize), (3.0f64).ln() as f32);

        let s = TableScorer::new(f, &c)
            .unwrap()
            .score(&q, 0)
            .unwrap()
            .scores;
        // equal-length entities: those starting with w beat x y and z x
        for starts_w in [1, 2] {
            for other in [5, 6] {
                assert!(s[starts_w] > s[other], "{s:?}");
            }
        }
        // head direction counts heads only (all e0)
        let qh = Query::new(Triple::new(0, 0, 2), Direction::PredictHead, &kg).unwrap();
        assert_eq!(
            FrequencyScorer::new(&kg, &c).table(&qh).get(0, 9),
            (6.0f64).ln() as f32
        );
    }

    #[test]
    fn random_scores_depend_on_seed_and_query_only() {
        let kg = crate::kg::testutil::toy_kg(50, 1, vec![], vec![], vec![]);
        let q = Query::new(Triple::new(0, 0, 1), Direction::PredictTail, &kg).unwrap();
        let r = RandomScorer::new(50);
        let a = r.score(&q, 1).unwrap();
        assert_eq!(a, r.score(&q, 1).unwrap());
        assert_ne!(a, r.score(&q, 2).unwrap());
        assert!(a.scores.iter().all(|s| (0.0..1.0).contains(s)));
    }
}
