use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::prompt::{Direction, Query};
use crate::scoring::ScoreVector;

/// A ChaCha stream keyed by (seed, query id, stream index). The key is the
/// raw concatenation of the three words, so distinct inputs never share a
/// stream.
pub fn stream_rng(seed: u64, query_id: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&query_id.to_le_bytes());
    key[16..24].copy_from_slice(&stream.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Tie-break randomness for one evaluation seed. Each query draws from its
/// own stream, so ranks do not depend on evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieBreakRng {
    pub seed: u64,
}

impl TieBreakRng {
    const STREAM: u64 = 0;

    pub fn new(seed: u64) -> Self {
        TieBreakRng { seed }
    }

    pub fn for_query(&self, query_id: u64) -> ChaCha8Rng {
        stream_rng(self.seed, query_id, Self::STREAM)
    }
}

/// The entities a gold answer is ranked against: every entity except the
/// excluded ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    entities: usize,
    /// Sorted and unique.
    excluded: Vec<EntityId>,
}

impl CandidateSet {
    /// No filtering.
    pub fn all(entities: usize) -> Self {
        CandidateSet {
            entities,
            excluded: Vec::new(),
        }
    }

    pub fn excluding(entities: usize, mut excluded: Vec<EntityId>) -> Self {
        excluded.sort_unstable();
        excluded.dedup();
        CandidateSet { entities, excluded }
    }

    pub fn len(&self) -> usize {
        self.entities - self.excluded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, e: EntityId) -> bool {
        e.index() < self.entities && self.excluded.binary_search(&e).is_err()
    }

    pub fn excluded(&self) -> &[EntityId] {
        &self.excluded
    }

    pub fn iter(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entities as u32)
            .map(EntityId)
            .filter(|e| self.contains(*e))
    }
}

/// Filtered setting: drop every other entity that completes the query to a
/// known triple in train, valid or test. The gold entity stays.
pub fn filtered_candidates(kg: &KnowledgeGraph, query: &Query) -> CandidateSet {
    let t = &query.triple;
    let known = match query.direction {
        Direction::PredictTail => kg.known_tails(t.head, t.rel),
        Direction::PredictHead => kg.known_heads(t.rel, t.tail),
    };
    let gold = query.gold();
    CandidateSet::excluding(
        kg.num_entities(),
        known.iter().copied().filter(|&e| e != gold).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub query_id: u64,
    pub gold: EntityId,
    pub rank: usize,
    pub candidate_count: usize,
}

/// Number of candidates tied with `gold` that precede it in a random order.
///
/// Every entity gets a priority read from a fixed position of the query's
/// stream, so the order among any subset of entities does not depend on
/// which other entities are candidates.
fn tied_ahead(s: &[f64], candidates: &CandidateSet, gold: EntityId, mut rng: ChaCha8Rng) -> usize {
    let mut priority = |e: usize| {
        rng.set_word_pos(2 * e as u128);
        (rng.next_u64(), e)
    };
    let g = s[gold.index()];
    let pg = priority(gold.index());
    (0..s.len())
        .filter(|&e| s[e] == g && e != gold.index() && candidates.contains(EntityId(e as u32)))
        .filter(|&e| priority(e) > pg)
        .count()
}

/// Rank of `gold` among `candidates`, best first. Entities scoring exactly
/// the gold score are ordered uniformly at random against it.
pub fn rank_gold(
    scores: &ScoreVector,
    candidates: &CandidateSet,
    gold: EntityId,
    rng: &TieBreakRng,
) -> Result<RankResult> {
    if scores.scores.len() != candidates.entities {
        return Err(Error::Config(format!(
            "query {}: {} scores for {} entities",
            scores.query_id,
            scores.scores.len(),
            candidates.entities
        )));
    }
    if !candidates.contains(gold) {
        return Err(Error::GoldNotCandidate {
            query_id: scores.query_id,
            gold: gold.0,
        });
    }
    let s = &scores.scores;
    let g = s[gold.index()];
    let (mut greater, mut ties) = (0usize, 0usize);
    for &x in s {
        greater += (x > g) as usize;
        ties += (x == g) as usize;
    }
    // gold tied with itself
    ties -= 1;
    for e in candidates.excluded() {
        let x = s[e.index()];
        greater -= (x > g) as usize;
        ties -= (x == g) as usize;
    }
    let offset = if ties == 0 {
        0
    } else {
        tied_ahead(s, candidates, gold, rng.for_query(scores.query_id))
    };
    Ok(RankResult {
        query_id: scores.query_id,
        gold,
        rank: 1 + greater + offset,
        candidate_count: candidates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::testutil::toy_kg;
    use crate::kg::Triple;

    fn sv(scores: &[f64]) -> ScoreVector {
        ScoreVector {
            query_id: 42,
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn nothing_to_filter() {
        let kg = toy_kg(5, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]);
        let q = Query::new(Triple::new(0, 0, 1), Direction::PredictTail, &kg).unwrap();
        assert_eq!(filtered_candidates(&kg, &q).len(), 5);
    }

    #[test]
    fn filters_other_known_tails() {
        // A=0 B=1 C=2
        let kg = toy_kg(
            3,
            1,
            vec![Triple::new(0, 0, 2)],
            vec![],
            vec![Triple::new(0, 0, 1)],
        );
        let q = Query::new(Triple::new(0, 0, 1), Direction::PredictTail, &kg).unwrap();
        let c = filtered_candidates(&kg, &q);
        assert_eq!(c.len(), 2);
        assert!(!c.contains(EntityId(2)));
        assert!(c.contains(EntityId(1)));
        assert_eq!(c.iter().collect::<Vec<_>>(), vec![EntityId(0), EntityId(1)]);

        // head direction: (?, r, B) has only A
        let q = Query::new(Triple::new(0, 0, 1), Direction::PredictHead, &kg).unwrap();
        assert_eq!(filtered_candidates(&kg, &q).len(), 3);
    }

    #[test]
    fn unrelated_relation_filters_nothing() {
        let kg = toy_kg(
            4,
            2,
            vec![Triple::new(0, 0, 2), Triple::new(0, 0, 3)],
            vec![],
            vec![Triple::new(0, 1, 1)],
        );
        let q = Query::new(Triple::new(0, 1, 1), Direction::PredictTail, &kg).unwrap();
        assert_eq!(filtered_candidates(&kg, &q).len(), 4);
    }

    #[test]
    fn strict_max_is_rank_one() {
        let r = rank_gold(
            &sv(&[1.0, 9.0, 3.0]),
            &CandidateSet::all(3),
            EntityId(1),
            &TieBreakRng::new(0),
        )
        .unwrap();
        assert_eq!((r.rank, r.candidate_count), (1, 3));
    }

    #[test]
    fn strict_dominance_is_last() {
        for seed in 0..50 {
            let r = rank_gold(
                &sv(&[5.0, 5.0, 3.0]),
                &CandidateSet::all(3),
                EntityId(2),
                &TieBreakRng::new(seed),
            )
            .unwrap();
            assert_eq!(r.rank, 3);
        }
    }

    #[test]
    fn all_equal_is_uniform() {
        let c = CandidateSet::all(3);
        let draws = 10_000;
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for seed in 0..draws {
            let r = rank_gold(&sv(&[0.0; 3]), &c, EntityId(0), &TieBreakRng::new(seed)).unwrap();
            counts[r.rank - 1] += 1;
            total += r.rank;
        }
        let mean = total as f64 / draws as f64;
        assert!((mean - 2.0).abs() < 0.05, "{mean}");
        assert!(counts.iter().all(|&c| c > 3000), "{counts:?}");
    }

    #[test]
    fn excluded_entities_do_not_count() {
        let c = CandidateSet::excluding(4, vec![EntityId(0), EntityId(3)]);
        let r = rank_gold(
            &sv(&[9.0, 1.0, 2.0, 2.0]),
            &c,
            EntityId(1),
            &TieBreakRng::new(0),
        )
        .unwrap();
        assert_eq!((r.rank, r.candidate_count), (2, 2));
    }

    #[test]
    fn gold_outside_candidates_is_an_error() {
        let c = CandidateSet::excluding(3, vec![EntityId(1)]);
        assert!(matches!(
            rank_gold(&sv(&[0.0; 3]), &c, EntityId(1), &TieBreakRng::new(0)),
            Err(Error::GoldNotCandidate { .. })
        ));
    }

    #[test]
    fn same_seed_and_query_same_rank() {
        let c = CandidateSet::all(100);
        let s = sv(&[0.5; 100]);
        let a = rank_gold(&s, &c, EntityId(7), &TieBreakRng::new(3)).unwrap();
        let b = rank_gold(&s, &c, EntityId(7), &TieBreakRng::new(3)).unwrap();
        assert_eq!(a, b);
    }
}
