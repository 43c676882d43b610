//! Mean-likelihood entity scoring over a masked-LM logit table.
//!
//! An entity's score is the average, over its non-pad positions `j`, of the
//! logit the table assigns to its `j`-th token at masked position `j`.

mod builtin;
pub mod mlmt;

use crate::error::{Error, Result};
use crate::prompt::Query;
use crate::tokenizer::EntityCatalog;

pub use builtin::{
    BuiltinKind, ConstantScorer, FrequencyScorer, RandomScorer, TableGenerator, TableScorer,
};
pub use mlmt::{load_logit_tables, save_logit_tables, LogitManifest, MlmtReader, MlmtWriter};

/// Logits at each masked position (rows) for every token id (columns),
/// stored position-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitTable {
    pub query_id: u64,
    l_max: usize,
    vocab_size: usize,
    values: Vec<f32>,
}

impl LogitTable {
    pub fn new(query_id: u64, l_max: usize, vocab_size: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != l_max * vocab_size {
            return Err(Error::Config(format!(
                "logit table of {} values cannot be shaped {l_max} x {vocab_size}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "logit table for query {query_id} has a non-finite value at position {}, token {}",
                i / vocab_size,
                i % vocab_size
            )));
        }
        Ok(LogitTable {
            query_id,
            l_max,
            vocab_size,
            values,
        })
    }

    pub fn zeros(query_id: u64, l_max: usize, vocab_size: usize) -> Self {
        LogitTable {
            query_id,
            l_max,
            vocab_size,
            values: vec![0.0; l_max * vocab_size],
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, position: usize, token: usize) -> f32 {
        self.values[position * self.vocab_size + token]
    }

    pub fn row(&self, position: usize) -> &[f32] {
        &self.values[position * self.vocab_size..(position + 1) * self.vocab_size]
    }
}

/// One score per catalog entity for a single query.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub query_id: u64,
    pub scores: Vec<f64>,
}

fn check_dims(l_max: usize, vocab_size: usize, catalog: &EntityCatalog) -> Result<()> {
    if l_max != catalog.l_max() || vocab_size != catalog.vocab_size() {
        return Err(Error::DimensionMismatch {
            expected_l_max: catalog.l_max(),
            expected_vocab: catalog.vocab_size(),
            found_l_max: l_max,
            found_vocab: vocab_size,
        });
    }
    Ok(())
}

/// Gather kernel: writes each entity's mean logit into `out`.
///
/// `values` is `l_max x vocab_size` position-major. Sums run in f64 from
/// position 0 upward.
pub(crate) fn mean_gather(
    values: &[f32],
    vocab_size: usize,
    catalog: &EntityCatalog,
    out: &mut Vec<f64>,
) {
    let l_max = catalog.l_max();
    out.clear();
    out.reserve(catalog.len());
    if l_max == 0 {
        return;
    }
    let rows = catalog.token_matrix().chunks_exact(l_max);
    for (row, &len) in rows.zip(catalog.lengths()) {
        let mut acc = 0.0f64;
        for (j, &tok) in row[..len as usize].iter().enumerate() {
            acc += values[j * vocab_size + tok as usize] as f64;
        }
        out.push(acc / len as f64);
    }
}

pub fn score_entities(table: &LogitTable, catalog: &EntityCatalog) -> Result<ScoreVector> {
    check_dims(table.l_max, table.vocab_size, catalog)?;
    let mut scores = Vec::new();
    mean_gather(&table.values, table.vocab_size, catalog, &mut scores);
    Ok(ScoreVector {
        query_id: table.query_id,
        scores,
    })
}

/// Anything that can score the whole catalog for a query.
pub trait ScoreSource: Sync {
    /// Whether scores change with the evaluation seed.
    fn seed_dependent(&self) -> bool {
        false
    }

    fn score(&self, query: &Query, seed: u64) -> Result<ScoreVector>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn catalog(rows: &[Vec<u32>], v: usize) -> EntityCatalog {
        EntityCatalog::from_rows(rows, 3, v).unwrap()
    }

    /// Independent scalar oracle: plain loops over the padded rows.
    fn oracle(table: &LogitTable, c: &EntityCatalog) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..c.len() {
            let row = c.row(i);
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for (j, &t) in row.iter().enumerate() {
                if t != c.pad() {
                    sum += table.get(j, t as usize) as f64;
                    count += 1;
                }
            }
            out.push(sum / count as f64);
        }
        out
    }

    #[test]
    fn single_token_entity_scores_its_logit() {
        let c = catalog(&[vec![5], vec![6, 7]], 8);
        let mut values = vec![0.0f32; 16];
        values[5] = 2.5;
        let t = LogitTable::new(1, 2, 8, values).unwrap();
        assert_eq!(score_entities(&t, &c).unwrap().scores[0], 2.5);
    }

    #[test]
    fn forced_arithmetic() {
        // ids 2 and 3 are ordinary tokens here, so pad with 0
        let c = EntityCatalog::from_rows(&[vec![2, 3]], 0, 4).unwrap();
        let t = LogitTable::new(0, 2, 4, vec![0., 1., 2., 3., 4., 5., 6., 7.]).unwrap();
        assert_eq!(score_entities(&t, &c).unwrap().scores, vec![4.5]);
    }

    #[test]
    fn dimension_mismatch_reports_both_shapes() {
        let c = catalog(&[vec![2, 1]], 4);
        let t = LogitTable::zeros(0, 2, 5);
        match score_entities(&t, &c) {
            Err(Error::DimensionMismatch {
                expected_l_max: 2,
                expected_vocab: 4,
                found_l_max: 2,
                found_vocab: 5,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_tables() {
        assert!(LogitTable::new(0, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(LogitTable::new(0, 1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn five_entity_toy_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows = vec![
            vec![4],
            vec![5, 6, 7],
            vec![8, 4],
            vec![9, 9, 9, 9],
            vec![7, 6],
        ];
        let c = catalog(&rows, 10);
        let values: Vec<f32> = (0..40).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t = LogitTable::new(0, 4, 10, values).unwrap();
        assert_eq!(score_entities(&t, &c).unwrap().scores, oracle(&t, &c));
    }

    proptest! {
        #[test]
        fn kernel_equals_oracle(
            (v, rows) in (5usize..64).prop_flat_map(|v| {
                let tok = (4u32..v as u32).boxed();
                (Just(v), proptest::collection::vec(proptest::collection::vec(tok, 1..=6), 1..=50))
            }),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let c = catalog(&rows, v);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..c.l_max() * v).map(|_| rng.gen_range(-30.0f32..30.0)).collect();
            let t = LogitTable::new(0, c.l_max(), v, values).unwrap();
            let got = score_entities(&t, &c).unwrap().scores;
            let want = oracle(&t, &c);
            prop_assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
