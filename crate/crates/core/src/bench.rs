//! Engine throughput versus catalog size.
//!
//! Each measured query scores a synthetic catalog against a random logit
//! table and ranks one gold entity. Model inference is not part of the
//! measurement.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{rank_gold, CandidateSet, TieBreakRng};
use crate::kg::EntityId;
use crate::scoring::{score_entities, LogitTable};
use crate::tokenizer::{EntityCatalog, TokenId, Vocabulary};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub entity_counts: Vec<usize>,
    pub queries: usize,
    pub l_max: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            entity_counts: vec![1_000, 10_000, 100_000],
            queries: 20,
            l_max: 8,
            // RoBERTa vocabulary size
            vocab_size: 50_265,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub entities: usize,
    pub l_max: usize,
    pub queries: usize,
    pub total_secs: f64,
    /// Median over queries.
    pub median_query_secs: f64,
    pub per_entity_ns: f64,
}

/// Random catalog of `n` entities with lengths in `1..=l_max`; the first
/// entity always has the full width.
pub fn synthetic_catalog(
    n: usize,
    l_max: usize,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Result<EntityCatalog> {
    let first = Vocabulary::PAD + 1;
    if vocab_size <= first as usize || l_max == 0 {
        return Err(Error::Config(format!(
            "synthetic catalog needs l_max >= 1 and vocab_size > {first}"
        )));
    }
    let rows: Vec<Vec<TokenId>> = (0..n)
        .map(|i| {
            let len = if i == 0 {
                l_max
            } else {
                rng.gen_range(1..=l_max)
            };
            (0..len)
                .map(|_| rng.gen_range(first..vocab_size as TokenId))
                .collect()
        })
        .collect();
    EntityCatalog::from_rows(&rows, Vocabulary::PAD, vocab_size)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

pub fn bench_one(n: usize, cfg: &BenchConfig) -> Result<Option<BenchRow>> {
    if cfg.queries == 0 || n == 0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
    let catalog = synthetic_catalog(n, cfg.l_max, cfg.vocab_size, &mut rng)?;
    let tables: Vec<LogitTable> = (0..cfg.queries as u64)
        .map(|q| {
            let values = (0..cfg.l_max * cfg.vocab_size)
                .map(|_| rng.gen_range(-10.0f32..40.0))
                .collect();
            LogitTable::new(q, cfg.l_max, cfg.vocab_size, values)
        })
        .collect::<Result<_>>()?;
    let golds: Vec<EntityId> = (0..cfg.queries)
        .map(|_| EntityId(rng.gen_range(0..n as u32)))
        .collect();
    let candidates = CandidateSet::all(n);
    let tiebreak = TieBreakRng::new(cfg.seed);

    // warm caches and page in the catalog
    let warm = score_entities(&tables[0], &catalog)?;
    std::hint::black_box(rank_gold(&warm, &candidates, golds[0], &tiebreak)?);

    let mut times = Vec::with_capacity(cfg.queries);
    let start = Instant::now();
    for (table, &gold) in tables.iter().zip(&golds) {
        let t0 = Instant::now();
        let scores = score_entities(table, &catalog)?;
        let r = rank_gold(&scores, &candidates, gold, &tiebreak)?;
        std::hint::black_box(r);
        times.push(t0.elapsed().as_secs_f64());
    }
    let total = start.elapsed().as_secs_f64();
    let med = median(&mut times);
    Ok(Some(BenchRow {
        entities: n,
        l_max: cfg.l_max,
        queries: cfg.queries,
        total_secs: total,
        median_query_secs: med,
        per_entity_ns: med / n as f64 * 1e9,
    }))
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in &cfg.entity_counts {
        if let Some(row) = bench_one(n, cfg)? {
            log::info!("bench N={n}: {:.3} ns/entity", row.per_entity_ns);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("entities,l_max,queries,total_secs,median_query_secs,per_entity_ns\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.9},{:.4}",
            r.entities, r.l_max, r.queries, r.total_secs, r.median_query_secs, r.per_entity_ns
        );
    }
    s
}

/// Whitespace-aligned columns (`entities per_entity_ns`), one row per size.
pub fn to_plot_table(rows: &[BenchRow]) -> String {
    let mut s = format!("{:>12} {:>16}\n", "# entities", "per_entity_ns");
    for r in rows {
        let _ = writeln!(s, "{:>12} {:>16.4}", r.entities, r.per_entity_ns);
    }
    s
}

pub fn write_reports(rows: &[BenchRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("bench.csv");
    fs::write(&csv, to_csv(rows)).map_err(|e| Error::io(&csv, e))?;
    let dat = dir.join("bench.dat");
    fs::write(&dat, to_plot_table(rows)).map_err(|e| Error::io(&dat, e))
}
