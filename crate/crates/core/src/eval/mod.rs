//! Filtered ranking with randomized tie-breaking, and metric aggregation.

mod metrics;
mod rank;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::prompt::Query;
use crate::scoring::{score_entities, MlmtReader, ScoreSource, ScoreVector};
use crate::tokenizer::{EntityCatalog, Vocabulary};

pub use metrics::{aggregate_seeds, compute_metrics, EvalReport, Metrics, SeedMetrics};
pub use rank::{filtered_candidates, rank_gold, stream_rng, CandidateSet, RankResult, TieBreakRng};

/// Per-seed ranks in query order.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRanks {
    pub seed: u64,
    pub ranks: Vec<RankResult>,
}

/// The best-scored candidates of one query, with the gold entity placed at
/// its tie-broken rank.
#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    pub query: Query,
    pub gold_rank: usize,
    pub entries: Vec<(EntityId, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOutput {
    pub ranks: Vec<SeedRanks>,
    /// Filled for the first seed when a dump size was requested.
    pub topk: Vec<TopK>,
}

impl EvalOutput {
    pub fn report(&self) -> Result<EvalReport> {
        let per_seed = self
            .ranks
            .iter()
            .map(|s| {
                Ok(SeedMetrics {
                    seed: s.seed,
                    queries: s.ranks.len(),
                    metrics: compute_metrics(&s.ranks)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate_seeds(&per_seed)
    }
}

fn top_k(
    query: &Query,
    scores: &ScoreVector,
    candidates: &CandidateSet,
    gold_rank: usize,
    k: usize,
) -> TopK {
    let gold = query.gold();
    let mut others: Vec<(EntityId, f64)> = candidates
        .iter()
        .filter(|&e| e != gold)
        .map(|e| (e, scores.scores[e.index()]))
        .collect();
    let by_score =
        |a: &(EntityId, f64), b: &(EntityId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if others.len() > k {
        others.select_nth_unstable_by(k, by_score);
        others.truncate(k);
    }
    others.sort_by(by_score);
    if gold_rank <= k {
        others.insert(gold_rank - 1, (gold, scores.scores[gold.index()]));
    }
    others.truncate(k);
    TopK {
        query: *query,
        gold_rank,
        entries: others,
    }
}

/// Ranks one query's gold entity under every seed.
fn rank_query(
    kg: &KnowledgeGraph,
    query: &Query,
    seeds: &[u64],
    mut scores_for: impl FnMut(u64) -> Result<std::sync::Arc<ScoreVector>>,
    dump_k: usize,
) -> Result<(Vec<RankResult>, Option<TopK>)> {
    let candidates = filtered_candidates(kg, query);
    let mut out = Vec::with_capacity(seeds.len());
    let mut topk = None;
    for (i, &seed) in seeds.iter().enumerate() {
        let scores = scores_for(seed)?;
        if scores.query_id != query.query_id {
            return Err(Error::Config(format!(
                "scores for query {} supplied to query {}",
                scores.query_id, query.query_id
            )));
        }
        let r = rank_gold(&scores, &candidates, query.gold(), &TieBreakRng::new(seed))?;
        if i == 0 && dump_k > 0 {
            topk = Some(top_k(query, &scores, &candidates, r.rank, dump_k));
        }
        out.push(r);
    }
    Ok((out, topk))
}

fn collect(seeds: &[u64], per_query: Vec<(Vec<RankResult>, Option<TopK>)>) -> EvalOutput {
    let mut ranks: Vec<SeedRanks> = seeds
        .iter()
        .map(|&seed| SeedRanks {
            seed,
            ranks: Vec::with_capacity(per_query.len()),
        })
        .collect();
    let mut topk = Vec::new();
    for (rs, t) in per_query {
        for (slot, r) in ranks.iter_mut().zip(rs) {
            slot.ranks.push(r);
        }
        topk.extend(t);
    }
    EvalOutput { ranks, topk }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    Ok(())
}

/// Evaluates `queries` against a score source, in parallel over queries.
pub fn evaluate(
    kg: &KnowledgeGraph,
    queries: &[Query],
    source: &dyn ScoreSource,
    seeds: &[u64],
    dump_k: usize,
) -> Result<EvalOutput> {
    check_seeds(seeds)?;
    let per_query = queries
        .par_iter()
        .map(|q| {
            let mut cached: Option<std::sync::Arc<ScoreVector>> = None;
            rank_query(
                kg,
                q,
                seeds,
                |seed| {
                    if source.seed_dependent() {
                        return source.score(q, seed).map(std::sync::Arc::new);
                    }
                    if cached.is_none() {
                        cached = Some(std::sync::Arc::new(source.score(q, seed)?));
                    }
                    Ok(cached.clone().expect("cached above"))
                },
                dump_k,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(seeds, per_query))
}

/// Evaluates `queries` against logit tables streamed from an `MLMT` source.
///
/// Tables for queries outside `queries` are skipped; every query must have
/// exactly one table.
pub fn evaluate_tables<R: Read>(
    kg: &KnowledgeGraph,
    catalog: &EntityCatalog,
    queries: &[Query],
    reader: MlmtReader<R>,
    seeds: &[u64],
    dump_k: usize,
) -> Result<EvalOutput> {
    check_seeds(seeds)?;
    let reader = reader.expect_dims(catalog.l_max(), catalog.vocab_size());
    let index: HashMap<u64, usize> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| (q.query_id, i))
        .collect();
    let mut results: Vec<Option<(Vec<RankResult>, Option<TopK>)>> = vec![None; queries.len()];

    // keep roughly 256 MiB of tables in flight
    let table_bytes = (catalog.l_max() * catalog.vocab_size() * 4).max(1);
    let batch = (256 << 20) / table_bytes;
    let batch = batch.clamp(1, 1024);
    let mut skipped = 0usize;
    let mut pending = Vec::with_capacity(batch);
    let mut reader = reader.peekable();
    while reader.peek().is_some() {
        pending.clear();
        while pending.len() < batch {
            match reader.next() {
                Some(t) => {
                    let t = t?;
                    match index.get(&t.query_id) {
                        Some(&i) => pending.push((i, t)),
                        None => skipped += 1,
                    }
                }
                None => break,
            }
        }
        let done = pending
            .par_iter()
            .map(|(i, table)| {
                let scores = std::sync::Arc::new(score_entities(table, catalog)?);
                let r = rank_query(kg, &queries[*i], seeds, |_| Ok(scores.clone()), dump_k)?;
                Ok((*i, r))
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, r) in done {
            if results[i].replace(r).is_some() {
                return Err(Error::Config(format!(
                    "duplicate logit table for query {}",
                    queries[i].query_id
                )));
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} logit table(s) for queries outside the evaluated split");
    }
    let missing = results.iter().filter(|r| r.is_none()).count();
    if missing > 0 {
        let first = queries[results
            .iter()
            .position(Option::is_none)
            .expect("missing > 0")]
        .query_id;
        return Err(Error::Config(format!(
            "{missing} quer(ies) have no logit table (first missing query id {first})"
        )));
    }
    Ok(collect(
        seeds,
        results.into_iter().map(|r| r.expect("checked")).collect(),
    ))
}

/// Renders a top-k list in the layout of a qualitative error listing.
pub fn format_topk(
    vocab: &Vocabulary,
    catalog: &EntityCatalog,
    prompt: &str,
    topk: &TopK,
) -> String {
    let render = |e: EntityId| vocab.render(catalog.row(e.index()));
    let mut s = String::new();
    let _ = writeln!(s, "Prompt : {prompt}");
    let _ = writeln!(
        s,
        "Correct answer : {} \t Answer rank {}",
        render(topk.query.gold()),
        topk.gold_rank
    );
    for (i, (e, score)) in topk.entries.iter().enumerate() {
        let _ = writeln!(s, "Rank {}\t Score {:.4}\t : {}", i + 1, score, render(*e));
    }
    s
}
