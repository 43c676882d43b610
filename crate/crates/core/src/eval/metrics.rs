use serde::{Deserialize, Serialize};

use super::RankResult;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub mr: f64,
    #[serde(rename = "mp@1")]
    pub mp_at_1: f64,
    #[serde(rename = "mp@3")]
    pub mp_at_3: f64,
    #[serde(rename = "mp@10")]
    pub mp_at_10: f64,
}

impl Metrics {
    fn fields(&self) -> [f64; 5] {
        [self.mrr, self.mr, self.mp_at_1, self.mp_at_3, self.mp_at_10]
    }

    fn from_fields(f: [f64; 5]) -> Self {
        Metrics {
            mrr: f[0],
            mr: f[1],
            mp_at_1: f[2],
            mp_at_3: f[3],
            mp_at_10: f[4],
        }
    }
}

pub fn compute_metrics(results: &[RankResult]) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let n = results.len() as f64;
    let mut acc = [0.0f64; 5];
    for r in results {
        let rank = r.rank as f64;
        acc[0] += 1.0 / rank;
        acc[1] += rank;
        acc[2] += (r.rank <= 1) as u8 as f64;
        acc[3] += (r.rank <= 3) as u8 as f64;
        acc[4] += (r.rank <= 10) as u8 as f64;
    }
    Ok(Metrics::from_fields(acc.map(|a| a / n)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub queries: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub query_count: usize,
    pub per_seed: Vec<SeedMetrics>,
    pub mean: Metrics,
    /// Population standard deviation across seeds.
    pub std: Metrics,
}

pub fn aggregate_seeds(per_seed: &[SeedMetrics]) -> Result<EvalReport> {
    if per_seed.is_empty() {
        return Err(Error::Config("cannot aggregate zero seeds".into()));
    }
    let k = per_seed.len() as f64;
    let mut mean = [0.0f64; 5];
    for s in per_seed {
        for (m, v) in mean.iter_mut().zip(s.metrics.fields()) {
            *m += v / k;
        }
    }
    let mut var = [0.0f64; 5];
    for s in per_seed {
        for ((acc, v), m) in var.iter_mut().zip(s.metrics.fields()).zip(mean) {
            *acc += (v - m) * (v - m) / k;
        }
    }
    Ok(EvalReport {
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        query_count: per_seed[0].queries,
        per_seed: per_seed.to_vec(),
        mean: Metrics::from_fields(mean),
        std: Metrics::from_fields(var.map(f64::sqrt)),
    })
}
