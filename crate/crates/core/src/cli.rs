//! Command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{run_bench, to_plot_table, write_reports, BenchConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_tables, format_topk, EvalOutput, TopK};
use crate::kg::{
    load_dataset_dir, make_unseen_split, EntityId, KnowledgeGraph, SplitKind, SplitSpec,
    SurfaceStyle, Triple, UnseenManifest, UNSEEN_MANIFEST,
};
use crate::prompt::{
    build_prompt, queries_for_split, render_prompt, write_prompts_jsonl, Direction, EvalMode,
    PromptConfig, PromptRecord, Query, DEFAULT_MAX_SEQ_LEN,
};
use crate::scoring::{
    load_logit_tables, score_entities, BuiltinKind, ConstantScorer, FrequencyScorer, LogitManifest,
    MlmtWriter, RandomScorer, ScoreSource, ScoreVector, TableGenerator, TableScorer,
};
use crate::tokenizer::{EntityCatalog, GreedyTokenizer, TokenizedKg, Vocabulary};

#[derive(Debug, Parser)]
#[command(
    name = "linkrank",
    version,
    about = "Rank knowledge-base entities against masked-LM logit tables"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a dataset and write prompts, catalog, vocabulary and manifest.
    Prepare(PrepareArgs),
    /// Re-partition a dataset so validation and test entities are unseen in training.
    SplitUnseen(SplitUnseenArgs),
    /// Write the top-scoring entities for each query.
    Score(ScoreArgs),
    /// Compute filtered ranking metrics over one or more seeds.
    Evaluate(EvaluateArgs),
    /// Time scoring and ranking against synthetic catalogs.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Synset,
    Verbatim,
}

impl From<StyleArg> for SurfaceStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Synset => SurfaceStyle::Synset,
            StyleArg::Verbatim => SurfaceStyle::Verbatim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Valid,
    Test,
}

impl From<SplitArg> for SplitKind {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Valid => SplitKind::Valid,
            SplitArg::Test => SplitKind::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Standard,
    Unseen,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Standard => EvalMode::Standard,
            ModeArg::Unseen => EvalMode::Unseen,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Constant,
    Frequency,
    Random,
}

impl From<ScorerArg> for BuiltinKind {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::Constant => BuiltinKind::Constant,
            ScorerArg::Frequency => BuiltinKind::Frequency,
            ScorerArg::Random => BuiltinKind::Random,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// Dataset directory with train.tsv, valid.tsv and test.tsv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "verbatim")]
    pub style: StyleArg,
}

#[derive(Clone, Debug, Args)]
pub struct TokenArgs {
    /// Vocabulary file, one token per line. Without it a word-level
    /// vocabulary is derived from the dataset.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// JSONL token ids produced by an external tokenizer. Requires --vocab.
    #[arg(long, requires = "vocab")]
    pub pretokenized: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct QueryArgs {
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "standard")]
    pub mode: ModeArg,
}

#[derive(Clone, Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Logit tables in MLMT format.
    #[arg(long)]
    pub logits: Option<PathBuf>,
    /// Model-free scorer.
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
}

#[derive(Clone, Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tokens: TokenArgs,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_SEQ_LEN)]
    pub max_seq_len: usize,
    /// Right-pad every prompt to --max-seq-len.
    #[arg(long)]
    pub pad_to_max: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SplitUnseenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub valid_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub test_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tokens: TokenArgs,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Seed for the random scorer.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Predictions JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generated logit tables (constant and frequency
    /// scorers) in MLMT format, with a manifest beside them.
    #[arg(long, conflicts_with = "logits")]
    pub write_tables: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tokens: TokenArgs,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Write the top K candidates of every query (first seed) to topk.txt.
    #[arg(long, default_value_t = 0)]
    pub dump_topk: usize,
    /// Used to render prompts in the top-k dump.
    #[arg(long, default_value_t = DEFAULT_MAX_SEQ_LEN)]
    pub max_seq_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    pub entities: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub queries: usize,
    #[arg(long, default_value_t = 8)]
    pub l_max: usize,
    #[arg(long, default_value_t = 50_265)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for bench.csv and bench.dat.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A loaded dataset with its tokenization.
pub struct Workspace {
    pub kg: KnowledgeGraph,
    pub vocab: Vocabulary,
    pub tokens: TokenizedKg,
    pub catalog: EntityCatalog,
}

impl Workspace {
    pub fn load(data: &DataArgs, tok: &TokenArgs) -> Result<Self> {
        if !data.data.is_dir() {
            return Err(Error::Config(format!(
                "dataset directory {} does not exist",
                data.data.display()
            )));
        }
        let kg = load_dataset_dir(&data.data, data.style.into())?;
        let (vocab, tokens) = match (&tok.vocab, &tok.pretokenized) {
            (Some(v), Some(p)) => {
                let vocab = Vocabulary::load(v)?;
                let tokens = TokenizedKg::load_pretokenized(p, &vocab, &kg)?;
                (vocab, tokens)
            }
            (None, Some(_)) => return Err(Error::Config("--pretokenized requires --vocab".into())),
            (v, None) => {
                let vocab = match v {
                    Some(v) => {
                        let loaded = Vocabulary::load(v)?;
                        if !loaded.has_byte_fallback() {
                            log::warn!("{} has no byte tokens; appending them", v.display());
                        }
                        loaded.with_byte_fallback()
                    }
                    None => Vocabulary::word_level(
                        kg.entities()
                            .iter()
                            .flat_map(|e| [e.surface.as_str(), e.definition.as_str()])
                            .chain(kg.relations().iter().map(|r| r.surface.as_str())),
                    ),
                };
                let tokens =
                    TokenizedKg::from_tokenizer(&GreedyTokenizer::new(&vocab)?, &vocab, &kg);
                (vocab, tokens)
            }
        };
        let catalog = tokens.catalog(&kg)?;
        log::info!(
            "{} entities, {} relations, vocabulary {}, L_max {}",
            kg.num_entities(),
            kg.num_relations(),
            vocab.len(),
            catalog.l_max()
        );
        Ok(Workspace {
            kg,
            vocab,
            tokens,
            catalog,
        })
    }

    pub fn queries(&self, q: &QueryArgs) -> Result<Vec<Query>> {
        queries_for_split(&self.kg, q.split.into(), q.mode.into())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let ws = Workspace::load(&args.data, &args.tokens)?;
    let queries = ws.queries(&args.queries)?;
    let config = PromptConfig {
        max_seq_len: args.max_seq_len,
        pad_to_max: args.pad_to_max,
    };
    let records = queries
        .iter()
        .map(|q| {
            Ok(PromptRecord::new(
                q,
                &build_prompt(&ws.tokens, &ws.catalog, q, &config)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&args.out)?;
    write_prompts_jsonl(&args.out.join("prompts.jsonl"), &records)?;
    ws.catalog.save_jsonl(&args.out.join("catalog.jsonl"))?;
    ws.vocab.save(&args.out.join("vocab.txt"))?;
    write_json(
        &args.out.join("manifest.json"),
        &LogitManifest::new(ws.catalog.l_max(), ws.catalog.vocab_size(), &queries),
    )?;
    println!(
        "wrote {} prompts for {} entities (L_max {}) to {}",
        records.len(),
        ws.catalog.len(),
        ws.catalog.l_max(),
        args.out.display()
    );
    Ok(())
}

fn write_triples(path: &Path, kg: &KnowledgeGraph, triples: &[Triple]) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            kg.entity(t.head).raw_id,
            kg.relation(t.rel).raw_id,
            kg.entity(t.tail).raw_id
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn split_unseen(args: &SplitUnseenArgs) -> Result<()> {
    let kg = load_dataset_dir(&args.data.data, args.data.style.into())?;
    let spec = SplitSpec {
        seed: args.seed,
        valid_fraction: args.valid_fraction,
        test_fraction: args.test_fraction,
    };
    let split = make_unseen_split(&kg, &spec)?;
    create_dir(&args.out)?;
    write_triples(&args.out.join("train.tsv"), &split, split.train())?;
    write_triples(&args.out.join("valid.tsv"), &split, split.valid())?;
    write_triples(&args.out.join("test.tsv"), &split, split.test())?;
    // keep the full entity and relation inventories, even those no longer in any triple
    for (name, ids) in [
        (
            "entities.tsv",
            kg.entities()
                .iter()
                .map(|e| e.raw_id.as_str())
                .collect::<Vec<_>>(),
        ),
        (
            "relations.tsv",
            kg.relations().iter().map(|r| r.raw_id.as_str()).collect(),
        ),
    ] {
        let src = args.data.data.join(name);
        let dst = args.out.join(name);
        if src.exists() {
            fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        } else {
            let mut text = ids.join("\n");
            text.push('\n');
            fs::write(&dst, text).map_err(|e| Error::io(&dst, e))?;
        }
    }
    let manifest = UnseenManifest::from_graph(&split).expect("unseen split carries its entities");
    write_json(&args.out.join(UNSEEN_MANIFEST), &manifest)?;
    println!(
        "train {} / valid {} / test {} triples; {} validation and {} test entities",
        split.train().len(),
        split.valid().len(),
        split.test().len(),
        manifest.valid_entities.len(),
        manifest.test_entities.len()
    );
    Ok(())
}

fn builtin_source<'a>(kind: BuiltinKind, ws: &'a Workspace) -> Result<Box<dyn ScoreSource + 'a>> {
    Ok(match kind {
        BuiltinKind::Constant => Box::new(TableScorer::new(
            ConstantScorer::new(&ws.catalog),
            &ws.catalog,
        )?),
        BuiltinKind::Frequency => Box::new(TableScorer::new(
            FrequencyScorer::new(&ws.kg, &ws.catalog),
            &ws.catalog,
        )?),
        BuiltinKind::Random => Box::new(RandomScorer::new(ws.kg.num_entities())),
    })
}

#[derive(Serialize)]
struct Candidate<'a> {
    entity_id: EntityId,
    raw_id: &'a str,
    surface: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct Prediction<'a> {
    query_id: u64,
    direction: Direction,
    triple: Triple,
    candidates: Vec<Candidate<'a>>,
}

fn best(scores: &ScoreVector, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = scores.scores.iter().copied().enumerate().collect();
    let by_score = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if all.len() > k {
        all.select_nth_unstable_by(k, by_score);
        all.truncate(k);
    }
    all.sort_by(by_score);
    all
}

fn write_predictions(
    out: &mut impl Write,
    path: &Path,
    kg: &KnowledgeGraph,
    query: &Query,
    scores: &ScoreVector,
    k: usize,
) -> Result<()> {
    let candidates = best(scores, k)
        .into_iter()
        .map(|(i, score)| {
            let e = kg.entity(EntityId(i as u32));
            Candidate {
                entity_id: e.id,
                raw_id: &e.raw_id,
                surface: &e.surface,
                score,
            }
        })
        .collect();
    let p = Prediction {
        query_id: query.query_id,
        direction: query.direction,
        triple: query.triple,
        candidates,
    };
    serde_json::to_writer(&mut *out, &p)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let ws = Workspace::load(&args.data, &args.tokens)?;
    let queries = ws.queries(&args.queries)?;
    let file = fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut out = BufWriter::new(file);
    if let Some(path) = &args.source.logits {
        let by_id: std::collections::HashMap<u64, &Query> =
            queries.iter().map(|q| (q.query_id, q)).collect();
        let reader = load_logit_tables(path, Some((ws.catalog.l_max(), ws.catalog.vocab_size())))?;
        let mut written = 0usize;
        for table in reader {
            let table = table?;
            let Some(q) = by_id.get(&table.query_id) else {
                continue;
            };
            let scores = score_entities(&table, &ws.catalog)?;
            write_predictions(&mut out, &args.out, &ws.kg, q, &scores, args.top_k)?;
            written += 1;
        }
        if written < queries.len() {
            log::warn!(
                "{} of {} queries had no logit table",
                queries.len() - written,
                queries.len()
            );
        }
    } else {
        let kind: BuiltinKind = args.source.scorer.expect("clap requires a source").into();
        let source = builtin_source(kind, &ws)?;
        for q in &queries {
            let scores = source.score(q, args.seed)?;
            write_predictions(&mut out, &args.out, &ws.kg, q, &scores, args.top_k)?;
        }
        if let Some(tables) = &args.write_tables {
            match kind {
                BuiltinKind::Constant => {
                    write_tables(tables, &ConstantScorer::new(&ws.catalog), &queries)?
                }
                BuiltinKind::Frequency => {
                    write_tables(tables, &FrequencyScorer::new(&ws.kg, &ws.catalog), &queries)?
                }
                BuiltinKind::Random => {
                    return Err(Error::Config(
                        "the random scorer draws entity scores directly and has no logit tables"
                            .into(),
                    ))
                }
            }
        }
    }
    out.flush().map_err(|e| Error::io(&args.out, e))
}

fn write_tables(path: &Path, generator: &impl TableGenerator, queries: &[Query]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = MlmtWriter::new(
        BufWriter::new(file),
        generator.l_max(),
        generator.vocab_size(),
    )
    .map_err(|e| Error::io(path, e))?;
    for q in queries {
        w.write_table(&generator.table(q))?;
    }
    w.finish()
        .map_err(|e| Error::io(path, e))?
        .flush()
        .map_err(|e| Error::io(path, e))?;
    let manifest = path.with_extension("manifest.json");
    write_json(
        &manifest,
        &LogitManifest::new(generator.l_max(), generator.vocab_size(), queries),
    )
}

fn write_ranks(dir: &Path, output: &EvalOutput) -> Result<()> {
    for s in &output.ranks {
        let path = dir.join(format!("ranks_seed{}.csv", s.seed));
        let mut text = String::from("query_id,gold,rank,candidate_count\n");
        for r in &s.ranks {
            let _ = writeln!(
                text,
                "{},{},{},{}",
                r.query_id, r.gold, r.rank, r.candidate_count
            );
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_topk(path: &Path, ws: &Workspace, topk: &[TopK], max_seq_len: usize) -> Result<()> {
    let config = PromptConfig {
        max_seq_len,
        pad_to_max: false,
    };
    let mut text = String::new();
    for t in topk {
        let prompt = build_prompt(&ws.tokens, &ws.catalog, &t.query, &config)?;
        text.push_str(&format_topk(
            &ws.vocab,
            &ws.catalog,
            &render_prompt(&ws.vocab, &prompt),
            t,
        ));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<EvalOutput> {
    let ws = Workspace::load(&args.data, &args.tokens)?;
    let queries = ws.queries(&args.queries)?;
    let output = match (&args.source.logits, args.source.scorer) {
        (Some(path), _) => {
            let reader = load_logit_tables(path, None)?;
            evaluate_tables(
                &ws.kg,
                &ws.catalog,
                &queries,
                reader,
                &args.seeds,
                args.dump_topk,
            )?
        }
        (None, Some(kind)) => {
            let source = builtin_source(kind.into(), &ws)?;
            evaluate(
                &ws.kg,
                &queries,
                source.as_ref(),
                &args.seeds,
                args.dump_topk,
            )?
        }
        (None, None) => {
            return Err(Error::Config(
                "one of --logits or --scorer is required".into(),
            ))
        }
    };
    let report = output.report()?;
    create_dir(&args.out)?;
    write_json(&args.out.join("report.json"), &report)?;
    write_ranks(&args.out, &output)?;
    if args.dump_topk > 0 {
        write_topk(
            &args.out.join("topk.txt"),
            &ws,
            &output.topk,
            args.max_seq_len,
        )?;
    }
    let m = &report.mean;
    let s = &report.std;
    println!(
        "queries {}  seeds {}\nMRR {:.4} ± {:.4}  MR {:.1} ± {:.1}  MP@1 {:.4}  MP@3 {:.4}  MP@10 {:.4}",
        report.query_count,
        report.seeds.len(),
        m.mrr,
        s.mrr,
        m.mr,
        s.mr,
        m.mp_at_1,
        m.mp_at_3,
        m.mp_at_10
    );
    Ok(output)
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        entity_counts: args.entities.clone(),
        queries: args.queries,
        l_max: args.l_max,
        vocab_size: args.vocab_size,
        seed: args.seed,
    };
    let rows = run_bench(&cfg)?;
    if let Some(dir) = &args.out {
        write_reports(&rows, dir)?;
    }
    print!("{}", to_plot_table(&rows));
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::SplitUnseen(a) => split_unseen(a),
        Command::Score(a) => score(a),
        Command::Evaluate(a) => run_evaluate(a).map(|_| ()),
        Command::Bench(a) => bench(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn scorer_and_logits_are_exclusive() {
        let r = Cli::try_parse_from([
            "linkrank", "evaluate", "--data", "d", "--out", "o", "--scorer", "constant",
            "--logits", "x",
        ]);
        assert!(r.is_err());
        let r = Cli::try_parse_from(["linkrank", "evaluate", "--data", "d", "--out", "o"]);
        assert!(r.is_err());
    }

    #[test]
    fn seeds_parse_as_list() {
        let cli = Cli::try_parse_from([
            "linkrank", "evaluate", "--data", "d", "--out", "o", "--scorer", "random", "--seeds",
            "3,4",
        ])
        .unwrap();
        let Command::Evaluate(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.seeds, vec![3, 4]);
        assert_eq!(a.queries.split, SplitArg::Test);
    }
}
