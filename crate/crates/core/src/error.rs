use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: unknown {kind} id `{id}`")]
    UnknownId {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        id: String,
    },

    #[error("duplicate {kind} surface string `{surface}` (raw ids `{first}` and `{second}`)")]
    DuplicateSurface {
        kind: &'static str,
        surface: String,
        first: String,
        second: String,
    },

    #[error("malformed synset `{0}`: expected name.pos.NN with pos in {{n,v,a,s,r}}")]
    MalformedSynset(String),

    #[error("relation `{0}` is empty after cleaning")]
    EmptyRelation(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("entity {id} (`{surface}`) tokenizes to an empty sequence")]
    EmptyEntity { id: u32, surface: String },

    #[error("missing pre-tokenized ids for {0}")]
    MissingTokens(String),

    #[error(
        "query {query_id}: prompt needs {needed} tokens without definition, max_seq_len is {max}"
    )]
    PromptOverflow {
        query_id: u64,
        needed: usize,
        max: usize,
    },

    #[error("query id overflow for {entities} entities x {relations} relations")]
    QueryIdOverflow { entities: usize, relations: usize },

    #[error("logit table shape (l_max={found_l_max}, vocab={found_vocab}) does not match expected (l_max={expected_l_max}, vocab={expected_vocab})")]
    DimensionMismatch {
        expected_l_max: usize,
        expected_vocab: usize,
        found_l_max: usize,
        found_vocab: usize,
    },

    #[error("logit file offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("query {query_id}: gold entity {gold} is not among the filtered candidates")]
    GoldNotCandidate { query_id: u64, gold: u32 },

    #[error("cannot compute metrics over zero rank results")]
    EmptyResults,

    #[error("{0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that indicate a bug in the engine rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            Error::GoldNotCandidate { .. } | Error::QueryIdOverflow { .. }
        )
    }
}
