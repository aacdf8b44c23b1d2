use std::io;

use thiserror::Error;

/// Errors produced by the mapping pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("embedding has no usable rows")]
    EmptyVocabulary,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row {row} has zero norm and cannot be length-normalized")]
    ZeroRow { row: usize },

    #[error("matrix contains non-finite values")]
    NonFinite,

    #[error("empty row range")]
    EmptyRange,

    #[error("matrix is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is rank deficient beyond the regularization floor")]
    RankDeficient,

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("every similarity row was zeroed; retry with fresh randomness")]
    EmptyInduction,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no gold source word is covered by the source vocabulary")]
    NoCoverage,

    #[error("word {0:?} is not in the cutoff vocabulary")]
    UnknownWord(String),
}

pub type Result<T> = std::result::Result<T, Error>;
