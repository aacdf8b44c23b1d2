//! Unsupervised cross-lingual word-embedding mapping.
//!
//! The pipeline normalizes both embedding matrices, builds a seed dictionary
//! from similarity-distribution profiles, improves it with stochastic
//! self-learning, and finishes with a symmetric re-weighting of the learned
//! mapping.

pub mod embedio;
pub mod error;
pub mod evalharness;
pub mod initsol;
pub mod pipeline;
pub mod refine;
pub mod selflearn;
pub mod vecmath;

pub use embedio::{load_dictionary, load_embeddings, save_embeddings, Embedding, WordPairList};
pub use error::{Error, Result};
pub use evalharness::{
    evaluate, generate_synthetic, multi_run, EvalResult, RunMeasurement, RunRecord, RunReport,
    SynthSpec,
};
pub use initsol::{build_initial_dictionary, similarity_profile, InitConfig};
pub use pipeline::{run_pipeline, run_synthetic, PipelineConfig, PipelineOutput, SeedDictionary};
pub use refine::{symmetric_reweight, RefinedMapping};
pub use selflearn::{
    induce_dictionary, procrustes, self_learn, Dictionary, LoopState, MappingPair, Retrieval,
    SelfLearnConfig,
};
pub use vecmath::{DenseMatrix, SvdResult};
