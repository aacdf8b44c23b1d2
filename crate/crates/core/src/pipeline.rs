//! End-to-end mapping: normalize, seed, self-learn, re-weight.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedio::{Embedding, WordPairList};
use crate::error::{Error, Result};
use crate::evalharness::{evaluate, generate_synthetic, RunMeasurement, SynthSpec};
use crate::initsol::{build_initial_dictionary, InitConfig};
use crate::refine::{symmetric_reweight, RefinedMapping};
use crate::selflearn::{
    self_learn, Dictionary, MappingPair, Retrieval, SelfLearnConfig, SelfLearnOutcome,
};
use crate::vecmath::normalize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub init: InitConfig,
    pub self_learn: SelfLearnConfig,
    pub reweight: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            init: InitConfig::default(),
            self_learn: SelfLearnConfig::default(),
            reweight: true,
        }
    }
}

/// Where the self-learning loop starts from.
#[derive(Clone, Debug)]
pub enum SeedDictionary {
    /// Similarity-profile initialization.
    Unsupervised,
    /// Word pairs from a file; pairs outside the cutoff vocabularies are
    /// ignored.
    Supplied(WordPairList),
    /// One uniformly random target per source word of the cutoff vocabulary.
    Random,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub normalize_seconds: f64,
    pub init_seconds: f64,
    pub self_learn_seconds: f64,
    pub reweight_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Normalized source embeddings.
    pub source: Embedding,
    /// Normalized target embeddings.
    pub target: Embedding,
    pub seed_entries: usize,
    pub self_learning: SelfLearnOutcome,
    pub refined: Option<RefinedMapping>,
    pub timings: Timings,
}

impl PipelineOutput {
    /// The refined mapping when re-weighting ran, else the orthogonal one.
    pub fn mapping(&self) -> &MappingPair {
        self.refined
            .as_ref()
            .map_or(&self.self_learning.mapping, |r| &r.mapping)
    }

    /// Both vocabularies mapped into the shared space.
    pub fn mapped_embeddings(&self) -> Result<(Embedding, Embedding)> {
        let m = self.mapping();
        Ok((
            self.source
                .with_vectors(self.source.vectors().matmul(&m.wx)?)?,
            self.target
                .with_vectors(self.target.vectors().matmul(&m.wz)?)?,
        ))
    }
}

/// Converts word pairs to indices, keeping pairs whose words fall inside the
/// first `cutoff` rows of each vocabulary.
pub fn dictionary_from_pairs(
    x: &Embedding,
    z: &Embedding,
    pairs: &WordPairList,
    cutoff: usize,
) -> Result<Dictionary> {
    let entries: Vec<(usize, usize)> = pairs
        .pairs()
        .iter()
        .filter_map(|(s, t)| Some((x.lookup(s)?, z.lookup(t)?)))
        .filter(|&(i, j)| i < cutoff && j < cutoff)
        .collect();
    Dictionary::new(entries)
}

pub fn random_dictionary(src_rows: usize, tgt_rows: usize, seed: u64) -> Result<Dictionary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_D1C7);
    Dictionary::new(
        (0..src_rows)
            .map(|i| (i, rng.random_range(0..tgt_rows)))
            .collect(),
    )
}

pub fn run_pipeline(
    x: &Embedding,
    z: &Embedding,
    seed: &SeedDictionary,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.init.validate()?;
    cfg.self_learn.validate()?;
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dim {} vs target dim {}",
            x.dim(),
            z.dim()
        )));
    }
    let start = Instant::now();
    let mut timings = Timings::default();

    let source = x.with_vectors(normalize(x.vectors())?)?;
    let target = z.with_vectors(normalize(z.vectors())?)?;
    timings.normalize_seconds = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let cutoff = cfg.self_learn.vocab_cutoff;
    let d0 = match seed {
        SeedDictionary::Unsupervised => {
            build_initial_dictionary(source.vectors(), target.vectors(), &cfg.init)?
        }
        SeedDictionary::Supplied(pairs) => dictionary_from_pairs(&source, &target, pairs, cutoff)?,
        SeedDictionary::Random => random_dictionary(
            source.len().min(cutoff),
            target.len().min(cutoff),
            cfg.self_learn.seed,
        )?,
    };
    timings.init_seconds = t.elapsed().as_secs_f64();
    log::info!("seed dictionary with {} entries", d0.len());

    let t = Instant::now();
    let outcome = self_learn(source.vectors(), target.vectors(), &d0, &cfg.self_learn)?;
    timings.self_learn_seconds = t.elapsed().as_secs_f64();
    log::info!(
        "self-learning finished after {} iterations, objective {:.6}",
        outcome.state.iterations,
        outcome.state.final_objective
    );

    let t = Instant::now();
    let refined = if cfg.reweight {
        Some(symmetric_reweight(
            source.vectors(),
            target.vectors(),
            &outcome.dictionary,
        )?)
    } else {
        None
    };
    timings.reweight_seconds = t.elapsed().as_secs_f64();
    timings.total_seconds = start.elapsed().as_secs_f64();

    Ok(PipelineOutput {
        source,
        target,
        seed_entries: d0.len(),
        self_learning: outcome,
        refined,
        timings,
    })
}

/// Generates the instance for `seed`, runs the pipeline with the same seed and
/// scores the result against the planted pairs.
pub fn run_synthetic(
    spec: &SynthSpec,
    seed: u64,
    mode: &SeedDictionary,
    cfg: &PipelineConfig,
    retrieval: Retrieval,
) -> Result<RunMeasurement> {
    let inst = generate_synthetic(&SynthSpec { seed, ..spec.clone() })?;
    let mut cfg = cfg.clone();
    cfg.self_learn.seed = seed;
    let mode = match mode {
        SeedDictionary::Supplied(_) => SeedDictionary::Supplied(inst.gold.clone()),
        other => other.clone(),
    };
    let out = run_pipeline(&inst.source, &inst.target, &mode, &cfg)?;
    let result = evaluate(&out.source, &out.target, out.mapping(), &inst.gold, retrieval)?;
    Ok(RunMeasurement {
        accuracy: result.accuracy,
        iterations: out.self_learning.state.iterations,
        objective_trace: out.self_learning.state.trace,
    })
}
