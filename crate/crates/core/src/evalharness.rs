//! Bilingual lexicon extraction evaluation, the synthetic isometry benchmark,
//! multi-run aggregation and similarity-profile export.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedio::{Embedding, WordPairList};
use crate::error::{Error, Result};
use crate::initsol::similarity_profile;
use crate::selflearn::{csls_knn_means_blocked, retrieve_top1, MappingPair, Retrieval};
use crate::vecmath::{length_normalize, normalize, random_orthogonal, DenseMatrix, DEFAULT_BLOCK_ROWS};

/// Runs scoring at or below this accuracy count as failures.
pub const SUCCESS_THRESHOLD: f64 = 0.05;

/// CSLS neighborhood used at evaluation time.
pub const EVAL_CSLS_K: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub source: String,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Precision at 1 over covered source words.
    pub accuracy: f64,
    pub covered: usize,
    pub oov: usize,
    pub outcomes: Vec<PairOutcome>,
}

fn map_rows(emb: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    length_normalize(&emb.matmul(w)?)
}

/// Top-1 translation accuracy against `gold`.
///
/// Every distinct gold source word found in `x` is mapped and matched against
/// the whole of `z`; a prediction counts if it equals any gold target for that
/// source. Mapped vectors are length-normalized, so scores are cosines.
pub fn evaluate(
    x: &Embedding,
    z: &Embedding,
    map: &MappingPair,
    gold: &WordPairList,
    retrieval: Retrieval,
) -> Result<EvalResult> {
    let mut targets: HashMap<&str, HashSet<&str>> = HashMap::new();
    let mut sources: Vec<&str> = Vec::new();
    for (s, t) in gold.pairs() {
        targets
            .entry(s.as_str())
            .or_insert_with(|| {
                sources.push(s.as_str());
                HashSet::new()
            })
            .insert(t.as_str());
    }
    let covered: Vec<(&str, usize)> = sources
        .iter()
        .filter_map(|s| x.lookup(s).map(|i| (*s, i)))
        .collect();
    let oov = sources.len() - covered.len();
    if covered.is_empty() {
        return Err(Error::NoCoverage);
    }

    let query_rows: Vec<usize> = covered.iter().map(|c| c.1).collect();
    let queries = map_rows(&x.vectors().select_rows(&query_rows), &map.wx)?;
    let candidates = map_rows(z.vectors(), &map.wz)?;
    let candidate_means = match retrieval {
        Retrieval::Csls => {
            let all_sources = map_rows(x.vectors(), &map.wx)?;
            let k = EVAL_CSLS_K.min(all_sources.rows()).min(candidates.rows());
            Some((
                csls_knn_means_blocked(&candidates, &all_sources, k, DEFAULT_BLOCK_ROWS)?,
                k,
            ))
        }
        Retrieval::NearestNeighbor => None,
    };
    let predictions = retrieve_top1(
        &queries,
        &candidates,
        candidate_means.as_ref().map(|(m, _)| m.as_slice()),
        candidate_means.as_ref().map_or(1, |(_, k)| *k),
        DEFAULT_BLOCK_ROWS,
    );

    let outcomes: Vec<PairOutcome> = covered
        .iter()
        .zip(predictions)
        .map(|((src, _), j)| {
            let predicted = z.words()[j].clone();
            let correct = targets[src].contains(predicted.as_str());
            PairOutcome {
                source: src.to_string(),
                predicted,
                correct,
            }
        })
        .collect();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(EvalResult {
        accuracy: correct as f64 / outcomes.len() as f64,
        covered: outcomes.len(),
        oov,
        outcomes,
    })
}

/// Parameters of a planted-isometry benchmark instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_words: usize,
    pub dim: usize,
    /// Standard deviation of the Gaussian noise added to every target
    /// component. Source components are standard normal.
    pub noise_sigma: f64,
    pub permute: bool,
    /// Source dimension `j` is scaled by `exp(-decay * j / dim)`; 0 keeps the
    /// source isotropic.
    pub spectrum_decay: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_words: 2000,
            dim: 50,
            noise_sigma: 0.02,
            permute: true,
            spectrum_decay: 0.0,
            seed: 0,
        }
    }
}

/// Synthetic pair of embeddings related by a random rotation, a vocabulary
/// permutation and additive noise, with the planted dictionary as gold.
#[derive(Clone, Debug)]
pub struct SynthInstance {
    pub source: Embedding,
    pub target: Embedding,
    pub gold: WordPairList,
    /// `permutation[i]` is the target row of source word `i`.
    pub permutation: Vec<usize>,
    pub rotation: DenseMatrix,
}

/// `X` is standard Gaussian (optionally with decaying per-dimension scales),
/// `Q` a random orthogonal matrix, and target row `permutation[i]` is
/// `x_i Q + noise`. Words are `s<i>` and `t<j>`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthInstance> {
    if spec.n_words == 0 || spec.dim == 0 {
        return Err(Error::InvalidConfig("n_words and dim must be positive".into()));
    }
    if !(spec.noise_sigma >= 0.0) || !spec.noise_sigma.is_finite() {
        return Err(Error::InvalidConfig("noise_sigma must be nonnegative".into()));
    }
    let (n, d) = (spec.n_words, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let scales: Vec<f64> = (0..d)
        .map(|j| (-spec.spectrum_decay * j as f64 / d as f64).exp())
        .collect();

    let x_data: Vec<f32> = (0..n * d)
        .map(|k| (rng.sample::<f64, _>(StandardNormal) * scales[k % d]) as f32)
        .collect();
    let x = DenseMatrix::from_shape_vec(n, d, x_data)?;
    let rotation = random_orthogonal(d, &mut rng);

    let mut permutation: Vec<usize> = (0..n).collect();
    if spec.permute {
        permutation.shuffle(&mut rng);
    }
    let rotated = x.matmul(&rotation)?;
    let mut z_data = vec![0f32; n * d];
    for (i, &p) in permutation.iter().enumerate() {
        z_data[p * d..(p + 1) * d].copy_from_slice(rotated.row(i));
    }
    if spec.noise_sigma > 0.0 {
        for v in z_data.iter_mut() {
            *v += (rng.sample::<f64, _>(StandardNormal) * spec.noise_sigma) as f32;
        }
    }
    let z = DenseMatrix::from_shape_vec(n, d, z_data)?;

    let source_words: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let target_words: Vec<String> = (0..n).map(|j| format!("t{j}")).collect();
    let gold = WordPairList::new(
        permutation
            .iter()
            .enumerate()
            .map(|(i, &p)| (source_words[i].clone(), target_words[p].clone())),
    );
    Ok(SynthInstance {
        source: Embedding::new(source_words, x)?,
        target: Embedding::new(target_words, z)?,
        gold,
        permutation,
        rotation,
    })
}

/// Measurements returned by one pipeline run inside [`multi_run`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeasurement {
    pub accuracy: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub success: bool,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

/// Best/average accuracy, success count and mean runtime over several runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: Vec<RunRecord>,
    pub best: f64,
    pub average: f64,
    pub successes: usize,
    pub mean_wall_seconds: f64,
}

impl RunReport {
    /// Aggregates per-run records. Failed runs count with accuracy 0.
    pub fn from_runs(runs: Vec<RunRecord>) -> Self {
        let n = runs.len().max(1) as f64;
        let best = runs.iter().map(|r| r.accuracy).fold(0.0, f64::max);
        let average = runs.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let successes = runs.iter().filter(|r| r.success).count();
        let mean_wall_seconds = runs.iter().map(|r| r.wall_seconds).sum::<f64>() / n;
        Self {
            runs,
            best,
            average,
            successes,
            mean_wall_seconds,
        }
    }

    /// One row in the shape `best avg s t` (percentages and minutes).
    pub fn table(&self, label: &str) -> String {
        format!(
            "{:<24} {:>8} {:>8} {:>4} {:>8}\n{:<24} {:>8.2} {:>8.2} {:>4} {:>8.2}\n",
            "",
            "best",
            "avg",
            "s",
            "t(min)",
            label,
            100.0 * self.best,
            100.0 * self.average,
            self.successes,
            self.mean_wall_seconds / 60.0
        )
    }

    /// One JSON object per run, newline-terminated.
    pub fn write_json_lines<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.runs {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs `pipeline` with seeds `base_seed .. base_seed + n_runs`. Errors are
/// recorded in the run's record instead of aborting the batch.
pub fn multi_run<F>(n_runs: usize, base_seed: u64, pipeline: F) -> Result<RunReport>
where
    F: Fn(u64) -> Result<RunMeasurement> + Sync,
{
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be at least 1".into()));
    }
    let runs: Vec<RunRecord> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let seed = base_seed.wrapping_add(run as u64);
            let start = Instant::now();
            let result = pipeline(seed);
            let wall_seconds = start.elapsed().as_secs_f64();
            match result {
                Ok(m) => RunRecord {
                    run,
                    seed,
                    accuracy: m.accuracy,
                    success: m.accuracy > SUCCESS_THRESHOLD,
                    iterations: m.iterations,
                    objective_trace: m.objective_trace,
                    error: None,
                    wall_seconds,
                },
                Err(e) => RunRecord {
                    run,
                    seed,
                    accuracy: 0.0,
                    success: false,
                    iterations: 0,
                    objective_trace: Vec::new(),
                    error: Some(e.to_string()),
                    wall_seconds,
                },
            }
        })
        .collect();
    Ok(RunReport::from_runs(runs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub word: String,
    pub rank: usize,
    pub value: f32,
}

/// Profile vectors (normalized, row-sorted `sqrt(E E^T)`) of `words` over the
/// first `cutoff` words of `emb`. The embedding is normalized first. Ranks
/// start at 1.
pub fn export_profile(emb: &Embedding, words: &[String], cutoff: usize) -> Result<Vec<ProfileRow>> {
    let cutoff = cutoff.min(emb.len());
    let rows: Vec<usize> = words
        .iter()
        .map(|w| match emb.lookup(w) {
            Some(i) if i < cutoff => Ok(i),
            _ => Err(Error::UnknownWord(w.clone())),
        })
        .collect::<Result<_>>()?;
    let profile = similarity_profile(&normalize(emb.vectors())?, cutoff)?;
    Ok(words
        .iter()
        .zip(rows)
        .flat_map(|(w, i)| {
            profile.row(i).iter().enumerate().map(move |(r, v)| ProfileRow {
                word: w.clone(),
                rank: r + 1,
                value: *v,
            })
        })
        .collect())
}

/// Writes `word,rank,value` CSV.
pub fn write_profile_csv<W: Write>(rows: &[ProfileRow], mut w: W) -> Result<()> {
    writeln!(w, "word,rank,value")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.word, r.rank, r.value)?;
    }
    w.flush()?;
    Ok(())
}
