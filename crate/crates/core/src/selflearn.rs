//! Robust self-learning: alternate an orthogonal Procrustes fit with
//! dictionary induction until an annealed stall detector fires.
//!
//! Induction retrieves over blocks of the similarity matrix so the full
//! `n x m` product is never materialized. Optional corrections applied during
//! induction:
//!
//! * CSLS scoring, `2 cos(x, y) - r_T(x) - r_S(y)`, where `r_T(x)` is the mean
//!   similarity of `x` to its `k` nearest target rows and `r_S(y)` the mean
//!   similarity of `y` to its `k` nearest source rows.
//! * Stochastic zeroing: after scoring, each candidate survives with
//!   probability `p`. Removed entries are excluded from the argmax rather than
//!   set to zero.
//! * Bidirectional induction: the source-to-target and target-to-source
//!   dictionaries are concatenated, so a pair found in both directions counts
//!   twice in the next Procrustes fit.
//!
//! The keep probability starts low and is multiplied by a growth factor every
//! time the mean Procrustes objective stalls for `stall_patience` iterations.
//! Once it has reached 1 a further stall ends the loop.

use nalgebra::DMatrix;
use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{similarity_rows, svd64, DenseMatrix, DEFAULT_BLOCK_ROWS};

/// Sparse bilingual dictionary of `(source index, target index)` pairs, each
/// with weight one. Repeated pairs are kept and add up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    entries: Vec<(usize, usize)>,
}

impl Dictionary {
    pub fn new(entries: Vec<(usize, usize)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        Ok(Self { entries })
    }

    /// `(i, i)` for every `i < n`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| (i, i)).collect())
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_source(&self) -> usize {
        self.entries.iter().map(|e| e.0).max().unwrap_or(0)
    }

    pub fn max_target(&self) -> usize {
        self.entries.iter().map(|e| e.1).max().unwrap_or(0)
    }

    /// Number of times `(src, tgt)` occurs.
    pub fn multiplicity(&self, src: usize, tgt: usize) -> usize {
        self.entries.iter().filter(|e| **e == (src, tgt)).count()
    }

    /// Entries sorted, for order-insensitive comparison.
    pub fn sorted_entries(&self) -> Vec<(usize, usize)> {
        let mut e = self.entries.clone();
        e.sort_unstable();
        e
    }

    pub(crate) fn check_bounds(&self, src_rows: usize, tgt_rows: usize) -> Result<()> {
        if self.max_source() >= src_rows || self.max_target() >= tgt_rows {
            return Err(Error::DimensionMismatch(format!(
                "dictionary indices exceed the {src_rows}x{tgt_rows} vocabularies"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retrieval {
    Csls,
    NearestNeighbor,
}

/// Retrieval settings shared by every induction pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InductionParams {
    pub retrieval: Retrieval,
    pub csls_k: usize,
    pub bidirectional: bool,
    pub block_rows: usize,
}

impl Default for InductionParams {
    fn default() -> Self {
        Self {
            retrieval: Retrieval::Csls,
            csls_k: 10,
            bidirectional: true,
            block_rows: DEFAULT_BLOCK_ROWS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfLearnConfig {
    pub keep_prob_initial: f64,
    pub keep_prob_growth: f64,
    pub stall_tolerance: f64,
    pub stall_patience: usize,
    pub vocab_cutoff: usize,
    pub csls_k: usize,
    pub bidirectional: bool,
    pub stochastic: bool,
    pub retrieval: Retrieval,
    pub max_iterations: usize,
    pub seed: u64,
    pub block_rows: usize,
}

impl Default for SelfLearnConfig {
    fn default() -> Self {
        Self {
            keep_prob_initial: 0.1,
            keep_prob_growth: 2.0,
            stall_tolerance: 1e-6,
            stall_patience: 50,
            vocab_cutoff: 20_000,
            csls_k: 10,
            bidirectional: true,
            stochastic: true,
            retrieval: Retrieval::Csls,
            max_iterations: 10_000,
            seed: 0,
            block_rows: DEFAULT_BLOCK_ROWS,
        }
    }
}

impl SelfLearnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if !(self.keep_prob_initial > 0.0 && self.keep_prob_initial <= 1.0) {
            return bad("keep_prob_initial must lie in (0, 1]");
        }
        if !(self.keep_prob_growth > 1.0) || !self.keep_prob_growth.is_finite() {
            return bad("keep_prob_growth must be greater than 1");
        }
        if !(self.stall_tolerance >= 0.0) || !self.stall_tolerance.is_finite() {
            return bad("stall_tolerance must be a nonnegative number");
        }
        if self.stall_patience == 0 {
            return bad("stall_patience must be positive");
        }
        if self.vocab_cutoff == 0 {
            return bad("vocab_cutoff must be positive");
        }
        if self.csls_k == 0 {
            return bad("csls_k must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if self.block_rows == 0 {
            return bad("block_rows must be positive");
        }
        Ok(())
    }

    pub fn induction(&self) -> InductionParams {
        InductionParams {
            retrieval: self.retrieval,
            csls_k: self.csls_k,
            bidirectional: self.bidirectional,
            block_rows: self.block_rows,
        }
    }

    fn starting_keep_prob(&self) -> f64 {
        if self.stochastic {
            self.keep_prob_initial
        } else {
            1.0
        }
    }
}

/// Source and target transformations into the shared space.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingPair {
    pub wx: DenseMatrix,
    pub wz: DenseMatrix,
}

impl MappingPair {
    pub fn identity(dim: usize) -> Self {
        Self {
            wx: DenseMatrix::identity(dim),
            wz: DenseMatrix::identity(dim),
        }
    }
}

/// Procrustes solution together with its objective `sum_ij D_ij (x_i wx).(z_j wz)`,
/// which equals the sum of singular values of `X^T D Z`.
#[derive(Clone, Debug)]
pub struct ProcrustesFit {
    pub mapping: MappingPair,
    pub objective: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub iterations: usize,
    pub keep_prob: f64,
    pub best_objective: f64,
    pub stalled_for: usize,
    /// Mean Procrustes objective per iteration.
    pub trace: Vec<f64>,
    pub hit_iteration_cap: bool,
    /// Objective of the deterministic refit after the loop.
    pub final_objective: f64,
}

impl LoopState {
    fn new(keep_prob: f64) -> Self {
        Self {
            keep_prob,
            best_objective: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    /// Records one objective value; returns true when the loop should stop.
    fn observe(&mut self, objective: f64, cfg: &SelfLearnConfig) -> bool {
        self.iterations += 1;
        self.trace.push(objective);
        if objective - self.best_objective > cfg.stall_tolerance {
            self.best_objective = objective;
            self.stalled_for = 0;
        } else {
            self.stalled_for += 1;
        }
        if self.stalled_for >= cfg.stall_patience {
            if self.keep_prob >= 1.0 {
                return true;
            }
            self.keep_prob = (self.keep_prob * cfg.keep_prob_growth).min(1.0);
            self.stalled_for = 0;
        }
        false
    }
}

/// Deterministic source of keep/drop decisions for one induction call.
///
/// Every similarity row draws from its own ChaCha stream keyed by
/// `(seed, round, direction)` with the row index as stream id, so decisions do
/// not depend on block size or thread count.
#[derive(Clone, Debug)]
pub struct ZeroingStream {
    seed: u64,
    round: u64,
}

impl ZeroingStream {
    pub fn new(seed: u64, round: u64) -> Self {
        Self { seed, round }
    }

    fn row_rng(&self, direction: u64, row: usize) -> ChaCha8Rng {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state) ^ self.round.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            splitmix64(&mut state) ^ direction,
            splitmix64(&mut state),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(row as u64);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Optimal orthogonal `wx`, `wz` for dictionary `d`: with `U S V^T = X^T D Z`,
/// `wx = U` and `wz = V`.
pub fn procrustes(x: &DenseMatrix, z: &DenseMatrix, d: &Dictionary) -> Result<ProcrustesFit> {
    if d.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    if x.cols() != z.cols() {
        return Err(Error::DimensionMismatch(format!(
            "source dim {} vs target dim {}",
            x.cols(),
            z.cols()
        )));
    }
    d.check_bounds(x.rows(), z.rows())?;
    let cross = cross_covariance(x, z, d);
    let svd = svd64(&cross)?;
    let objective = svd.s.iter().sum();
    Ok(ProcrustesFit {
        mapping: MappingPair {
            wx: DenseMatrix::from_dmatrix(&svd.u),
            wz: DenseMatrix::from_dmatrix(&svd.vt.transpose()),
        },
        objective,
    })
}

/// `X^T D Z` in double precision.
pub(crate) fn cross_covariance(x: &DenseMatrix, z: &DenseMatrix, d: &Dictionary) -> DMatrix<f64> {
    let gather = |m: &DenseMatrix, pick: fn(&(usize, usize)) -> usize| {
        let cols = m.cols();
        DMatrix::from_fn(d.len(), cols, |r, c| m.get(pick(&d.entries[r]), c) as f64)
    };
    let xd = gather(x, |e| e.0);
    let zd = gather(z, |e| e.1);
    xd.tr_mul(&zd)
}

const LANES: usize = 16;

fn chunk_max(chunk: &[f32]) -> f32 {
    chunk.iter().fold(f32::NEG_INFINITY, |m, v| if *v > m { *v } else { m })
}

/// Mean of the `k` largest entries of `row` (`1 <= k <= row.len()`).
fn top_k_mean(row: &[f32], k: usize) -> f32 {
    // Ascending buffer of the k largest values seen so far.
    let mut best: Vec<f32> = row[..k].to_vec();
    best.sort_unstable_by(f32::total_cmp);
    for chunk in row[k..].chunks(4 * LANES) {
        let floor = best[0];
        if !chunk.iter().fold(false, |hit, v| hit | (*v > floor)) {
            continue;
        }
        for &v in chunk {
            if v > best[0] {
                let pos = best.partition_point(|b| *b < v);
                best.copy_within(1..pos, 0);
                best[pos - 1] = v;
            }
        }
    }
    let sum: f64 = best.iter().map(|v| *v as f64).sum();
    (sum / k as f64) as f32
}

/// Index of the first maximal entry, or `None` when every entry is `-inf`.
fn first_argmax(row: &[f32]) -> Option<usize> {
    let mut lanes = [f32::NEG_INFINITY; LANES];
    let mut chunks = row.chunks_exact(LANES);
    for chunk in &mut chunks {
        for (l, v) in lanes.iter_mut().zip(chunk) {
            *l = if *v > *l { *v } else { *l };
        }
    }
    let max = chunk_max(&lanes).max(chunk_max(chunks.remainder()));
    if max == f32::NEG_INFINITY {
        return None;
    }
    row.iter().position(|v| *v == max)
}

/// Runs `f(row_index, similarity_row)` for every row of `src * tgt^T`,
/// computing the product one block of rows at a time.
fn scan_rows<T, F>(src: &DenseMatrix, tgt: &DenseMatrix, block_rows: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f32]) -> T + Sync,
{
    let n = src.rows();
    let starts: Vec<usize> = (0..n).step_by(block_rows.max(1)).collect();
    starts
        .into_par_iter()
        .flat_map_iter(|start| {
            let end = (start + block_rows).min(n);
            let mut sims = similarity_rows(src.view().slice(s![start..end, ..]), tgt);
            let out: Vec<T> = sims
                .rows_mut()
                .into_iter()
                .enumerate()
                .map(|(offset, mut row)| {
                    f(start + offset, row.as_slice_mut().expect("standard layout"))
                })
                .collect();
            out
        })
        .collect()
}

fn check_knn(k: usize, tgt_rows: usize) -> Result<()> {
    if k == 0 || k > tgt_rows {
        return Err(Error::InvalidConfig(format!(
            "CSLS neighborhood {k} outside 1..={tgt_rows}"
        )));
    }
    Ok(())
}

/// For each `src` row, the mean of its `k` largest similarities to `tgt` rows.
pub fn csls_knn_means(src: &DenseMatrix, tgt: &DenseMatrix, k: usize) -> Result<Vec<f32>> {
    csls_knn_means_blocked(src, tgt, k, DEFAULT_BLOCK_ROWS)
}

pub fn csls_knn_means_blocked(
    src: &DenseMatrix,
    tgt: &DenseMatrix,
    k: usize,
    block_rows: usize,
) -> Result<Vec<f32>> {
    check_knn(k, tgt.rows())?;
    if src.cols() != tgt.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns against {}",
            src.cols(),
            tgt.cols()
        )));
    }
    Ok(scan_rows(src, tgt, block_rows, |_, row| top_k_mean(row, k)))
}

struct Pass<'a> {
    /// `r` of the querying side, when it has not been computed yet it is
    /// derived from the row itself.
    own_means: Option<&'a [f32]>,
    /// `r` of the candidate side; `None` for nearest-neighbor retrieval.
    other_means: Option<&'a [f32]>,
    csls_k: usize,
    keep_prob: f64,
    stream: &'a ZeroingStream,
    direction: u64,
}

struct RowResult {
    best: Option<usize>,
    own_mean: f32,
}

impl Pass<'_> {
    fn run(&self, src: &DenseMatrix, tgt: &DenseMatrix, block_rows: usize) -> Vec<RowResult> {
        let threshold = (self.keep_prob * 4_294_967_296.0) as u64;
        scan_rows(src, tgt, block_rows, |i, row| {
            let own_mean = match (self.other_means, self.own_means) {
                (None, _) => 0.0,
                (Some(_), Some(m)) => m[i],
                (Some(_), None) => top_k_mean(row, self.csls_k),
            };
            if let Some(r) = self.other_means {
                for (sim, rj) in row.iter_mut().zip(r) {
                    *sim = 2.0 * *sim - own_mean - rj;
                }
            }
            if self.keep_prob < 1.0 {
                let mut draws = vec![0u32; row.len()];
                self.stream.row_rng(self.direction, i).fill(draws.as_mut_slice());
                let threshold = threshold as u32;
                let dropped = f32::NEG_INFINITY.to_bits();
                for (score, d) in row.iter_mut().zip(&draws) {
                    let keep = 0u32.wrapping_sub(u32::from(*d < threshold));
                    *score = f32::from_bits((score.to_bits() & keep) | (dropped & !keep));
                }
            }
            RowResult {
                best: first_argmax(row),
                own_mean,
            }
        })
    }
}

/// One dictionary-induction step over mapped (unit-row) embeddings.
///
/// `keep_prob < 1` enables stochastic zeroing drawn from `stream`. Rows whose
/// every candidate was dropped contribute nothing; if no row survives the call
/// fails with [`Error::EmptyInduction`].
pub fn induce_dictionary(
    x_mapped: &DenseMatrix,
    z_mapped: &DenseMatrix,
    params: &InductionParams,
    keep_prob: f64,
    stream: &ZeroingStream,
) -> Result<Dictionary> {
    if x_mapped.cols() != z_mapped.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns against {}",
            x_mapped.cols(),
            z_mapped.cols()
        )));
    }
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "keep probability {keep_prob} outside (0, 1]"
        )));
    }
    let csls = params.retrieval == Retrieval::Csls;
    let k = params.csls_k;
    if csls {
        check_knn(k, z_mapped.rows())?;
        check_knn(k, x_mapped.rows())?;
    }
    let block = params.block_rows.max(1);
    let mut entries = Vec::new();

    // r_T over source rows, needed as column offsets by the backward pass.
    let r_src = if csls && params.bidirectional {
        Some(csls_knn_means_blocked(x_mapped, z_mapped, k, block)?)
    } else {
        None
    };

    // Target rows: r_S, and the backward dictionary when bidirectional.
    let r_tgt = if params.bidirectional {
        let backward = Pass {
            own_means: None,
            other_means: r_src.as_deref(),
            csls_k: k,
            keep_prob,
            stream,
            direction: 1,
        }
        .run(z_mapped, x_mapped, block);
        entries.extend(
            backward
                .iter()
                .enumerate()
                .filter_map(|(j, r)| r.best.map(|i| (i, j))),
        );
        csls.then(|| backward.iter().map(|r| r.own_mean).collect::<Vec<_>>())
    } else if csls {
        Some(csls_knn_means_blocked(z_mapped, x_mapped, k, block)?)
    } else {
        None
    };

    let forward = Pass {
        own_means: r_src.as_deref(),
        other_means: r_tgt.as_deref(),
        csls_k: k,
        keep_prob,
        stream,
        direction: 0,
    }
    .run(x_mapped, z_mapped, block);
    let mut forward_entries: Vec<(usize, usize)> = forward
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.best.map(|j| (i, j)))
        .collect();
    forward_entries.append(&mut entries);

    if forward_entries.is_empty() {
        return Err(Error::EmptyInduction);
    }
    Dictionary::new(forward_entries)
}

/// Top-1 candidate index for every query row. With `candidate_means`
/// (the candidates' `r` values) the score is CSLS, otherwise the raw dot
/// product; ties go to the lowest index.
pub(crate) fn retrieve_top1(
    queries: &DenseMatrix,
    candidates: &DenseMatrix,
    candidate_means: Option<&[f32]>,
    csls_k: usize,
    block_rows: usize,
) -> Vec<usize> {
    let stream = ZeroingStream::new(0, 0);
    Pass {
        own_means: None,
        other_means: candidate_means,
        csls_k,
        keep_prob: 1.0,
        stream: &stream,
        direction: 0,
    }
    .run(queries, candidates, block_rows)
    .into_iter()
    .map(|r| r.best.expect("nonempty candidate set"))
    .collect()
}

/// Result of [`self_learn`].
#[derive(Clone, Debug)]
pub struct SelfLearnOutcome {
    pub mapping: MappingPair,
    pub dictionary: Dictionary,
    pub state: LoopState,
}

/// Alternates Procrustes and induction from `d0` until convergence.
///
/// Induction runs over the first `vocab_cutoff` rows of each side. After the
/// loop, one deterministic induction pass produces the final dictionary and
/// the mapping is refit on it.
pub fn self_learn(
    x: &DenseMatrix,
    z: &DenseMatrix,
    d0: &Dictionary,
    cfg: &SelfLearnConfig,
) -> Result<SelfLearnOutcome> {
    cfg.validate()?;
    if x.cols() != z.cols() {
        return Err(Error::DimensionMismatch(format!(
            "source dim {} vs target dim {}",
            x.cols(),
            z.cols()
        )));
    }
    let xc = x.head(cfg.vocab_cutoff);
    let zc = z.head(cfg.vocab_cutoff);
    d0.check_bounds(xc.rows(), zc.rows())?;

    let params = cfg.induction();
    let mut state = LoopState::new(cfg.starting_keep_prob());
    let mut dictionary = d0.clone();
    let mut round = 0u64;
    let mapping = loop {
        let fit = procrustes(&xc, &zc, &dictionary)?;
        let objective = fit.objective / dictionary.len() as f64;
        let stop = state.observe(objective, cfg);
        log::debug!(
            "iteration {} objective {:.6} keep_prob {} entries {}",
            state.iterations,
            objective,
            state.keep_prob,
            dictionary.len()
        );
        if stop {
            break fit.mapping;
        }
        if state.iterations >= cfg.max_iterations {
            state.hit_iteration_cap = true;
            log::warn!("self-learning stopped at the {} iteration cap", cfg.max_iterations);
            break fit.mapping;
        }
        let xm = xc.matmul(&fit.mapping.wx)?;
        let zm = zc.matmul(&fit.mapping.wz)?;
        dictionary = loop {
            let stream = ZeroingStream::new(cfg.seed, round);
            round += 1;
            match induce_dictionary(&xm, &zm, &params, state.keep_prob, &stream) {
                Err(Error::EmptyInduction) => continue,
                other => break other?,
            }
        };
    };

    let xm = xc.matmul(&mapping.wx)?;
    let zm = zc.matmul(&mapping.wz)?;
    let dictionary = induce_dictionary(&xm, &zm, &params, 1.0, &ZeroingStream::new(cfg.seed, round))?;
    let fit = procrustes(&xc, &zc, &dictionary)?;
    state.final_objective = fit.objective / dictionary.len() as f64;
    Ok(SelfLearnOutcome {
        mapping: fit.mapping,
        dictionary,
        state,
    })
}
