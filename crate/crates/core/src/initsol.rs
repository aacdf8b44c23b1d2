//! Unsupervised initial dictionary from similarity-distribution profiles.
//!
//! Rows and columns of the two embedding matrices are unaligned, but both axes
//! of `sqrt(E E^T)` index words. Sorting each row of that matrix removes the
//! dependence on word order, so translation-equivalent words end up with
//! similar profile vectors in both languages and can be matched by plain
//! retrieval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selflearn::{induce_dictionary, Dictionary, InductionParams, Retrieval, ZeroingStream};
use crate::vecmath::{normalize, sort_rows_desc, sqrt_outer_gram, DenseMatrix, DEFAULT_BLOCK_ROWS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub vocab_cutoff_init: usize,
    pub use_csls: bool,
    pub bidirectional: bool,
    pub csls_k: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            vocab_cutoff_init: 4000,
            use_csls: true,
            bidirectional: true,
            csls_k: 10,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_cutoff_init < 2 {
            return Err(Error::InvalidConfig(
                "vocab_cutoff_init must be at least 2".into(),
            ));
        }
        if self.csls_k == 0 {
            return Err(Error::InvalidConfig("csls_k must be positive".into()));
        }
        Ok(())
    }
}

/// Normalized, row-sorted `sqrt(E E^T)` over the first `cutoff` rows of a
/// normalized embedding matrix. The result is `cutoff x cutoff`.
pub fn similarity_profile(emb: &DenseMatrix, cutoff: usize) -> Result<DenseMatrix> {
    if cutoff < 2 {
        return Err(Error::InvalidConfig("profile cutoff must be at least 2".into()));
    }
    if cutoff > emb.rows() {
        return Err(Error::InvalidConfig(format!(
            "profile cutoff {cutoff} exceeds {} rows",
            emb.rows()
        )));
    }
    let head = emb.head(cutoff);
    // sqrt(M) for M = E E^T, evaluated through the d x d Gram matrix.
    let root = sqrt_outer_gram(&head)?;
    normalize(&sort_rows_desc(&root))
}

/// Builds the seed dictionary for self-learning from the profiles of `x` and
/// `z` (both already normalized). Indices refer to the first
/// `min(vocab_cutoff_init, rows)` words of each side.
pub fn build_initial_dictionary(
    x: &DenseMatrix,
    z: &DenseMatrix,
    cfg: &InitConfig,
) -> Result<Dictionary> {
    cfg.validate()?;
    let px = similarity_profile(x, cfg.vocab_cutoff_init.min(x.rows()))?;
    let pz = similarity_profile(z, cfg.vocab_cutoff_init.min(z.rows()))?;
    // Different vocabulary sizes give different profile widths; drop the
    // smallest similarities so both live in one space.
    let width = px.cols().min(pz.cols());
    let (px, pz) = if px.cols() == pz.cols() {
        (px, pz)
    } else {
        (px.leading_columns(width), pz.leading_columns(width))
    };
    let params = InductionParams {
        retrieval: if cfg.use_csls {
            Retrieval::Csls
        } else {
            Retrieval::NearestNeighbor
        },
        csls_k: cfg.csls_k.min(px.rows()).min(pz.rows()),
        bidirectional: cfg.bidirectional,
        block_rows: DEFAULT_BLOCK_ROWS,
    };
    induce_dictionary(&px, &pz, &params, 1.0, &ZeroingStream::new(0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::random_orthogonal;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        normalize(&DenseMatrix::from_shape_vec(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn profile_shape_and_unit_rows() {
        let e = unit_gaussian(50, 8, 1);
        let p = similarity_profile(&e, 30).unwrap();
        assert_eq!(p.shape(), (30, 30));
        for i in 0..30 {
            let n: f64 = p.row(i).iter().map(|v| (*v as f64).powi(2)).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-5);
        }
        assert!(similarity_profile(&e, 1).is_err());
        assert!(similarity_profile(&e, 51).is_err());
    }

    #[test]
    fn profile_is_rotation_invariant() {
        let e = unit_gaussian(40, 6, 2);
        let q = random_orthogonal(6, &mut ChaCha8Rng::seed_from_u64(3));
        let a = similarity_profile(&e, 40).unwrap();
        let b = similarity_profile(&e.matmul(&q).unwrap(), 40).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-4);
    }

    #[test]
    fn profile_rows_follow_vocabulary_permutation() {
        let e = unit_gaussian(40, 6, 4);
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let shuffled = e.select_rows(&perm);
        let a = similarity_profile(&e, 40).unwrap();
        let b = similarity_profile(&shuffled, 40).unwrap();
        // row i of b is row perm[i] of a
        for (i, &p) in perm.iter().enumerate() {
            for (u, v) in b.row(i).iter().zip(a.row(p)) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn identical_spaces_give_identity_seed() {
        let e = unit_gaussian(60, 8, 6);
        let d = build_initial_dictionary(&e, &e, &InitConfig::default()).unwrap();
        assert_eq!(d.len(), 120);
        for i in 0..60 {
            assert_eq!(d.multiplicity(i, i), 2);
        }
    }

    #[test]
    fn unequal_vocabularies_are_truncated() {
        let x = unit_gaussian(40, 6, 7);
        let z = unit_gaussian(30, 6, 8);
        let d = build_initial_dictionary(&x, &z, &InitConfig::default()).unwrap();
        assert!(d.max_source() < 40 && d.max_target() < 30);
        assert_eq!(d.len(), 70);
    }

    #[test]
    fn initial_dictionary_is_deterministic() {
        let x = unit_gaussian(50, 6, 9);
        let z = unit_gaussian(50, 6, 10);
        let cfg = InitConfig::default();
        assert_eq!(
            build_initial_dictionary(&x, &z, &cfg).unwrap(),
            build_initial_dictionary(&x, &z, &cfg).unwrap()
        );
    }

    fn planted_recovery(noise_sigma: f64) -> f64 {
        use crate::evalharness::{generate_synthetic, SynthSpec};
        let inst = generate_synthetic(&SynthSpec { n_words: 500, dim: 50, noise_sigma, seed: 11, ..Default::default() })
            .unwrap();
        let x = normalize(inst.source.vectors()).unwrap();
        let z = normalize(inst.target.vectors()).unwrap();
        let cfg = InitConfig { vocab_cutoff_init: 500, ..InitConfig::default() };
        let d = build_initial_dictionary(&x, &z, &cfg).unwrap();
        let hits = d.entries().iter().filter(|&&(i, j)| inst.permutation[i] == j).count();
        hits as f64 / d.len() as f64
    }

    #[test]
    fn recovers_planted_permutation_without_noise() {
        let r = planted_recovery(0.0);
        assert!(r >= 0.99, "recovered {r}");
    }

    #[test]
    fn recovers_planted_permutation_with_small_noise() {
        let r = planted_recovery(0.01);
        assert!(r >= 0.90, "recovered {r}");
    }
}
