//! Symmetric re-weighting, applied once after self-learning has converged.
//!
//! Both sides are whitened, rotated by the SVD of the whitened cross-covariance
//! `U S V^T = Xw^T D Zw`, each scaled by `S^(1/2)`, and finally de-whitened with
//! `U^T (X^T X)^(1/2) U` and `V^T (Z^T Z)^(1/2) V` respectively.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::selflearn::{cross_covariance, Dictionary, MappingPair};
use crate::vecmath::{gram_power, svd64, DenseMatrix};

/// The factors whose product gives each refined transformation:
/// `wx = whiten_x * u * diag(scale) * dewhiten_x` and
/// `wz = whiten_z * v * diag(scale) * dewhiten_z`.
#[derive(Clone, Debug)]
pub struct ReweightFactors {
    pub whiten_x: DenseMatrix,
    pub whiten_z: DenseMatrix,
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    /// Singular values of the whitened cross-covariance.
    pub singular_values: Vec<f64>,
    /// `singular_values` raised to the re-weighting power.
    pub scale: Vec<f64>,
    pub dewhiten_x: DenseMatrix,
    pub dewhiten_z: DenseMatrix,
}

/// Refined (no longer orthogonal) transformations with their provenance.
#[derive(Clone, Debug)]
pub struct RefinedMapping {
    pub mapping: MappingPair,
    pub factors: ReweightFactors,
}

impl RefinedMapping {
    pub fn wx(&self) -> &DenseMatrix {
        &self.mapping.wx
    }

    pub fn wz(&self) -> &DenseMatrix {
        &self.mapping.wz
    }

    /// Recomputes `(wx, wz)` from the stored factors.
    pub fn compose_factors(&self) -> Result<MappingPair> {
        let f = &self.factors;
        let chain = |w: &DenseMatrix, r: &DenseMatrix, de: &DenseMatrix| -> Result<DenseMatrix> {
            let rotated = w.matmul(r)?.to_dmatrix() * DMatrix::from_diagonal(&DVector::from_vec(f.scale.clone()));
            DenseMatrix::from_dmatrix(&rotated).matmul(de)
        };
        Ok(MappingPair {
            wx: chain(&f.whiten_x, &f.u, &f.dewhiten_x)?,
            wz: chain(&f.whiten_z, &f.v, &f.dewhiten_z)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReweightOptions {
    /// Exponent applied to the singular values on each side.
    pub power: f64,
    pub dewhiten: bool,
}

impl Default for ReweightOptions {
    fn default() -> Self {
        Self {
            power: 0.5,
            dewhiten: true,
        }
    }
}

/// Symmetric re-weighting with `S^(1/2)` on both sides and de-whitening.
pub fn symmetric_reweight(x: &DenseMatrix, z: &DenseMatrix, d: &Dictionary) -> Result<RefinedMapping> {
    symmetric_reweight_with(x, z, d, &ReweightOptions::default())
}

/// Gram matrices are taken over the dictionary rows (with multiplicity), i.e.
/// the same rows that enter `X^T D Z`.
pub fn symmetric_reweight_with(
    x: &DenseMatrix,
    z: &DenseMatrix,
    d: &Dictionary,
    opts: &ReweightOptions,
) -> Result<RefinedMapping> {
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

    let sources: Vec<usize> = d.entries().iter().map(|e| e.0).collect();
    let targets: Vec<usize> = d.entries().iter().map(|e| e.1).collect();
    let gram = |m: &DenseMatrix, rows: &[usize]| {
        let a = m.select_rows(rows).to_dmatrix();
        a.tr_mul(&a)
    };
    let gram_x = gram(x, &sources);
    let gram_z = gram(z, &targets);
    let whiten_x = gram_power(&gram_x, -0.5)?;
    let whiten_z = gram_power(&gram_z, -0.5)?;

    let whitened_cross = &whiten_x * cross_covariance(x, z, d) * &whiten_z;
    let svd = svd64(&whitened_cross)?;
    let u = svd.u;
    let v = svd.vt.transpose();
    let scale: Vec<f64> = svd.s.iter().map(|s| s.max(0.0).powf(opts.power)).collect();
    let scale_diag = DMatrix::from_diagonal(&DVector::from_vec(scale.clone()));

    let dim = x.cols();
    let (dewhiten_x, dewhiten_z) = if opts.dewhiten {
        (
            u.transpose() * gram_power(&gram_x, 0.5)? * &u,
            v.transpose() * gram_power(&gram_z, 0.5)? * &v,
        )
    } else {
        (DMatrix::identity(dim, dim), DMatrix::identity(dim, dim))
    };

    let wx = &whiten_x * &u * &scale_diag * &dewhiten_x;
    let wz = &whiten_z * &v * &scale_diag * &dewhiten_z;
    if wx.iter().chain(wz.iter()).any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    Ok(RefinedMapping {
        mapping: MappingPair {
            wx: DenseMatrix::from_dmatrix(&wx),
            wz: DenseMatrix::from_dmatrix(&wz),
        },
        factors: ReweightFactors {
            whiten_x: DenseMatrix::from_dmatrix(&whiten_x),
            whiten_z: DenseMatrix::from_dmatrix(&whiten_z),
            u: DenseMatrix::from_dmatrix(&u),
            v: DenseMatrix::from_dmatrix(&v),
            singular_values: svd.s,
            scale,
            dewhiten_x: DenseMatrix::from_dmatrix(&dewhiten_x),
            dewhiten_z: DenseMatrix::from_dmatrix(&dewhiten_z),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selflearn::procrustes;
    use crate::vecmath::{normalize, random_orthogonal, whiten_transform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        normalize(&DenseMatrix::from_shape_vec(rows, cols, data).unwrap()).unwrap()
    }

    fn noisy_pair(n: usize, d: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
        let x = unit_gaussian(n, d, seed);
        let q = random_orthogonal(d, &mut ChaCha8Rng::seed_from_u64(seed + 1));
        let noise = unit_gaussian(n, d, seed + 2).scaled(0.3);
        let z = DenseMatrix::new(x.matmul(&q).unwrap().as_array() + noise.as_array()).unwrap();
        (x, normalize(&z).unwrap())
    }

    fn mapped_similarity(x: &DenseMatrix, z: &DenseMatrix, m: &MappingPair) -> DenseMatrix {
        x.matmul(&m.wx).unwrap().matmul(&z.matmul(&m.wz).unwrap().transpose()).unwrap()
    }

    #[test]
    fn whitened_identical_spaces_map_together() {
        // orthonormal columns: Gram is the identity
        let q = random_orthogonal(8, &mut ChaCha8Rng::seed_from_u64(1));
        let x = q.leading_columns(4);
        let d = Dictionary::identity(8).unwrap();
        let r = symmetric_reweight(&x, &x, &d).unwrap();
        let xm = x.matmul(r.wx()).unwrap();
        let zm = x.matmul(r.wz()).unwrap();
        assert!(xm.max_abs_diff(&zm) < 1e-4);
    }

    #[test]
    fn factor_chain_reproduces_mapping() {
        let (x, z) = noisy_pair(50, 5, 2);
        let d = Dictionary::identity(50).unwrap();
        let r = symmetric_reweight(&x, &z, &d).unwrap();
        let again = r.compose_factors().unwrap();
        assert!(again.wx.max_abs_diff(r.wx()) < 1e-4);
        assert!(again.wz.max_abs_diff(r.wz()) < 1e-4);
    }

    #[test]
    fn direction_neutral() {
        let (x, z) = noisy_pair(60, 5, 3);
        let d = Dictionary::new((0..60).map(|i| (i, i)).chain([(3, 4), (10, 2)]).collect()).unwrap();
        let swapped = Dictionary::new(d.entries().iter().map(|&(a, b)| (b, a)).collect()).unwrap();
        let fwd = symmetric_reweight(&x, &z, &d).unwrap();
        let bwd = symmetric_reweight(&z, &x, &swapped).unwrap();
        let s_fwd = mapped_similarity(&x, &z, &fwd.mapping);
        let s_bwd = mapped_similarity(&z, &x, &bwd.mapping).transpose();
        assert!(s_fwd.max_abs_diff(&s_bwd) < 1e-4);
    }

    #[test]
    fn shared_space_similarity_is_whitened_procrustes_with_full_s() {
        let (x, z) = noisy_pair(60, 5, 4);
        let d = Dictionary::identity(60).unwrap();
        let opts = ReweightOptions { power: 0.5, dewhiten: false };
        let r = symmetric_reweight_with(&x, &z, &d, &opts).unwrap();
        let got = mapped_similarity(&x, &z, &r.mapping);

        let f = &r.factors;
        let xw = x.matmul(&f.whiten_x).unwrap();
        let zw = z.matmul(&f.whiten_z).unwrap();
        let s = DenseMatrix::from_dmatrix(&DMatrix::from_diagonal(&DVector::from_vec(
            f.singular_values.clone(),
        )));
        let expected = xw
            .matmul(&f.u)
            .unwrap()
            .matmul(&s)
            .unwrap()
            .matmul(&zw.matmul(&f.v).unwrap().transpose())
            .unwrap();
        let diff = DenseMatrix::new(got.as_array() - expected.as_array()).unwrap();
        assert!(diff.frobenius_norm() / expected.frobenius_norm() < 1e-3);
    }

    #[test]
    fn unit_weights_reproduce_whitened_orthogonal_solution() {
        let (x, z) = noisy_pair(60, 5, 5);
        let d = Dictionary::identity(60).unwrap();
        let opts = ReweightOptions { power: 0.0, dewhiten: false };
        let r = symmetric_reweight_with(&x, &z, &d, &opts).unwrap();

        let xw = x.matmul(&whiten_transform(&x).unwrap()).unwrap();
        let zw = z.matmul(&whiten_transform(&z).unwrap()).unwrap();
        let fit = procrustes(&xw, &zw, &d).unwrap();
        let expected = mapped_similarity(&xw, &zw, &fit.mapping);
        let got = mapped_similarity(&x, &z, &r.mapping);
        assert!(got.max_abs_diff(&expected) < 1e-4);
    }

    #[test]
    fn empty_dictionary_rejected() {
        let x = unit_gaussian(5, 2, 6);
        assert!(Dictionary::new(vec![]).is_err());
        let d = Dictionary::new(vec![(9, 0)]).unwrap();
        assert!(symmetric_reweight(&x, &x, &d).is_err());
    }
}
