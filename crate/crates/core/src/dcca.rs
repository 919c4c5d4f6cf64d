//! Sample canonical systems and the common/distinctive source split.

use nalgebra::DMatrix;

use crate::denoise::{SignalCovariance, SignalEstimate};
use crate::error::{CdpaError, Result};
use crate::linalg::{full_svd, half_angle_tangent, scale_rows};
use crate::scalar::Scalar;

const RANK_DEFICIENCY_RATIO: f64 = 1e-12;

/// Standardized, bi-orthogonal canonical scores of the two denoised signals.
#[derive(Debug, Clone)]
pub struct CanonicalSystem<T: Scalar> {
    /// r1×n, `(1/n)Ẑ₁Ẑ₁ᵀ = I`.
    pub z1: DMatrix<T>,
    /// r2×n.
    pub z2: DMatrix<T>,
    /// r1×r2 cross-covariance of the whitened scores.
    pub theta_hat: DMatrix<T>,
    /// Square orthogonal rotations `Û_θ1` (r1×r1) and `Û_θ2` (r2×r2).
    pub left_rotations: [DMatrix<T>; 2],
    /// Leading `r12` canonical correlations clipped to [0, 1].
    pub correlations: Vec<T>,
}

impl<T: Scalar> CanonicalSystem<T> {
    pub fn r12(&self) -> usize {
        self.correlations.len()
    }

    pub fn nsamples(&self) -> usize {
        self.z1.ncols()
    }

    pub fn scores(&self, k: usize) -> &DMatrix<T> {
        match k {
            1 => &self.z1,
            2 => &self.z2,
            _ => panic!("dataset index must be 1 or 2, got {k}"),
        }
    }

    /// First `r12` rows of `Ẑ_k`.
    pub fn common_scores(&self, k: usize) -> DMatrix<T> {
        self.scores(k).rows(0, self.r12()).into_owned()
    }
}

fn whitened_scores<T: Scalar>(cov: &SignalCovariance<T>, x: &SignalEstimate<T>) -> Result<DMatrix<T>> {
    let top = cov.eigvalues.first().copied().unwrap_or_else(T::zero);
    if cov.eigvalues.iter().any(|&l| l <= top * T::lit(RANK_DEFICIENCY_RATIO)) || top <= T::zero() {
        return Err(CdpaError::RankDeficiency(format!(
            "signal covariance eigenvalues {:?} are not well separated from zero",
            cov.eigvalues.iter().map(|l| l.as_f64()).collect::<Vec<_>>()
        )));
    }
    let inv_sqrt: Vec<T> = cov.eigvalues.iter().map(|&l| T::one() / l.sqrt()).collect();
    Ok(scale_rows(&(cov.eigvectors.transpose() * &x.xhat), &inv_sqrt))
}

/// `Ẑ_k* = Λ̂_k^{-1/2}V̂_kᵀX̂_k`, `Θ̂ = (1/n)Ẑ₁*Ẑ₂*ᵀ = Û_θ1Λ̂_θÛ_θ2ᵀ`, `Ẑ_k = Û_θkᵀẐ_k*`.
pub fn canonical_system<T: Scalar>(
    cov1: &SignalCovariance<T>,
    cov2: &SignalCovariance<T>,
    x1: &SignalEstimate<T>,
    x2: &SignalEstimate<T>,
    r12: usize,
) -> Result<CanonicalSystem<T>> {
    let n = x1.nsamples();
    if n != x2.nsamples() {
        return Err(CdpaError::BadDimensions(format!("sample sizes differ: {n} vs {}", x2.nsamples())));
    }
    let max = cov1.rank().min(cov2.rank());
    if r12 > max {
        return Err(CdpaError::RankTooLarge { rank: r12, max });
    }
    let zs1 = whitened_scores(cov1, x1)?;
    let zs2 = whitened_scores(cov2, x2)?;
    let theta_hat = (&zs1 * zs2.transpose()) / T::from_count(n);
    let svd = full_svd(&theta_hat);
    let z1 = svd.u.transpose() * &zs1;
    let z2 = svd.v.transpose() * &zs2;
    let correlations = svd.s[..r12].iter().map(|&s| s.max(T::zero()).min(T::one())).collect();
    Ok(CanonicalSystem { z1, z2, theta_hat, left_rotations: [svd.u, svd.v], correlations })
}

/// `â_ℓ = ½(1 − sqrt((1−ρ_ℓ)/(1+ρ_ℓ)))`, i.e. `½(1 − tan(θ_ℓ/2))`.
pub fn common_factor_coefficients<T: Scalar>(correlations: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    correlations.iter().map(|&r| half * (T::one() - half_angle_tangent(r))).collect()
}

/// Common latent factor scores `Ĉ₀` and their coefficients `Â_C`.
#[derive(Debug, Clone)]
pub struct CommonFactorSet<T: Scalar> {
    /// r12×n.
    pub c0: DMatrix<T>,
    pub coefficients: Vec<T>,
}

/// `Ĉ₀ = Â_C(Ẑ₁[:r12] + Ẑ₂[:r12])`.
pub fn common_factor_scores<T: Scalar>(system: &CanonicalSystem<T>, coefficients: &[T]) -> CommonFactorSet<T> {
    let r12 = system.r12();
    assert_eq!(coefficients.len(), r12, "one coefficient per common component");
    let sum = system.z1.rows(0, r12) + system.z2.rows(0, r12);
    CommonFactorSet { c0: scale_rows(&sum, coefficients), coefficients: coefficients.to_vec() }
}

/// Coefficient matrix `B̂_k` carrying the common factors into dataset k.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingChannel<T: Scalar> {
    /// p_k×r12.
    pub b: DMatrix<T>,
    pub dataset_index: usize,
}

/// D-CCA split `X̂_k = Ĉ_k + D̂_k`.
#[derive(Debug, Clone)]
pub struct SourceDecomposition<T: Scalar> {
    pub c_k: DMatrix<T>,
    pub d_k: DMatrix<T>,
}

/// `B̂_k = (1/n)X̂_kẐ_k[:r12]ᵀ`, `Ĉ_k = B̂_kĈ₀`, `D̂_k = X̂_k − Ĉ_k`.
pub fn source_decomposition<T: Scalar>(
    xhat: &SignalEstimate<T>,
    system: &CanonicalSystem<T>,
    c0: &CommonFactorSet<T>,
    k: usize,
) -> (SourceDecomposition<T>, MixingChannel<T>) {
    let n = T::from_count(system.nsamples());
    let b = (&xhat.xhat * system.common_scores(k).transpose()) / n;
    let c_k = &b * &c0.c0;
    let d_k = &xhat.xhat - &c_k;
    (SourceDecomposition { c_k, d_k }, MixingChannel { b, dataset_index: k })
}
