//! Principal angles between the mixing-channel column spaces.

use nalgebra::DMatrix;

use crate::align::{permute_rows, PermutationPlan};
use crate::dcca::MixingChannel;
use crate::error::{CdpaError, Result};
use crate::linalg::{apply_sign_rule_single, half_angle_tangent, scale_columns, thin_svd};
use crate::scalar::Scalar;

const CHANNEL_RANK_RATIO: f64 = 1e-10;

/// Orthonormal basis of `colsp(B)`.
///
/// Uses the thin QR factor, so an already orthonormal channel comes back
/// unchanged up to column signs. Rank is judged from the singular values of R.
pub fn orthonormal_basis<T: Scalar>(b: &MixingChannel<T>) -> Result<DMatrix<T>> {
    let (p, r) = b.b.shape();
    if r == 0 {
        return Ok(DMatrix::zeros(p, 0));
    }
    if p < r {
        return Err(CdpaError::ChannelRankDeficient { ratio: 0.0 });
    }
    let qr = b.b.clone().qr();
    let s = thin_svd(&qr.r()).s;
    let ratio = if s[0] > T::zero() { (s[r - 1] / s[0]).as_f64() } else { 0.0 };
    if ratio <= CHANNEL_RANK_RATIO {
        return Err(CdpaError::ChannelRankDeficient { ratio });
    }
    let mut q = qr.q();
    apply_sign_rule_single(&mut q);
    Ok(q)
}

/// Principal angles and vectors between `colsp(Q₁)` and `colsp(PQ₂A)`.
#[derive(Debug, Clone)]
pub struct ChannelSubspacePair<T: Scalar> {
    pub q1: DMatrix<T>,
    pub q2a: DMatrix<T>,
    /// `Θ̂_B = Q̂₁ᵀPQ̂₂A`.
    pub theta_b: DMatrix<T>,
    /// `cos θ_Bℓ`, nonincreasing, clamped to [0, 1].
    pub cosines: Vec<T>,
    pub v_b1: DMatrix<T>,
    pub v_b2: DMatrix<T>,
}

impl<T: Scalar> ChannelSubspacePair<T> {
    pub fn angles_deg(&self) -> Vec<f64> {
        self.cosines.iter().map(|c| c.as_f64().acos().to_degrees()).collect()
    }
}

/// SVD `Θ̂_B = Û_B1Λ̂_BÛ_B2ᵀ`, `V̂_B1 = Q̂₁Û_B1`, `V̂_B2 = PQ̂₂AÛ_B2`.
pub fn principal_angles<T: Scalar>(q1: &DMatrix<T>, q2a: &DMatrix<T>, permutation: &PermutationPlan) -> ChannelSubspacePair<T> {
    assert_eq!(q1.shape(), q2a.shape(), "bases must share shape p×r12");
    let pq2 = permute_rows(q2a, &permutation.perm);
    let theta_b = q1.tr_mul(&pq2);
    let svd = thin_svd(&theta_b);
    let cosines = svd.s.iter().map(|&c| c.max(T::zero()).min(T::one())).collect();
    let v_b1 = q1 * &svd.u;
    let v_b2 = pq2 * &svd.v;
    ChannelSubspacePair { q1: q1.clone(), q2a: q2a.clone(), theta_b, cosines, v_b1, v_b2 }
}

/// Common and distinctive channel directions `c_Bℓ`, `d_Bkℓ = v_Bkℓ − c_Bℓ`.
#[derive(Debug, Clone)]
pub struct ChannelPatternBasis<T: Scalar> {
    pub c_b: DMatrix<T>,
    pub d_b1: DMatrix<T>,
    pub d_b2: DMatrix<T>,
}

/// `c_Bℓ = (1 − sqrt((1−cos θ_Bℓ)/(1+cos θ_Bℓ)))·(v_B1ℓ + v_B2ℓ)/2`.
pub fn channel_common_basis<T: Scalar>(pair: &ChannelSubspacePair<T>) -> ChannelPatternBasis<T> {
    let weights: Vec<T> = pair.cosines.iter().map(|&c| (T::one() - half_angle_tangent(c)) * T::lit(0.5)).collect();
    let c_b = scale_columns(&(&pair.v_b1 + &pair.v_b2), &weights);
    let d_b1 = &pair.v_b1 - &c_b;
    let d_b2 = &pair.v_b2 - &c_b;
    ChannelPatternBasis { c_b, d_b1, d_b2 }
}
