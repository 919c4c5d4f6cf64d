#![allow(dead_code)]

use cdpa::cdpa::{common_pattern, dual_weights, DualWeightVariant};
use cdpa::dcca::{common_factor_coefficients, common_factor_scores, source_decomposition, CanonicalSystem, MixingChannel};
use cdpa::denoise::{ObservedMatrix, SignalEstimate};
use cdpa::linalg::pad_rows;
use cdpa::subspace::{channel_common_basis, orthonormal_basis, principal_angles};
use cdpa::PermutationPlan;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    gaussian(rows, cols, seed).qr().q()
}

/// Scores with exactly identity sample covariance and cross-covariance `diag(rho)`.
pub fn exact_scores(rho: &[f64], n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = rho.len();
    let q = orthonormal(n, 2 * r, seed).transpose() * (n as f64).sqrt();
    let u = q.rows(0, r).into_owned();
    let w = q.rows(r, r).into_owned();
    let mut z2 = DMatrix::zeros(r, n);
    for l in 0..r {
        z2.set_row(l, &(u.row(l) * rho[l] + w.row(l) * (1.0 - rho[l] * rho[l]).sqrt()));
    }
    (u, z2)
}

/// Low-rank-plus-noise pair sharing `r12` correlated factors.
pub fn factor_pair(
    p1: usize,
    p2: usize,
    n: usize,
    r: usize,
    rho: &[f64],
    noise: f64,
    seed: u64,
) -> (ObservedMatrix<f64>, ObservedMatrix<f64>) {
    let mut full_rho = rho.to_vec();
    full_rho.resize(r, 0.0);
    let (z1, z2) = exact_scores(&full_rho, n, seed);
    let lam: Vec<f64> = (0..r).map(|l| 10.0 * (r - l) as f64).collect();
    let v1 = orthonormal(p1, r, seed + 1);
    let v2 = orthonormal(p2, r, seed + 2);
    let x1 = cdpa::linalg::scale_columns(&v1, &lam.iter().map(|l| l.sqrt()).collect::<Vec<_>>()) * z1;
    let x2 = cdpa::linalg::scale_columns(&v2, &lam.iter().map(|l| l.sqrt()).collect::<Vec<_>>()) * z2;
    let y1 = x1 + gaussian(p1, n, seed + 3) * noise;
    let y2 = x2 + gaussian(p2, n, seed + 4) * noise;
    (ObservedMatrix::new(y1).unwrap(), ObservedMatrix::new(y2).unwrap())
}

/// Runs the pattern assembly downstream of a given canonical system with the identity alignment.
pub fn common_pattern_from(system: &CanonicalSystem<f64>, x1: &SignalEstimate<f64>, x2: &SignalEstimate<f64>) -> DMatrix<f64> {
    let n = x1.nsamples() as f64;
    let rows = x1.nvars().max(x2.nvars());
    let coefficients = common_factor_coefficients(&system.correlations);
    let c0 = common_factor_scores(system, &coefficients);
    let (_, ch1) = source_decomposition(x1, system, &c0, 1);
    let (_, ch2) = source_decomposition(x2, system, &c0, 2);
    let ch1 = MixingChannel { b: pad_rows(&ch1.b, rows), dataset_index: 1 };
    let ch2 = MixingChannel { b: pad_rows(&ch2.b, rows), dataset_index: 2 };
    let q1 = orthonormal_basis(&ch1).unwrap();
    let q2 = orthonormal_basis(&ch2).unwrap();
    let plan = PermutationPlan::identity(rows);
    let pair = principal_angles(&q1, &q2, &plan);
    let basis = channel_common_basis(&pair);
    let traces = [x1.xhat.norm_squared() / n, x2.xhat.norm_squared() / n];
    let weights = dual_weights(&pair, &ch1, &ch2, traces, DualWeightVariant::OwnPrincipalVectors);
    common_pattern(&basis, &weights, &c0)
}
