//! Ingestion, rank selection and soft-thresholded signal estimation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CdpaError, Result};
use crate::linalg::{scale_columns, sym_eigenvalues_desc, thin_svd, truncated_svd};
use crate::scalar::Scalar;

/// A p×n data matrix: rows are variables, columns are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix<T: Scalar> {
    values: DMatrix<T>,
    row_centered: bool,
}

impl<T: Scalar> ObservedMatrix<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self> {
        let (p, n) = values.shape();
        if p < 1 || n < 2 {
            return Err(CdpaError::BadDimensions(format!("observed matrix needs p >= 1 and n >= 2, got {p}x{n}")));
        }
        for j in 0..n {
            for i in 0..p {
                if !values[(i, j)].is_finite() {
                    return Err(CdpaError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { values, row_centered: false })
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<T> {
        self.values
    }

    /// Number of variables p.
    pub fn nvars(&self) -> usize {
        self.values.nrows()
    }

    /// Number of samples n.
    pub fn nsamples(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_row_centered(&self) -> bool {
        self.row_centered
    }

    /// Multiplies every entry by `a`; centering is preserved.
    pub fn scaled(&self, a: T) -> Self {
        Self { values: &self.values * a, row_centered: self.row_centered }
    }

    /// Column subset (with repetition allowed), as used by resampling.
    pub fn select_samples(&self, idx: &[usize]) -> Self {
        Self { values: self.values.select_columns(idx), row_centered: false }
    }
}

/// Subtracts each row's mean.
pub fn center_rows<T: Scalar>(y: &ObservedMatrix<T>) -> ObservedMatrix<T> {
    let n = T::from_count(y.nsamples());
    let mut values = y.values.clone();
    for mut row in values.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
    }
    ObservedMatrix { values, row_centered: true }
}

/// Signal ranks of the two datasets and of their cross-covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankProfile {
    pub r1: usize,
    pub r2: usize,
    pub r12: usize,
}

impl RankProfile {
    pub fn new(r1: usize, r2: usize, r12: usize) -> Result<Self> {
        if r12 > r1.min(r2) {
            return Err(CdpaError::BadConfig(format!("r12 = {r12} exceeds min(r1, r2) = {}", r1.min(r2))));
        }
        Ok(Self { r1, r2, r12 })
    }
}

/// Soft-thresholded low-rank estimate `X̂ = U₁ diag(σ̂) U₂ᵀ`.
#[derive(Debug, Clone)]
pub struct SignalEstimate<T: Scalar> {
    pub xhat: DMatrix<T>,
    pub rank: usize,
    /// Top-`rank` singular values of the observed matrix.
    pub raw_singular_values: Vec<T>,
    pub soft_singular_values: Vec<T>,
    pub tau: T,
    /// p×rank, orthonormal.
    pub left_vectors: DMatrix<T>,
    /// n×rank, orthonormal.
    pub right_vectors: DMatrix<T>,
    /// `‖Y − X̂‖²_F / n`, the noise-trace estimate used for SNR.
    pub noise_trace: T,
}

impl<T: Scalar> SignalEstimate<T> {
    /// Wraps an already denoised matrix, factoring it at the given rank with no shrinkage.
    pub fn from_matrix(xhat: DMatrix<T>, rank: usize) -> Result<Self> {
        let (p, n) = xhat.shape();
        if rank > p.min(n) {
            return Err(CdpaError::RankTooLarge { rank, max: p.min(n) });
        }
        let svd = truncated_svd(&xhat, rank);
        Ok(Self {
            xhat,
            rank,
            raw_singular_values: svd.s.clone(),
            soft_singular_values: svd.s,
            tau: T::zero(),
            left_vectors: svd.u,
            right_vectors: svd.v,
            noise_trace: T::zero(),
        })
    }

    pub fn nvars(&self) -> usize {
        self.xhat.nrows()
    }

    pub fn nsamples(&self) -> usize {
        self.xhat.ncols()
    }

    /// Number of strictly positive soft singular values.
    pub fn effective_rank(&self) -> usize {
        self.soft_singular_values.iter().filter(|&&s| s > T::zero()).count()
    }

    /// `U₁ diag(σ̂) U₂ᵀ` rebuilt from the stored factors.
    pub fn reconstruct(&self) -> DMatrix<T> {
        scale_columns(&self.left_vectors, &self.soft_singular_values) * self.right_vectors.transpose()
    }

    /// `tr(Σ̂) = ‖X̂‖²_F / n`.
    pub fn signal_trace(&self) -> T {
        self.soft_singular_values.iter().fold(T::zero(), |acc, &s| acc + s * s) / T::from_count(self.nsamples())
    }
}

/// Soft-thresholding denoiser.
///
/// `τ = Σ_{ℓ>r} σ_ℓ²(Y) / (np − nr − pr)` and `σ̂_ℓ = sqrt(max(σ_ℓ² − τp, 0))`.
pub fn soft_threshold_denoise<T: Scalar>(y: &ObservedMatrix<T>, r: usize) -> Result<SignalEstimate<T>> {
    let (p, n) = (y.nvars(), y.nsamples());
    if r == 0 {
        return Err(CdpaError::BadConfig("denoising rank must be at least 1".into()));
    }
    if r > p.min(n) {
        return Err(CdpaError::RankTooLarge { rank: r, max: p.min(n) });
    }
    let denominator = (n * p) as i64 - (n * r) as i64 - (p * r) as i64;
    if denominator <= 0 {
        return Err(CdpaError::DegenerateThreshold { denominator });
    }
    let svd = truncated_svd(y.values(), r);
    let head = svd.s.iter().fold(T::zero(), |acc, &s| acc + s * s);
    let tail = (y.values().norm_squared() - head).max(T::zero());
    let tau = tail / T::lit(denominator as f64);
    let shrink = tau * T::from_count(p);
    let soft: Vec<T> = svd.s.iter().map(|&s| (s * s - shrink).max(T::zero()).sqrt()).collect();
    let xhat = scale_columns(&svd.u, &soft) * svd.v.transpose();
    let noise_trace = (y.values() - &xhat).norm_squared() / T::from_count(n);
    Ok(SignalEstimate {
        xhat,
        rank: r,
        raw_singular_values: svd.s,
        soft_singular_values: soft,
        tau,
        left_vectors: svd.u,
        right_vectors: svd.v,
        noise_trace,
    })
}

/// Factored `Σ̂ = X̂X̂ᵀ/n = V̂ Λ̂ V̂ᵀ`, restricted to its positive spectrum.
#[derive(Debug, Clone)]
pub struct SignalCovariance<T: Scalar> {
    pub eigvectors: DMatrix<T>,
    pub eigvalues: Vec<T>,
    pub trace: T,
}

impl<T: Scalar> SignalCovariance<T> {
    pub fn rank(&self) -> usize {
        self.eigvalues.len()
    }
}

pub fn signal_covariance<T: Scalar>(est: &SignalEstimate<T>) -> Result<SignalCovariance<T>> {
    let n = T::from_count(est.nsamples());
    let keep: Vec<usize> = (0..est.soft_singular_values.len()).filter(|&j| est.soft_singular_values[j] > T::zero()).collect();
    if keep.is_empty() {
        return Err(CdpaError::ZeroSignal);
    }
    let eigvalues: Vec<T> = keep.iter().map(|&j| est.soft_singular_values[j].powi(2) / n).collect();
    let trace = eigvalues.iter().fold(T::zero(), |a, &b| a + b);
    Ok(SignalCovariance { eigvectors: est.left_vectors.select_columns(&keep), eigvalues, trace })
}

/// Nonzero eigenvalues of `YYᵀ/n`, nonincreasing (length min(n, p)).
pub fn sample_eigenvalues<T: Scalar>(y: &ObservedMatrix<T>) -> Vec<T> {
    let v = y.values();
    let n = T::from_count(y.nsamples());
    let gram = if v.nrows() >= v.ncols() { v.transpose() * v } else { v * v.transpose() };
    sym_eigenvalues_desc(gram).into_iter().map(|x| x.max(T::zero()) / n).collect()
}

const ED_WINDOW: usize = 5;
const ED_MAX_ITER: usize = 50;

/// Eigenvalue-difference rank selector.
///
/// `r̂ = max{ℓ ≤ T : λ̂_ℓ − λ̂_{ℓ+1} ≥ δ}` (0 if empty), with `T` the number of
/// eigenvalues at or above their mean capped at m/10. The threshold `δ` is
/// twice the absolute slope of λ̂_j regressed on (j−1)^{2/3} over the five
/// eigenvalues following the current candidate, iterated to a fixed point.
pub fn ed_select_rank<T: Scalar>(y: &ObservedMatrix<T>) -> Result<usize> {
    let n = y.nsamples();
    if n < 20 {
        return Err(CdpaError::TooFewSamples(format!("eigenvalue-difference selection needs n >= 20, got {n}")));
    }
    let lambda: Vec<f64> = sample_eigenvalues(y).into_iter().map(Scalar::as_f64).collect();
    let m = lambda.len();
    let mean = lambda.iter().sum::<f64>() / m as f64;
    let above = lambda.iter().filter(|&&l| l >= mean).count();
    let t_max = above.min(m / 10);
    if m < t_max + ED_WINDOW {
        return Err(CdpaError::TooFewSamples(format!("need at least {} eigenvalues to calibrate, have {m}", t_max + ED_WINDOW)));
    }
    // 1-based index j into lambda, window λ_j..λ_{j+4}
    let mut j = t_max + 1;
    let mut rank = 0;
    for _ in 0..ED_MAX_ITER {
        let xs: Vec<f64> = (0..ED_WINDOW).map(|i| ((j - 1 + i) as f64).powf(2.0 / 3.0)).collect();
        let ys = &lambda[j - 1..j - 1 + ED_WINDOW];
        let delta = 2.0 * ols_slope(&xs, ys).abs();
        rank = (1..=t_max).rev().find(|&l| lambda[l - 1] - lambda[l] >= delta).unwrap_or(0);
        if rank + 1 == j {
            break;
        }
        j = rank + 1;
    }
    Ok(rank)
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Outcome of the cross-dataset correlation screen.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScreenResult {
    pub significant: bool,
    /// Largest `|atanh(r)|·sqrt(n−3)` over all variable pairs.
    pub max_statistic: f64,
    /// Bonferroni-corrected two-sided normal critical value.
    pub critical_value: f64,
    pub pairs: usize,
}

/// True when some cross-dataset pair of denoised variables is significantly correlated.
pub fn correlation_screen<T: Scalar>(x1: &SignalEstimate<T>, x2: &SignalEstimate<T>, alpha: f64) -> bool {
    correlation_screen_detail(x1, x2, alpha).significant
}

/// Fisher-z test on every (row of X̂₁, row of X̂₂) pair with Bonferroni correction.
pub fn correlation_screen_detail<T: Scalar>(x1: &SignalEstimate<T>, x2: &SignalEstimate<T>, alpha: f64) -> ScreenResult {
    let n = x1.nsamples();
    assert_eq!(n, x2.nsamples(), "screen requires a shared sample size");
    let pairs = x1.nvars() * x2.nvars();
    let z1 = standardized_rows(&x1.xhat);
    let z2 = standardized_rows(&x2.xhat);
    let corr = z1 * z2.transpose();
    let max_r = corr.iter().fold(0.0f64, |acc, r| acc.max(r.as_f64().abs())).min(1.0 - 1e-15);
    let max_statistic = max_r.atanh() * ((n as f64) - 3.0).max(1.0).sqrt();
    let tail = alpha / (2.0 * pairs as f64);
    let critical_value = Normal::standard().inverse_cdf(1.0 - tail);
    ScreenResult { significant: max_statistic > critical_value, max_statistic, critical_value, pairs }
}

// rows centered and scaled to unit norm; zero rows stay zero
fn standardized_rows<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    let n = T::from_count(x.ncols());
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
        let nrm = row.norm();
        if nrm > T::zero() {
            row.unscale_mut(nrm);
        }
    }
    out
}

/// MDL-IC selection of the shared rank r12 ∈ [1, min(r1, r2)].
///
/// Minimizes `n Σ_{ℓ≤r} log(1 − s_ℓ²) + r(r1 + r2 − r) log n`, where `s_ℓ`
/// are the singular values of the product of the leading right singular
/// subspaces of the two observed matrices.
pub fn mdl_select_r12<T: Scalar>(y1: &ObservedMatrix<T>, y2: &ObservedMatrix<T>, r1: usize, r2: usize) -> Result<usize> {
    let n = y1.nsamples();
    if n != y2.nsamples() {
        return Err(CdpaError::BadDimensions(format!("sample sizes differ: {n} vs {}", y2.nsamples())));
    }
    if r1 == 0 || r2 == 0 {
        return Err(CdpaError::BadConfig("MDL-IC needs r1, r2 >= 1".into()));
    }
    for (r, y) in [(r1, y1), (r2, y2)] {
        if r > y.nvars().min(n) {
            return Err(CdpaError::RankTooLarge { rank: r, max: y.nvars().min(n) });
        }
    }
    let v1 = truncated_svd(y1.values(), r1).v;
    let v2 = truncated_svd(y2.values(), r2).v;
    let s: Vec<f64> = thin_svd(&(v1.transpose() * &v2)).s.into_iter().map(Scalar::as_f64).collect();
    Ok(mdl_argmin(&s, r1, r2, n))
}

/// The MDL-IC minimizer for given cross-subspace singular values.
pub fn mdl_argmin(s: &[f64], r1: usize, r2: usize, n: usize) -> usize {
    let log_n = (n as f64).ln();
    let mut best = (f64::INFINITY, 1);
    let mut fit = 0.0;
    for r in 1..=r1.min(r2) {
        let sl = s.get(r - 1).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        fit += (1.0 - sl * sl).max(1e-12).ln();
        let crit = n as f64 * fit + (r * (r1 + r2 - r)) as f64 * log_n;
        if crit < best.0 {
            best = (crit, r);
        }
    }
    best.1
}

/// Signal-to-noise ratios and the rate quantity δ_θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub snr: [f64; 2],
    pub delta_theta: f64,
    pub selected_ranks: RankProfile,
}

const NOISE_TRACE_FLOOR: f64 = 1e-12;

/// `SNR_k = tr(Σ̂_k)/noise_k` and `δ_θ = (1/√n + Σ_k sqrt(log p_k / (n·SNR_k))) ∧ 1`.
pub fn compute_diagnostics<T: Scalar>(
    x1: &SignalEstimate<T>,
    x2: &SignalEstimate<T>,
    noise_traces: [T; 2],
    ranks: RankProfile,
) -> Diagnostics {
    let n = x1.nsamples() as f64;
    let snr = [
        x1.signal_trace().as_f64() / noise_traces[0].as_f64().max(NOISE_TRACE_FLOOR),
        x2.signal_trace().as_f64() / noise_traces[1].as_f64().max(NOISE_TRACE_FLOOR),
    ];
    let p = [x1.nvars() as f64, x2.nvars() as f64];
    Diagnostics { snr, delta_theta: delta_theta(n, p, snr), selected_ranks: ranks }
}

pub fn delta_theta(n: f64, p: [f64; 2], snr: [f64; 2]) -> f64 {
    let mut d = 1.0 / n.sqrt();
    for k in 0..2 {
        if snr[k] > 0.0 {
            d += (p[k].ln() / (n * snr[k])).sqrt();
        } else {
            return 1.0;
        }
    }
    d.min(1.0)
}
