//! Common and distinctive pattern decomposition.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{
    build_match_problem, dspfp_match, exhaustive_match, permute_rows, DspfpConfig, MatchMethod, PermutationPlan, SignChoice,
};
use crate::dcca::{
    canonical_system, common_factor_coefficients, common_factor_scores, source_decomposition, CommonFactorSet, MixingChannel,
    SourceDecomposition,
};
use crate::denoise::{
    center_rows, compute_diagnostics, correlation_screen, ed_select_rank, mdl_select_r12, signal_covariance, soft_threshold_denoise,
    Diagnostics, ObservedMatrix, RankProfile, SignalEstimate,
};
use crate::error::{CdpaError, Result};
use crate::linalg::{full_svd, pad_rows, scale_columns};
use crate::scalar::Scalar;
use crate::subspace::{channel_common_basis, orthonormal_basis, principal_angles, ChannelPatternBasis, ChannelSubspacePair};

/// Which principal vectors project each channel onto the shared basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualWeightVariant {
    /// `S_k = V_Bkᵀ B_k⋄`.
    #[default]
    OwnPrincipalVectors,
    /// `S_k = V_B1ᵀ B_k⋄` for both datasets.
    FirstPrincipalVectors,
}

#[derive(Debug, Clone)]
pub struct DualWeight<T: Scalar> {
    pub s1: DMatrix<T>,
    pub s2: DMatrix<T>,
    /// `½(S₁/scale1 + S₂/scale2)`.
    pub s: DMatrix<T>,
    pub scale1: T,
    pub scale2: T,
}

/// `S_k` from the aligned channels and `S = ½Σ_k S_k / tr(Σ̂_k)^{1/2}`.
pub fn dual_weights<T: Scalar>(
    pair: &ChannelSubspacePair<T>,
    b1: &MixingChannel<T>,
    b2_aligned: &MixingChannel<T>,
    traces: [T; 2],
    variant: DualWeightVariant,
) -> DualWeight<T> {
    let v2 = match variant {
        DualWeightVariant::OwnPrincipalVectors => &pair.v_b2,
        DualWeightVariant::FirstPrincipalVectors => &pair.v_b1,
    };
    let s1 = pair.v_b1.transpose() * &b1.b;
    let s2 = v2.transpose() * &b2_aligned.b;
    let scale1 = traces[0].sqrt();
    let scale2 = traces[1].sqrt();
    let s = (&s1 / scale1 + &s2 / scale2) * T::lit(0.5);
    DualWeight { s1, s2, s, scale1, scale2 }
}

/// `Ĉ = C_B S Ĉ₀`.
pub fn common_pattern<T: Scalar>(basis: &ChannelPatternBasis<T>, weights: &DualWeight<T>, c0: &CommonFactorSet<T>) -> DMatrix<T> {
    &basis.c_b * (&weights.s * &c0.c0)
}

/// `(1/n)‖Ĉ‖²_F`.
pub fn explained_variance<T: Scalar>(c: &DMatrix<T>, n: usize) -> T {
    c.norm_squared() / T::from_count(n)
}

/// Sample CDPA output on the aligned (padded, permuted) row space.
#[derive(Debug, Clone)]
pub struct PatternDecomposition<T: Scalar> {
    /// Common-pattern matrix `Ĉ`.
    pub c: DMatrix<T>,
    /// `Ĉ^(k) = tr(Σ̂_k)^{1/2}Ĉ`.
    pub c_scaled: [DMatrix<T>; 2],
    /// `Ĥ_k = Ĉ_k⋄ − Ĉ^(k)`.
    pub h: [DMatrix<T>; 2],
    /// `Δ̂_k = X̂_k⋄ − Ĉ^(k)`.
    pub delta: [DMatrix<T>; 2],
    pub aligned_x: [DMatrix<T>; 2],
    /// D-CCA common sources `Ĉ_k⋄`.
    pub aligned_c: [DMatrix<T>; 2],
    /// D-CCA distinctive sources `D̂_k⋄`.
    pub aligned_d: [DMatrix<T>; 2],
    pub explained: T,
}

/// Pads to a shared row count and applies the permutation to dataset 2.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub rows: usize,
    pub perm: Vec<usize>,
}

impl Alignment {
    pub fn new(p1: usize, p2: usize, perm: Vec<usize>) -> Self {
        let rows = p1.max(p2);
        assert_eq!(perm.len(), rows, "permutation must act on the padded row space");
        Self { rows, perm }
    }

    pub fn identity(p1: usize, p2: usize) -> Self {
        let rows = p1.max(p2);
        Self { rows, perm: (0..rows).collect() }
    }

    /// `M_k⋄`.
    pub fn apply<T: Scalar>(&self, m: &DMatrix<T>, k: usize) -> DMatrix<T> {
        let padded = pad_rows(m, self.rows);
        if k == 2 {
            permute_rows(&padded, &self.perm)
        } else {
            padded
        }
    }
}

/// Assembles `Ĉ^(k)`, `Ĥ_k`, `Δ̂_k` from aligned D-CCA output and `Ĉ`.
pub fn pattern_decomposition<T: Scalar>(
    aligned_x: [DMatrix<T>; 2],
    aligned_sources: [SourceDecomposition<T>; 2],
    c: DMatrix<T>,
    traces: [T; 2],
) -> PatternDecomposition<T> {
    let n = c.ncols();
    let [s1, s2] = aligned_sources;
    let c_scaled = [&c * traces[0].sqrt(), &c * traces[1].sqrt()];
    let h = [&s1.c_k - &c_scaled[0], &s2.c_k - &c_scaled[1]];
    let delta = [&h[0] + &s1.d_k, &h[1] + &s2.d_k];
    let explained = explained_variance(&c, n);
    PatternDecomposition { c, c_scaled, h, delta, aligned_x, aligned_c: [s1.c_k, s2.c_k], aligned_d: [s1.d_k, s2.d_k], explained }
}

/// Decomposition when no common structure is present: `Ĉ = 0`, `Δ̂_k = X̂_k⋄`.
pub fn trivial_decomposition<T: Scalar>(aligned_x: [DMatrix<T>; 2]) -> PatternDecomposition<T> {
    let (rows, n) = aligned_x[0].shape();
    let zero = DMatrix::<T>::zeros(rows, n);
    PatternDecomposition {
        c: zero.clone(),
        c_scaled: [zero.clone(), zero.clone()],
        h: [zero.clone(), zero.clone()],
        delta: aligned_x.clone(),
        aligned_c: [zero.clone(), zero],
        aligned_d: aligned_x.clone(),
        aligned_x,
        explained: T::zero(),
    }
}

/// Population covariance structure of a two-dataset signal model.
///
/// `Σ_k = V_k diag(λ_k) V_kᵀ` and `cross_cov = cov(z₁*, z₂*)` with
/// `z_k* = diag(λ_k)^{-1/2} V_kᵀ x_k`.
#[derive(Debug, Clone)]
pub struct PopulationModel<T: Scalar> {
    pub v1: DMatrix<T>,
    pub v2: DMatrix<T>,
    pub eig1: Vec<T>,
    pub eig2: Vec<T>,
    pub cross_cov: DMatrix<T>,
    pub r12: usize,
    /// Row permutation of dataset 2 on the padded space; identity when `None`.
    pub perm: Option<Vec<usize>>,
}

/// Population-level CDPA quantities.
#[derive(Debug, Clone)]
pub struct PopulationCdpa<T: Scalar> {
    pub correlations: Vec<T>,
    pub coefficients: Vec<T>,
    /// `Û_θ1`, `Û_θ2` mapping `z_k*` to canonical variables `z_k`.
    pub rotations: [DMatrix<T>; 2],
    pub b: [DMatrix<T>; 2],
    pub pair: ChannelSubspacePair<T>,
    pub c_b: DMatrix<T>,
    pub weights: DualWeight<T>,
    pub traces: [T; 2],
    /// `tr{cov(c)}`.
    pub explained: T,
    /// Variance carried by each common factor.
    pub contributions: Vec<T>,
    pub alignment: Alignment,
}

impl<T: Scalar> PopulationCdpa<T> {
    /// `C = C_B S C₀` for realized standardized scores `z_k*` (r_k×n).
    pub fn common_pattern_for(&self, zs1: &DMatrix<T>, zs2: &DMatrix<T>) -> DMatrix<T> {
        self.c_b.clone() * (&self.weights.s * self.common_factors_for(zs1, zs2))
    }

    /// `C₀ = A_C(z₁[:r12] + z₂[:r12])` for realized `z_k*`.
    pub fn common_factors_for(&self, zs1: &DMatrix<T>, zs2: &DMatrix<T>) -> DMatrix<T> {
        let r12 = self.correlations.len();
        let z1 = self.rotations[0].transpose() * zs1;
        let z2 = self.rotations[1].transpose() * zs2;
        let sum = z1.rows(0, r12) + z2.rows(0, r12);
        crate::linalg::scale_rows(&sum, &self.coefficients)
    }

    /// Population D-CCA common source `C_k = B_k C₀` (unaligned).
    pub fn common_source_for(&self, k: usize, c0: &DMatrix<T>) -> DMatrix<T> {
        &self.b[k - 1] * c0
    }
}

/// Runs the population algorithm analytically on covariance factors.
pub fn population_cdpa<T: Scalar>(model: &PopulationModel<T>, variant: DualWeightVariant) -> Result<PopulationCdpa<T>> {
    let r12 = model.r12;
    let svd = full_svd(&model.cross_cov);
    if r12 > svd.s.len() {
        return Err(CdpaError::RankTooLarge { rank: r12, max: svd.s.len() });
    }
    let correlations: Vec<T> = svd.s[..r12].iter().map(|&s| s.max(T::zero()).min(T::one())).collect();
    let coefficients = common_factor_coefficients(&correlations);
    let sqrt1: Vec<T> = model.eig1.iter().map(|l| l.sqrt()).collect();
    let sqrt2: Vec<T> = model.eig2.iter().map(|l| l.sqrt()).collect();
    let b1 = scale_columns(&model.v1, &sqrt1) * svd.u.columns(0, r12);
    let b2 = scale_columns(&model.v2, &sqrt2) * svd.v.columns(0, r12);
    let (p1, p2) = (b1.nrows(), b2.nrows());
    let alignment = match &model.perm {
        Some(perm) => Alignment::new(p1, p2, perm.clone()),
        None => Alignment::identity(p1, p2),
    };
    let ch1 = MixingChannel { b: alignment.apply(&b1, 1), dataset_index: 1 };
    let ch2_padded = MixingChannel { b: pad_rows(&b2, alignment.rows), dataset_index: 2 };
    let q1 = orthonormal_basis(&ch1)?;
    let q2a = orthonormal_basis(&ch2_padded)?;
    let plan = PermutationPlan { perm: alignment.perm.clone(), objective: f64::NAN, method: MatchMethod::Provided };
    let pair = principal_angles(&q1, &q2a, &plan);
    let basis = channel_common_basis(&pair);
    let traces = [model.eig1.iter().fold(T::zero(), |a, &b| a + b), model.eig2.iter().fold(T::zero(), |a, &b| a + b)];
    let ch2 = MixingChannel { b: alignment.apply(&b2, 2), dataset_index: 2 };
    let weights = dual_weights(&pair, &ch1, &ch2, traces, variant);
    // cov(c₀) = diag(â²(2 + 2ρ))
    let sd: Vec<T> = coefficients.iter().zip(&correlations).map(|(&a, &r)| a * (T::lit(2.0) + T::lit(2.0) * r).sqrt()).collect();
    let loading = scale_columns(&(&basis.c_b * &weights.s), &sd);
    let contributions: Vec<T> = loading.column_iter().map(|c| c.norm_squared()).collect();
    let explained = contributions.iter().fold(T::zero(), |a, &b| a + b);
    Ok(PopulationCdpa {
        correlations,
        coefficients,
        rotations: [svd.u, svd.v],
        b: [b1, b2],
        pair,
        c_b: basis.c_b,
        weights,
        traces,
        explained,
        contributions,
        alignment,
    })
}

/// How the row permutation is chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationSource {
    #[default]
    Identity,
    Provided(Vec<usize>),
    Dspfp(DspfpConfig),
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignMode {
    #[default]
    Auto,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 1000, level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdpaConfig {
    /// Fixed ranks; selected from the data when `None`.
    pub ranks: Option<RankProfile>,
    pub center: bool,
    pub permutation: PermutationSource,
    pub sign: SignMode,
    /// Family-wise level of the cross-correlation screen used with automatic ranks.
    pub screen_alpha: f64,
    pub dual_weight: DualWeightVariant,
    pub bootstrap: Option<BootstrapConfig>,
    pub seed: u64,
}

impl Default for CdpaConfig {
    fn default() -> Self {
        Self {
            ranks: None,
            center: true,
            permutation: PermutationSource::Identity,
            sign: SignMode::Auto,
            screen_alpha: 0.05,
            dual_weight: DualWeightVariant::OwnPrincipalVectors,
            bootstrap: None,
            seed: 0,
        }
    }
}

/// Everything produced by one pipeline run at a fixed sign.
#[derive(Debug, Clone)]
pub struct PipelineRun<T: Scalar> {
    pub decomposition: PatternDecomposition<T>,
    pub plan: PermutationPlan,
    pub signals: [Option<SignalEstimate<T>>; 2],
    /// Unaligned D-CCA sources.
    pub sources: [SourceDecomposition<T>; 2],
    pub canonical_correlations: Vec<T>,
    pub channel_cosines: Vec<T>,
    pub traces: [T; 2],
}

/// Permutation request for [`run_pipeline`].
#[derive(Debug, Clone, Copy)]
pub enum PlanRequest<'a> {
    Solve(&'a PermutationSource),
    Fixed(&'a PermutationPlan),
}

fn denoise_or_zero<T: Scalar>(y: &ObservedMatrix<T>, r: usize) -> Result<Option<SignalEstimate<T>>> {
    if r == 0 {
        Ok(None)
    } else {
        soft_threshold_denoise(y, r).map(Some)
    }
}

/// CDPA at fixed ranks on (already centered, if desired) data.
pub fn run_pipeline<T: Scalar>(
    y1: &ObservedMatrix<T>,
    y2: &ObservedMatrix<T>,
    ranks: RankProfile,
    request: PlanRequest<'_>,
    variant: DualWeightVariant,
) -> Result<PipelineRun<T>> {
    let n = y1.nsamples();
    if n != y2.nsamples() {
        return Err(CdpaError::BadDimensions(format!("sample sizes differ: {n} vs {}", y2.nsamples())));
    }
    let (p1, p2) = (y1.nvars(), y2.nvars());
    let rows = p1.max(p2);
    let x1 = denoise_or_zero(y1, ranks.r1)?;
    let x2 = denoise_or_zero(y2, ranks.r2)?;
    let xmat = |x: &Option<SignalEstimate<T>>, p: usize| x.as_ref().map_or_else(|| DMatrix::zeros(p, n), |e| e.xhat.clone());
    let xm = [xmat(&x1, p1), xmat(&x2, p2)];
    let traces = [xm[0].norm_squared() / T::from_count(n), xm[1].norm_squared() / T::from_count(n)];

    let trivial = |plan: PermutationPlan, xm: [DMatrix<T>; 2]| {
        let align = Alignment::new(p1, p2, plan.perm.clone());
        let aligned = [align.apply(&xm[0], 1), align.apply(&xm[1], 2)];
        let sources = [
            SourceDecomposition { c_k: DMatrix::zeros(p1, n), d_k: xm[0].clone() },
            SourceDecomposition { c_k: DMatrix::zeros(p2, n), d_k: xm[1].clone() },
        ];
        PipelineRun {
            decomposition: trivial_decomposition(aligned),
            plan,
            signals: [x1.clone(), x2.clone()],
            sources,
            canonical_correlations: Vec::new(),
            channel_cosines: Vec::new(),
            traces,
        }
    };
    let fallback_plan = match request {
        PlanRequest::Fixed(plan) => plan.clone(),
        PlanRequest::Solve(_) => PermutationPlan::identity(rows),
    };
    let (e1, e2) = match (&x1, &x2) {
        (Some(a), Some(b)) if ranks.r12 > 0 => (a, b),
        _ => return Ok(trivial(fallback_plan, xm)),
    };

    let cov1 = signal_covariance(e1)?;
    let cov2 = signal_covariance(e2)?;
    let system = canonical_system(&cov1, &cov2, e1, e2, ranks.r12)?;
    let coefficients = common_factor_coefficients(&system.correlations);
    let c0 = common_factor_scores(&system, &coefficients);
    let (src1, ch1) = source_decomposition(e1, &system, &c0, 1);
    let (src2, ch2) = source_decomposition(e2, &system, &c0, 2);

    let ch1p = MixingChannel { b: pad_rows(&ch1.b, rows), dataset_index: 1 };
    let ch2p = MixingChannel { b: pad_rows(&ch2.b, rows), dataset_index: 2 };
    let q1 = orthonormal_basis(&ch1p)?;
    let q2a = orthonormal_basis(&ch2p)?;
    let plan = match request {
        PlanRequest::Fixed(plan) => {
            if plan.perm.len() != rows {
                return Err(CdpaError::BadDimensions(format!("permutation has length {}, padded row space has {rows}", plan.perm.len())));
            }
            let mut plan = plan.clone().evaluated(&q1, &q2a);
            if plan.method == MatchMethod::Identity && !plan.is_identity() {
                plan.method = MatchMethod::Provided;
            }
            plan
        }
        PlanRequest::Solve(PermutationSource::Identity) => PermutationPlan::identity(rows).evaluated(&q1, &q2a),
        PlanRequest::Solve(PermutationSource::Provided(perm)) => {
            if perm.len() != rows {
                return Err(CdpaError::BadDimensions(format!("permutation has length {}, padded row space has {rows}", perm.len())));
            }
            PermutationPlan::provided(perm.clone())?.evaluated(&q1, &q2a)
        }
        PlanRequest::Solve(PermutationSource::Dspfp(cfg)) => dspfp_match(&build_match_problem(&q1, &q2a), cfg),
        PlanRequest::Solve(PermutationSource::Exhaustive) => exhaustive_match(&q1, &q2a)?,
    };
    let align = Alignment::new(p1, p2, plan.perm.clone());
    let pair = principal_angles(&q1, &q2a, &plan);
    let basis = channel_common_basis(&pair);
    let ch2_aligned = MixingChannel { b: align.apply(&ch2.b, 2), dataset_index: 2 };
    let weights = dual_weights(&pair, &ch1p, &ch2_aligned, traces, variant);
    let c = common_pattern(&basis, &weights, &c0);

    let aligned_x = [align.apply(&xm[0], 1), align.apply(&xm[1], 2)];
    let aligned_sources = [
        SourceDecomposition { c_k: align.apply(&src1.c_k, 1), d_k: align.apply(&src1.d_k, 1) },
        SourceDecomposition { c_k: align.apply(&src2.c_k, 2), d_k: align.apply(&src2.d_k, 2) },
    ];
    let decomposition = pattern_decomposition(aligned_x, aligned_sources, c, traces);
    Ok(PipelineRun {
        decomposition,
        plan,
        signals: [x1, x2],
        sources: [src1, src2],
        canonical_correlations: system.correlations,
        channel_cosines: pair.cosines,
        traces,
    })
}

/// Percentile bootstrap interval for the explained variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates: usize,
    /// Replicates whose resample could not be decomposed at the fixed ranks.
    pub failed: usize,
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples columns with replacement at fixed ranks and permutation.
///
/// Replicate `i` draws from a generator seeded with `seed ^ i`. Data are
/// re-centered after resampling when `center` is set.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci<T: Scalar>(
    y1: &ObservedMatrix<T>,
    y2: &ObservedMatrix<T>,
    ranks: RankProfile,
    permutation: &PermutationPlan,
    replicates: usize,
    level: f64,
    seed: u64,
    center: bool,
    variant: DualWeightVariant,
) -> Result<BootstrapInterval> {
    if replicates < 100 {
        return Err(CdpaError::BadConfig(format!("bootstrap needs at least 100 replicates, got {replicates}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CdpaError::BadConfig(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let prep = |y: &ObservedMatrix<T>| if center { center_rows(y) } else { y.clone() };
    let point = run_pipeline(&prep(y1), &prep(y2), ranks, PlanRequest::Fixed(permutation), variant)?.decomposition.explained.as_f64();
    let n = y1.nsamples();
    let draws: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let b1 = prep(&y1.select_samples(&idx));
            let b2 = prep(&y2.select_samples(&idx));
            run_pipeline(&b1, &b2, ranks, PlanRequest::Fixed(permutation), variant).ok().map(|run| run.decomposition.explained.as_f64())
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let failed = replicates - values.len();
    if values.is_empty() {
        return Err(CdpaError::BadConfig("every bootstrap replicate failed at the fixed ranks".into()));
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapInterval {
        point,
        lower: quantile_sorted(&values, tail),
        upper: quantile_sorted(&values, 1.0 - tail),
        level,
        replicates,
        failed,
    })
}

/// Result of [`estimate_cdpa`].
#[derive(Debug, Clone)]
pub struct CdpaFit<T: Scalar> {
    pub decomposition: PatternDecomposition<T>,
    pub ranks: RankProfile,
    pub plan: PermutationPlan,
    pub sign: SignChoice,
    pub diagnostics: Option<Diagnostics>,
    /// Set when no cross-dataset correlation was found and the trivial decomposition was returned.
    pub r12_zero: bool,
    pub warnings: Vec<String>,
    pub canonical_correlations: Vec<f64>,
    pub channel_cosines: Vec<f64>,
    /// Unaligned D-CCA sources `Ĉ_k`, `D̂_k`.
    pub sources: [SourceDecomposition<T>; 2],
    pub bootstrap: Option<BootstrapInterval>,
}

/// Rank selection: ED for each dataset, then the correlation screen and MDL-IC for r12.
pub fn select_ranks<T: Scalar>(y1: &ObservedMatrix<T>, y2: &ObservedMatrix<T>, screen_alpha: f64) -> Result<(RankProfile, bool)> {
    let r1 = ed_select_rank(y1)?;
    let r2 = ed_select_rank(y2)?;
    if r1 == 0 || r2 == 0 {
        return Ok((RankProfile { r1, r2, r12: 0 }, false));
    }
    let x1 = soft_threshold_denoise(y1, r1)?;
    let x2 = soft_threshold_denoise(y2, r2)?;
    if !correlation_screen(&x1, &x2, screen_alpha) {
        return Ok((RankProfile { r1, r2, r12: 0 }, false));
    }
    let r12 = mdl_select_r12(y1, y2, r1, r2)?;
    Ok((RankProfile { r1, r2, r12 }, true))
}

/// Full CDPA estimation: ranks, denoising, D-CCA, alignment, sign, patterns.
pub fn estimate_cdpa<T: Scalar>(y1: &ObservedMatrix<T>, y2: &ObservedMatrix<T>, config: &CdpaConfig) -> Result<CdpaFit<T>> {
    if y1.nsamples() != y2.nsamples() {
        return Err(CdpaError::BadDimensions(format!("sample sizes differ: {} vs {}", y1.nsamples(), y2.nsamples())));
    }
    let (c1, c2) = if config.center { (center_rows(y1), center_rows(y2)) } else { (y1.clone(), y2.clone()) };
    let mut warnings = Vec::new();
    let ranks = match config.ranks {
        Some(r) => RankProfile::new(r.r1, r.r2, r.r12)?,
        None => {
            let (ranks, screened) = select_ranks(&c1, &c2, config.screen_alpha)?;
            if !screened {
                warnings.push("no significant cross-dataset correlation; common pattern set to zero".to_string());
            }
            ranks
        }
    };
    let r12_zero = ranks.r12 == 0;

    let plus = run_pipeline(&c1, &c2, ranks, PlanRequest::Solve(&config.permutation), config.dual_weight)?;
    let method = plus.plan.method;
    let (run, sign) = match config.sign {
        SignMode::Plus => {
            let t = plus.decomposition.explained.as_f64();
            (plus, SignChoice { sign: 1, trace_plus: t, trace_minus: f64::NAN })
        }
        SignMode::Minus => {
            let minus = run_pipeline(&c1, &c2.scaled(-T::one()), ranks, PlanRequest::Fixed(&plus.plan), config.dual_weight)?;
            let t = minus.decomposition.explained.as_f64();
            (minus, SignChoice { sign: -1, trace_plus: plus.decomposition.explained.as_f64(), trace_minus: t })
        }
        SignMode::Auto => {
            let minus = run_pipeline(&c1, &c2.scaled(-T::one()), ranks, PlanRequest::Fixed(&plus.plan), config.dual_weight)?;
            let choice = crate::align::choose_sign(&plus.decomposition, &minus.decomposition);
            if choice.sign < 0 {
                (minus, choice)
            } else {
                (plus, choice)
            }
        }
    };
    let mut plan = run.plan.clone();
    plan.method = method;

    let diagnostics = match (&run.signals[0], &run.signals[1]) {
        (Some(a), Some(b)) => Some(compute_diagnostics(a, b, [a.noise_trace, b.noise_trace], ranks)),
        _ => None,
    };

    let bootstrap = match config.bootstrap {
        Some(bc) if !r12_zero => {
            let signed_y2 = if sign.sign < 0 { y2.scaled(-T::one()) } else { y2.clone() };
            Some(bootstrap_ci(y1, &signed_y2, ranks, &plan, bc.replicates, bc.level, config.seed, config.center, config.dual_weight)?)
        }
        _ => None,
    };

    Ok(CdpaFit {
        canonical_correlations: run.canonical_correlations.iter().map(|v| v.as_f64()).collect(),
        channel_cosines: run.channel_cosines.iter().map(|v| v.as_f64()).collect(),
        sources: run.sources,
        decomposition: run.decomposition,
        ranks,
        plan,
        sign,
        diagnostics,
        r12_zero,
        warnings,
        bootstrap,
    })
}
