//! Planted-structure simulations, population ground truth and error metrics.
//!
//! Both datasets have five factors with eigenvalues 500, 400, 300, 200, 100.
//! The factor scores are jointly Gaussian with cross-covariance
//! `diag(cos(θ∧30°), cos(θ∧60°), cos θ, cos(θ+15°), cos((θ+30°)∧90°))`, and the
//! first `r12` factor directions of the two datasets meet at the same angles
//! on the zero-padded row space.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{permute_rows, PermutationPlan};
use crate::cdpa::{
    population_cdpa, run_pipeline, select_ranks, DualWeightVariant, PatternDecomposition, PlanRequest, PopulationCdpa, PopulationModel,
};
use crate::denoise::{ObservedMatrix, RankProfile};
use crate::error::{CdpaError, Result};
use crate::linalg::{half_angle_tangent, pad_rows, scale_columns, spectral_norm};

pub const FACTOR_EIGENVALUES: [f64; 5] = [500.0, 400.0, 300.0, 200.0, 100.0];
pub const SIGNAL_TRACE: f64 = 1500.0;
pub const SETUP2_P2: usize = 900;
const NFACTORS: usize = 5;
const DEFAULT_STRUCTURE_SEED: u64 = 0x00c0_ffee;

fn default_structure_seed() -> u64 {
    DEFAULT_STRUCTURE_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub setup: u8,
    pub theta_deg: f64,
    pub p1: usize,
    pub p2: usize,
    pub n: usize,
    pub noise_var: f64,
    /// Master noise seed; replication `i` uses `seed ^ i`.
    pub seed: u64,
    pub replications: usize,
    /// Seed of the factor directions, shared by all replications of a cell.
    #[serde(default = "default_structure_seed")]
    pub structure_seed: u64,
    /// Draw factor scores whose sample moments equal the population moments exactly.
    #[serde(default)]
    pub exact_scores: bool,
}

impl SimulationConfig {
    pub fn setup1(theta_deg: f64, p1: usize, noise_var: f64) -> Self {
        Self {
            setup: 1,
            theta_deg,
            p1,
            p2: p1,
            n: 300,
            noise_var,
            seed: 1,
            replications: 1,
            structure_seed: DEFAULT_STRUCTURE_SEED,
            exact_scores: false,
        }
    }

    pub fn setup2(theta_deg: f64, p1: usize, noise_var: f64) -> Self {
        Self { setup: 2, p2: SETUP2_P2, ..Self::setup1(theta_deg, p1, noise_var) }
    }

    /// Applies the setup's dimension rule and validates the configuration.
    pub fn normalized(&self) -> Result<Self> {
        let mut c = self.clone();
        match c.setup {
            1 => c.p2 = c.p1,
            2 => c.p2 = SETUP2_P2,
            s => return Err(CdpaError::BadConfig(format!("setup must be 1 or 2, got {s}"))),
        }
        if !(0.0..=90.0).contains(&c.theta_deg) {
            return Err(CdpaError::BadConfig(format!("theta must lie in [0, 90] degrees, got {}", c.theta_deg)));
        }
        if !(c.noise_var >= 0.0 && c.noise_var.is_finite()) {
            return Err(CdpaError::BadConfig(format!("noise variance must be nonnegative, got {}", c.noise_var)));
        }
        let (pmin, pmax) = (c.p1.min(c.p2), c.p1.max(c.p2));
        if pmin < NFACTORS || pmax < 2 * NFACTORS {
            return Err(CdpaError::BadConfig(format!("dimensions ({}, {}) too small for five factors", c.p1, c.p2)));
        }
        if c.n < 2 * NFACTORS {
            return Err(CdpaError::BadConfig(format!("need n >= {}, got {}", 2 * NFACTORS, c.n)));
        }
        if c.replications == 0 {
            return Err(CdpaError::BadConfig("need at least one replication".into()));
        }
        Ok(c)
    }
}

/// Planted factor correlations at angle θ; angles of 90° or more give exactly 0.
pub fn planted_correlations(theta_deg: f64) -> [f64; 5] {
    let c = |deg: f64| if deg >= 90.0 { 0.0 } else { deg.to_radians().cos() };
    [c(theta_deg.min(30.0)), c(theta_deg.min(60.0)), c(theta_deg), c(theta_deg + 15.0), c((theta_deg + 30.0).min(90.0))]
}

pub fn planted_r12(theta_deg: f64) -> usize {
    planted_correlations(theta_deg).iter().filter(|&&r| r > 0.0).count()
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

// Haar-distributed orthonormal columns: QR with R's diagonal made positive.
fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gaussian(rows, cols, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

// Random orthonormal columns orthogonal to the columns of `against`.
fn orthonormal_complement(against: &DMatrix<f64>, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian(against.nrows(), cols, rng);
    // two passes of projection keep the result orthogonal to working precision
    let g = &g - against * (against.transpose() * &g);
    let g = &g - against * (against.transpose() * &g);
    random_orthonormal_from(g)
}

fn random_orthonormal_from(g: DMatrix<f64>) -> DMatrix<f64> {
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Factor directions and population CDPA of one simulation cell.
#[derive(Debug, Clone)]
pub struct Structure {
    pub config: SimulationConfig,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub correlations: [f64; 5],
    pub r12: usize,
    pub population: PopulationCdpa<f64>,
}

impl Structure {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        let config = config.normalized()?;
        let rho = planted_correlations(config.theta_deg);
        let r12 = planted_r12(config.theta_deg);
        let (p1, p2) = (config.p1, config.p2);
        let pmax = p1.max(p2);
        let mut rng = ChaCha8Rng::seed_from_u64(config.structure_seed);

        // the dataset with fewer variables is drawn freely, the other is built around its padding
        let small_is_first = p1 <= p2;
        let psmall = p1.min(p2);
        let v_small = random_orthonormal(psmall, NFACTORS, &mut rng);
        let v_small_padded = pad_rows(&v_small, pmax);
        let w = orthonormal_complement(&v_small_padded, r12, &mut rng);
        let mut v_big = DMatrix::<f64>::zeros(pmax, NFACTORS);
        for l in 0..r12 {
            let col = v_small_padded.column(l) * rho[l] + w.column(l) * (1.0 - rho[l] * rho[l]).sqrt();
            v_big.set_column(l, &col);
        }
        if r12 < NFACTORS {
            let head = v_big.columns(0, r12).into_owned();
            let rest = orthonormal_complement(&head, NFACTORS - r12, &mut rng);
            v_big.columns_mut(r12, NFACTORS - r12).copy_from(&rest);
        }
        let (v1, v2) = if small_is_first { (v_small, v_big) } else { (v_big, v_small) };

        let model = PopulationModel {
            v1: v1.clone(),
            v2: v2.clone(),
            eig1: FACTOR_EIGENVALUES.to_vec(),
            eig2: FACTOR_EIGENVALUES.to_vec(),
            cross_cov: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&rho)),
            r12,
            perm: None,
        };
        let population = population_cdpa(&model, DualWeightVariant::OwnPrincipalVectors)?;
        Ok(Self { config, v1, v2, correlations: rho, r12, population })
    }

    /// Draws one replication with the given noise seed.
    pub fn draw(&self, seed: u64) -> Result<(ObservedMatrix<f64>, ObservedMatrix<f64>, GroundTruth)> {
        let c = &self.config;
        let n = c.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = self.correlations;
        let (z1, xi) = if c.exact_scores {
            let q = random_orthonormal(n, 2 * NFACTORS, &mut rng).transpose() * (n as f64).sqrt();
            (q.rows(0, NFACTORS).into_owned(), q.rows(NFACTORS, NFACTORS).into_owned())
        } else {
            (gaussian(NFACTORS, n, &mut rng), gaussian(NFACTORS, n, &mut rng))
        };
        let mut z2 = DMatrix::<f64>::zeros(NFACTORS, n);
        for l in 0..NFACTORS {
            let row = z1.row(l) * rho[l] + xi.row(l) * (1.0 - rho[l] * rho[l]).sqrt();
            z2.set_row(l, &row);
        }
        let sqrt_eig: Vec<f64> = FACTOR_EIGENVALUES.iter().map(|l| l.sqrt()).collect();
        let x1 = scale_columns(&self.v1, &sqrt_eig) * &z1;
        let x2 = scale_columns(&self.v2, &sqrt_eig) * &z2;
        let sigma = c.noise_var.sqrt();
        let y1 = &x1 + gaussian(c.p1, n, &mut rng) * sigma;
        let y2 = &x2 + gaussian(c.p2, n, &mut rng) * sigma;

        let pop = &self.population;
        let c0 = pop.common_factors_for(&z1, &z2);
        let cmat = pop.c_b.clone() * (&pop.weights.s * &c0);
        let scale = SIGNAL_TRACE.sqrt();
        let align = &pop.alignment;
        let c_sources = [pop.common_source_for(1, &c0), pop.common_source_for(2, &c0)];
        let x_aligned = [align.apply(&x1, 1), align.apply(&x2, 2)];
        let c_scaled = &cmat * scale;
        let h = [align.apply(&c_sources[0], 1) - &c_scaled, align.apply(&c_sources[1], 2) - &c_scaled];
        let delta = [&x_aligned[0] - &c_scaled, &x_aligned[1] - &c_scaled];
        let truth = GroundTruth {
            v1: self.v1.clone(),
            v2: self.v2.clone(),
            eigvalues: FACTOR_EIGENVALUES,
            cross_cov: rho,
            r12: self.r12,
            z1,
            z2,
            x: [x1, x2],
            x_aligned,
            c: cmat,
            c_scaled: [c_scaled.clone(), c_scaled],
            c_sources,
            h,
            delta,
            explained: pop.explained,
            q: [pop.pair.q1.clone(), pop.pair.q2a.clone()],
        };
        Ok((ObservedMatrix::new(y1)?, ObservedMatrix::new(y2)?, truth))
    }
}

/// Population quantities of one replication.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub eigvalues: [f64; 5],
    /// Diagonal of the factor cross-covariance.
    pub cross_cov: [f64; 5],
    pub r12: usize,
    /// Standardized factor scores (5×n).
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
    /// Unaligned signals `X_k`.
    pub x: [DMatrix<f64>; 2],
    pub x_aligned: [DMatrix<f64>; 2],
    pub c: DMatrix<f64>,
    pub c_scaled: [DMatrix<f64>; 2],
    /// Unaligned D-CCA common sources `C_k = B_k C₀`.
    pub c_sources: [DMatrix<f64>; 2],
    pub h: [DMatrix<f64>; 2],
    pub delta: [DMatrix<f64>; 2],
    /// Population `tr{cov(c)}`.
    pub explained: f64,
    /// Population channel bases `Q₁`, `Q₂A` on the padded space.
    pub q: [DMatrix<f64>; 2],
}

impl GroundTruth {
    pub fn ranks(&self) -> RankProfile {
        RankProfile { r1: NFACTORS, r2: NFACTORS, r12: self.r12 }
    }
}

/// Draws `(Y₁, Y₂, truth)` for `config.seed`.
pub fn generate_setup(config: &SimulationConfig) -> Result<(ObservedMatrix<f64>, ObservedMatrix<f64>, GroundTruth)> {
    Structure::new(config)?.draw(config.seed)
}

/// Population `tr{cov(c)}` at angle θ, by two independent routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub theta_deg: f64,
    /// Matrix-level population algorithm on constructed covariances.
    pub matrix: f64,
    /// Per-factor closed form `Σ λ_ℓ(1 − tan(θ_ℓ/2))⁴(1+ρ_ℓ)²/(4·tr Σ)`.
    pub closed_form: f64,
}

pub fn closed_form_explained_variance(theta_deg: f64) -> f64 {
    planted_correlations(theta_deg)
        .iter()
        .zip(FACTOR_EIGENVALUES)
        .map(|(&rho, lambda)| lambda * (1.0 - half_angle_tangent(rho)).powi(4) * (1.0 + rho).powi(2) / (4.0 * SIGNAL_TRACE))
        .sum()
}

pub fn oracle_explained_variance(theta_deg: f64) -> Result<OracleValue> {
    let mut cfg = SimulationConfig::setup1(theta_deg, 2 * NFACTORS + 2, 0.0);
    cfg.n = 2 * NFACTORS;
    let structure = Structure::new(&cfg)?;
    Ok(OracleValue { theta_deg, matrix: structure.population.explained, closed_form: closed_form_explained_variance(theta_deg) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPair {
    pub frobenius: f64,
    pub spectral: f64,
}

fn sq_norms(m: &DMatrix<f64>) -> NormPair {
    NormPair { frobenius: m.norm_squared(), spectral: spectral_norm(m).powi(2) }
}

fn ratio(a: NormPair, b: NormPair) -> NormPair {
    let div = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x / y.max(f64::MIN_POSITIVE) };
    NormPair { frobenius: div(a.frobenius, b.frobenius), spectral: div(a.spectral, b.spectral) }
}

/// Estimation errors of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖Ĉ − C‖² / (½(‖X₁^S‖² + ‖X₂^S‖²))` with `X_k^S = X_k / tr(Σ_k)^{1/2}`.
    pub scaled_sq_error_c: NormPair,
    /// `‖Ĉ^(k) − C^(k)‖² / ‖X_k‖²`.
    pub scaled_sq_error_ck: [NormPair; 2],
    pub scaled_sq_error_delta: [NormPair; 2],
    pub scaled_sq_error_h: [NormPair; 2],
    /// `‖Ĉ − C‖² / ‖C‖²`.
    pub relative_sq_error_c: NormPair,
    pub relative_sq_error_ck: [NormPair; 2],
    /// `|(1/n)‖Ĉ‖² − tr{cov(c)}|`.
    pub trace_abs_error: f64,
    pub relative_trace_error: f64,
    /// Change of the population matching objective between the estimated and true permutations.
    pub matching_objective_error: f64,
}

pub fn error_metrics(estimate: &PatternDecomposition<f64>, plan: &PermutationPlan, truth: &GroundTruth) -> ErrorReport {
    let scale = SIGNAL_TRACE.sqrt();
    let xs = [sq_norms(&(&truth.x_aligned[0] / scale)), sq_norms(&(&truth.x_aligned[1] / scale))];
    let x = [sq_norms(&truth.x_aligned[0]), sq_norms(&truth.x_aligned[1])];
    let half_sum = NormPair { frobenius: 0.5 * (xs[0].frobenius + xs[1].frobenius), spectral: 0.5 * (xs[0].spectral + xs[1].spectral) };
    let err_c = sq_norms(&(&estimate.c - &truth.c));
    let c_norm = sq_norms(&truth.c);
    let per_k = |f: &dyn Fn(usize) -> NormPair| [f(0), f(1)];
    let err_ck = per_k(&|k| sq_norms(&(&estimate.c_scaled[k] - &truth.c_scaled[k])));
    let ck_norm = per_k(&|k| sq_norms(&truth.c_scaled[k]));

    let n = truth.c.ncols() as f64;
    let trace_abs_error = (estimate.c.norm_squared() / n - truth.explained).abs();
    let objective = |perm: &[usize]| truth.q[0].tr_mul(&permute_rows(&truth.q[1], perm)).norm_squared();
    let identity: Vec<usize> = (0..truth.q[0].nrows()).collect();
    ErrorReport {
        scaled_sq_error_c: ratio(err_c, half_sum),
        scaled_sq_error_ck: [ratio(err_ck[0], x[0]), ratio(err_ck[1], x[1])],
        scaled_sq_error_delta: per_k(&|k| ratio(sq_norms(&(&estimate.delta[k] - &truth.delta[k])), x[k])),
        scaled_sq_error_h: per_k(&|k| ratio(sq_norms(&(&estimate.h[k] - &truth.h[k])), x[k])),
        relative_sq_error_c: ratio(err_c, c_norm),
        relative_sq_error_ck: [ratio(err_ck[0], ck_norm[0]), ratio(err_ck[1], ck_norm[1])],
        trace_abs_error,
        relative_trace_error: if trace_abs_error == 0.0 { 0.0 } else { trace_abs_error / truth.explained.max(f64::MIN_POSITIVE) },
        matching_objective_error: (objective(&plan.perm) - objective(&identity)).abs(),
    }
}

/// What each replication estimates besides the fixed-rank decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Also run ED / screen / MDL-IC rank selection and record the result.
    pub select_ranks: bool,
    /// Run the decomposition at the true ranks with the identity permutation.
    pub decompose: bool,
    pub screen_alpha: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { select_ranks: false, decompose: true, screen_alpha: 0.05 }
    }
}

/// One CSV row of a replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub oracle: f64,
    pub explained: Option<f64>,
    pub cos_theta_b1: Option<f64>,
    pub theta_b1_deg: Option<f64>,
    pub scaled_sq_error_c_fro: Option<f64>,
    pub scaled_sq_error_c_spec: Option<f64>,
    pub scaled_sq_error_c1_fro: Option<f64>,
    pub scaled_sq_error_c1_spec: Option<f64>,
    pub scaled_sq_error_c2_fro: Option<f64>,
    pub scaled_sq_error_c2_spec: Option<f64>,
    pub scaled_sq_error_delta1_fro: Option<f64>,
    pub scaled_sq_error_delta2_fro: Option<f64>,
    pub relative_sq_error_c_fro: Option<f64>,
    pub relative_sq_error_c_spec: Option<f64>,
    pub trace_abs_error: Option<f64>,
    pub matching_objective_error: Option<f64>,
    pub selected_r1: Option<usize>,
    pub selected_r2: Option<usize>,
    pub selected_r12: Option<usize>,
}

/// Mean and sample standard deviation (absent for a single replication).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sd: Option<f64>,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = (count > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt());
        Some(Self { mean, sd, count })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRecovery {
    pub r1: f64,
    pub r2: f64,
    pub r12: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub config: SimulationConfig,
    pub true_r12: usize,
    pub oracle: f64,
    pub aggregates: BTreeMap<String, Stat>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank_recovery: Option<RankRecovery>,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl ReplicationSummary {
    pub fn mean(&self, field: &str) -> Option<f64> {
        self.aggregates.get(field).map(|s| s.mean)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CdpaError::BadConfig(e.to_string()))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| CdpaError::BadConfig(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn one_replication(structure: &Structure, i: usize, options: &StudyOptions) -> Result<ReplicationRecord> {
    let seed = structure.config.seed ^ i as u64;
    let (y1, y2, truth) = structure.draw(seed)?;
    let mut rec = ReplicationRecord {
        replication: i,
        seed,
        oracle: truth.explained,
        explained: None,
        cos_theta_b1: None,
        theta_b1_deg: None,
        scaled_sq_error_c_fro: None,
        scaled_sq_error_c_spec: None,
        scaled_sq_error_c1_fro: None,
        scaled_sq_error_c1_spec: None,
        scaled_sq_error_c2_fro: None,
        scaled_sq_error_c2_spec: None,
        scaled_sq_error_delta1_fro: None,
        scaled_sq_error_delta2_fro: None,
        relative_sq_error_c_fro: None,
        relative_sq_error_c_spec: None,
        trace_abs_error: None,
        matching_objective_error: None,
        selected_r1: None,
        selected_r2: None,
        selected_r12: None,
    };
    if options.select_ranks {
        let (ranks, _) = select_ranks(&y1, &y2, options.screen_alpha)?;
        rec.selected_r1 = Some(ranks.r1);
        rec.selected_r2 = Some(ranks.r2);
        rec.selected_r12 = Some(ranks.r12);
    }
    if options.decompose {
        let plan = PermutationPlan::identity(structure.config.p1.max(structure.config.p2));
        let run = run_pipeline(&y1, &y2, truth.ranks(), PlanRequest::Fixed(&plan), DualWeightVariant::OwnPrincipalVectors)?;
        let err = error_metrics(&run.decomposition, &run.plan, &truth);
        let cos = run.channel_cosines.first().copied().unwrap_or(0.0);
        rec.explained = Some(run.decomposition.explained);
        rec.cos_theta_b1 = Some(cos);
        rec.theta_b1_deg = Some(cos.clamp(0.0, 1.0).acos().to_degrees());
        rec.scaled_sq_error_c_fro = Some(err.scaled_sq_error_c.frobenius);
        rec.scaled_sq_error_c_spec = Some(err.scaled_sq_error_c.spectral);
        rec.scaled_sq_error_c1_fro = Some(err.scaled_sq_error_ck[0].frobenius);
        rec.scaled_sq_error_c1_spec = Some(err.scaled_sq_error_ck[0].spectral);
        rec.scaled_sq_error_c2_fro = Some(err.scaled_sq_error_ck[1].frobenius);
        rec.scaled_sq_error_c2_spec = Some(err.scaled_sq_error_ck[1].spectral);
        rec.scaled_sq_error_delta1_fro = Some(err.scaled_sq_error_delta[0].frobenius);
        rec.scaled_sq_error_delta2_fro = Some(err.scaled_sq_error_delta[1].frobenius);
        rec.relative_sq_error_c_fro = Some(err.relative_sq_error_c.frobenius);
        rec.relative_sq_error_c_spec = Some(err.relative_sq_error_c.spectral);
        rec.trace_abs_error = Some(err.trace_abs_error);
        rec.matching_objective_error = Some(err.matching_objective_error);
    }
    Ok(rec)
}

/// Runs `config.replications` independent replications (in parallel) and aggregates them.
pub fn run_replications(config: &SimulationConfig, options: &StudyOptions) -> Result<ReplicationSummary> {
    let structure = Structure::new(config)?;
    let records =
        (0..structure.config.replications).into_par_iter().map(|i| one_replication(&structure, i, options)).collect::<Result<Vec<_>>>()?;

    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &records {
        let value = serde_json::to_value(r)?;
        for (k, v) in value.as_object().expect("record serializes to an object") {
            if k == "replication" || k == "seed" {
                continue;
            }
            if let Some(x) = v.as_f64() {
                columns.entry(k.clone()).or_default().push(x);
            }
        }
    }
    let aggregates = columns.into_iter().filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s))).collect();
    let rank_recovery = options.select_ranks.then(|| {
        let m = records.len() as f64;
        let rate = |f: &dyn Fn(&ReplicationRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / m;
        RankRecovery {
            r1: rate(&|r| r.selected_r1 == Some(NFACTORS)),
            r2: rate(&|r| r.selected_r2 == Some(NFACTORS)),
            r12: rate(&|r| r.selected_r12 == Some(structure.r12)),
        }
    });
    Ok(ReplicationSummary {
        config: structure.config.clone(),
        true_r12: structure.r12,
        oracle: structure.population.explained,
        aggregates,
        rank_recovery,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;

    #[test]
    fn planted_correlation_values() {
        let r = planted_correlations(0.0);
        assert_eq!(&r[..3], &[1.0, 1.0, 1.0]);
        assert!((r[3] - 15f64.to_radians().cos()).abs() < 1e-15);
        assert!((r[4] - 30f64.to_radians().cos()).abs() < 1e-15);
        assert_eq!(planted_correlations(75.0)[3], 0.0);
        assert_eq!(planted_r12(0.0), 5);
        assert_eq!(planted_r12(45.0), 5);
        assert_eq!(planted_r12(59.9), 5);
        assert_eq!(planted_r12(60.0), 4);
        assert_eq!(planted_r12(75.0), 3);
    }

    #[test]
    fn config_rules() {
        let mut c = SimulationConfig::setup1(15.0, 100, 1.0);
        c.p2 = 7;
        assert_eq!(c.normalized().unwrap().p2, 100);
        c.setup = 2;
        assert_eq!(c.normalized().unwrap().p2, 900);
        c.setup = 3;
        assert!(matches!(c.normalized(), Err(CdpaError::BadConfig(_))));
        let mut c = SimulationConfig::setup1(15.0, 4, 1.0);
        assert!(c.normalized().is_err());
        c.p1 = 50;
        c.noise_var = -1.0;
        assert!(c.normalized().is_err());
    }

    #[test]
    fn planted_structure_is_exact() {
        for (setup, theta) in [(1u8, 0.0), (1, 45.0), (1, 75.0), (2, 60.0)] {
            let mut cfg = if setup == 1 { SimulationConfig::setup1(theta, 40, 1.0) } else { SimulationConfig::setup2(theta, 30, 1.0) };
            cfg.n = 50;
            let s = Structure::new(&cfg).unwrap();
            assert!(orthonormality_error(&s.v1) < 1e-12);
            assert!(orthonormality_error(&s.v2) < 1e-12);
            let pmax = cfg.p1.max(s.config.p2);
            let cross = pad_rows(&s.v1, pmax).tr_mul(&pad_rows(&s.v2, pmax));
            for l in 0..s.r12 {
                for m in 0..s.r12 {
                    let expect = if l == m { s.correlations[l] } else { 0.0 };
                    assert!((cross[(l, m)] - expect).abs() < 1e-10);
                }
            }
            let (y1, y2, truth) = s.draw(9).unwrap();
            assert_eq!(y1.nvars(), cfg.p1);
            assert_eq!(y2.nvars(), s.config.p2);
            let sqrt_eig: Vec<f64> = FACTOR_EIGENVALUES.iter().map(|l| l.sqrt()).collect();
            let rebuilt = scale_columns(&truth.v1, &sqrt_eig) * &truth.z1;
            assert!((rebuilt - &truth.x[0]).amax() < 1e-10);
        }
    }

    #[test]
    fn exact_scores_have_exact_moments() {
        let mut cfg = SimulationConfig::setup1(30.0, 20, 0.0);
        cfg.n = 40;
        cfg.exact_scores = true;
        let (_, _, t) = generate_setup(&cfg).unwrap();
        let n = 40.0;
        let c11 = &t.z1 * t.z1.transpose() / n;
        let c12 = &t.z1 * t.z2.transpose() / n;
        assert!((c11 - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
        let rho = planted_correlations(30.0);
        assert!((c12 - DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&rho))).amax() < 1e-12);
    }

    #[test]
    fn oracle_routes_agree() {
        for theta in [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 37.0, 90.0] {
            let o = oracle_explained_variance(theta).unwrap();
            assert!((o.matrix - o.closed_form).abs() < 1e-10, "theta {theta}: {o:?}");
        }
    }

    #[test]
    fn stat_single_value_has_no_sd() {
        let s = Stat::of(&[2.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.sd, None);
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert!((s.sd.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
