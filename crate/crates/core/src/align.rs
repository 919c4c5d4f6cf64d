//! Row alignment of the two mixing channels and dataset sign resolution.
//!
//! A permutation is stored as an index array `perm` with `(P M)[i, :] = M[perm[i], :]`,
//! so row `i` of dataset 1 is paired with row `perm[i]` of (padded) dataset 2.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cdpa::PatternDecomposition;
use crate::dcca::MixingChannel;
use crate::error::{CdpaError, Result};
use crate::linalg::pad_rows;
use crate::scalar::Scalar;

/// Appends zero rows to a channel so it has `rows` rows.
pub fn zero_pad<T: Scalar>(b: &MixingChannel<T>, rows: usize) -> Result<MixingChannel<T>> {
    if rows < b.b.nrows() {
        return Err(CdpaError::BadDimensions(format!("cannot pad a {}-row channel to {rows} rows", b.b.nrows())));
    }
    Ok(MixingChannel { b: pad_rows(&b.b, rows), dataset_index: b.dataset_index })
}

/// `(P M)[i, :] = M[perm[i], :]`.
pub fn permute_rows<T: Scalar>(m: &DMatrix<T>, perm: &[usize]) -> DMatrix<T> {
    assert_eq!(perm.len(), m.nrows(), "permutation length must match row count");
    m.select_rows(perm)
}

pub fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &i in perm {
        if i >= perm.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

pub fn identity_permutation(p: usize) -> Vec<usize> {
    (0..p).collect()
}

/// Graph-matching formulation of the channel alignment problem.
///
/// `M_k = Q_kQ_kᵀ`, `M_k⁺ = M_k − shift` with `shift` the smallest entry of
/// both, `A_k` the off-diagonal part of `M_k⁺` and `d_k` its diagonal.
#[derive(Debug, Clone)]
pub struct MatchProblem<T: Scalar> {
    pub q1: DMatrix<T>,
    pub q2a: DMatrix<T>,
    pub m1: DMatrix<T>,
    pub m2: DMatrix<T>,
    pub shift: T,
    pub m1_plus: DMatrix<T>,
    pub m2_plus: DMatrix<T>,
    pub a1: DMatrix<T>,
    pub a2: DMatrix<T>,
    pub d1: Vec<T>,
    pub d2: Vec<T>,
}

pub fn build_match_problem<T: Scalar>(q1: &DMatrix<T>, q2a: &DMatrix<T>) -> MatchProblem<T> {
    assert_eq!(q1.shape(), q2a.shape(), "bases must share shape p×r12");
    let m1 = q1 * q1.transpose();
    let m2 = q2a * q2a.transpose();
    let shift = m1.min().min(m2.min());
    let m1_plus = m1.add_scalar(-shift);
    let m2_plus = m2.add_scalar(-shift);
    let split = |m: &DMatrix<T>| {
        let d: Vec<T> = m.diagonal().iter().copied().collect();
        let mut a = m.clone();
        a.fill_diagonal(T::zero());
        (a, d)
    };
    let (a1, d1) = split(&m1_plus);
    let (a2, d2) = split(&m2_plus);
    MatchProblem { q1: q1.clone(), q2a: q2a.clone(), m1, m2, shift, m1_plus, m2_plus, a1, a2, d1, d2 }
}

impl<T: Scalar> MatchProblem<T> {
    pub fn size(&self) -> usize {
        self.m1.nrows()
    }

    /// `‖Q₁ᵀPQ₂A‖²_F = Σ cos²θ_Bℓ(P)`.
    pub fn trace_objective(&self, perm: &[usize]) -> f64 {
        self.q1.tr_mul(&permute_rows(&self.q2a, perm)).norm_squared().as_f64()
    }

    /// `tr(M₁PM₂Pᵀ) = Σ_ij M₁[i,j]M₂[π i, π j]`.
    pub fn projector_objective(&self, perm: &[usize]) -> f64 {
        quadratic_form(&self.m1, &self.m2, perm)
    }

    /// `−‖M₁ − PM₂Pᵀ‖²_F`.
    pub fn frobenius_objective(&self, perm: &[usize]) -> f64 {
        let p = self.size();
        let mut s = 0.0;
        for j in 0..p {
            for i in 0..p {
                let d = (self.m1[(i, j)] - self.m2[(perm[i], perm[j])]).as_f64();
                s += d * d;
            }
        }
        -s
    }

    /// `tr(A₁PA₂Pᵀ) + Σ_i d₁[i]d₂[π i]`.
    pub fn split_objective(&self, perm: &[usize]) -> f64 {
        let lin: f64 = (0..self.size()).map(|i| (self.d1[i] * self.d2[perm[i]]).as_f64()).sum();
        quadratic_form(&self.a1, &self.a2, perm) + lin
    }
}

fn quadratic_form<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, perm: &[usize]) -> f64 {
    let p = a.nrows();
    let mut s = 0.0;
    for j in 0..p {
        for i in 0..p {
            s += (a[(i, j)] * b[(perm[i], perm[j])]).as_f64();
        }
    }
    s
}

/// How a permutation was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    Identity,
    Provided,
    Dspfp,
    Exhaustive,
}

impl fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatchMethod::Identity => "identity",
            MatchMethod::Provided => "provided",
            MatchMethod::Dspfp => "dspfp",
            MatchMethod::Exhaustive => "exhaustive",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub perm: Vec<usize>,
    /// `Σ cos²θ_Bℓ` for this permutation.
    pub objective: f64,
    pub method: MatchMethod,
}

impl PermutationPlan {
    pub fn identity(p: usize) -> Self {
        Self { perm: identity_permutation(p), objective: f64::NAN, method: MatchMethod::Identity }
    }

    pub fn provided(perm: Vec<usize>) -> Result<Self> {
        if !is_bijection(&perm) {
            return Err(CdpaError::BadConfig("permutation is not a bijection on 0..p".into()));
        }
        Ok(Self { perm, objective: f64::NAN, method: MatchMethod::Provided })
    }

    /// Recomputes the objective against the given bases.
    pub fn evaluated<T: Scalar>(mut self, q1: &DMatrix<T>, q2a: &DMatrix<T>) -> Self {
        self.objective = q1.tr_mul(&permute_rows(q2a, &self.perm)).norm_squared().as_f64();
        self
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// One-line JSON array of 0-based indices.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.perm).expect("index array serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let perm: Vec<usize> = serde_json::from_str(text.trim())?;
        Self::provided(perm)
    }
}

/// Parameters of the doubly-stochastic projected fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DspfpConfig {
    /// Weight of the linear (diagonal) term.
    pub lambda: f64,
    /// Step between the current iterate and its projected update.
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub projection_sweeps: usize,
    /// Polish the discretized permutation with pairwise row swaps (skipped above [`SWAP_REFINE_MAX`]).
    #[serde(default = "default_true")]
    pub swap_refinement: bool,
}

fn default_true() -> bool {
    true
}

impl Default for DspfpConfig {
    fn default() -> Self {
        Self { lambda: 1.0, alpha: 0.5, max_iter: 1000, tol: 1e-6, projection_sweeps: 30, swap_refinement: true }
    }
}

pub const SWAP_REFINE_MAX: usize = 4000;
const SWAP_MAX_SWEEPS: usize = 100;

/// First-improvement pairwise swap search on `‖Q₁ᵀPQ₂A‖²_F`.
///
/// Swapping rows i and j of `PQ₂A` changes `G = Q₁ᵀPQ₂A` by the rank-one
/// term `uvᵀ` with `u = q₁ᵢ − q₁ⱼ` and `v = q₂[π j] − q₂[π i]`, so each
/// candidate costs O(r²).
pub fn refine_by_swaps<T: Scalar>(q1: &DMatrix<T>, q2a: &DMatrix<T>, mut perm: Vec<usize>) -> Vec<usize> {
    let p = perm.len();
    let a = q1.map(Scalar::as_f64);
    let b = q2a.map(Scalar::as_f64);
    let mut g = a.transpose() * permute_rows(&b, &perm);
    let r = a.ncols();
    let mut u = vec![0.0; r];
    let mut v = vec![0.0; r];
    for _ in 0..SWAP_MAX_SWEEPS {
        let mut improved = false;
        for i in 0..p {
            for j in i + 1..p {
                for k in 0..r {
                    u[k] = a[(i, k)] - a[(j, k)];
                    v[k] = b[(perm[j], k)] - b[(perm[i], k)];
                }
                let uu: f64 = u.iter().map(|x| x * x).sum();
                let vv: f64 = v.iter().map(|x| x * x).sum();
                if uu == 0.0 || vv == 0.0 {
                    continue;
                }
                let mut ugv = 0.0;
                for k in 0..r {
                    for l in 0..r {
                        ugv += u[k] * g[(k, l)] * v[l];
                    }
                }
                let gain = 2.0 * ugv + uu * vv;
                if gain > 1e-12 * (1.0 + g.norm_squared()) {
                    perm.swap(i, j);
                    for k in 0..r {
                        for l in 0..r {
                            g[(k, l)] += u[k] * v[l];
                        }
                    }
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    perm
}

// A_k X computed from the factored form A = QQᵀ − s·11ᵀ − diag(d), O(p²r).
fn apply_left(q: &DMatrix<f64>, shift: f64, d: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = q * (q.transpose() * x);
    for j in 0..x.ncols() {
        let col_sum = x.column(j).sum();
        for i in 0..x.nrows() {
            out[(i, j)] -= shift * col_sum + d[i] * x[(i, j)];
        }
    }
    out
}

/// Projects onto doubly stochastic matrices by alternating the affine
/// row/column-sum correction with nonnegativity clipping.
fn project_doubly_stochastic(y: &mut DMatrix<f64>, sweeps: usize) {
    let p = y.nrows();
    let pf = p as f64;
    for _ in 0..sweeps {
        let rows: Vec<f64> = y.row_iter().map(|r| r.sum()).collect();
        let cols: Vec<f64> = y.column_iter().map(|c| c.sum()).collect();
        let total: f64 = rows.iter().sum();
        let c = 1.0 / pf + total / (pf * pf);
        let mut negative = false;
        for j in 0..p {
            for i in 0..p {
                let v = y[(i, j)] + c - rows[i] / pf - cols[j] / pf;
                if v < 0.0 {
                    negative = true;
                    y[(i, j)] = 0.0;
                } else {
                    y[(i, j)] = v;
                }
            }
        }
        if !negative {
            break;
        }
    }
}

/// Approximate graph matching by DSPFP, discretized with a linear assignment
/// and never worse than the identity permutation.
pub fn dspfp_match<T: Scalar>(problem: &MatchProblem<T>, cfg: &DspfpConfig) -> PermutationPlan {
    let p = problem.size();
    let q1 = problem.q1.map(Scalar::as_f64);
    let q2 = problem.q2a.map(Scalar::as_f64);
    let shift = problem.shift.as_f64();
    let d1: Vec<f64> = problem.d1.iter().map(|v| v.as_f64()).collect();
    let d2: Vec<f64> = problem.d2.iter().map(|v| v.as_f64()).collect();
    let k = DMatrix::from_fn(p, p, |i, j| cfg.lambda * d1[i] * d2[j]);

    let mut x = DMatrix::from_element(p, p, 1.0 / p as f64);
    for _ in 0..cfg.max_iter {
        // A₁XA₂ = (A₂ᵀ(A₁X)ᵀ)ᵀ with A₂ symmetric
        let a1x = apply_left(&q1, shift, &d1, &x);
        let mut y = apply_left(&q2, shift, &d2, &a1x.transpose()).transpose() + &k;
        project_doubly_stochastic(&mut y, cfg.projection_sweeps);
        let mut next = &x * (1.0 - cfg.alpha) + y * cfg.alpha;
        let top = next.max();
        if top > 0.0 {
            next /= top;
        }
        let change = (&next - &x).amax();
        x = next;
        if change < cfg.tol {
            break;
        }
    }

    let mut perm = hungarian_max(&x);
    if cfg.swap_refinement && p <= SWAP_REFINE_MAX {
        perm = refine_by_swaps(&problem.q1, &problem.q2a, perm);
    }
    let objective = problem.trace_objective(&perm);
    let identity = identity_permutation(p);
    let id_objective = problem.trace_objective(&identity);
    if id_objective >= objective {
        PermutationPlan { perm: identity, objective: id_objective, method: MatchMethod::Dspfp }
    } else {
        PermutationPlan { perm, objective, method: MatchMethod::Dspfp }
    }
}

/// Maximum-weight perfect assignment: returns `perm` maximizing `Σ_i w[i, perm[i]]`.
pub fn hungarian_max(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    assert_eq!(n, w.ncols(), "assignment needs a square weight matrix");
    // potentials-based shortest augmenting path, 1-based with a dummy column 0
    let cost = |i: usize, j: usize| -w[(i - 1, j - 1)];
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    perm
}

pub const EXHAUSTIVE_MAX: usize = 9;

/// Visits every permutation of `0..p` (Heap's algorithm).
pub fn for_each_permutation(p: usize, mut f: impl FnMut(&[usize])) {
    let mut a = identity_permutation(p);
    let mut c = vec![0usize; p];
    f(&a);
    let mut i = 0;
    while i < p {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Globally optimal alignment by enumeration; ties keep the first permutation visited.
pub fn exhaustive_match<T: Scalar>(q1: &DMatrix<T>, q2a: &DMatrix<T>) -> Result<PermutationPlan> {
    let p = q1.nrows();
    if p > EXHAUSTIVE_MAX {
        return Err(CdpaError::TooLarge { p, max: EXHAUSTIVE_MAX });
    }
    let problem = build_match_problem(q1, q2a);
    let mut best = (f64::NEG_INFINITY, identity_permutation(p));
    for_each_permutation(p, |perm| {
        let obj = problem.projector_objective(perm);
        if obj > best.0 + 1e-12 {
            best = (obj, perm.to_vec());
        }
    });
    let objective = problem.trace_objective(&best.1);
    Ok(PermutationPlan { perm: best.1, objective, method: MatchMethod::Exhaustive })
}

/// Outcome of the dataset-2 sign comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignChoice {
    pub sign: i8,
    pub trace_plus: f64,
    pub trace_minus: f64,
}

/// Picks the sign of dataset 2 whose common pattern explains more variance; ties go to +1.
pub fn choose_sign<T: Scalar>(run_plus: &PatternDecomposition<T>, run_minus: &PatternDecomposition<T>) -> SignChoice {
    let trace_plus = run_plus.explained.as_f64();
    let trace_minus = run_minus.explained.as_f64();
    let sign = if trace_minus > trace_plus { -1 } else { 1 };
    SignChoice { sign, trace_plus, trace_minus }
}
