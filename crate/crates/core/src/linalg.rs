//! Dense linear-algebra helpers shared by the pipeline stages.
//!
//! Every decomposition returned from here is sorted in nonincreasing order
//! and carries a deterministic sign convention: the largest-magnitude entry
//! of each left vector is made positive (the first one wins on ties), and
//! the paired right vector is flipped with it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

/// Singular value decomposition `m = u * diag(s) * vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: Vec<T>,
    pub v: DMatrix<T>,
}

impl<T: Scalar> Svd<T> {
    /// Rebuilds `u * diag(s) * vᵀ` using the leading `s.len()` columns.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let k = self.s.len();
        let mut us = self.u.columns(0, k).into_owned();
        for (j, &sj) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(sj);
        }
        us * self.v.columns(0, k).transpose()
    }
}

/// Flips column pairs so the largest-magnitude entry of each `u` column is positive.
pub fn apply_sign_rule<T: Scalar>(u: &mut DMatrix<T>, v: &mut DMatrix<T>) {
    let k = u.ncols().min(v.ncols());
    for j in 0..u.ncols() {
        if leading_sign_negative(u.column(j).iter().copied()) {
            u.column_mut(j).neg_mut();
            if j < k {
                v.column_mut(j).neg_mut();
            }
        }
    }
}

/// Same convention for a single matrix of vectors (eigenvectors, bases).
pub fn apply_sign_rule_single<T: Scalar>(u: &mut DMatrix<T>) {
    for j in 0..u.ncols() {
        if leading_sign_negative(u.column(j).iter().copied()) {
            u.column_mut(j).neg_mut();
        }
    }
}

fn leading_sign_negative<T: Scalar>(col: impl Iterator<Item = T>) -> bool {
    let mut best = T::zero();
    let mut negative = false;
    for x in col {
        if x.abs() > best {
            best = x.abs();
            negative = x < T::zero();
        }
    }
    negative
}

/// Eigendecomposition of a symmetric matrix, eigenvalues nonincreasing.
pub fn sym_eigen_desc<T: Scalar>(m: DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = eig.eigenvectors.select_columns(&order);
    apply_sign_rule_single(&mut vecs);
    (vals, vecs)
}

/// Eigenvalues of a symmetric matrix in nonincreasing order.
pub fn sym_eigenvalues_desc<T: Scalar>(m: DMatrix<T>) -> Vec<T> {
    let mut vals: Vec<T> = m.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

const SUBSPACE_OVERSAMPLE: usize = 8;
const SUBSPACE_MAX_ITER: usize = 60;

/// Leading `k` eigenpairs of a symmetric positive semidefinite matrix.
///
/// Runs block subspace iteration with Rayleigh-Ritz extraction from a fixed
/// pseudo-random start, and falls back to a full eigendecomposition when the
/// block does not converge or the problem is small.
pub fn top_eigenpairs<T: Scalar>(g: &DMatrix<T>, k: usize) -> (Vec<T>, DMatrix<T>) {
    let m = g.nrows();
    if k == 0 {
        return (Vec::new(), DMatrix::zeros(m, 0));
    }
    let block = (k + SUBSPACE_OVERSAMPLE).min(m);
    if m <= 64 || 3 * block >= m {
        let (vals, vecs) = sym_eigen_desc(g.clone());
        return (vals[..k].to_vec(), vecs.columns(0, k).into_owned());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cd9a);
    let start = DMatrix::<T>::from_fn(m, block, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    let tol = T::lit(1e3 * T::eps());
    let mut gx = g * start;
    for _ in 0..SUBSPACE_MAX_ITER {
        let q = gx.qr().q();
        let gq = g * &q;
        let mut h = q.transpose() * &gq;
        h = (&h + h.transpose()) * T::lit(0.5);
        let (vals, w) = sym_eigen_desc(h);
        let x = &q * &w;
        gx = gq * &w;
        let scale = vals[0].abs().max(T::lit(1e-30));
        let converged = (0..k).all(|j| {
            let r = gx.column(j) - x.column(j) * vals[j];
            r.norm() <= tol * scale
        });
        if converged {
            let mut vecs = x.columns(0, k).into_owned();
            apply_sign_rule_single(&mut vecs);
            return (vals[..k].to_vec(), vecs);
        }
    }
    let (vals, vecs) = sym_eigen_desc(g.clone());
    (vals[..k].to_vec(), vecs.columns(0, k).into_owned())
}

const LANCZOS_MAX_STEPS: usize = 120;

/// Largest eigenvalue of a symmetric matrix.
///
/// Lanczos with full reorthogonalization; the Ritz value is accepted once it
/// stops moving at working precision. Falls back to the dense eigenvalues.
pub fn leading_eigenvalue<T: Scalar>(g: &DMatrix<T>) -> T {
    let m = g.nrows();
    if m == 0 {
        return T::zero();
    }
    if m <= 64 {
        return sym_eigenvalues_desc(g.clone())[0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cd9a);
    let mut q = DVector::<T>::from_fn(m, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    q /= q.norm();
    let steps = LANCZOS_MAX_STEPS.min(m);
    let mut basis = DMatrix::<T>::zeros(m, steps);
    let mut alpha: Vec<T> = Vec::with_capacity(steps);
    let mut beta: Vec<T> = Vec::with_capacity(steps);
    let mut prev = T::zero();
    let tol = T::lit(16.0 * T::eps());
    for j in 0..steps {
        basis.set_column(j, &q);
        let mut w = g * &q;
        let a = q.dot(&w);
        alpha.push(a);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            let cols = basis.columns(0, j + 1);
            let coef = cols.transpose() * &w;
            w -= cols * coef;
        }
        let b = w.norm();
        let breakdown = b <= tol * alpha[0].abs().max(T::lit(1e-300));
        if !breakdown && (j + 1) % 4 != 0 && j + 1 < steps {
            beta.push(b);
            q = w / b;
            continue;
        }
        let ritz = {
            let t = DMatrix::<T>::from_fn(j + 1, j + 1, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    T::zero()
                }
            });
            sym_eigenvalues_desc(t)[0]
        };
        let scale = ritz.abs().max(T::lit(1e-300));
        if breakdown || (j >= 7 && (ritz - prev).abs() <= tol * scale) {
            return ritz;
        }
        prev = ritz;
        beta.push(b);
        q = w / b;
    }
    sym_eigenvalues_desc(g.clone())[0]
}

/// `sqrt((1 − c)/(1 + c))` = tan(θ/2) for `c = cos θ` clamped to [0, 1].
///
/// Cosines within 64 ulps of one are treated as exactly one so that
/// round-off in coincident directions is not amplified by the square root.
pub fn half_angle_tangent<T: Scalar>(c: T) -> T {
    let c = c.max(T::zero()).min(T::one());
    let gap = T::one() - c;
    if gap <= T::lit(64.0 * T::eps()) {
        return T::zero();
    }
    (gap / (T::one() + c)).sqrt()
}

/// Thin SVD (`u`: rows×k, `v`: cols×k, k = min(rows, cols)), sorted.
pub fn thin_svd<T: Scalar>(m: &DMatrix<T>) -> Svd<T> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Svd { u: DMatrix::zeros(r, 0), s: Vec::new(), v: DMatrix::zeros(c, 0) };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut u = u.select_columns(&order);
    let mut v = v.select_columns(&order);
    apply_sign_rule(&mut u, &mut v);
    Svd { u, s, v }
}

/// Full SVD with square orthogonal `u` (rows×rows) and `v` (cols×cols).
///
/// Columns beyond min(rows, cols) complete the thin factors to orthonormal
/// bases; `s` has length min(rows, cols).
pub fn full_svd<T: Scalar>(m: &DMatrix<T>) -> Svd<T> {
    let thin = thin_svd(m);
    let (r, c) = m.shape();
    let mut u = complete_basis(&thin.u, r);
    let mut v = complete_basis(&thin.v, c);
    let k = thin.s.len();
    // only the completion columns still need the sign convention
    for j in k..r {
        if leading_sign_negative(u.column(j).iter().copied()) {
            u.column_mut(j).neg_mut();
        }
    }
    for j in k..c {
        if leading_sign_negative(v.column(j).iter().copied()) {
            v.column_mut(j).neg_mut();
        }
    }
    Svd { u, s: thin.s, v }
}

/// Extends orthonormal columns `q` (dim×k) to a dim×dim orthogonal matrix.
///
/// Greedy Gram-Schmidt over the standard basis, taking at each step the
/// coordinate direction with the largest residual.
pub fn complete_basis<T: Scalar>(q: &DMatrix<T>, dim: usize) -> DMatrix<T> {
    assert_eq!(q.nrows(), dim, "basis rows must equal the ambient dimension");
    let k = q.ncols();
    let mut out = DMatrix::<T>::zeros(dim, dim);
    out.columns_mut(0, k).copy_from(q);
    for filled in k..dim {
        let basis = out.columns(0, filled).into_owned();
        let mut best: Option<(T, nalgebra::DVector<T>)> = None;
        for j in 0..dim {
            let mut e = nalgebra::DVector::<T>::zeros(dim);
            e[j] = T::one();
            for _ in 0..2 {
                let coef = basis.tr_mul(&e);
                e -= &basis * coef;
            }
            let nrm = e.norm();
            if best.as_ref().is_none_or(|(b, _)| nrm > *b) {
                best = Some((nrm, e));
            }
        }
        let (nrm, e) = best.expect("dim > filled");
        out.column_mut(filled).copy_from(&(e / nrm));
    }
    out
}

/// Leading `r` singular triplets of `y`.
///
/// The dominant subspace comes from the Gram matrix of the smaller side;
/// one projection step followed by an SVD of the small projected matrix
/// restores full working accuracy of the singular values and vectors.
pub fn truncated_svd<T: Scalar>(y: &DMatrix<T>, r: usize) -> Svd<T> {
    let (p, n) = y.shape();
    assert!(r <= p.min(n), "truncated rank exceeds matrix dimensions");
    if r == 0 {
        return Svd { u: DMatrix::zeros(p, 0), s: Vec::new(), v: DMatrix::zeros(n, 0) };
    }
    let (mut u, s, mut v);
    if p >= n {
        let g = y.transpose() * y;
        let (_, vecs) = top_eigenpairs(&g, r);
        let qw = (y * vecs).qr().q();
        let small = thin_svd(&(qw.transpose() * y));
        u = qw * small.u;
        s = small.s;
        v = small.v;
    } else {
        let g = y * y.transpose();
        let (_, vecs) = top_eigenpairs(&g, r);
        let qw = (y.transpose() * &vecs).qr().q();
        let small = thin_svd(&(y * &qw));
        u = small.u;
        s = small.s;
        v = qw * small.v;
    }
    apply_sign_rule(&mut u, &mut v);
    Svd { u, s, v }
}

/// Largest singular value.
pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return T::zero();
    }
    if r.min(c) <= 64 {
        return thin_svd(m).s[0];
    }
    // leading eigenvalue of the smaller Gram matrix
    let g = if r >= c { m.transpose() * m } else { m * m.transpose() };
    leading_eigenvalue(&g).max(T::zero()).sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`, or `‖a − b‖_F` when `b` is zero.
pub fn relative_frobenius<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let diff = (a - b).norm();
    let base = b.norm();
    if base > T::zero() {
        diff / base
    } else {
        diff
    }
}

/// Appends zero rows so `m` has `rows` rows.
pub fn pad_rows<T: Scalar>(m: &DMatrix<T>, rows: usize) -> DMatrix<T> {
    assert!(rows >= m.nrows(), "cannot pad to fewer rows");
    let mut out = DMatrix::<T>::zeros(rows, m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    out
}

/// `max |QᵀQ − I|`.
pub fn orthonormality_error<T: Scalar>(q: &DMatrix<T>) -> T {
    let k = q.ncols();
    let g = q.tr_mul(q) - DMatrix::<T>::identity(k, k);
    g.amax()
}

/// Scales column `j` of `m` by `d[j]` (right-multiplication by a diagonal).
pub fn scale_columns<T: Scalar>(m: &DMatrix<T>, d: &[T]) -> DMatrix<T> {
    let mut out = m.clone();
    for (j, &dj) in d.iter().enumerate() {
        out.column_mut(j).scale_mut(dj);
    }
    out
}

/// Scales row `i` of `m` by `d[i]` (left-multiplication by a diagonal).
pub fn scale_rows<T: Scalar>(m: &DMatrix<T>, d: &[T]) -> DMatrix<T> {
    let mut out = m.clone();
    for (i, &di) in d.iter().enumerate() {
        out.row_mut(i).scale_mut(di);
    }
    out
}
