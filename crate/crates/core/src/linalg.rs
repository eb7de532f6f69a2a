//! Dense linear algebra helpers.
//!
//! [`SmallMat`] covers the d x d matrices of the linearization (d <= 6) with
//! stack storage, and [`PsdFactor`] turns a (numerically) positive
//! semidefinite covariance into a sampling factor `S` with `S S^T ~= C`.

use std::ops::{Index, IndexMut, Mul};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::{llt, llt_pivoting};
use faer::{Mat, Par};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 6;

/// Square matrix of order `n <= MAX_DIM`, row-major, stack allocated.
#[derive(Clone, Copy, PartialEq)]
pub struct SmallMat {
    n: usize,
    a: [f64; MAX_DIM * MAX_DIM],
}

impl std::fmt::Debug for SmallMat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rows: Vec<&[f64]> = (0..self.n).map(|i| self.row(i)).collect();
        f.debug_struct("SmallMat").field("rows", &rows).finish()
    }
}

impl SmallMat {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1 && n <= MAX_DIM, "matrix order {n} out of range");
        Self {
            n,
            a: [0.0; MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds from a row-major slice of length `n * n`.
    pub fn from_row_slice(n: usize, s: &[f64]) -> Self {
        assert_eq!(s.len(), n * n);
        Self::from_fn(n, |i, j| s[i * n + j])
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * MAX_DIM..i * MAX_DIM + self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.n, |i, j| s * self[(i, j)])
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] + other[(i, j)])
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for &v in self.row(i) {
                s += v * v;
            }
        }
        s.sqrt()
    }

    fn norm_one(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        (0..self.n).all(|i| self.row(i).iter().all(|v| v.is_finite()))
    }

    /// Determinant by LU factorization with partial pivoting.
    pub fn det(&self) -> f64 {
        let n = self.n;
        let mut lu = *self;
        let mut det = 1.0;
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if lu[(i, k)].abs() > lu[(p, k)].abs() {
                    p = i;
                }
            }
            let pivot = lu[(p, k)];
            if pivot == 0.0 {
                return 0.0;
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                det = -det;
            }
            det *= pivot;
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        det
    }

    /// Matrix exponential by scaling and squaring of a truncated Taylor
    /// series (argument scaled to 1-norm <= 1/2, degree 14).
    pub fn exp(&self) -> Self {
        let norm = self.norm_one();
        let mut squarings = 0u32;
        if norm > 0.5 {
            squarings = (norm / 0.5).log2().ceil() as u32;
        }
        let a = self.scale(0.5f64.powi(squarings as i32));
        let mut term = Self::identity(self.n);
        let mut sum = term;
        for k in 1..=14 {
            term = (term * a).scale(1.0 / k as f64);
            sum = sum.add(&term);
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    /// Householder QR. Returns `(Q, diag(R))`.
    pub fn qr(&self) -> (Self, [f64; MAX_DIM]) {
        let n = self.n;
        let mut r = *self;
        let mut q = Self::identity(n);
        let mut v = [0.0; MAX_DIM];
        for k in 0..n.saturating_sub(1) {
            let mut alpha = 0.0;
            for i in k..n {
                alpha += r[(i, k)] * r[(i, k)];
            }
            alpha = alpha.sqrt();
            if alpha == 0.0 {
                continue;
            }
            if r[(k, k)] > 0.0 {
                alpha = -alpha;
            }
            let mut vnorm2 = 0.0;
            for i in 0..n {
                v[i] = if i < k { 0.0 } else { r[(i, k)] };
            }
            v[k] -= alpha;
            for &vi in &v[k..n] {
                vnorm2 += vi * vi;
            }
            if vnorm2 == 0.0 {
                continue;
            }
            // R <- (I - 2 v v^T / |v|^2) R
            for j in 0..n {
                let mut s = 0.0;
                for i in k..n {
                    s += v[i] * r[(i, j)];
                }
                let f = 2.0 * s / vnorm2;
                for i in k..n {
                    r[(i, j)] -= f * v[i];
                }
            }
            // Q <- Q (I - 2 v v^T / |v|^2)
            for i in 0..n {
                let mut s = 0.0;
                for j in k..n {
                    s += q[(i, j)] * v[j];
                }
                let f = 2.0 * s / vnorm2;
                for j in k..n {
                    q[(i, j)] -= f * v[j];
                }
            }
        }
        let mut diag = [0.0; MAX_DIM];
        for (i, d) in diag.iter_mut().enumerate().take(n) {
            *d = r[(i, i)];
        }
        (q, diag)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
    /// in descending order.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = *self;
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }
}

impl Index<(usize, usize)> for SmallMat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * MAX_DIM + j]
    }
}

impl IndexMut<(usize, usize)> for SmallMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * MAX_DIM + j]
    }
}

impl Mul for SmallMat {
    type Output = SmallMat;
    fn mul(self, rhs: SmallMat) -> SmallMat {
        let n = self.n;
        debug_assert_eq!(n, rhs.n);
        let mut out = SmallMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik != 0.0 {
                    for j in 0..n {
                        out[(i, j)] += aik * rhs[(k, j)];
                    }
                }
            }
        }
        out
    }
}

/// Which route produced a [`PsdFactor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorRoute {
    /// Plain Cholesky of `C + jitter * I`.
    Cholesky,
    /// Rank-revealing pivoted Cholesky of `C`.
    Pivoted,
    /// Symmetric eigendecomposition with negative eigenvalues clipped to 0.
    ClippedEigen,
}

/// Counters describing how covariance matrices were factorized during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct FactorStats {
    pub cholesky: u64,
    pub pivoted: u64,
    pub clipped_eigen: u64,
    /// Largest magnitude of a negative eigenvalue removed by clipping.
    pub max_clipped: f64,
}

impl FactorStats {
    pub fn record(&mut self, route: FactorRoute, clipped: f64) {
        match route {
            FactorRoute::Cholesky => self.cholesky += 1,
            FactorRoute::Pivoted => self.pivoted += 1,
            FactorRoute::ClippedEigen => self.clipped_eigen += 1,
        }
        self.max_clipped = self.max_clipped.max(clipped);
    }

    pub fn merge(&mut self, other: &FactorStats) {
        self.cholesky += other.cholesky;
        self.pivoted += other.pivoted;
        self.clipped_eigen += other.clipped_eigen;
        self.max_clipped = self.max_clipped.max(other.max_clipped);
    }
}

/// Sampling factor `S` (N x rank) of a covariance, `S S^T ~= C`.
///
/// Stored column-major: column `k` of `S` is `cols[k*n..(k+1)*n]`.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    n: usize,
    rank: usize,
    cols: Vec<f64>,
    /// Rows of column `k` that may be nonzero start at `first_row[k]`.
    first_row: Vec<usize>,
    pub route: FactorRoute,
    /// Magnitude of the most negative eigenvalue removed (eigen route only).
    pub clipped: f64,
}

impl PsdFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `out = S z`, using the first `rank` entries of `z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        debug_assert!(z.len() >= self.rank && out.len() == self.n);
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.rank {
            let zk = z[k];
            if zk == 0.0 {
                continue;
            }
            let start = self.first_row[k];
            let col = &self.cols[k * self.n + start..(k + 1) * self.n];
            for (o, &c) in out[start..].iter_mut().zip(col) {
                *o += c * zk;
            }
        }
    }

    /// Dense `S S^T`, for diagnostics and tests.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut c = vec![0.0; n * n];
        for k in 0..self.rank {
            let col = &self.cols[k * n..(k + 1) * n];
            for i in 0..n {
                if col[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    c[i * n + j] += col[i] * col[j];
                }
            }
        }
        c
    }
}

/// Factorizes a symmetric positive semidefinite matrix given row-major.
/// Only the upper triangle of `c` is read.
///
/// Tries Cholesky of `C + jitter I`; on failure a rank-revealing pivoted
/// Cholesky of `C`; if that leaves a residual larger than the tolerance, a
/// clipped eigendecomposition. Fails when clipping would have to remove an
/// eigenvalue below `-1e-8 * max|C_ii|`.
pub fn factorize_psd(c: &[f64], n: usize, jitter: f64) -> Result<PsdFactor> {
    let mut f = Factorizer::new();
    f.factorize(c, n, jitter)?;
    Ok(f.factor)
}

/// Reusable workspace for repeated [`factorize_psd`] calls of the same size.
pub struct Factorizer {
    a: Mat<f64>,
    mem: Option<MemBuffer>,
    factor: PsdFactor,
}

impl Default for Factorizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Factorizer {
    pub fn new() -> Self {
        Self {
            a: Mat::zeros(0, 0),
            mem: None,
            factor: PsdFactor {
                n: 0,
                rank: 0,
                cols: Vec::new(),
                first_row: Vec::new(),
                route: FactorRoute::Cholesky,
                clipped: 0.0,
            },
        }
    }

    /// Factor of the last successful [`Factorizer::factorize`] call.
    pub fn factor(&self) -> &PsdFactor {
        &self.factor
    }

    /// Same contract as [`factorize_psd`].
    pub fn factorize(&mut self, c: &[f64], n: usize, jitter: f64) -> Result<&PsdFactor> {
        assert_eq!(c.len(), n * n);
        if n == 0 {
            self.factor = Factorizer::new().factor;
            return Ok(&self.factor);
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite covariance entry".into()));
        }
        let scale = (0..n).map(|i| c[i * n + i].abs()).fold(0.0, f64::max);

        if self.a.nrows() != n {
            self.a = Mat::zeros(n, n);
            let params = Default::default();
            self.mem = Some(MemBuffer::new(
                llt::factor::cholesky_in_place_scratch::<f64>(n, Par::Seq, params),
            ));
        }
        for j in 0..n {
            let col = self.a.col_as_slice_mut(j);
            col[j..].copy_from_slice(&c[j * n + j..(j + 1) * n]);
            col[j] += jitter;
        }
        let params = Default::default();
        let ok = llt::factor::cholesky_in_place(
            self.a.as_mut(),
            Default::default(),
            Par::Seq,
            MemStack::new(self.mem.as_mut().expect("scratch allocated")),
            params,
        )
        .is_ok();
        if ok {
            let f = &mut self.factor;
            f.n = n;
            f.rank = n;
            f.route = FactorRoute::Cholesky;
            f.clipped = 0.0;
            f.cols.resize(n * n, 0.0);
            f.first_row.clear();
            f.first_row.extend(0..n);
            for k in 0..n {
                f.cols[k * n..k * n + k].iter_mut().for_each(|v| *v = 0.0);
                f.cols[k * n + k..(k + 1) * n].copy_from_slice(&self.a.col_as_slice(k)[k..]);
            }
            return Ok(&self.factor);
        }

        let full: Vec<f64> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i <= j {
                    c[idx]
                } else {
                    c[j * n + i]
                }
            })
            .collect();
        let c = &full[..];
        let mut a = Mat::<f64>::from_fn(n, n, |i, j| c[i * n + j]);
        if let Some((rank, perm)) = pivoted_in_place(&mut a) {
            let f = from_lower(&a, n, rank, Some(&perm), FactorRoute::Pivoted, 0.0);
            let resid = max_residual(c, &f);
            if resid <= 1e-9 * scale.max(f64::MIN_POSITIVE) {
                self.factor = f;
                return Ok(&self.factor);
            }
        }

        self.factor = clipped_eigen(c, n, scale)?;
        Ok(&self.factor)
    }
}

fn pivoted_in_place(a: &mut Mat<f64>) -> Option<(usize, Vec<usize>)> {
    let n = a.nrows();
    let params = Default::default();
    let mut perm = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let mut mem = MemBuffer::new(
        llt_pivoting::factor::cholesky_in_place_scratch::<usize, f64>(n, Par::Seq, params),
    );
    let res = llt_pivoting::factor::cholesky_in_place(
        a.as_mut(),
        &mut perm,
        &mut perm_inv,
        Par::Seq,
        MemStack::new(&mut mem),
        params,
    );
    match res {
        Ok((info, _)) => Some((info.rank, perm)),
        Err(_) => None,
    }
}

/// Extracts the lower trapezoid `L[:, :rank]` (rows mapped back through
/// `perm` when given: factorized row `i` is original row `perm[i]`).
fn from_lower(
    a: &Mat<f64>,
    n: usize,
    rank: usize,
    perm: Option<&[usize]>,
    route: FactorRoute,
    clipped: f64,
) -> PsdFactor {
    let mut cols = vec![0.0; n * rank];
    let mut first_row = vec![0usize; rank];
    for k in 0..rank {
        for i in k..n {
            let v = a[(i, k)];
            let row = perm.map_or(i, |p| p[i]);
            cols[k * n + row] = v;
        }
        first_row[k] = if perm.is_some() { 0 } else { k };
    }
    PsdFactor {
        n,
        rank,
        cols,
        first_row,
        route,
        clipped,
    }
}

fn max_residual(c: &[f64], f: &PsdFactor) -> f64 {
    let r = f.reconstruct();
    c.iter()
        .zip(&r)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn clipped_eigen(c: &[f64], n: usize, scale: f64) -> Result<PsdFactor> {
    let a = Mat::<f64>::from_fn(n, n, |i, j| c[i * n + j]);
    let evd = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let s = evd.S();
    let u = evd.U();
    let mut min_ev = f64::INFINITY;
    for k in 0..n {
        min_ev = min_ev.min(s[k]);
    }
    if min_ev < -1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Factorization {
            min_eigenvalue: min_ev,
        });
    }
    let clipped = if min_ev < 0.0 { -min_ev } else { 0.0 };
    if clipped > 0.0 {
        log::debug!("clipped negative eigenvalue of magnitude {clipped:e} (n = {n})");
    }
    let mut cols = Vec::with_capacity(n * n);
    let mut rank = 0;
    for k in 0..n {
        let lam = s[k];
        if lam <= 0.0 {
            continue;
        }
        let r = lam.sqrt();
        for i in 0..n {
            cols.push(u[(i, k)] * r);
        }
        rank += 1;
    }
    Ok(PsdFactor {
        n,
        rank,
        cols,
        first_row: vec![0; rank],
        route: FactorRoute::ClippedEigen,
        clipped,
    })
}
