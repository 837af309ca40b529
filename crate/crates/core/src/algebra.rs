//! Pointwise linear algebra on `2n × 2n` real and `n × n` Hermitian blocks.
//!
//! Real dimension never exceeds 6, so small matrices live on the stack in a
//! fixed `6 × 6` array; only the leading `d × d` block is meaningful.

use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAXD: usize = 6;

pub type Mat = [[f64; MAXD]; MAXD];
pub type CVec = [Complex64; MAXD];

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn zero_mat() -> Mat {
    [[0.0; MAXD]; MAXD]
}

pub fn identity(d: usize) -> Mat {
    let mut m = zero_mat();
    for (i, row) in m.iter_mut().enumerate().take(d) {
        row[i] = 1.0;
    }
    m
}

/// Matrix of `ω = Σ dx_α∧dy_α` in interleaved coordinates.
pub fn omega_matrix(d: usize) -> Mat {
    let mut m = zero_mat();
    for a in 0..d / 2 {
        m[2 * a][2 * a + 1] = 1.0;
        m[2 * a + 1][2 * a] = -1.0;
    }
    m
}

/// Standard structure: `∂x_α ↦ ∂y_α`, `∂y_α ↦ −∂x_α` (columns are images).
pub fn j0_matrix(d: usize) -> Mat {
    let mut m = zero_mat();
    for a in 0..d / 2 {
        m[2 * a + 1][2 * a] = 1.0;
        m[2 * a][2 * a + 1] = -1.0;
    }
    m
}

pub fn matmul(a: &Mat, b: &Mat, d: usize) -> Mat {
    let mut c = zero_mat();
    for i in 0..d {
        for k in 0..d {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

pub fn transpose(a: &Mat, d: usize) -> Mat {
    let mut t = zero_mat();
    for i in 0..d {
        for j in 0..d {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn mat_sub(a: &Mat, b: &Mat, d: usize) -> Mat {
    let mut c = zero_mat();
    for i in 0..d {
        for j in 0..d {
            c[i][j] = a[i][j] - b[i][j];
        }
    }
    c
}

pub fn max_abs(a: &Mat, d: usize) -> f64 {
    let mut m: f64 = 0.0;
    for row in a.iter().take(d) {
        for v in row.iter().take(d) {
            m = m.max(v.abs());
        }
    }
    m
}

pub fn mat_vec(a: &Mat, v: &[f64], d: usize) -> [f64; MAXD] {
    let mut out = [0.0; MAXD];
    for i in 0..d {
        out[i] = (0..d).map(|k| a[i][k] * v[k]).sum();
    }
    out
}

pub fn mat_cvec(a: &Mat, v: &CVec, d: usize) -> CVec {
    let mut out = [Complex64::zero(); MAXD];
    for i in 0..d {
        for k in 0..d {
            out[i] += v[k] * a[i][k];
        }
    }
    out
}

/// Bilinear (not sesquilinear) pairing `uᵀ B v`.
pub fn bilinear(u: &CVec, b: &Mat, v: &CVec, d: usize) -> Complex64 {
    let mut s = Complex64::zero();
    for i in 0..d {
        if u[i] == Complex64::zero() {
            continue;
        }
        let mut row = Complex64::zero();
        for j in 0..d {
            row += v[j] * b[i][j];
        }
        s += u[i] * row;
    }
    s
}

pub fn to_dmatrix(a: &Mat, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| a[i][j])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Mat {
    let mut a = zero_mat();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            a[i][j] = m[(i, j)];
        }
    }
    a
}

/// Smallest eigenvalue of the symmetric part of a real block.
pub fn symmetric_min_eigenvalue(a: &Mat, d: usize) -> f64 {
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (a[i][j] + a[j][i]));
    m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn pair_count(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Increasing index pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn pairs(d: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(pair_count(d));
    for i in 0..d {
        for j in i + 1..d {
            v.push((i, j));
        }
    }
    v
}

/// Position of `(i, j)`, `i < j`, in [`pairs`].
pub fn pair_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < d);
    i * d - i * (i + 1) / 2 + (j - i - 1)
}

pub fn perm_sign(p: &[usize]) -> f64 {
    let mut sign = 1.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p[i] > p[j] {
                sign = -sign;
            }
        }
    }
    sign
}

/// Expansion of the top coefficient of a wedge product of `n` two-forms.
///
/// For two-forms `b_k = Σ_{i<j} b_k[i][j] e^i∧e^j` the coefficient of
/// `e^0∧…∧e^{2n-1}` in `b_1∧…∧b_n` is a signed sum over ordered sequences of
/// disjoint increasing pairs.
#[derive(Clone, Debug)]
pub struct TopExpansion {
    n: usize,
    terms: Vec<(f64, [(u8, u8); 3])>,
}

impl TopExpansion {
    pub fn new(n: usize) -> Self {
        assert!((1..=3).contains(&n), "top expansion supports n ≤ 3");
        let mut terms = Vec::new();
        let mut slots = [(0u8, 0u8); 3];
        let mut used = vec![false; 2 * n];
        fn rec(
            k: usize,
            n: usize,
            used: &mut Vec<bool>,
            slots: &mut [(u8, u8); 3],
            terms: &mut Vec<(f64, [(u8, u8); 3])>,
        ) {
            if k == n {
                let perm: Vec<usize> = slots[..n]
                    .iter()
                    .flat_map(|&(i, j)| [i as usize, j as usize])
                    .collect();
                terms.push((perm_sign(&perm), *slots));
                return;
            }
            let d = 2 * n;
            for i in 0..d {
                if used[i] {
                    continue;
                }
                for j in i + 1..d {
                    if used[j] {
                        continue;
                    }
                    used[i] = true;
                    used[j] = true;
                    slots[k] = (i as u8, j as u8);
                    rec(k + 1, n, used, slots, terms);
                    used[i] = false;
                    used[j] = false;
                }
            }
        }
        rec(0, n, &mut used, &mut slots, &mut terms);
        Self { n, terms }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Top coefficient of `forms[0]∧…∧forms[n-1]`; each form is indexed as
    /// `form(i, j)` with `i < j`.
    pub fn eval<T, F>(&self, forms: &[F]) -> T
    where
        T: Copy + Zero + Add<Output = T> + Mul<Output = T> + Mul<f64, Output = T>,
        F: Fn(usize, usize) -> T,
    {
        debug_assert_eq!(forms.len(), self.n);
        let mut acc = T::zero();
        for (sign, slots) in &self.terms {
            let mut p = forms[0](slots[0].0 as usize, slots[0].1 as usize);
            for k in 1..self.n {
                p = p * forms[k](slots[k].0 as usize, slots[k].1 as usize);
            }
            acc = acc + p * *sign;
        }
        acc
    }

    /// Top coefficient of a product of real antisymmetric blocks.
    pub fn eval_real(&self, forms: &[&Mat]) -> f64 {
        let mut acc = 0.0;
        for (sign, slots) in &self.terms {
            let mut p = *sign;
            for k in 0..self.n {
                p *= forms[k][slots[k].0 as usize][slots[k].1 as usize];
            }
            acc += p;
        }
        acc
    }

    /// Gradient of `B ↦ top(W,…,W,B)` with respect to each pair component of
    /// `B`, written into `out` in [`pairs`] order.
    pub fn last_slot_gradient(&self, w: &Mat, out: &mut [f64]) {
        let d = 2 * self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (sign, slots) in &self.terms {
            let mut p = *sign;
            for s in &slots[..self.n - 1] {
                p *= w[s.0 as usize][s.1 as usize];
            }
            let last = slots[self.n - 1];
            out[pair_index(d, last.0 as usize, last.1 as usize)] += p;
        }
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Row-major `n × n` complex block.
pub fn herm_get(m: &[Complex64], n: usize, i: usize, j: usize) -> Complex64 {
    m[i * n + j]
}

/// Largest deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &[Complex64], n: usize) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            d = d.max((m[i * n + j] - m[j * n + i].conj()).norm());
        }
    }
    d
}

/// Eigenvalues of a Hermitian block in ascending order.
pub fn hermitian_eigenvalues(m: &[Complex64], n: usize) -> Vec<f64> {
    match n {
        1 => vec![m[0].re],
        2 => {
            let a = m[0].re;
            let c = m[3].re;
            let b = 0.5 * (m[1] + m[2].conj());
            let mean = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b.norm_sqr()).sqrt();
            vec![mean - rad, mean + rad]
        }
        _ => {
            let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| {
                0.5 * (m[i * n + j] + m[j * n + i].conj())
            });
            let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().cloned().collect();
            ev.sort_by(f64::total_cmp);
            ev
        }
    }
}

pub fn hermitian_min_eigenvalue(m: &[Complex64], n: usize) -> f64 {
    hermitian_eigenvalues(m, n)[0]
}

/// Eigen-decomposition `M = U diag(λ) U*`; eigenvector `k` is column `k` of
/// the returned row-major `U`, eigenvalues ascending.
pub fn hermitian_eigen(m: &[Complex64], n: usize) -> (Vec<f64>, Vec<Complex64>) {
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i * n + j] + m[j * n + i].conj()));
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut u = vec![Complex64::zero(); n * n];
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            u[i * n + col] = eig.eigenvectors[(i, k)];
        }
    }
    (vals, u)
}

/// Cholesky test for positive definiteness of a Hermitian block.
pub fn hermitian_positive_definite(m: &[Complex64], n: usize) -> bool {
    let mut l = [Complex64::zero(); MAXD * MAXD];
    for j in 0..n {
        let mut diag = m[j * n + j].re;
        for k in 0..j {
            diag -= l[j * MAXD + k].norm_sqr();
        }
        if !(diag > 0.0) {
            return false;
        }
        let ljj = diag.sqrt();
        l[j * MAXD + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * MAXD + k] * l[j * MAXD + k].conj();
            }
            l[i * MAXD + j] = s / ljj;
        }
    }
    true
}

/// First `s > 0` at which `M0 + sM1` becomes singular, for positive definite
/// `M0`; `None` if the pencil stays positive for all `s ≥ 0`.
pub fn pencil_first_singular(m0: &[Complex64], m1: &[Complex64], n: usize) -> Option<f64> {
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m0[i * n + j] + m0[j * n + i].conj()));
    let b = nalgebra::DMatrix::from_fn(n, n, |i, j| -0.5 * (m1[i * n + j] + m1[j * n + i].conj()));
    let chol = a.cholesky()?;
    let linv = chol.l().try_inverse()?;
    let k = &linv * b * linv.adjoint();
    let flat: Vec<Complex64> = (0..n * n).map(|q| k[(q / n, q % n)]).collect();
    let top = *hermitian_eigenvalues(&flat, n).last()?;
    (top > 0.0).then(|| 1.0 / top)
}

/// Pointwise Hermitian pencils `M0(p) + s·M1(p)` sharing one parameter `s`.
///
/// The grid-minimum of `λ_min` is concave in `s`, so the set of `s ≥ 0` at
/// which every pencil is positive definite is an interval.
#[derive(Clone, Debug, Default)]
pub struct AffineHermitianFamily {
    n: usize,
    m0: Vec<Complex64>,
    m1: Vec<Complex64>,
}

impl AffineHermitianFamily {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            m0: Vec::new(),
            m1: Vec::new(),
        }
    }

    pub fn push(&mut self, m0: &[Complex64], m1: &[Complex64]) {
        self.m0.extend_from_slice(&m0[..self.n * self.n]);
        self.m1.extend_from_slice(&m1[..self.n * self.n]);
    }

    pub fn extend(&mut self, other: AffineHermitianFamily) {
        assert_eq!(self.n, other.n);
        self.m0.extend(other.m0);
        self.m1.extend(other.m1);
    }

    pub fn len(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.m0.len() / (self.n * self.n)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn at(&self, p: usize, s: f64, buf: &mut [Complex64]) {
        let nn = self.n * self.n;
        for k in 0..nn {
            buf[k] = self.m0[p * nn + k] + self.m1[p * nn + k] * s;
        }
    }

    /// Minimum eigenvalue over all pencils at `s`, and where it occurs.
    pub fn margin(&self, s: f64) -> (f64, usize) {
        let nn = self.n * self.n;
        (0..self.len())
            .into_par_iter()
            .map(|p| {
                let mut buf = [Complex64::zero(); MAXD * MAXD];
                self.at(p, s, &mut buf[..nn]);
                (hermitian_min_eigenvalue(&buf[..nn], self.n), p)
            })
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            )
    }

    pub fn positive_at(&self, s: f64) -> bool {
        let nn = self.n * self.n;
        (0..self.len()).into_par_iter().all(|p| {
            let mut buf = [Complex64::zero(); MAXD * MAXD];
            self.at(p, s, &mut buf[..nn]);
            hermitian_positive_definite(&buf[..nn], self.n)
        })
    }

    /// `sup{s > 0 : M0 + sM1 > 0 everywhere}` by bisection to absolute
    /// tolerance `tol`; returns the last positive bracket end.
    pub fn amplitude(&self, tol: f64, s_max: f64) -> Result<f64> {
        if !self.positive_at(0.0) {
            return Err(Error::Argument(
                "pencil family is not positive definite at s = 0".into(),
            ));
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.positive_at(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > s_max {
                if self.positive_at(s_max) {
                    return Err(Error::UnboundedAmplitude { s_max });
                }
                hi = s_max;
                break;
            }
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.positive_at(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}
