//! Linearization of `F`, Newton iteration and the continuity method.
//!
//! On a grid with an even resolution along some axis the centered difference
//! annihilates every function that only depends on index parities, so the
//! discrete kernel of the linearization is spanned by those parity modes
//! rather than by the constants alone. Updates live in the complement of
//! that kernel, called the gauge subspace here.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::algebra::{factorial, pair_count, pairs, TopExpansion};
use crate::cy_operator::{deformed_block, f_top, j_dphi, taming_margin, Potential, TAMING_THRESHOLD};
use crate::error::{Error, Result};
use crate::forms::integrate;
use crate::grid::GridChart;
use crate::structure::CompatibleStructure;

pub const LINEAR_TOL: f64 = 1e-10;
pub const TARGET_MASS_TOL: f64 = 1e-10;
pub const MIN_T_STEP: f64 = 1e-4;
const MIN_DAMPING: f64 = 1.0 / 1024.0;
const CHUNK: usize = 4096;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum())
        .collect();
    parts.iter().sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sup(a: &[f64]) -> f64 {
    a.par_iter().fold(|| 0.0f64, |m, v| m.max(v.abs())).reduce(|| 0.0, f64::max)
}

fn axpy_into(y: &mut [f64], c: f64, x: &[f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(a, b)| *a += c * b);
}

/// Number of parity classes: a factor 2 for every axis of even resolution.
pub fn parity_classes(chart: &GridChart) -> usize {
    1 << chart.resolution().iter().filter(|&&n| n % 2 == 0).count()
}

fn parity_class(chart: &GridChart, p: usize) -> usize {
    let mut class = 0;
    let mut bit = 0;
    for (a, &n) in chart.resolution().iter().enumerate() {
        if n % 2 == 0 {
            class |= ((p / chart.stride(a)) % n & 1) << bit;
            bit += 1;
        }
    }
    class
}

/// Removes the mean of every parity class, i.e. the orthogonal projection
/// onto the gauge subspace. On an odd grid this is the zero-mean projection.
pub fn gauge_project(chart: &GridChart, u: &[f64]) -> Vec<f64> {
    let k = parity_classes(chart);
    let parts: Vec<Vec<f64>> = u
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, vals)| {
            let mut s = vec![0.0; k];
            for (i, v) in vals.iter().enumerate() {
                s[parity_class(chart, c * CHUNK + i)] += v;
            }
            s
        })
        .collect();
    let mut mean = vec![0.0; k];
    for s in &parts {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let per_class = (chart.len() / k) as f64;
    mean.iter_mut().for_each(|m| *m /= per_class);
    u.par_iter()
        .enumerate()
        .map(|(p, v)| v - mean[parity_class(chart, p)])
        .collect()
}

/// Diagonal Fourier inverse of the flat-structure linearization at `φ = 0`.
pub struct SpectralPreconditioner {
    dims: Vec<usize>,
    strides: Vec<usize>,
    inv_symbol: Vec<f64>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    backward: Vec<Arc<dyn Fft<f64>>>,
}

/// Symbol `Σ_a sin²(2πk_a/N_a)/h_a²` of `−Σ_a D_a D_a` in FFT order.
pub fn laplacian_symbol(chart: &GridChart) -> Vec<f64> {
    let d = chart.dim();
    (0..chart.len())
        .into_par_iter()
        .map(|p| {
            let c = chart.coords(p);
            (0..d)
                .map(|a| {
                    let n = chart.resolution()[a];
                    let s = (2.0 * std::f64::consts::PI * c[a] as f64 / n as f64).sin();
                    s * s / (chart.spacing(a) * chart.spacing(a))
                })
                .sum()
        })
        .collect()
}

fn parity_mode(chart: &GridChart, p: usize) -> bool {
    chart
        .coords(p)
        .iter()
        .zip(chart.resolution())
        .all(|(&k, &n)| k == 0 || 2 * k == n)
}

/// Smallest symbol value outside the parity modes.
pub fn laplacian_gap(chart: &GridChart) -> f64 {
    laplacian_symbol(chart)
        .iter()
        .enumerate()
        .filter(|(p, _)| !parity_mode(chart, *p))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min)
}

impl SpectralPreconditioner {
    pub fn new(chart: &GridChart) -> Self {
        let dims = chart.resolution().to_vec();
        let strides = (0..dims.len()).map(|a| chart.stride(a)).collect();
        let inv_symbol = laplacian_symbol(chart)
            .into_iter()
            .enumerate()
            .map(|(p, v)| if parity_mode(chart, p) { 0.0 } else { 1.0 / v })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let backward = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            dims,
            strides,
            inv_symbol,
            forward,
            backward,
        }
    }

    fn transform(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        for (a, plan) in plans.iter().enumerate() {
            let (n, s) = (self.dims[a], self.strides[a]);
            buf.par_chunks_mut(n * s).for_each(|block| {
                let mut line = vec![Complex64::new(0.0, 0.0); n];
                for k in 0..s {
                    for j in 0..n {
                        line[j] = block[k + j * s];
                    }
                    plan.process(&mut line);
                    for j in 0..n {
                        block[k + j * s] = line[j];
                    }
                }
            });
        }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = r.par_iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf.par_iter_mut()
            .zip(self.inv_symbol.par_iter())
            .for_each(|(b, s)| *b *= *s);
        self.transform(&mut buf, &self.backward);
        let scale = 1.0 / r.len() as f64;
        buf.par_iter().map(|b| b.re * scale).collect()
    }
}

// pair components of d(a) at p, without the background form
fn d_pairs(chart: &GridChart, a: &[Vec<f64>], p: usize, prs: &[(usize, usize)], out: &mut [f64]) {
    for (q, &(i, k)) in prs.iter().enumerate() {
        let di = (a[k][chart.shift(p, i, 1)] - a[k][chart.shift(p, i, -1)]) * 0.5 / chart.spacing(i);
        let dk = (a[i][chart.shift(p, k, 1)] - a[i][chart.shift(p, k, -1)]) * 0.5 / chart.spacing(k);
        out[q] = di - dk;
    }
}

/// `L(φ)u = n ω(φ)^{n-1} ∧ dJdu / ω^n`, frozen at one base potential.
pub struct Linearization<'a> {
    s: &'a CompatibleStructure,
    coeff: Vec<f64>,
    margin: f64,
}

impl<'a> Linearization<'a> {
    /// Fails with an ellipticity error unless `ω(φ)` tames `J`.
    pub fn new(s: &'a CompatibleStructure, phi: &Potential) -> Result<Self> {
        let margin = taming_margin(s, phi)?.value;
        if !(margin > TAMING_THRESHOLD) {
            return Err(Error::EllipticityLoss {
                margin,
                threshold: TAMING_THRESHOLD,
            });
        }
        Ok(Self::unchecked(s, phi.values(), margin))
    }

    fn unchecked(s: &'a CompatibleStructure, phi: &[f64], margin: f64) -> Self {
        let chart = s.chart();
        let n = s.half_dim();
        let np = pair_count(s.dim());
        let top = TopExpansion::new(n);
        let scale = n as f64 / factorial(n);
        let a = j_dphi(s, phi);
        let coeff = (0..chart.len())
            .into_par_iter()
            .flat_map_iter(|p| {
                let w = deformed_block(chart, &a, p);
                let mut g = vec![0.0; np];
                top.last_slot_gradient(&w, &mut g);
                g.into_iter().map(move |v| v * scale)
            })
            .collect();
        Self { s, coeff, margin }
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let chart = self.s.chart();
        let prs = pairs(self.s.dim());
        let np = prs.len();
        let a = j_dphi(self.s, u);
        (0..chart.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; np],
                |b, p| {
                    d_pairs(chart, &a, p, &prs, b);
                    b.iter().zip(&self.coeff[p * np..(p + 1) * np]).map(|(x, c)| x * c).sum()
                },
            )
            .collect()
    }

    /// Transpose of [`Linearization::apply`] for the Euclidean grid product.
    pub fn apply_adjoint(&self, v: &[f64]) -> Vec<f64> {
        let chart = self.s.chart();
        let d = self.s.dim();
        let prs = pairs(d);
        let np = prs.len();
        let len = chart.len();
        let mut e = vec![vec![0.0; len]; d];
        for (q, &(i, k)) in prs.iter().enumerate() {
            let c: Vec<f64> = (0..len).into_par_iter().map(|p| self.coeff[p * np + q] * v[p]).collect();
            axpy_into(&mut e[k], -1.0, &chart.centered_diff(&c, i));
            axpy_into(&mut e[i], 1.0, &chart.centered_diff(&c, k));
        }
        let lat = self.s.lattice();
        let jv = self.s.j_values();
        let dd = d * d;
        let mut out = vec![0.0; len];
        for l in 0..d {
            let g: Vec<f64> = (0..len)
                .into_par_iter()
                .map(|p| {
                    let r = lat.reduce(p);
                    (0..d).map(|k| jv[r * dd + l * d + k] * e[k][p]).sum()
                })
                .collect();
            axpy_into(&mut out, -1.0, &chart.centered_diff(&g, l));
        }
        out
    }
}

pub fn linearize_apply(s: &CompatibleStructure, phi: &Potential, u: &Potential) -> Result<Vec<f64>> {
    Ok(Linearization::new(s, phi)?.apply(u.values()))
}

#[derive(Clone, Debug)]
pub struct LinearSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

/// Restarted GMRES with right preconditioning.
pub fn gmres<A, M>(op: A, precond: M, b: &[f64], tol: f64, restart: usize, max_iter: usize) -> LinearSolve
where
    A: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let len = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; len];
    if bnorm == 0.0 {
        return LinearSolve {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let mut total = 0;
    loop {
        let ax = op(&x);
        let r: Vec<f64> = b.par_iter().zip(ax.par_iter()).map(|(u, v)| u - v).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= tol || total >= max_iter {
            return LinearSolve {
                x,
                iterations: total,
                residual: rel,
                converged: rel <= tol,
            };
        }
        let mut v: Vec<Vec<f64>> = vec![r.par_iter().map(|u| u / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        for j in 0..restart {
            let mut w = op(&precond(&v[j]));
            total += 1;
            for i in 0..=j {
                h[i][j] = dot(&w, &v[i]);
                axpy_into(&mut w, -h[i][j], &v[i]);
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let rho = h[j][j].hypot(h[j + 1][j]);
            if rho == 0.0 {
                break;
            }
            cs[j] = h[j][j] / rho;
            sn[j] = h[j + 1][j] / rho;
            h[j][j] = rho;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k = j + 1;
            if hn == 0.0 || g[j + 1].abs() / bnorm <= 0.5 * tol || total >= max_iter {
                break;
            }
            v.push(w.par_iter().map(|u| u / hn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for l in i + 1..k {
                acc -= h[i][l] * y[l];
            }
            y[i] = acc / h[i][i];
        }
        let mut u = vec![0.0; len];
        for (i, yi) in y.iter().enumerate() {
            axpy_into(&mut u, *yi, &v[i]);
        }
        axpy_into(&mut x, 1.0, &precond(&u));
        if k == 0 {
            total = max_iter;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveFailure {
    /// Every damped step left `A₊`.
    BoundaryHit { margin: f64 },
    LinearStagnation { residual: f64 },
    LineSearch { residual: f64 },
    MaxIterations { residual: f64 },
    /// The gauge part converged but `‖F(φ) − f‖∞` did not: the target's
    /// parity-class means are out of reach of the discrete operator.
    Incompatible { residual: f64 },
    ContinuationStalled { t: f64, cause: Box<SolveFailure> },
}

impl fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveFailure::BoundaryHit { margin } => {
                write!(f, "boundary hit: damped steps reach taming margin {margin:.3e}")
            }
            SolveFailure::LinearStagnation { residual } => {
                write!(f, "linear solve stagnated at relative residual {residual:.3e}")
            }
            SolveFailure::LineSearch { residual } => {
                write!(f, "line search failed to reduce residual {residual:.3e}")
            }
            SolveFailure::MaxIterations { residual } => {
                write!(f, "iteration cap reached with residual {residual:.3e}")
            }
            SolveFailure::Incompatible { residual } => {
                write!(f, "target not attainable on this grid: gauge part converged, residual {residual:.3e} remains")
            }
            SolveFailure::ContinuationStalled { t, cause } => {
                write!(f, "continuation stalled at t = {t}: {cause}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonStep {
    pub iter: usize,
    /// `‖F(φ) − f‖∞` before the step.
    pub residual: f64,
    /// The same for the gauge projection of `F(φ) − f`.
    pub gauge_residual: f64,
    pub margin: f64,
    pub step: f64,
    pub linear_iterations: usize,
    pub linear_residual: f64,
    /// `∫(f − F(φ))`, zero up to rounding by conservation.
    pub rhs_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub t: f64,
    pub dt: f64,
    pub accepted: bool,
    pub newton_iterations: usize,
    pub residual: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iters: usize,
    pub residual: f64,
    pub margin: f64,
    pub t_reached: f64,
    pub failure: Option<SolveFailure>,
    pub trace: Vec<NewtonStep>,
    pub path: Vec<ContinuationStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub linear_tol: f64,
    pub restart: usize,
    pub max_linear_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 25,
            linear_tol: LINEAR_TOL,
            restart: 40,
            max_linear_iter: 800,
        }
    }
}

impl SolveOptions {
    /// Coarse six-dimensional grids get a looser residual target.
    pub fn for_half_dim(n: usize) -> Self {
        Self {
            tol: if n >= 3 { 1e-6 } else { 1e-8 },
            ..Self::default()
        }
    }
}

/// Checks `f > 0` and `∫f ω^n = ∫ω^n`.
pub fn check_target(chart: &GridChart, f: &[f64]) -> Result<()> {
    if f.len() != chart.len() {
        return Err(Error::Shape(format!(
            "target has {} values, grid has {} points",
            f.len(),
            chart.len()
        )));
    }
    if let Some(p) = f.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Precondition(format!(
            "target is not positive at grid point {:?}",
            chart.coords(p)
        )));
    }
    let mass = integrate(chart, f);
    if (mass - 1.0).abs() > TARGET_MASS_TOL {
        return Err(Error::Precondition(format!(
            "target has normalized integral {mass}, expected 1"
        )));
    }
    Ok(())
}

pub fn newton_solve(
    s: &CompatibleStructure,
    f: &[f64],
    phi_init: &Potential,
    tol: f64,
    max_iter: usize,
) -> Result<(Potential, SolveReport)> {
    let opts = SolveOptions {
        tol,
        max_iter,
        ..SolveOptions::default()
    };
    newton_solve_with(s, f, phi_init, &opts)
}

pub fn newton_solve_with(
    s: &CompatibleStructure,
    f: &[f64],
    phi_init: &Potential,
    opts: &SolveOptions,
) -> Result<(Potential, SolveReport)> {
    let chart = s.chart();
    check_target(chart, f)?;
    let phi = gauge_project(chart, phi_init.values());
    let margin = start_margin(s, &phi)?;
    let pre = SpectralPreconditioner::new(chart);
    let (phi, report) = newton_loop(s, f, phi, margin, opts, &pre, false)?;
    Ok((Potential::zero_mean_unchecked(phi), report))
}

fn start_margin(s: &CompatibleStructure, phi: &[f64]) -> Result<f64> {
    let margin = taming_margin(s, &Potential::new(phi.to_vec()))?.value;
    if !(margin > TAMING_THRESHOLD) {
        return Err(Error::EllipticityLoss {
            margin,
            threshold: TAMING_THRESHOLD,
        });
    }
    Ok(margin)
}

fn residual_sup(f: &[f64], fphi: &[f64]) -> f64 {
    f.par_iter()
        .zip(fphi.par_iter())
        .fold(|| 0.0f64, |m, (a, b)| m.max((a - b).abs()))
        .reduce(|| 0.0, f64::max)
}

// sup norms of f − F(φ) and of its gauge projection
fn residuals(chart: &GridChart, f: &[f64], fphi: &[f64]) -> (Vec<f64>, f64, f64) {
    let raw: Vec<f64> = f.par_iter().zip(fphi.par_iter()).map(|(a, b)| a - b).collect();
    let full = sup(&raw);
    let gauge = gauge_project(chart, &raw);
    let g = sup(&gauge);
    (gauge, full, g)
}

/// Newton on the gauge part of `F(φ) = f`. With `auxiliary` set, as for
/// intermediate continuation targets, a converged gauge part is enough.
fn newton_loop(
    s: &CompatibleStructure,
    f: &[f64],
    mut phi: Vec<f64>,
    mut margin: f64,
    opts: &SolveOptions,
    pre: &SpectralPreconditioner,
    auxiliary: bool,
) -> Result<(Vec<f64>, SolveReport)> {
    let chart = s.chart();
    let mut fphi = f_top(s, &phi);
    let (mut rhs, mut res, mut gres) = residuals(chart, f, &fphi);
    let mut trace = Vec::new();
    let finish = |phi: Vec<f64>, iters, res, margin, failure: Option<SolveFailure>, trace| {
        Ok((
            phi,
            SolveReport {
                converged: failure.is_none(),
                iters,
                residual: res,
                margin,
                t_reached: 1.0,
                failure,
                trace,
                path: Vec::new(),
            },
        ))
    };
    for iter in 0..=opts.max_iter {
        if res <= opts.tol || (auxiliary && gres <= opts.tol) {
            return finish(phi, iter, res, margin, None, trace);
        }
        if gres <= opts.tol {
            let failure = SolveFailure::Incompatible { residual: res };
            return finish(phi, iter, res, margin, Some(failure), trace);
        }
        if iter == opts.max_iter {
            break;
        }
        let lin = Linearization::unchecked(s, &phi, margin);
        let rhs_mean = integrate(chart, f) - integrate(chart, &fphi);
        let sol = gmres(
            |v| gauge_project(chart, &lin.apply(v)),
            |v| gauge_project(chart, &pre.apply(v)),
            &rhs,
            opts.linear_tol,
            opts.restart,
            opts.max_linear_iter,
        );
        if !sol.converged {
            let failure = SolveFailure::LinearStagnation {
                residual: sol.residual,
            };
            return finish(phi, iter, res, margin, Some(failure), trace);
        }
        let mut step = 1.0;
        let mut worst_margin = f64::INFINITY;
        let mut boundary = false;
        let accepted = loop {
            let trial: Vec<f64> = phi.par_iter().zip(sol.x.par_iter()).map(|(a, b)| a + step * b).collect();
            let m = taming_margin(s, &Potential::new(trial.clone()))?.value;
            if m > TAMING_THRESHOLD {
                let ft = f_top(s, &trial);
                let r = residuals(chart, f, &ft);
                if r.2 < (1.0 - 1e-4 * step) * gres {
                    break Some((trial, ft, r, m));
                }
            } else {
                boundary = true;
                worst_margin = worst_margin.min(m);
            }
            step *= 0.5;
            if step < MIN_DAMPING {
                break None;
            }
        };
        trace.push(NewtonStep {
            iter,
            residual: res,
            gauge_residual: gres,
            margin,
            step: if accepted.is_some() { step } else { 0.0 },
            linear_iterations: sol.iterations,
            linear_residual: sol.residual,
            rhs_mean,
        });
        match accepted {
            Some((trial, ft, r, m)) => {
                phi = trial;
                fphi = ft;
                (rhs, res, gres) = r;
                margin = m;
            }
            None => {
                let failure = if boundary {
                    SolveFailure::BoundaryHit { margin: worst_margin }
                } else {
                    SolveFailure::LineSearch { residual: res }
                };
                return finish(phi, iter + 1, res, margin, Some(failure), trace);
            }
        }
    }
    let failure = SolveFailure::MaxIterations { residual: res };
    finish(phi, opts.max_iter, res, margin, Some(failure), trace)
}

/// `c_t((1 − t) + t f)` with `c_t` restoring unit mass; `f` itself at `t = 1`.
pub fn continuation_target(chart: &GridChart, f: &[f64], t: f64) -> Vec<f64> {
    if t >= 1.0 {
        return f.to_vec();
    }
    let g: Vec<f64> = f.par_iter().map(|v| (1.0 - t) + t * v).collect();
    let c = 1.0 / integrate(chart, &g);
    g.into_par_iter().map(|v| c * v).collect()
}

pub fn continuity_solve(s: &CompatibleStructure, f: &[f64], steps: usize) -> Result<(Potential, SolveReport)> {
    continuity_solve_with(s, f, steps, &SolveOptions::default())
}

pub fn continuity_solve_with(
    s: &CompatibleStructure,
    f: &[f64],
    steps: usize,
    opts: &SolveOptions,
) -> Result<(Potential, SolveReport)> {
    let chart = s.chart();
    check_target(chart, f)?;
    if steps == 0 {
        return Err(Error::Argument("continuation needs at least one step".into()));
    }
    let pre = SpectralPreconditioner::new(chart);
    let mut phi = vec![0.0; chart.len()];
    let mut margin = start_margin(s, &phi)?;
    let base = 1.0 / steps as f64;
    let (mut t, mut dt) = (0.0f64, base);
    let (mut trace, mut path) = (Vec::new(), Vec::new());
    let mut iters = 0;
    let mut failure = None;
    while t < 1.0 {
        let t_try = (t + dt).min(1.0);
        let ft = continuation_target(chart, f, t_try);
        let (next, rep) = newton_loop(s, &ft, phi.clone(), margin, opts, &pre, t_try < 1.0)?;
        iters += rep.iters;
        trace.extend(rep.trace);
        path.push(ContinuationStep {
            t: t_try,
            dt,
            accepted: rep.converged,
            newton_iterations: rep.iters,
            residual: rep.residual,
            margin: rep.margin,
        });
        if rep.converged {
            phi = next;
            margin = rep.margin;
            t = t_try;
            dt = (2.0 * dt).min(base);
        } else if let Some(fail @ SolveFailure::Incompatible { .. }) = rep.failure {
            failure = Some(fail);
            break;
        } else {
            dt *= 0.5;
            if dt < MIN_T_STEP {
                failure = Some(SolveFailure::ContinuationStalled {
                    t,
                    cause: Box::new(rep.failure.expect("failed Newton run carries a reason")),
                });
                break;
            }
        }
    }
    let residual = residual_sup(f, &f_top(s, &phi));
    let converged = failure.is_none() && residual <= opts.tol;
    Ok((
        Potential::zero_mean_unchecked(phi),
        SolveReport {
            converged,
            iters,
            residual,
            margin,
            t_reached: t,
            failure,
            trace,
            path,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    /// `‖L(φ)1‖∞`.
    pub constant_image: f64,
    /// Smallest singular value of `L(φ)` on the gauge subspace.
    pub smallest_singular: f64,
    /// Smallest nonzero symbol of the flat discrete Laplacian.
    pub laplacian_gap: f64,
    pub gap_ratio: f64,
    pub parity_kernel_dimension: usize,
    pub margin: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Inverse iteration on `LᵀL` restricted to the gauge subspace.
pub fn kernel_check(s: &CompatibleStructure, phi: &Potential) -> Result<KernelReport> {
    let chart = s.chart();
    let lin = Linearization::new(s, phi)?;
    let pre = SpectralPreconditioner::new(chart);
    let constant_image = sup(&lin.apply(&vec![1.0; chart.len()]));
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b65726e);
    let x0: Vec<f64> = (0..chart.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x = gauge_project(chart, &x0);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let solve = |op: &dyn Fn(&[f64]) -> Vec<f64>, b: &[f64]| {
        gmres(op, |v| gauge_project(chart, &pre.apply(v)), b, 1e-12, 60, 2000).x
    };
    let fwd = |v: &[f64]| gauge_project(chart, &lin.apply(v));
    let adj = |v: &[f64]| gauge_project(chart, &lin.apply_adjoint(v));
    let mut sigma2 = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=60 {
        iterations = it;
        let y = solve(&fwd, &x);
        let z = solve(&adj, &y);
        let est = 1.0 / dot(&x, &z);
        let nz = norm(&z);
        x = z.into_iter().map(|v| v / nz).collect();
        let done = ((est - sigma2) / est).abs() < 1e-11;
        sigma2 = est;
        if done {
            converged = true;
            break;
        }
    }
    let smallest_singular = sigma2.sqrt();
    Ok(KernelReport {
        constant_image,
        smallest_singular,
        laplacian_gap: laplacian_gap(chart),
        gap_ratio: smallest_singular / constant_image.max(f64::MIN_POSITIVE),
        parity_kernel_dimension: parity_classes(chart),
        margin: lin.margin(),
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{build_structure, standard_structure};
    use crate::StructureRecipe;
    use std::f64::consts::PI;

    fn twisted(n: usize) -> CompatibleStructure {
        let c = GridChart::uniform(2, n).unwrap();
        build_structure(&c, &StructureRecipe::twisted_default(2)).unwrap()
    }

    fn wave(c: &GridChart, amp: f64) -> Vec<f64> {
        c.sample(|x| amp * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos())
    }

    #[test]
    fn constants_are_annihilated() {
        let s = twisted(12);
        let phi = Potential::new(wave(s.chart(), 0.002));
        let l = linearize_apply(&s, &phi, &Potential::new(vec![3.7; s.chart().len()])).unwrap();
        assert!(sup(&l) <= 1e-12);
    }

    #[test]
    fn flat_symbol_on_plane_waves() {
        for n in [12, 24] {
            let c = GridChart::uniform(2, n).unwrap();
            let s = standard_structure(&c);
            let k = [1.0, 0.0, 0.0, 2.0];
            let u = c.sample(|x| (2.0 * PI * (k[0] * x[0] + k[3] * x[3])).cos());
            let lu = linearize_apply(&s, &Potential::zero(&c), &Potential::new(u.clone())).unwrap();
            let h = 1.0 / n as f64;
            let discrete: f64 = k.iter().map(|ka| (2.0 * PI * ka * h).sin().powi(2) / (h * h)).sum();
            let exact: f64 = k.iter().map(|ka| (2.0 * PI * ka).powi(2)).sum();
            for p in 0..c.len() {
                assert!((lu[p] - discrete * u[p]).abs() <= 1e-9 * discrete);
            }
            let rel = (discrete - exact).abs() / exact;
            assert!(rel <= (2.0 * PI * 2.0 * h).powi(2) / 3.0);
        }
    }

    #[test]
    fn directional_derivative_is_second_order() {
        let s = twisted(12);
        let c = s.chart();
        let phi = wave(c, 0.002);
        let u = c.sample(|x| (2.0 * PI * x[2]).cos() * (2.0 * PI * (x[0] + x[3])).sin());
        let lu = linearize_apply(&s, &Potential::new(phi.clone()), &Potential::new(u.clone())).unwrap();
        let f0 = f_top(&s, &phi);
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&eps| {
                let shifted: Vec<f64> = phi.iter().zip(&u).map(|(a, b)| a + eps * b).collect();
                let fe = f_top(&s, &shifted);
                (0..c.len())
                    .map(|p| (fe[p] - f0[p] - eps * lu[p]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 2.0).abs() <= 0.2, "slope {slope}");
        }
    }

    #[test]
    fn adjoint_matches_transpose() {
        let s = twisted(12);
        let c = s.chart();
        let lin = Linearization::new(&s, &Potential::new(wave(c, 0.002))).unwrap();
        let u = c.sample(|x| (2.0 * PI * (x[0] - 2.0 * x[2])).sin() + x[1] * (1.0 - x[1]));
        let v = c.sample(|x| (2.0 * PI * x[3]).cos() * (4.0 * PI * x[1]).sin());
        let lhs = dot(&lin.apply(&u), &v);
        let rhs = dot(&u, &lin.apply_adjoint(&v));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn gauge_projection_removes_parity_modes() {
        let c = GridChart::new(2, &[8, 8, 9, 8]).unwrap();
        assert_eq!(parity_classes(&c), 8);
        let alt: Vec<f64> = (0..c.len())
            .map(|p| {
                let k = c.coords(p);
                if (k[0] + k[3]) % 2 == 0 { 1.0 } else { -1.0 }
            })
            .collect();
        assert!(sup(&gauge_project(&c, &alt)) < 1e-14);
        let smooth = c.sample(|x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[2]).cos());
        let g = gauge_project(&c, &smooth);
        assert!(g.iter().zip(&smooth).all(|(a, b)| (a - b).abs() < 1e-14));
        let alt_odd: Vec<f64> = (0..c.len()).map(|p| if c.coords(p)[2] % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(sup(&gauge_project(&c, &alt_odd)) > 0.5);
    }

    #[test]
    fn preconditioner_inverts_flat_operator() {
        let c = GridChart::uniform(2, 8).unwrap();
        let s = standard_structure(&c);
        let lin = Linearization::new(&s, &Potential::zero(&c)).unwrap();
        let pre = SpectralPreconditioner::new(&c);
        let r = gauge_project(&c, &c.sample(|x| x[0] * x[1] - (2.0 * PI * x[3]).sin()));
        let back = gauge_project(&c, &lin.apply(&pre.apply(&r)));
        assert!(back.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn unit_target_needs_no_iteration() {
        let s = twisted(12);
        let f = vec![1.0; s.chart().len()];
        let (phi, rep) = newton_solve(&s, &f, &Potential::zero(s.chart()), 1e-10, 5).unwrap();
        assert!(rep.converged);
        assert!(rep.iters <= 1);
        assert!(sup(phi.values()) <= 1e-10);
    }

    #[test]
    fn preconditions_are_enforced() {
        let s = twisted(12);
        let c = s.chart();
        let heavy = vec![1.01; c.len()];
        assert!(matches!(
            newton_solve(&s, &heavy, &Potential::zero(c), 1e-10, 5),
            Err(Error::Precondition(_))
        ));
        let f = vec![1.0; c.len()];
        let wild = Potential::new(wave(c, 0.5));
        assert!(matches!(
            newton_solve(&s, &f, &wild, 1e-10, 5),
            Err(Error::EllipticityLoss { .. })
        ));
    }

    #[test]
    fn manufactured_target_is_recovered() {
        let s = twisted(12);
        let c = s.chart();
        let star = gauge_project(c, &wave(c, 0.005));
        let f = f_top(&s, &star);
        let (phi, rep) = newton_solve(&s, &f, &Potential::zero(c), 1e-10, 12).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(rep.residual <= 1e-10);
        let err = phi.values().iter().zip(&star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "error {err}");
        assert!(rep.trace.iter().all(|t| t.linear_residual <= LINEAR_TOL));
        let mut r: Vec<f64> = rep.trace.iter().map(|t| t.residual).collect();
        r.push(rep.residual);
        for w in r.windows(2).skip(r.len().saturating_sub(4)) {
            assert!(w[1] / (w[0] * w[0]) < 1.0, "residuals {r:?}");
        }
        let other = Potential::new(c.sample(|x| 0.003 * (2.0 * PI * x[3]).cos()));
        let (phi2, rep2) = newton_solve(&s, &f, &other, 1e-10, 12).unwrap();
        assert!(rep2.converged);
        let gap = phi.values().iter().zip(phi2.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-6);
    }

    #[test]
    fn flat_kernel_gap_is_the_laplacian_gap() {
        for n in [8, 9] {
            let c = GridChart::uniform(2, n).unwrap();
            let s = standard_structure(&c);
            let k = kernel_check(&s, &Potential::zero(&c)).unwrap();
            assert!(k.constant_image <= 1e-12);
            assert!(k.converged);
            assert!((k.smallest_singular - k.laplacian_gap).abs() <= 1e-6 * k.laplacian_gap, "{k:?}");
        }
    }

    #[test]
    fn continuation_of_unit_target_is_trivial() {
        let s = twisted(12);
        let f = vec![1.0; s.chart().len()];
        let (phi, rep) = continuity_solve(&s, &f, 4).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.t_reached, 1.0);
        assert!(sup(phi.values()) <= 1e-10);
    }

    #[test]
    fn continuation_targets_keep_unit_mass() {
        let c = GridChart::uniform(2, 8).unwrap();
        let f = c.sample(|x| 1.0 + 0.3 * (2.0 * PI * x[1]).sin());
        for t in [0.0, 0.25, 0.7, 1.0] {
            let ft = continuation_target(&c, &f, t);
            assert!((integrate(&c, &ft) - 1.0).abs() <= 1e-13);
        }
    }
}
