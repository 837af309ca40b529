//! Boundary potentials for non-integrable structures.
//!
//! A seed potential with non-vanishing `τ₁₂` is perturbed by a cut-off bump
//! `ψ_R` living in a frame-adapted chart at `p₀`. The bump's features are
//! far below torus-grid resolution, so everything it touches is evaluated on
//! a local lattice over `Δ_R` from exact jets of the seed, the bump and `J`.

use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    self, omega_matrix, pencil_first_singular, AffineHermitianFamily, CVec, Mat,
    TopExpansion, MAXD,
};
use crate::cy_operator::{
    self, dj_dphi_from_jet, f_point, hermitian_block, project_zero_mean, Potential,
    PointwiseGeometry, PotentialReport, AMPLITUDE_S_MAX, AMPLITUDE_TOL,
};
use crate::error::{Error, Result};
use crate::frame::{default_seeds, nijenhuis_coordinate, point_frame};
use crate::grid::GridChart;
use crate::jet::Jet2;
use crate::potentials::TrigPotential;
use crate::structure::CompatibleStructure;

/// Structures with `max|N|` at or below this are treated as integrable.
pub const INTEGRABLE_THRESHOLD: f64 = 1e-6;
/// The chart polydisk `Δ` spans at most this far from `p₀` along any axis.
pub const CHART_EXTENT: f64 = 0.125;
/// Seed scale as a fraction of the candidate's positivity amplitude.
pub const SEED_FRACTION: f64 = 0.9;
pub const TAU_SAMPLES: usize = 11;
pub const DEFAULT_LOCAL_RESOLUTION: usize = 64;
/// `|margin(φ₀)|` must fall inside this band.
pub const MARGIN_BAND: f64 = 1e-8;
const SEED_SCAN_POINTS: usize = 9;
const COARSE_POINTS: usize = 17;

fn smoothstep(u: f64) -> (f64, f64, f64) {
    let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
    let dds = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
    (s, ds, dds)
}

/// Value, first and second derivative of the cut-off.
pub fn cutoff_jet(r: f64) -> (f64, f64, f64) {
    if r <= 0.5 {
        (1.0, 0.0, 0.0)
    } else if r >= 1.0 {
        (0.0, 0.0, 0.0)
    } else {
        let (s, ds, dds) = smoothstep(2.0 * r - 1.0);
        (1.0 - s, -2.0 * ds, -4.0 * dds)
    }
}

/// `η̃(r)`: 1 on `[0, ½]`, 0 on `[1, ∞)`, quintic smoothstep between.
pub fn cutoff_eta(r: f64) -> f64 {
    cutoff_jet(r).0
}

/// Complex scalar field whose values increase by `jumps[k]` across one
/// period along axis `k` (zero jumps for periodic fields).
#[derive(Clone, Debug)]
pub struct QuasiPeriodicField {
    values: Vec<Complex64>,
    jumps: Vec<Complex64>,
}

impl QuasiPeriodicField {
    pub fn new(chart: &GridChart, values: Vec<Complex64>, jumps: Vec<Complex64>) -> Result<Self> {
        if values.len() != chart.len() || jumps.len() != chart.dim() {
            return Err(Error::Shape("field or jump vector has the wrong length".into()));
        }
        Ok(Self { values, jumps })
    }

    pub fn periodic(chart: &GridChart, values: Vec<Complex64>) -> Result<Self> {
        Self::new(chart, values, vec![Complex64::zero(); chart.dim()])
    }

    pub fn from_real(chart: &GridChart, values: &[f64]) -> Result<Self> {
        Self::periodic(chart, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// `f(x) = Σ c_k x_k` with `x ∈ [0,1)^{2n}`.
    pub fn linear(chart: &GridChart, coeffs: &[Complex64]) -> Result<Self> {
        if coeffs.len() != chart.dim() {
            return Err(Error::Shape("one coefficient per axis required".into()));
        }
        let values = (0..chart.len())
            .map(|p| {
                chart
                    .position(p)
                    .iter()
                    .zip(coeffs)
                    .map(|(x, c)| c * x)
                    .sum()
            })
            .collect();
        Self::new(chart, values, coeffs.to_vec())
    }

    pub fn conj(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.conj()).collect(),
            jumps: self.jumps.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Centered-difference `df` at one point.
    pub fn differential(&self, chart: &GridChart, p: usize) -> CVec {
        let mut df = [Complex64::zero(); MAXD];
        let coords = chart.coords(p);
        for k in 0..chart.dim() {
            let n = chart.resolution()[k];
            let mut up = self.values[chart.shift(p, k, 1)];
            let mut dn = self.values[chart.shift(p, k, -1)];
            if coords[k] == n - 1 {
                up += self.jumps[k];
            }
            if coords[k] == 0 {
                dn -= self.jumps[k];
            }
            df[k] = (up - dn) * (0.5 / chart.spacing(k));
        }
        df
    }
}

/// `‖df∘J − i·df‖` at grid point `p`.
pub fn pseudo_holomorphic_defect(s: &CompatibleStructure, f: &QuasiPeriodicField, p: usize) -> f64 {
    let d = s.dim();
    let df = f.differential(s.chart(), p);
    let j = s.j_at(p);
    let mut sq = 0.0;
    for k in 0..d {
        let mut djk = Complex64::zero();
        for l in 0..d {
            djk += df[l] * j[l][k];
        }
        sq += (djk - Complex64::i() * df[k]).norm_sqr();
    }
    sq.sqrt()
}

/// Per point, the largest `|df(N(e_α, e_β))|` over frame pairs.
pub fn nijenhuis_pairing(s: &CompatibleStructure, f: &QuasiPeriodicField) -> Result<Vec<f64>> {
    let (n, chart) = (s.half_dim(), s.chart());
    let nij = nijenhuis_coordinate(s);
    let geo = PointwiseGeometry::new(s)?;
    let lat = s.lattice();
    Ok((0..chart.len())
        .into_par_iter()
        .map(|p| {
            let r = lat.reduce(p);
            let df = f.differential(chart, p);
            let e = geo.e(r);
            let mut m: f64 = 0.0;
            for a in 0..n {
                for b in a + 1..n {
                    let v = nij.apply(r, &e[a], &e[b]);
                    let pair: Complex64 = (0..chart.dim()).map(|k| df[k] * v[k]).sum();
                    m = m.max(pair.norm());
                }
            }
            m
        })
        .collect())
}

/// Complex-linear chart `x = p₀ + L w` with `∂/∂z_α = e'_α` at `p₀`, where
/// `z_α = w_{2α} + i w_{2α+1}` and `e'` is the frame diagonalizing `H(φ)`.
#[derive(Clone, Debug)]
pub struct FrameChart {
    half_dim: usize,
    center: Vec<f64>,
    l: Mat,
    l_inv: Mat,
    r0: f64,
    rotation: [[Complex64; 3]; 3],
}

impl FrameChart {
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Radius of the polydisk `Δ = {|z_α| ≤ r₀}`.
    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn linear_map(&self) -> &Mat {
        &self.l
    }

    pub fn to_x(&self, w: &[f64; MAXD]) -> [f64; MAXD] {
        let d = 2 * self.half_dim;
        let mut x = [0.0; MAXD];
        for i in 0..d {
            x[i] = self.center[i] + (0..d).map(|k| self.l[i][k] * w[k]).sum::<f64>();
        }
        x
    }

    /// Chart coordinates of the nearest periodic image of `x`.
    pub fn to_w(&self, x: &[f64]) -> [f64; MAXD] {
        let d = 2 * self.half_dim;
        let dx: Vec<f64> = (0..d)
            .map(|i| {
                let v = x[i] - self.center[i];
                v - v.round()
            })
            .collect();
        let mut w = [0.0; MAXD];
        for i in 0..d {
            w[i] = (0..d).map(|k| self.l_inv[i][k] * dx[k]).sum();
        }
        w
    }

    /// The rotated frame `e'` at a point where the pointwise frame is `e`.
    pub fn rotate(&self, e: &[CVec; 3]) -> [CVec; 3] {
        let n = self.half_dim;
        let mut out = [[Complex64::zero(); MAXD]; 3];
        for a in 0..n {
            for b in 0..n {
                for k in 0..2 * n {
                    out[a][k] += self.rotation[a][b] * e[b][k];
                }
            }
        }
        out
    }
}

fn z_abs(w: &[f64; MAXD], i: usize) -> f64 {
    w[2 * i].hypot(w[2 * i + 1])
}

/// Grid index box enclosing the chart polydisk; may extend past the grid
/// edges, to be read periodically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: Vec<isize>,
    pub hi: Vec<isize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: String,
    pub amplitude: Option<f64>,
    pub max_tau: f64,
    pub epsilon1: f64,
}

/// Seed `φ` with `h(φ) > 0` and `|τ₁₂(φ)| ≥ ε₁` on the chart polydisk.
#[derive(Clone, Debug)]
pub struct SeedPotential {
    pub candidate: usize,
    /// The scaled candidate `cφ₁`.
    pub potential: TrigPotential,
    pub scale: f64,
    pub values: Potential,
    pub basepoint: Vec<usize>,
    pub region: IndexBox,
    /// Eigen-indices of `H(φ)` at `p₀` relabelled as directions 1 and 2.
    pub pair: (usize, usize),
    pub epsilon1: f64,
    /// `λ_α(0)` in the relabelled order.
    pub lambda: Vec<f64>,
    pub chart: FrameChart,
    pub scores: Vec<CandidateScore>,
}

/// Exact `J`, `∂J` and pointwise frame on the reduced lattice.
struct ExactJets {
    j: Vec<(Mat, [Mat; MAXD])>,
    e: Vec<[CVec; 3]>,
}

impl ExactJets {
    fn new(s: &CompatibleStructure) -> Result<Self> {
        let lat = s.lattice();
        let seeds = default_seeds(s.half_dim());
        let d = s.dim();
        let j: Vec<(Mat, [Mat; MAXD])> = (0..lat.len())
            .into_par_iter()
            .map(|r| s.analytic_j_jet(&lat.position(r)))
            .collect();
        let e = j
            .iter()
            .enumerate()
            .map(|(r, (jm, _))| {
                point_frame(jm, d, &seeds).map_err(|a| Error::Frame {
                    point: lat.representative(r),
                    message: format!("pointwise frame degenerates at vector {}", a + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { j, e })
    }
}

/// Exact `J`, `∂J`, frame and `ω(φ)` at an arbitrary point.
struct PointJet {
    j: Mat,
    dj: [Mat; MAXD],
    e: [CVec; 3],
    w: Mat,
}

fn point_jet(s: &CompatibleStructure, phi: &TrigPotential, x: &[f64]) -> Result<PointJet> {
    let d = s.dim();
    let (j, dj) = s.analytic_j_jet(x);
    let e = point_frame(&j, d, &default_seeds(s.half_dim())).map_err(|a| Error::Frame {
        point: vec![],
        message: format!("frame degenerates at vector {} off the grid, x = {x:?}", a + 1),
    })?;
    let mut w = dj_dphi_from_jet(&j, &dj, &phi.jet(x), d);
    add_omega(&mut w, d);
    Ok(PointJet { j, dj, e, w })
}

fn add_omega(w: &mut Mat, d: usize) {
    let om = omega_matrix(d);
    for i in 0..d {
        for k in 0..d {
            w[i][k] += om[i][k];
        }
    }
}

fn tau_entry(w: &Mat, e: &[CVec; 3], a: usize, b: usize, d: usize) -> Complex64 {
    algebra::bilinear(&e[a], w, &e[b], d)
}

fn tau_norm(w: &Mat, e: &[CVec; 3], n: usize, d: usize) -> f64 {
    let mut sq = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            sq += tau_entry(w, e, a, b, d).norm_sqr();
        }
    }
    sq.sqrt()
}

struct BasepointData {
    lambda: Vec<f64>,
    pair: (usize, usize),
    chart: FrameChart,
    epsilon1: f64,
}

fn analyse_basepoint(s: &CompatibleStructure, phi: &TrigPotential, x0: &[f64]) -> Result<BasepointData> {
    let (n, d) = (s.half_dim(), s.dim());
    let pj = point_jet(s, phi, x0)?;
    let m = hermitian_block(&pj.w, &pj.e, n, d);
    let (vals, u) = algebra::hermitian_eigen(&m[..n * n], n);
    // eigenframe e'_α = Σ_β conj(U_βα) e_β diagonalizes H(φ) at p₀
    let eig = |a: usize| -> CVec {
        let mut v = [Complex64::zero(); MAXD];
        for b in 0..n {
            for k in 0..d {
                v[k] += u[b * n + a].conj() * pj.e[b][k];
            }
        }
        v
    };
    let eframe: Vec<CVec> = (0..n).map(eig).collect();
    let mut pair = (0, 1);
    let mut best = -1.0;
    for a in 0..n {
        for b in a + 1..n {
            let t = algebra::bilinear(&eframe[a], &pj.w, &eframe[b], d).norm();
            if t > best {
                best = t;
                pair = (a, b);
            }
        }
    }
    let mut perm = vec![pair.0, pair.1];
    perm.extend((0..n).filter(|&k| k != pair.0 && k != pair.1));
    let lambda: Vec<f64> = perm.iter().map(|&k| vals[k]).collect();
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::SeedSearch(format!(
            "H(φ) is not positive at the basepoint: eigenvalues {lambda:?}"
        )));
    }
    let mut rotation = [[Complex64::zero(); 3]; 3];
    for a in 0..n {
        for b in 0..n {
            rotation[a][b] = u[b * n + perm[a]].conj();
        }
    }
    let mut l = algebra::zero_mat();
    for a in 0..n {
        let v = eframe[perm[a]];
        for k in 0..d {
            l[k][2 * a] = 2.0 * v[k].re;
            l[k][2 * a + 1] = -2.0 * v[k].im;
        }
    }
    let row_sum = (0..d)
        .map(|k| (0..d).map(|c| l[k][c].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let l_inv = algebra::from_dmatrix(
        &algebra::to_dmatrix(&l, d)
            .try_inverse()
            .ok_or_else(|| Error::SeedSearch("degenerate frame chart".into()))?,
    );
    let chart = FrameChart {
        half_dim: n,
        center: x0.to_vec(),
        l,
        l_inv,
        r0: CHART_EXTENT / row_sum,
        rotation,
    };
    let epsilon1 = polydisk_min_tau(s, phi, &chart)?;
    Ok(BasepointData {
        lambda,
        pair,
        chart,
        epsilon1,
    })
}

/// `min |τ₁₂(φ)|` on a sample of the chart polydisk `Δ`.
fn polydisk_min_tau(s: &CompatibleStructure, phi: &TrigPotential, chart: &FrameChart) -> Result<f64> {
    let d = s.dim();
    let k = SEED_SCAN_POINTS;
    let total = k.pow(d as u32);
    let r0 = chart.r0;
    (0..total)
        .into_par_iter()
        .filter_map(|idx| {
            let mut w = [0.0; MAXD];
            let mut rem = idx;
            for a in 0..d {
                w[a] = r0 * (-1.0 + 2.0 * (rem % k) as f64 / (k - 1) as f64);
                rem /= k;
            }
            ((0..d / 2).all(|i| z_abs(&w, i) <= r0)).then_some(w)
        })
        .map(|w| {
            let pj = point_jet(s, phi, &chart.to_x(&w))?;
            Ok(tau_entry(&pj.w, &chart.rotate(&pj.e), 0, 1, d).norm())
        })
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))
}

/// Picks the candidate, scaled to `0.9 ×` its positivity amplitude, whose
/// `|τ₁₂|` has the largest lower bound on a chart polydisk around its
/// maximum.
pub fn select_seed(s: &CompatibleStructure, candidates: &[TrigPotential]) -> Result<SeedPotential> {
    let (n, d, chart) = (s.half_dim(), s.dim(), s.chart());
    if candidates.is_empty() {
        return Err(Error::Argument("no seed candidates supplied".into()));
    }
    let nmax = nijenhuis_coordinate(s).max_abs();
    if nmax <= INTEGRABLE_THRESHOLD {
        return Err(Error::NoSeed(format!(
            "J is integrable (max |N| = {nmax:.2e}), so τ(φ) vanishes for every φ"
        )));
    }
    let jets = ExactJets::new(s)?;
    let lat = s.lattice();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64, f64, TrigPotential, Potential, Vec<usize>, BasepointData)> = None;
    for (k, cand) in candidates.iter().enumerate() {
        if cand.max_axis().is_some_and(|a| a >= d) {
            return Err(Error::Argument(format!("candidate `{cand}` uses an axis beyond dimension {d}")));
        }
        let values = project_zero_mean(chart, &cand.sample(chart));
        let amplitude = match cy_operator::positivity_amplitude(s, &values) {
            Ok(a) => a,
            Err(Error::UnboundedAmplitude { .. }) => {
                scores.push(CandidateScore {
                    candidate: cand.to_string(),
                    amplitude: None,
                    max_tau: 0.0,
                    epsilon1: 0.0,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let c = SEED_FRACTION * amplitude;
        let pot = cand.scaled(c);
        let (max_tau, argmax) = (0..chart.len())
            .into_par_iter()
            .map(|p| {
                let r = lat.reduce(p);
                let (j, dj) = &jets.j[r];
                let mut w = dj_dphi_from_jet(j, dj, &pot.jet(&chart.position(p)), d);
                add_omega(&mut w, d);
                (tau_norm(&w, &jets.e[r], n, d), p)
            })
            .reduce(
                || (-1.0, usize::MAX),
                |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        let mut score = CandidateScore {
            candidate: cand.to_string(),
            amplitude: Some(amplitude),
            max_tau,
            epsilon1: 0.0,
        };
        if max_tau > 1e-12 {
            let bp = analyse_basepoint(s, &pot, &chart.position(argmax))?;
            score.epsilon1 = bp.epsilon1;
            if best.as_ref().is_none_or(|b| bp.epsilon1 > b.2) {
                best = Some((k, c, bp.epsilon1, pot, values.scaled(c), chart.coords(argmax), bp));
            }
        }
        scores.push(score);
    }
    let Some((candidate, scale, epsilon1, potential, values, basepoint, bp)) =
        best.filter(|b| b.2 > 0.0)
    else {
        let diag: Vec<String> = scores
            .iter()
            .map(|c| format!("{}: max|τ| = {:.3e}, ε₁ = {:.3e}", c.candidate, c.max_tau, c.epsilon1))
            .collect();
        return Err(Error::SeedSearch(format!(
            "every candidate has τ₁₂ vanishing somewhere on its polydisk [{}]",
            diag.join("; ")
        )));
    };
    let region = index_box(chart, &basepoint, &bp.chart);
    Ok(SeedPotential {
        candidate,
        potential,
        scale,
        values,
        basepoint,
        region,
        pair: bp.pair,
        epsilon1,
        lambda: bp.lambda,
        chart: bp.chart,
        scores,
    })
}

fn index_box(chart: &GridChart, p0: &[usize], fc: &FrameChart) -> IndexBox {
    let d = chart.dim();
    let mut lo = vec![0isize; d];
    let mut hi = vec![0isize; d];
    for k in 0..d {
        let ext = fc.r0 * (0..d).map(|c| fc.l[k][c].abs()).sum::<f64>();
        let cells = (ext / chart.spacing(k)).ceil() as isize;
        lo[k] = p0[k] as isize - cells;
        hi[k] = p0[k] as isize + cells;
    }
    IndexBox { lo, hi }
}

/// `ψ_R = Φ_R·η_R` in the frame chart of a seed.
#[derive(Clone, Debug)]
pub struct BumpSpec {
    pub radius: f64,
    pub chart: FrameChart,
    pub lambda12: [f64; 2],
}

impl BumpSpec {
    pub fn new(seed: &SeedPotential, radius: f64) -> Result<Self> {
        if !(radius > 2.0) {
            return Err(Error::Argument(format!("bump radius R = {radius} must exceed 2")));
        }
        Ok(Self {
            radius,
            chart: seed.chart.clone(),
            lambda12: [seed.lambda[0], seed.lambda[1]],
        })
    }

    /// `ψ_R` vanishes with all derivatives once some `|z_α|` reaches this.
    pub fn outer_radius(&self) -> f64 {
        self.chart.r0 / self.radius
    }

    /// `Φ_R` vanishes once `|z₁|` and `|z₂|` both reach this.
    pub fn inner_radius(&self) -> f64 {
        self.chart.r0 / (self.radius * self.radius)
    }

    pub fn in_support(&self, w: &[f64; MAXD]) -> bool {
        let n = self.chart.half_dim;
        let (outer, inner) = (self.outer_radius(), self.inner_radius());
        (0..n).all(|i| z_abs(w, i) < outer) && (z_abs(w, 0) < inner || z_abs(w, 1) < inner)
    }

    // jet of η̃(scale·|z_i|) in chart coordinates
    fn radial_jet(w: &[f64; MAXD], i: usize, scale: f64) -> Jet2 {
        let (u, v) = (w[2 * i], w[2 * i + 1]);
        let r = u.hypot(v);
        let (val, d1, d2) = cutoff_jet(scale * r);
        let mut jet = Jet2::constant(val);
        if d1 != 0.0 || d2 != 0.0 {
            let rv = [u / r, v / r];
            let idx = [2 * i, 2 * i + 1];
            for a in 0..2 {
                jet.g[idx[a]] = d1 * scale * rv[a];
                for b in 0..2 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    jet.h[idx[a]][idx[b]] =
                        d2 * scale * scale * rv[a] * rv[b] + d1 * scale * (delta - rv[a] * rv[b]) / r;
                }
            }
        }
        jet
    }

    /// Jet of `ψ_R` in chart coordinates `w`.
    pub fn jet_chart(&self, w: &[f64; MAXD]) -> Jet2 {
        if !self.in_support(w) {
            return Jet2::zero();
        }
        let n = self.chart.half_dim;
        let (r, r0) = (self.radius, self.chart.r0);
        let mut phi = Jet2::zero();
        for i in 0..2 {
            let c = 0.5 * self.lambda12[i];
            let mut q = Jet2::constant(c * (w[2 * i] * w[2 * i] + w[2 * i + 1] * w[2 * i + 1]));
            q.g[2 * i] = 2.0 * c * w[2 * i];
            q.g[2 * i + 1] = 2.0 * c * w[2 * i + 1];
            q.h[2 * i][2 * i] = 2.0 * c;
            q.h[2 * i + 1][2 * i + 1] = 2.0 * c;
            phi = phi + q * Self::radial_jet(w, i, r * r / r0);
        }
        let mut eta = Jet2::constant(1.0);
        for i in 0..n {
            eta = eta * Self::radial_jet(w, i, r / r0);
        }
        phi * eta
    }

    /// Jet of `ψ_R` in torus coordinates.
    pub fn jet(&self, x: &[f64]) -> Jet2 {
        let w = self.chart.to_w(x);
        if !self.in_support(&w) {
            return Jet2::zero();
        }
        self.jet_chart(&w).pull_back(&self.chart.l_inv, 2 * self.chart.half_dim)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let w = self.chart.to_w(x);
        if !self.in_support(&w) {
            return 0.0;
        }
        self.jet_chart(&w).v
    }

    /// `∂ψ/∂z_α = ½(∂_u − i∂_v)ψ` for each `α`.
    pub fn chart_gradient(&self, w: &[f64; MAXD]) -> Vec<Complex64> {
        let j = self.jet_chart(w);
        (0..self.chart.half_dim)
            .map(|a| 0.5 * Complex64::new(j.g[2 * a], -j.g[2 * a + 1]))
            .collect()
    }

    /// `∂²ψ/∂z_α∂z̄_β`, `n²` row-major.
    pub fn chart_mixed_hessian(&self, w: &[f64; MAXD]) -> Vec<Complex64> {
        let j = self.jet_chart(w);
        let n = self.chart.half_dim;
        let mut out = vec![Complex64::zero(); n * n];
        for a in 0..n {
            for b in 0..n {
                let (ua, va, ub, vb) = (2 * a, 2 * a + 1, 2 * b, 2 * b + 1);
                // ¼(∂u_a − i∂v_a)(∂u_b + i∂v_b)
                out[a * n + b] = 0.25
                    * Complex64::new(
                        j.h[ua][ub] + j.h[va][vb],
                        j.h[ua][vb] - j.h[va][ub],
                    );
            }
        }
        out
    }

    /// `max_α |∂ψ/∂z_α|`, scanned radially in each of the two bump
    /// directions with the other coordinates at the origin.
    pub fn max_chart_gradient(&self, samples: usize) -> f64 {
        let mut m: f64 = 0.0;
        let outer = self.inner_radius();
        for a in 0..2 {
            for k in 0..=samples {
                let mut w = [0.0; MAXD];
                w[2 * a] = outer * k as f64 / samples as f64;
                for g in self.chart_gradient(&w) {
                    m = m.max(g.norm());
                }
            }
        }
        m
    }
}

/// Local lattice resolution needed for radius `R`: four cells across the
/// inner bump, rounded up to an even count so the centre is a node.
pub fn required_local_resolution(radius: f64) -> usize {
    let m = (4.0 * radius).ceil() as usize;
    m + m % 2
}

pub fn check_local_resolution(radius: f64, m: usize) -> Result<()> {
    let required = required_local_resolution(radius).max(4);
    if m < required || m % 2 == 1 {
        return Err(Error::Resolution {
            message: format!("local lattice with {m} intervals cannot resolve the R = {radius} bump"),
            required,
        });
    }
    Ok(())
}

/// `ψ_R` sampled on the torus grid.
pub fn bump_psi(spec: &BumpSpec, chart: &GridChart, local_resolution: usize) -> Result<Vec<f64>> {
    check_local_resolution(spec.radius, local_resolution)?;
    Ok(chart.sample(|x| spec.value(x)))
}

/// Nodes of the local lattice `[−r₀/R, r₀/R]^{2n}` with `m` intervals per
/// axis where `ψ_R` is not identically zero.
struct SupportLattice {
    half_dim: usize,
    m: usize,
    half: f64,
    inner: Vec<(usize, usize)>,
    outer: Vec<(usize, usize)>,
    ring: Vec<(usize, usize)>,
}

impl SupportLattice {
    fn new(spec: &BumpSpec, m: usize) -> Self {
        let half = spec.outer_radius();
        let step = 2.0 * half / m as f64;
        let (mut inner, mut outer, mut ring) = (vec![], vec![], vec![]);
        for a in 0..=m {
            for b in 0..=m {
                let r = (-half + step * a as f64).hypot(-half + step * b as f64);
                if r < spec.inner_radius() {
                    inner.push((a, b));
                }
                if r < spec.outer_radius() {
                    outer.push((a, b));
                    if r >= spec.inner_radius() {
                        ring.push((a, b));
                    }
                }
            }
        }
        Self {
            half_dim: spec.chart.half_dim,
            m,
            half,
            inner,
            outer,
            ring,
        }
    }

    fn rest(&self) -> usize {
        self.outer.len().pow(self.half_dim as u32 - 2)
    }

    fn len(&self) -> usize {
        (self.inner.len() * self.outer.len() + self.ring.len() * self.inner.len()) * self.rest()
    }

    fn point(&self, mut idx: usize) -> [f64; MAXD] {
        let n = self.half_dim;
        let first = self.inner.len() * self.outer.len() * self.rest();
        let (l0, l1) = if idx < first {
            (&self.inner, &self.outer)
        } else {
            idx -= first;
            (&self.ring, &self.inner)
        };
        let mut cells = Vec::with_capacity(n);
        cells.push(l0[idx % l0.len()]);
        idx /= l0.len();
        cells.push(l1[idx % l1.len()]);
        idx /= l1.len();
        for _ in 2..n {
            cells.push(self.outer[idx % self.outer.len()]);
            idx /= self.outer.len();
        }
        let step = 2.0 * self.half / self.m as f64;
        let mut w = [0.0; MAXD];
        for (i, (a, b)) in cells.into_iter().enumerate() {
            w[2 * i] = -self.half + step * a as f64;
            w[2 * i + 1] = -self.half + step * b as f64;
        }
        w
    }
}

/// Coarse sample of the polydisk `Δ_R`, centre included.
fn coarse_points(spec: &BumpSpec, d: usize) -> Vec<[f64; MAXD]> {
    let k = COARSE_POINTS;
    let half = spec.outer_radius();
    (0..k.pow(d as u32))
        .filter_map(|mut idx| {
            let mut w = [0.0; MAXD];
            for a in 0..d {
                w[a] = half * (-1.0 + 2.0 * (idx % k) as f64 / (k - 1) as f64);
                idx /= k;
            }
            ((0..d / 2).all(|i| z_abs(&w, i) <= half)).then_some(w)
        })
        .collect()
}

/// `ω(φ)`, `dJdψ` and the rotated frame at one chart point.
struct LocalPoint {
    j: Mat,
    e: [CVec; 3],
    w_phi: Mat,
    d_psi: Mat,
}

impl LocalPoint {
    fn new(s: &CompatibleStructure, seed: &SeedPotential, spec: &BumpSpec, w: &[f64; MAXD]) -> Result<Self> {
        let d = s.dim();
        let x = spec.chart.to_x(w);
        let pj = point_jet(s, &seed.potential, &x)?;
        let psi = spec.jet_chart(w).pull_back(&spec.chart.l_inv, d);
        let d_psi = if psi.is_zero() {
            algebra::zero_mat()
        } else {
            dj_dphi_from_jet(&pj.j, &pj.dj, &psi, d)
        };
        Ok(Self {
            j: pj.j,
            e: spec.chart.rotate(&pj.e),
            w_phi: pj.w,
            d_psi,
        })
    }

    fn pencil(&self, n: usize, d: usize) -> ([Complex64; 9], [Complex64; 9]) {
        (
            hermitian_block(&self.w_phi, &self.e, n, d),
            hermitian_block(&self.d_psi, &self.e, n, d),
        )
    }

    fn w_at(&self, s: f64, d: usize) -> Mat {
        let mut w = self.w_phi;
        for i in 0..d {
            for k in 0..d {
                w[i][k] += s * self.d_psi[i][k];
            }
        }
        w
    }

    fn tau12(&self, s: f64, d: usize) -> Complex64 {
        tau_entry(&self.w_at(s, d), &self.e, 0, 1, d)
    }
}

/// `|τ₁₂(φ + sψ_R)|` over `Δ_R` for `s ∈ {0, 0.1, …, 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauScan {
    pub min: f64,
    /// `max |τ₁₂(φ + sψ_R) − τ₁₂(φ)|`.
    pub max_perturbation: f64,
}

fn tau_stats(lp: &LocalPoint, d: usize) -> TauScan {
    let mut min = f64::INFINITY;
    let t0 = lp.tau12(0.0, d);
    let mut pert: f64 = 0.0;
    for k in 0..TAU_SAMPLES {
        let s = k as f64 / (TAU_SAMPLES - 1) as f64;
        let t = lp.tau12(s, d);
        min = min.min(t.norm());
        pert = pert.max((t - t0).norm());
    }
    TauScan {
        min,
        max_perturbation: pert,
    }
}

fn merge_tau(a: TauScan, b: TauScan) -> TauScan {
    TauScan {
        min: a.min.min(b.min),
        max_perturbation: a.max_perturbation.max(b.max_perturbation),
    }
}

pub fn tau12_scan(s: &CompatibleStructure, seed: &SeedPotential, radius: f64, local_resolution: usize) -> Result<TauScan> {
    let spec = BumpSpec::new(seed, radius)?;
    check_local_resolution(radius, local_resolution)?;
    let d = s.dim();
    let support = SupportLattice::new(&spec, local_resolution);
    let init = TauScan {
        min: f64::INFINITY,
        max_perturbation: 0.0,
    };
    let a = (0..support.len())
        .into_par_iter()
        .map(|i| LocalPoint::new(s, seed, &spec, &support.point(i)).map(|lp| tau_stats(&lp, d)))
        .try_reduce(|| init, |a, b| Ok(merge_tau(a, b)))?;
    let b = coarse_points(&spec, d)
        .par_iter()
        .map(|w| LocalPoint::new(s, seed, &spec, w).map(|lp| tau_stats(&lp, d)))
        .try_reduce(|| init, |a, b| Ok(merge_tau(a, b)))?;
    Ok(merge_tau(a, b))
}

/// Lower bound of `|τ₁₂(φ + sψ_R)|` over `Δ_R × [0,1]`.
pub fn tau12_lower_bound(s: &CompatibleStructure, seed: &SeedPotential, radius: f64, local_resolution: usize) -> Result<f64> {
    Ok(tau12_scan(s, seed, radius, local_resolution)?.min)
}

/// Positivity amplitude of the `ψ_R` direction relative to `ω(φ)` on the
/// local lattice.
fn local_amplitude(s: &CompatibleStructure, seed: &SeedPotential, spec: &BumpSpec, support: &SupportLattice) -> Result<f64> {
    let (n, d) = (s.half_dim(), s.dim());
    // closed-form first singular point per node, then bisection on the
    // nodes that come close to the minimum
    let first: Vec<f64> = (0..support.len())
        .into_par_iter()
        .map(|i| {
            let lp = LocalPoint::new(s, seed, spec, &support.point(i))?;
            let (m0, m1) = lp.pencil(n, d);
            Ok(pencil_first_singular(&m0[..n * n], &m1[..n * n], n).unwrap_or(f64::INFINITY))
        })
        .collect::<Result<_>>()?;
    let a_star = first.iter().cloned().fold(f64::INFINITY, f64::min);
    if !a_star.is_finite() {
        return Err(Error::UnboundedAmplitude { s_max: f64::INFINITY });
    }
    let mut fam = AffineHermitianFamily::new(n);
    for (i, &sp) in first.iter().enumerate() {
        if sp <= 1.5 * a_star {
            let lp = LocalPoint::new(s, seed, spec, &support.point(i))?;
            let (m0, m1) = lp.pencil(n, d);
            fam.push(&m0[..n * n], &m1[..n * n]);
        }
    }
    fam.amplitude(AMPLITUDE_TOL, AMPLITUDE_S_MAX)
}

#[derive(Clone, Copy, Debug)]
struct LocalStats {
    min_f: f64,
    min_components: [f64; 2],
    min_f1: f64,
    margin: f64,
    margin_at: [f64; MAXD],
}

impl LocalStats {
    fn empty() -> Self {
        Self {
            min_f: f64::INFINITY,
            min_components: [f64::INFINITY; 2],
            min_f1: f64::INFINITY,
            margin: f64::INFINITY,
            margin_at: [0.0; MAXD],
        }
    }

    fn merge(a: Self, b: Self) -> Self {
        let (margin, margin_at) = if b.margin < a.margin {
            (b.margin, b.margin_at)
        } else {
            (a.margin, a.margin_at)
        };
        Self {
            min_f: a.min_f.min(b.min_f),
            min_components: [
                a.min_components[0].min(b.min_components[0]),
                a.min_components[1].min(b.min_components[1]),
            ],
            min_f1: a.min_f1.min(b.min_f1),
            margin,
            margin_at,
        }
    }
}

fn local_stats(lp: &LocalPoint, w: &[f64; MAXD], a: f64, n: usize, top: &TopExpansion) -> Result<LocalStats> {
    let d = 2 * n;
    let wr = lp.w_at(a, d);
    let f = f_point(&wr, &lp.j, n, top)?;
    let (m0, m1) = lp.pencil(n, d);
    let m: Vec<Complex64> = (0..n * n).map(|k| m0[k] + m1[k] * a).collect();
    let mut comps = [f64::INFINITY; 2];
    comps[..n / 2 + 1].copy_from_slice(&f.components[..n / 2 + 1]);
    Ok(LocalStats {
        min_f: f.total,
        min_components: comps,
        min_f1: f.components[1],
        margin: algebra::hermitian_min_eigenvalue(&m, n),
        margin_at: *w,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    #[serde(rename = "R0")]
    pub radius: f64,
    pub amplitude: f64,
    pub epsilon1: f64,
    /// Smallest eigenvalue of `h(φ_R)` relative to `g`, local and grid.
    pub margin: f64,
    pub margin_local: f64,
    pub margin_grid: f64,
    /// `|z_α|/(r₀/R)` at the minimal eigenvalue.
    pub margin_location: Vec<f64>,
    pub margin_inside: bool,
    #[serde(rename = "minF")]
    pub min_f: f64,
    #[serde(rename = "minF_grid")]
    pub min_f_grid: f64,
    #[serde(rename = "minF_local")]
    pub min_f_local: f64,
    #[serde(rename = "minF_components")]
    pub min_f_components: Vec<f64>,
    #[serde(rename = "minF1_near_p0")]
    pub min_f1_near_p0: f64,
    pub f1_floor: f64,
    pub tau12_min: f64,
    pub tau12_perturbation: f64,
    pub p0: Vec<usize>,
    pub lambda: Vec<f64>,
    pub r0: f64,
    pub local_resolution: usize,
    pub local_nodes: usize,
    pub accepted: bool,
}

/// `φ_R` with its grid analysis and the combined report.
#[derive(Clone, Debug)]
pub struct BoundaryResult {
    pub potential: Potential,
    pub report: BoundaryReport,
    pub grid: PotentialReport,
}

/// `0.5·(ε₁/2)²·Π_{α≥3} λ_α(0)·2^{−n}`.
pub fn f1_floor(seed: &SeedPotential) -> f64 {
    let n = seed.lambda.len();
    let prod: f64 = seed.lambda[2..].iter().product();
    0.5 * (seed.epsilon1 / 2.0).powi(2) * prod * 0.5f64.powi(n as i32)
}

/// `φ_R = φ + a·ψ_R` with `a` the positivity amplitude of the bump
/// direction, zero-mean projected.
pub fn boundary_potential(
    s: &CompatibleStructure,
    seed: &SeedPotential,
    radius: f64,
    local_resolution: usize,
) -> Result<BoundaryResult> {
    let spec = BumpSpec::new(seed, radius)?;
    check_local_resolution(radius, local_resolution)?;
    let (n, d, chart) = (s.half_dim(), s.dim(), s.chart());
    let support = SupportLattice::new(&spec, local_resolution);
    let a = local_amplitude(s, seed, &spec, &support)?;
    if a > 1.0 + 1e-8 {
        return Err(Error::AmplitudeExceedsOne { amplitude: a, radius });
    }

    let top = TopExpansion::new(n);
    let stats_at = |w: &[f64; MAXD]| -> Result<(LocalStats, TauScan)> {
        let lp = LocalPoint::new(s, seed, &spec, w)?;
        Ok((local_stats(&lp, w, a, n, &top)?, tau_stats(&lp, d)))
    };
    let init = (
        LocalStats::empty(),
        TauScan {
            min: f64::INFINITY,
            max_perturbation: 0.0,
        },
    );
    let merge = |x: (LocalStats, TauScan), y: (LocalStats, TauScan)| {
        Ok((LocalStats::merge(x.0, y.0), merge_tau(x.1, y.1)))
    };
    let on_support = (0..support.len())
        .into_par_iter()
        .map(|i| stats_at(&support.point(i)))
        .try_reduce(|| init, merge)?;
    let coarse = coarse_points(&spec, d)
        .par_iter()
        .map(stats_at)
        .try_reduce(|| init, merge)?;
    let (local, tau) = merge(on_support, coarse)?;

    let bump = bump_psi(&spec, chart, local_resolution)?;
    let grid_values: Vec<f64> = seed
        .values
        .values()
        .iter()
        .zip(&bump)
        .map(|(p, b)| p + a * b)
        .collect();
    let potential = project_zero_mean(chart, &grid_values);
    let grid = cy_operator::analyze(s, &potential)?;
    let min_f_grid = grid.f_total.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut min_components: Vec<f64> = grid
        .f_components
        .iter()
        .map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    for (k, m) in min_components.iter_mut().enumerate() {
        *m = m.min(local.min_components[k]);
    }

    let outer = spec.outer_radius();
    let (margin, where_w) = if local.margin <= grid.taming_margin.value {
        (local.margin, local.margin_at)
    } else {
        let p = chart.index(&grid.taming_margin.point);
        (grid.taming_margin.value, spec.chart.to_w(&chart.position(p)))
    };
    let margin_location: Vec<f64> = (0..n).map(|i| z_abs(&where_w, i) / outer).collect();
    let floor = f1_floor(seed);
    let min_f = min_f_grid.min(local.min_f);
    let report = BoundaryReport {
        radius,
        amplitude: a,
        epsilon1: seed.epsilon1,
        margin,
        margin_local: local.margin,
        margin_grid: grid.taming_margin.value,
        margin_inside: margin_location.iter().all(|&r| r <= 1.0),
        margin_location,
        min_f,
        min_f_grid,
        min_f_local: local.min_f,
        min_f_components: min_components,
        min_f1_near_p0: local.min_f1,
        f1_floor: floor,
        tau12_min: tau.min,
        tau12_perturbation: tau.max_perturbation,
        p0: seed.basepoint.clone(),
        lambda: seed.lambda.clone(),
        r0: seed.chart.r0,
        local_resolution,
        local_nodes: support.len(),
        accepted: min_f > 0.0 && local.min_f1 >= floor,
    };
    Ok(BoundaryResult {
        potential,
        report,
        grid,
    })
}

/// Diagnostics for one radius tried by [`search_r`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RAttempt {
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "minF")]
    pub min_f: Option<f64>,
    pub margin: Option<f64>,
    pub tau12_min: Option<f64>,
    #[serde(rename = "minF1_near_p0")]
    pub min_f1_near_p0: Option<f64>,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BoundaryOutcome {
    pub result: BoundaryResult,
    pub attempts: Vec<RAttempt>,
}

/// First radius in `radii` whose boundary potential has `F > 0` on the grid
/// and `F₁` above the floor near `p₀`.
pub fn search_r(
    s: &CompatibleStructure,
    seed: &SeedPotential,
    radii: &[f64],
    local_resolution: usize,
) -> Result<BoundaryOutcome> {
    if radii.is_empty() {
        return Err(Error::Argument("empty R list".into()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|&r| !(r > 2.0)) {
        return Err(Error::Argument(format!(
            "R list must be increasing with every R > 2, got {radii:?}"
        )));
    }
    for &r in radii {
        check_local_resolution(r, local_resolution)?;
    }
    let mut attempts = Vec::with_capacity(radii.len());
    for &r in radii {
        match boundary_potential(s, seed, r, local_resolution) {
            Ok(res) => {
                let rep = &res.report;
                attempts.push(RAttempt {
                    radius: r,
                    min_f: Some(rep.min_f),
                    margin: Some(rep.margin),
                    tau12_min: Some(rep.tau12_min),
                    min_f1_near_p0: Some(rep.min_f1_near_p0),
                    accepted: rep.accepted,
                    error: None,
                });
                if rep.accepted {
                    return Ok(BoundaryOutcome {
                        result: res,
                        attempts,
                    });
                }
            }
            Err(e @ (Error::AmplitudeExceedsOne { .. } | Error::UnboundedAmplitude { .. })) => {
                attempts.push(RAttempt {
                    radius: r,
                    min_f: None,
                    margin: None,
                    tau12_min: None,
                    min_f1_near_p0: None,
                    accepted: false,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let diag: Vec<String> = attempts
        .iter()
        .map(|a| match &a.error {
            Some(e) => format!("R = {}: {e}", a.radius),
            None => format!(
                "R = {}: min F = {:.3e}, margin = {:.3e}, min |τ₁₂| = {:.3e} (ε₁/2 = {:.3e}), min F₁ = {:.3e}",
                a.radius,
                a.min_f.unwrap_or(f64::NAN),
                a.margin.unwrap_or(f64::NAN),
                a.tau12_min.unwrap_or(f64::NAN),
                seed.epsilon1 / 2.0,
                a.min_f1_near_p0.unwrap_or(f64::NAN)
            ),
        })
        .collect();
    Err(Error::RSearch(diag.join("; ")))
}
