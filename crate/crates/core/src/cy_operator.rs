//! The deformed form `ω(φ) = ω + dJdφ`, its bidegree parts and the operator
//! `F(φ) = ω(φ)^n / ω^n` together with its components `F_j`.
//!
//! The coordinate path is authoritative: `dJdφ` is the centered-difference
//! exterior derivative of `Jdφ`, and bidegree parts come from the pointwise
//! projectors. Frame coefficients use a pointwise unitary frame.

use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    self, factorial, omega_matrix, AffineHermitianFamily, CVec, Mat, TopExpansion, I, MAXD,
};
use crate::error::{Error, Result};
use crate::forms::{self, project_block, Bidegree, ComplexFormField, FormField};
use crate::frame::{default_seeds, point_frame};
use crate::grid::GridChart;
use crate::jet::Jet2;
use crate::structure::CompatibleStructure;

/// `φ ∈ A₊` requires a taming margin above this floor.
pub const TAMING_THRESHOLD: f64 = 1e-8;
pub const DUAL_PATH_TOL: f64 = 1e-10;
pub const AMPLITUDE_TOL: f64 = 1e-10;
pub const AMPLITUDE_S_MAX: f64 = 1e6;

/// Real potential sampled on the chart.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    values: Vec<f64>,
    zero_mean: bool,
}

impl Potential {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            zero_mean: false,
        }
    }

    pub(crate) fn zero_mean_unchecked(values: Vec<f64>) -> Self {
        Self {
            values,
            zero_mean: true,
        }
    }

    pub fn zero(chart: &GridChart) -> Self {
        Self {
            values: vec![0.0; chart.len()],
            zero_mean: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_zero_mean(&self) -> bool {
        self.zero_mean
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            zero_mean: self.zero_mean,
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &Potential) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
            zero_mean: self.zero_mean && other.zero_mean,
        }
    }
}

/// Subtracts `∫φ ω^n / ∫ω^n`.
pub fn project_zero_mean(chart: &GridChart, phi: &[f64]) -> Potential {
    let mean = forms::integrate(chart, phi);
    Potential {
        values: phi.par_iter().map(|v| v - mean).collect(),
        zero_mean: true,
    }
}

/// `n × n` complex matrix per grid point.
#[derive(Clone, Debug)]
pub struct HermitianField {
    n: usize,
    data: Vec<Complex64>,
}

impl HermitianField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.n * self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, p: usize) -> &[Complex64] {
        let nn = self.n * self.n;
        &self.data[p * nn..(p + 1) * nn]
    }

    pub fn hermitian_defect(&self) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|p| algebra::hermitian_defect(self.at(p), self.n))
            .reduce(|| 0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> (f64, usize) {
        (0..self.len())
            .into_par_iter()
            .map(|p| (algebra::hermitian_min_eigenvalue(self.at(p), self.n), p))
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            )
    }
}

/// Real symmetric `2n × 2n` bilinear form per grid point.
#[derive(Clone, Debug)]
pub struct SymmetricField {
    d: usize,
    data: Vec<f64>,
}

impl SymmetricField {
    pub fn at(&self, p: usize) -> Mat {
        let d = self.d;
        let mut m = algebra::zero_mat();
        for a in 0..d {
            for b in 0..d {
                m[a][b] = self.data[p * d * d + a * d + b];
            }
        }
        m
    }

    /// Eigenvalues of `g⁻¹h` (each appears twice), ascending.
    pub fn relative_eigenvalues(&self, p: usize, g: &Mat) -> Vec<f64> {
        let d = self.d;
        let gm = algebra::to_dmatrix(g, d);
        let chol = gm.cholesky().expect("metric is positive definite");
        let linv = chol.l().try_inverse().expect("invertible factor");
        let h = algebra::to_dmatrix(&self.at(p), d);
        let m = &linv * h * linv.transpose();
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Pointwise `J` and unitary frame on the reduced lattice.
#[derive(Clone, Debug)]
pub struct PointwiseGeometry {
    j: Vec<Mat>,
    e: Vec<[CVec; 3]>,
}

impl PointwiseGeometry {
    pub fn new(s: &CompatibleStructure) -> Result<Self> {
        let (n, d) = (s.half_dim(), s.dim());
        let seeds = default_seeds(n);
        let lat = s.lattice();
        let per: Vec<std::result::Result<(Mat, [CVec; 3]), usize>> = (0..lat.len())
            .into_par_iter()
            .map(|r| {
                let j = s.j_reduced(r);
                point_frame(&j, d, &seeds).map(|e| (j, e))
            })
            .collect();
        let mut out = Self {
            j: Vec::with_capacity(lat.len()),
            e: Vec::with_capacity(lat.len()),
        };
        for (r, res) in per.into_iter().enumerate() {
            match res {
                Ok((j, e)) => {
                    out.j.push(j);
                    out.e.push(e);
                }
                Err(alpha) => {
                    return Err(Error::Frame {
                        point: lat.representative(r),
                        message: format!("pointwise frame degenerates at vector {}", alpha + 1),
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn j(&self, r: usize) -> &Mat {
        &self.j[r]
    }

    pub fn e(&self, r: usize) -> &[CVec; 3] {
        &self.e[r]
    }
}

/// `Jdφ` as one field per coordinate component.
pub fn j_dphi(s: &CompatibleStructure, phi: &[f64]) -> Vec<Vec<f64>> {
    let grad = forms::gradient(s.chart(), phi);
    forms::apply_j_components(s, &grad)
}

/// `ω + d(a)` at one grid point for a 1-form `a` given by components.
pub fn deformed_block(chart: &GridChart, a: &[Vec<f64>], p: usize) -> Mat {
    let d = chart.dim();
    let mut da = algebra::zero_mat();
    for i in 0..d {
        let up = chart.shift(p, i, 1);
        let dn = chart.shift(p, i, -1);
        let inv = 0.5 / chart.spacing(i);
        for k in 0..d {
            da[i][k] = (a[k][up] - a[k][dn]) * inv;
        }
    }
    let mut w = omega_matrix(d);
    for i in 0..d {
        for k in 0..d {
            w[i][k] += da[i][k] - da[k][i];
        }
    }
    w
}

/// Exact `dJdφ` block from jets of `φ` and `J` at one point.
pub fn dj_dphi_from_jet(j: &Mat, dj: &[Mat; MAXD], jet: &Jet2, d: usize) -> Mat {
    let mut m = algebra::zero_mat();
    for i in 0..d {
        for k in 0..d {
            let mut v = 0.0;
            for l in 0..d {
                v += jet.h[i][l] * j[l][k] + jet.g[l] * dj[i][l][k];
            }
            m[i][k] = v;
        }
    }
    let mut out = algebra::zero_mat();
    for i in 0..d {
        for k in 0..d {
            out[i][k] = m[i][k] - m[k][i];
        }
    }
    out
}

/// `M_{αβ} = −i W(e_α, ē_β)`: equals `δ − 2φ_{αβ̄}` for `W = ω(φ)`.
pub fn hermitian_block(w: &Mat, e: &[CVec; 3], n: usize, d: usize) -> [Complex64; 9] {
    let mut m = [Complex64::zero(); 9];
    for a in 0..n {
        for b in 0..n {
            let eb: CVec = std::array::from_fn(|k| e[b][k].conj());
            m[a * n + b] = -I * algebra::bilinear(&e[a], w, &eb, d);
        }
    }
    m
}

/// `τ(e_β, e_γ) = W(e_β, e_γ)`, the frame coefficients of `P₂₀W`.
pub fn tau_block(w: &Mat, e: &[CVec; 3], n: usize, d: usize) -> [Complex64; 9] {
    let mut t = [Complex64::zero(); 9];
    for b in 0..n {
        for g in 0..n {
            t[b * n + g] = algebra::bilinear(&e[b], w, &e[g], d);
        }
    }
    t
}

/// `F` and its components at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FPoint {
    /// `top(W^n)/n!`.
    pub total: f64,
    /// `F_0 … F_{⌊n/2⌋}`.
    pub components: [f64; 2],
    /// Largest imaginary residue of the components.
    pub imag: f64,
}

impl FPoint {
    pub fn component_sum(&self, n: usize) -> f64 {
        self.components[..n / 2 + 1].iter().sum()
    }
}

/// Both paths for `F` at one point; disagreement beyond the dual-path
/// tolerance is reported as an internal consistency failure.
pub fn f_point(w: &Mat, j: &Mat, n: usize, top: &TopExpansion) -> Result<FPoint> {
    let d = 2 * n;
    let total = top.eval_real(&vec![w; n]) / factorial(n);
    let tau = project_block(w, j, d, Bidegree::TwoZero);
    let taub = project_block(w, j, d, Bidegree::ZeroTwo);
    let h = project_block(w, j, d, Bidegree::OneOne);
    let mut out = FPoint {
        total,
        ..FPoint::default()
    };
    for jj in 0..=n / 2 {
        let mut slots: Vec<&[[Complex64; MAXD]; MAXD]> = Vec::with_capacity(n);
        for _ in 0..jj {
            slots.push(&tau);
            slots.push(&taub);
        }
        for _ in 0..n - 2 * jj {
            slots.push(&h);
        }
        let closures: Vec<_> = slots
            .iter()
            .map(|b| move |i: usize, k: usize| b[i][k])
            .collect();
        let v: Complex64 = top.eval(&closures);
        let norm = factorial(jj) * factorial(jj) * factorial(n - 2 * jj);
        out.components[jj] = v.re / norm;
        out.imag = out.imag.max((v.im / norm).abs());
    }
    let sum = out.component_sum(n);
    let scale = 1.0f64
        .max(total.abs())
        .max(out.components.iter().fold(0.0, |m, v| m.max(v.abs())));
    if (sum - total).abs() > DUAL_PATH_TOL * scale {
        return Err(Error::Consistency(format!(
            "top(ω(φ)^n)/n! = {total:.15e} but Σ F_j = {sum:.15e}"
        )));
    }
    Ok(out)
}

/// `ω(φ) = ω + dJdφ`.
pub fn deformed_form(s: &CompatibleStructure, phi: &Potential) -> Result<FormField> {
    let chart = s.chart();
    check_len(chart, phi)?;
    let a = FormField::from_components(chart, 1, j_dphi(s, phi.values()))?;
    let da = forms::exterior_derivative(&a)?;
    FormField::omega(chart).axpy(1.0, &da)
}

fn check_len(chart: &GridChart, phi: &Potential) -> Result<()> {
    if phi.values.len() != chart.len() {
        return Err(Error::Shape(format!(
            "potential has {} values, chart has {} points",
            phi.values.len(),
            chart.len()
        )));
    }
    Ok(())
}

/// `τ(φ) = P₂₀ ω(φ)` in coordinate components.
pub fn tau(s: &CompatibleStructure, phi: &Potential) -> Result<ComplexFormField> {
    forms::bidegree_project(s, &deformed_form(s, phi)?, 2, 0)
}

fn pointwise<T, F>(s: &CompatibleStructure, phi: &Potential, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Mat, &Mat, &[CVec; 3]) -> T + Sync,
{
    let chart = s.chart();
    check_len(chart, phi)?;
    let geo = PointwiseGeometry::new(s)?;
    let a = j_dphi(s, phi.values());
    let lat = s.lattice();
    Ok((0..chart.len())
        .into_par_iter()
        .map(|p| {
            let r = lat.reduce(p);
            let w = deformed_block(chart, &a, p);
            f(&w, geo.j(r), geo.e(r))
        })
        .collect())
}

/// Coefficients `δ − 2φ_{αβ̄}` of `H(φ) = P₁₁ ω(φ)` in the unitary frame.
pub fn h_part(s: &CompatibleStructure, phi: &Potential) -> Result<HermitianField> {
    let (n, d) = (s.half_dim(), s.dim());
    let blocks = pointwise(s, phi, |w, _, e| hermitian_block(w, e, n, d))?;
    Ok(HermitianField {
        n,
        data: blocks.iter().flat_map(|b| b[..n * n].iter().copied()).collect(),
    })
}

/// `h(φ)(X,Y) = ½(H(X,JY) + H(Y,JX))`.
pub fn h_form(s: &CompatibleStructure, phi: &Potential) -> Result<SymmetricField> {
    let d = s.dim();
    let blocks = pointwise(s, phi, |w, j, _| {
        let h11 = project_block(w, j, d, Bidegree::OneOne);
        let mut hm = algebra::zero_mat();
        for a in 0..d {
            for b in 0..d {
                hm[a][b] = h11[a][b].re;
            }
        }
        let hj = algebra::matmul(&hm, j, d);
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] = 0.5 * (hj[a][b] + hj[b][a]);
            }
        }
        out
    })?;
    Ok(SymmetricField {
        d,
        data: blocks.into_iter().flatten().collect(),
    })
}

/// `F_j(φ)` for `j = 0..=⌊n/2⌋`.
pub fn f_components(s: &CompatibleStructure, phi: &Potential) -> Result<Vec<Vec<f64>>> {
    let n = s.half_dim();
    let top = TopExpansion::new(n);
    let pts = pointwise(s, phi, |w, j, _| f_point(w, j, n, &top))?;
    let mut comps = vec![Vec::with_capacity(pts.len()); n / 2 + 1];
    for p in pts {
        let p = p?;
        for (k, c) in comps.iter_mut().enumerate() {
            c.push(p.components[k]);
        }
    }
    Ok(comps)
}

/// `F(φ)`, cross-checked against `Σ F_j` at every point.
pub fn f_total(s: &CompatibleStructure, phi: &Potential) -> Result<Vec<f64>> {
    let n = s.half_dim();
    let top = TopExpansion::new(n);
    pointwise(s, phi, |w, j, _| f_point(w, j, n, &top).map(|f| f.total))?
        .into_iter()
        .collect()
}

/// `top(ω(φ)^n)/n!` alone, without the component split or frame.
pub fn f_top(s: &CompatibleStructure, phi: &[f64]) -> Vec<f64> {
    let chart = s.chart();
    let n = s.half_dim();
    let top = TopExpansion::new(n);
    let a = j_dphi(s, phi);
    let norm = factorial(n);
    (0..chart.len())
        .into_par_iter()
        .map(|p| {
            let w = deformed_block(chart, &a, p);
            top.eval_real(&vec![&w; n]) / norm
        })
        .collect()
}

/// Grid minimum of the smallest eigenvalue of `h(φ)` relative to `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub value: f64,
    pub point: Vec<usize>,
}

pub fn taming_margin(s: &CompatibleStructure, phi: &Potential) -> Result<Margin> {
    let h = h_part(s, phi)?;
    let (value, p) = h.min_eigenvalue();
    Ok(Margin {
        value,
        point: s.chart().coords(p),
    })
}

/// Pencils `I + s(H(φ) − I)` at every grid point.
pub fn amplitude_family(h: &HermitianField) -> AffineHermitianFamily {
    let n = h.n;
    let mut fam = AffineHermitianFamily::new(n);
    let mut id = [Complex64::zero(); 9];
    for a in 0..n {
        id[a * n + a] = Complex64::new(1.0, 0.0);
    }
    for p in 0..h.len() {
        let m = h.at(p);
        let m1: Vec<Complex64> = (0..n * n).map(|k| m[k] - id[k]).collect();
        fam.push(&id[..n * n], &m1);
    }
    fam
}

/// `sup{s > 0 : h(sφ) > 0 everywhere}`.
pub fn positivity_amplitude(s: &CompatibleStructure, phi: &Potential) -> Result<f64> {
    amplitude_family(&h_part(s, phi)?).amplitude(AMPLITUDE_TOL, AMPLITUDE_S_MAX)
}

/// Everything the analysis command tabulates for one potential.
#[derive(Clone, Debug)]
pub struct PotentialReport {
    pub f_components: Vec<Vec<f64>>,
    /// `top(ω(φ)^n)/n!`.
    pub f_total: Vec<f64>,
    /// `Σ_j F_j`, the second path.
    pub f_sum: Vec<f64>,
    pub taming_margin: Margin,
    pub amplitude: Option<f64>,
    pub f_integral: f64,
    pub one_integral: f64,
    pub max_component_imag: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub j: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSummary {
    #[serde(rename = "F_min")]
    pub f_min: f64,
    #[serde(rename = "F_max")]
    pub f_max: f64,
    #[serde(rename = "F_integral")]
    pub f_integral: f64,
    pub volume: f64,
    pub margin: f64,
    pub margin_point: Vec<usize>,
    pub amplitude: Option<f64>,
    pub components: Vec<ComponentSummary>,
    pub taming: bool,
    #[serde(rename = "F0_positive")]
    pub f0_positive: bool,
    #[serde(rename = "Fj_nonnegative")]
    pub fj_nonnegative: bool,
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.par_iter()
        .fold(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &x| (lo.min(x), hi.max(x)),
        )
        .reduce(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |a, b| (a.0.min(b.0), a.1.max(b.1)),
        )
}

impl PotentialReport {
    pub fn summary(&self) -> PotentialSummary {
        let (f_min, f_max) = min_max(&self.f_total);
        let components: Vec<ComponentSummary> = self
            .f_components
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let (min, max) = min_max(c);
                ComponentSummary { j, min, max }
            })
            .collect();
        PotentialSummary {
            f_min,
            f_max,
            f_integral: self.f_integral,
            volume: self.one_integral,
            margin: self.taming_margin.value,
            margin_point: self.taming_margin.point.clone(),
            amplitude: self.amplitude,
            taming: self.taming_margin.value > TAMING_THRESHOLD,
            f0_positive: components[0].min > 0.0,
            fj_nonnegative: components[1..].iter().all(|c| c.min >= -1e-10),
            components,
        }
    }
}

/// Single pass computing `F`, `F_j`, `H(φ)`, margin and amplitude.
pub fn analyze(s: &CompatibleStructure, phi: &Potential) -> Result<PotentialReport> {
    let chart = s.chart();
    let (n, d) = (s.half_dim(), s.dim());
    let top = TopExpansion::new(n);
    let pts = pointwise(s, phi, |w, j, e| {
        f_point(w, j, n, &top).map(|f| (f, hermitian_block(w, e, n, d)))
    })?;
    let mut comps = vec![Vec::with_capacity(pts.len()); n / 2 + 1];
    let mut total = Vec::with_capacity(pts.len());
    let mut sum = Vec::with_capacity(pts.len());
    let mut hdata = Vec::with_capacity(pts.len() * n * n);
    let mut imag: f64 = 0.0;
    for p in pts {
        let (f, m) = p?;
        for (k, c) in comps.iter_mut().enumerate() {
            c.push(f.components[k]);
        }
        total.push(f.total);
        sum.push(f.component_sum(n));
        imag = imag.max(f.imag);
        hdata.extend_from_slice(&m[..n * n]);
    }
    let h = HermitianField { n, data: hdata };
    let (mv, mp) = h.min_eigenvalue();
    let amplitude = amplitude_family(&h)
        .amplitude(AMPLITUDE_TOL, AMPLITUDE_S_MAX)
        .ok();
    Ok(PotentialReport {
        f_integral: forms::integrate(chart, &total),
        one_integral: forms::integrate(chart, &vec![1.0; chart.len()]),
        f_components: comps,
        f_total: total,
        f_sum: sum,
        taming_margin: Margin {
            value: mv,
            point: chart.coords(mp),
        },
        amplitude,
        max_component_imag: imag,
    })
}
