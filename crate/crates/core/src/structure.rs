//! Compatible almost complex structures on the flat torus.
//!
//! The symplectic form is always `ω = Σ dx_α∧dy_α`. Non-integrable examples
//! are produced by conjugating the standard structure with a point-dependent
//! symplectic matrix, `J = A J₀ A⁻¹` with `A = exp(ε t(p) S)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    self, identity, j0_matrix, matmul, max_abs, mat_sub, omega_matrix, transpose, Mat, MAXD,
};
use crate::error::{Error, Result};
use crate::grid::{GridChart, ReducedLattice};

pub const STRUCTURE_TOL: f64 = 1e-10;
const GENERATOR_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Trig {
    Sin,
    Cos,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Factor {
    trig: Trig,
    freq: f64,
    axis: usize,
}

impl Factor {
    fn arg(&self, x: &[f64]) -> f64 {
        2.0 * PI * self.freq * x[self.axis]
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self.trig {
            Trig::Sin => self.arg(x).sin(),
            Trig::Cos => self.arg(x).cos(),
        }
    }

    fn derivative(&self, x: &[f64]) -> f64 {
        let k = 2.0 * PI * self.freq;
        match self.trig {
            Trig::Sin => k * self.arg(x).cos(),
            Trig::Cos => -k * self.arg(x).sin(),
        }
    }
}

/// Periodic scalar profile `t(p)`: a coefficient times a product of factors
/// `sin(2π k x_α)` / `cos(2π k y_α)`.
///
/// Written as e.g. `sin(x1)`, `cos(2y2)`, `0.5*sin(x1)*cos(y2)`; the
/// frequency multiplies one full period of the unit torus.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    coefficient: f64,
    factors: Vec<Factor>,
    text: String,
}

impl Profile {
    /// Axes the profile depends on, ascending.
    pub fn axes(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.factors.iter().map(|f| f.axis).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    pub fn max_axis(&self) -> Option<usize> {
        self.factors.iter().map(|f| f.axis).max()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.coefficient * self.factors.iter().map(|f| f.value(x)).product::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; MAXD] {
        let mut g = [0.0; MAXD];
        for (k, fk) in self.factors.iter().enumerate() {
            let mut p = self.coefficient * fk.derivative(x);
            for (m, fm) in self.factors.iter().enumerate() {
                if m != k {
                    p *= fm.value(x);
                }
            }
            g[fk.axis] += p;
        }
        g
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn parse_factor(tok: &str) -> Result<Factor> {
    let bad = || Error::Parse(format!("cannot parse profile factor `{tok}`"));
    let (trig, rest) = if let Some(r) = tok.strip_prefix("sin(") {
        (Trig::Sin, r)
    } else if let Some(r) = tok.strip_prefix("cos(") {
        (Trig::Cos, r)
    } else {
        return Err(bad());
    };
    let inner = rest.strip_suffix(')').ok_or_else(bad)?;
    let pos = inner.find(['x', 'y']).ok_or_else(bad)?;
    let freq = if pos == 0 {
        1.0
    } else {
        inner[..pos].parse::<f64>().map_err(|_| bad())?
    };
    let is_y = inner.as_bytes()[pos] == b'y';
    let alpha: usize = inner[pos + 1..].parse().map_err(|_| bad())?;
    if alpha == 0 {
        return Err(bad());
    }
    Ok(Factor {
        trig,
        freq,
        axis: 2 * (alpha - 1) + usize::from(is_y),
    })
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let text: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if text.is_empty() {
            return Err(Error::Parse("empty profile".into()));
        }
        let mut coefficient = 1.0;
        let mut factors = Vec::new();
        for tok in text.split('*') {
            if let Ok(c) = tok.parse::<f64>() {
                coefficient *= c;
            } else {
                factors.push(parse_factor(tok)?);
            }
        }
        Ok(Self {
            coefficient,
            factors,
            text,
        })
    }
}

impl Serialize for Profile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Standard,
    Twisted,
}

/// Recipe for `J = exp(ε t S) J₀ exp(−ε t S)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureRecipe {
    pub kind: StructureKind,
    pub epsilon: f64,
    /// Row-major `2n × 2n` generator `S`.
    pub generator: Vec<f64>,
    pub profile: Profile,
}

/// `S = −ΩQ` with `Q` symmetric coupling `x₁` and `x₂`.
pub fn default_generator(n: usize) -> Vec<f64> {
    let d = 2 * n;
    let mut q = algebra::zero_mat();
    q[0][2] = 1.0;
    q[2][0] = 1.0;
    let s = matmul(&omega_matrix(d), &q, d);
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = -s[i][j];
        }
    }
    out
}

impl StructureRecipe {
    pub fn standard(n: usize) -> Self {
        Self {
            kind: StructureKind::Standard,
            epsilon: 0.0,
            generator: vec![0.0; 4 * n * n],
            profile: "0".parse().expect("constant profile"),
        }
    }

    /// The reference non-integrable model: `ε = 0.3`, `t = sin(2πx₁)`.
    pub fn twisted_default(n: usize) -> Self {
        Self::twisted(n, 0.3)
    }

    pub fn twisted(n: usize, epsilon: f64) -> Self {
        Self {
            kind: StructureKind::Twisted,
            epsilon,
            generator: default_generator(n),
            profile: "sin(x1)".parse().expect("valid profile"),
        }
    }

    pub fn generator_matrix(&self, d: usize) -> Result<Mat> {
        if self.generator.len() != d * d {
            return Err(Error::Recipe(format!(
                "generator has {} entries, expected {}",
                self.generator.len(),
                d * d
            )));
        }
        let mut s = algebra::zero_mat();
        for i in 0..d {
            for j in 0..d {
                s[i][j] = self.generator[i * d + j];
            }
        }
        Ok(s)
    }

    /// Largest entry of `SᵀΩ + ΩS`.
    pub fn symplectic_defect(&self, d: usize) -> Result<f64> {
        let s = self.generator_matrix(d)?;
        let om = omega_matrix(d);
        let a = matmul(&transpose(&s, d), &om, d);
        let b = matmul(&om, &s, d);
        let mut m: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                m = m.max((a[i][j] + b[i][j]).abs());
            }
        }
        Ok(m)
    }

    pub fn check(&self, d: usize) -> Result<()> {
        if let Some(ax) = self.profile.max_axis() {
            if ax >= d {
                return Err(Error::Recipe(format!(
                    "profile `{}` refers to axis {ax} but the torus has dimension {d}",
                    self.profile
                )));
            }
        }
        if !self.epsilon.is_finite() {
            return Err(Error::Recipe("epsilon must be finite".into()));
        }
        let defect = self.symplectic_defect(d)?;
        if defect > GENERATOR_TOL {
            return Err(Error::Recipe(format!(
                "generator is not infinitesimally symplectic: max|SᵀΩ + ΩS| = {defect:.3e}"
            )));
        }
        Ok(())
    }
}

fn expm(s: &Mat, scale: f64, d: usize) -> Mat {
    let m = DMatrix::from_fn(d, d, |i, j| scale * s[i][j]);
    algebra::from_dmatrix(&m.exp())
}

/// Conjugated structure `A J₀ A⁻¹`, `A = exp(τ S)`.
fn conjugated_j(s: &Mat, tau: f64, d: usize) -> Mat {
    if tau == 0.0 {
        return j0_matrix(d);
    }
    let a = expm(s, tau, d);
    let ainv = expm(s, -tau, d);
    matmul(&matmul(&a, &j0_matrix(d), d), &ainv, d)
}

/// A compatible almost complex structure sampled on a chart.
///
/// `J` depends only on the profile axes, so it is stored on the reduced
/// lattice spanned by them.
#[derive(Clone, Debug)]
pub struct CompatibleStructure {
    chart: GridChart,
    recipe: StructureRecipe,
    lattice: ReducedLattice,
    generator: Mat,
    j: Vec<f64>,
}

pub fn standard_structure(chart: &GridChart) -> CompatibleStructure {
    let d = chart.dim();
    let lattice = ReducedLattice::new(chart, &[]);
    let mut j = vec![0.0; d * d];
    let j0 = j0_matrix(d);
    for a in 0..d {
        for b in 0..d {
            j[a * d + b] = j0[a][b];
        }
    }
    CompatibleStructure {
        chart: chart.clone(),
        recipe: StructureRecipe::standard(chart.half_dim()),
        lattice,
        generator: algebra::zero_mat(),
        j,
    }
}

pub fn twisted_structure(chart: &GridChart, recipe: &StructureRecipe) -> Result<CompatibleStructure> {
    if recipe.kind != StructureKind::Twisted {
        return Err(Error::Recipe("twisted_structure requires kind = twisted".into()));
    }
    let d = chart.dim();
    recipe.check(d)?;
    let s = recipe.generator_matrix(d)?;
    let axes = if recipe.epsilon == 0.0 {
        vec![]
    } else {
        recipe.profile.axes()
    };
    let lattice = ReducedLattice::new(chart, &axes);
    let dd = d * d;
    let mut j = vec![0.0; lattice.len() * dd];
    j.par_chunks_mut(dd).enumerate().for_each(|(r, out)| {
        let x = lattice.position(r);
        let jm = conjugated_j(&s, recipe.epsilon * recipe.profile.value(&x), d);
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] = jm[a][b];
            }
        }
    });
    let st = CompatibleStructure {
        chart: chart.clone(),
        recipe: recipe.clone(),
        lattice,
        generator: s,
        j,
    };
    if let Some((r, lam)) = st.min_metric_eigenvalue() {
        if !(lam > 0.0) {
            return Err(Error::Structural {
                point: st.lattice.representative(r),
                message: format!("metric g is not positive definite (λ_min = {lam:.3e})"),
            });
        }
    }
    Ok(st)
}

/// Builds whichever structure the recipe describes.
pub fn build_structure(chart: &GridChart, recipe: &StructureRecipe) -> Result<CompatibleStructure> {
    match recipe.kind {
        StructureKind::Standard => Ok(standard_structure(chart)),
        StructureKind::Twisted => twisted_structure(chart, recipe),
    }
}

impl CompatibleStructure {
    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    pub fn recipe(&self) -> &StructureRecipe {
        &self.recipe
    }

    pub fn lattice(&self) -> &ReducedLattice {
        &self.lattice
    }

    pub fn half_dim(&self) -> usize {
        self.chart.half_dim()
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn is_constant(&self) -> bool {
        self.lattice.axes().is_empty()
    }

    /// Raw `J` entries on the reduced lattice, `d²` row-major per point.
    pub fn j_values(&self) -> &[f64] {
        &self.j
    }

    pub fn j_reduced(&self, r: usize) -> Mat {
        let d = self.dim();
        let mut m = algebra::zero_mat();
        let src = &self.j[r * d * d..(r + 1) * d * d];
        for a in 0..d {
            for b in 0..d {
                m[a][b] = src[a * d + b];
            }
        }
        m
    }

    pub fn j_at(&self, idx: usize) -> Mat {
        self.j_reduced(self.lattice.reduce(idx))
    }

    pub fn omega(&self) -> Mat {
        omega_matrix(self.dim())
    }

    /// `g(X,Y) = ω(X,JY)`, i.e. the matrix `ΩJ`.
    pub fn metric_reduced(&self, r: usize) -> Mat {
        let d = self.dim();
        matmul(&omega_matrix(d), &self.j_reduced(r), d)
    }

    pub fn metric_at(&self, idx: usize) -> Mat {
        self.metric_reduced(self.lattice.reduce(idx))
    }

    /// Exact `J` at an arbitrary point of the torus.
    pub fn analytic_j(&self, x: &[f64]) -> Mat {
        let d = self.dim();
        match self.recipe.kind {
            StructureKind::Standard => j0_matrix(d),
            StructureKind::Twisted => conjugated_j(
                &self.generator,
                self.recipe.epsilon * self.recipe.profile.value(x),
                d,
            ),
        }
    }

    /// Exact `J` and its coordinate derivatives `∂ᵢJ = ε ∂ᵢt (SJ − JS)`.
    pub fn analytic_j_jet(&self, x: &[f64]) -> (Mat, [Mat; MAXD]) {
        let d = self.dim();
        let j = self.analytic_j(x);
        let mut dj = [algebra::zero_mat(); MAXD];
        if self.recipe.kind == StructureKind::Twisted && self.recipe.epsilon != 0.0 {
            let grad = self.recipe.profile.gradient(x);
            let comm = mat_sub(
                &matmul(&self.generator, &j, d),
                &matmul(&j, &self.generator, d),
                d,
            );
            for i in 0..d {
                let c = self.recipe.epsilon * grad[i];
                if c == 0.0 {
                    continue;
                }
                for a in 0..d {
                    for b in 0..d {
                        dj[i][a][b] = c * comm[a][b];
                    }
                }
            }
        }
        (j, dj)
    }

    /// Copy with one `J` entry perturbed on the reduced lattice; the result
    /// is generally not a valid structure and exists for defect detection.
    pub fn with_perturbed_entry(&self, r: usize, a: usize, b: usize, delta: f64) -> Self {
        let d = self.dim();
        let mut out = self.clone();
        out.j[r * d * d + a * d + b] += delta;
        out
    }

    fn min_metric_eigenvalue(&self) -> Option<(usize, f64)> {
        let d = self.dim();
        (0..self.lattice.len())
            .into_par_iter()
            .map(|r| (r, algebra::symmetric_min_eigenvalue(&self.metric_reduced(r), d)))
            .reduce_with(|a, b| if b.1 < a.1 { b } else { a })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub j_square_defect: f64,
    pub omega_invariance_defect: f64,
    pub metric_symmetry_defect: f64,
    pub min_metric_eigenvalue: f64,
    /// Grid coordinates of the worst point, if any check failed.
    pub worst_point: Option<Vec<usize>>,
    pub passed: bool,
}

#[derive(Clone, Copy, Default)]
struct Defects {
    jj: f64,
    om: f64,
    sym: f64,
    lam: f64,
}

/// Checks `J² = −Id`, `ω(J·,J·) = ω`, symmetry and positivity of `g`.
pub fn validate_structure(s: &CompatibleStructure) -> ValidationReport {
    let d = s.dim();
    let om = omega_matrix(d);
    let minus_id = mat_sub(&algebra::zero_mat(), &identity(d), d);
    let per_point: Vec<Defects> = (0..s.lattice.len())
        .into_par_iter()
        .map(|r| {
            let j = s.j_reduced(r);
            let jj = max_abs(&mat_sub(&matmul(&j, &j, d), &minus_id, d), d);
            let pulled = matmul(&matmul(&transpose(&j, d), &om, d), &j, d);
            let omd = max_abs(&mat_sub(&pulled, &om, d), d);
            let g = matmul(&om, &j, d);
            let sym = max_abs(&mat_sub(&g, &transpose(&g, d), d), d);
            Defects {
                jj,
                om: omd,
                sym,
                lam: algebra::symmetric_min_eigenvalue(&g, d),
            }
        })
        .collect();
    let mut total = Defects {
        lam: f64::INFINITY,
        ..Defects::default()
    };
    let mut worst: Option<(usize, f64)> = None;
    for (r, p) in per_point.iter().enumerate() {
        total.jj = total.jj.max(p.jj);
        total.om = total.om.max(p.om);
        total.sym = total.sym.max(p.sym);
        total.lam = total.lam.min(p.lam);
        let badness = p.jj.max(p.om).max(p.sym).max(if p.lam > 0.0 { 0.0 } else { 1.0 - p.lam });
        if badness > STRUCTURE_TOL && worst.map_or(true, |w| badness > w.1) {
            worst = Some((r, badness));
        }
    }
    ValidationReport {
        j_square_defect: total.jj,
        omega_invariance_defect: total.om,
        metric_symmetry_defect: total.sym,
        min_metric_eigenvalue: total.lam,
        worst_point: worst.map(|(r, _)| s.lattice.representative(r)),
        passed: worst.is_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_parsing() {
        let p: Profile = "sin(x1)".parse().unwrap();
        assert_eq!(p.axes(), vec![0]);
        assert!((p.value(&[0.25, 0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        let q: Profile = "0.5*cos(2y2)*sin(x1)".parse().unwrap();
        assert_eq!(q.axes(), vec![0, 3]);
        let x = [0.1, 0.2, 0.3, 0.4];
        let h = 1e-6;
        let g = q.gradient(&x);
        let mut xp = x;
        xp[3] += h;
        let mut xm = x;
        xm[3] -= h;
        assert!(((q.value(&xp) - q.value(&xm)) / (2.0 * h) - g[3]).abs() < 1e-6);
        assert!("tan(x1)".parse::<Profile>().is_err());
        assert!("sin(z1)".parse::<Profile>().is_err());
    }

    #[test]
    fn default_generator_is_symplectic() {
        for n in [2, 3] {
            let r = StructureRecipe::twisted_default(n);
            assert!(r.symplectic_defect(2 * n).unwrap() < 1e-15);
        }
    }

    #[test]
    fn standard_structure_is_euclidean() {
        let c = GridChart::uniform(2, 8).unwrap();
        let s = standard_structure(&c);
        let rep = validate_structure(&s);
        assert!(rep.passed);
        assert_eq!(rep.j_square_defect, 0.0);
        assert!((rep.min_metric_eigenvalue - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_epsilon_twist_is_standard() {
        let c = GridChart::uniform(2, 8).unwrap();
        let s = twisted_structure(&c, &StructureRecipe::twisted(2, 0.0)).unwrap();
        let s0 = standard_structure(&c);
        for idx in [0, 17, 4000] {
            assert_eq!(s.j_at(idx), s0.j_at(idx));
        }
    }

    #[test]
    fn twisted_structure_passes_validation() {
        let c = GridChart::uniform(3, 8).unwrap();
        let s = twisted_structure(&c, &StructureRecipe::twisted_default(3)).unwrap();
        assert_eq!(s.lattice().len(), 8);
        let rep = validate_structure(&s);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.j_square_defect <= 1e-12);
        assert!(rep.min_metric_eigenvalue > 0.0);
    }

    #[test]
    fn corrupted_entry_is_located() {
        let c = GridChart::new(2, &[16, 8, 8, 8]).unwrap();
        let s = twisted_structure(&c, &StructureRecipe::twisted_default(2)).unwrap();
        let bad = s.with_perturbed_entry(5, 1, 2, 1e-3);
        let rep = validate_structure(&bad);
        assert!(!rep.passed);
        assert_eq!(rep.worst_point, Some(vec![5, 0, 0, 0]));
    }

    #[test]
    fn non_symplectic_generator_is_rejected() {
        let c = GridChart::uniform(2, 8).unwrap();
        let mut r = StructureRecipe::twisted_default(2);
        r.generator[0] = 1.0;
        assert!(matches!(twisted_structure(&c, &r), Err(Error::Recipe(_))));
    }

    #[test]
    fn twist_converges_linearly_in_epsilon() {
        let c = GridChart::new(2, &[16, 8, 8, 8]).unwrap();
        let s0 = standard_structure(&c);
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e| {
                let s = twisted_structure(&c, &StructureRecipe::twisted(2, e)).unwrap();
                (0..c.len())
                    .step_by(37)
                    .map(|i| max_abs(&mat_sub(&s.j_at(i), &s0.j_at(i), 4), 4))
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
        }
    }

    #[test]
    fn analytic_derivative_matches_difference() {
        let c = GridChart::uniform(2, 8).unwrap();
        let s = twisted_structure(&c, &StructureRecipe::twisted_default(2)).unwrap();
        let x = [0.13, 0.4, 0.7, 0.2];
        let (_, dj) = s.analytic_j_jet(&x);
        let h = 1e-6;
        let mut xp = x;
        xp[0] += h;
        let mut xm = x;
        xm[0] -= h;
        let fd = mat_sub(&s.analytic_j(&xp), &s.analytic_j(&xm), 4);
        for a in 0..4 {
            for b in 0..4 {
                assert!((fd[a][b] / (2.0 * h) - dj[0][a][b]).abs() < 1e-6);
            }
        }
        assert_eq!(max_abs(&dj[1], 4), 0.0);
    }
}
