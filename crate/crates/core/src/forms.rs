//! Discrete real and complex differential forms on a periodic chart.
//!
//! A real `k`-form stores one scalar field per increasing multi-index, so
//! `b = Σ_{i<j} b_ij dx^i∧dx^j` satisfies `b(∂ᵢ,∂ⱼ) = b_ij`. The exterior
//! derivative uses centered differences, which keeps `d∘d = 0` exact.

use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;

use crate::algebra::{self, factorial, perm_sign, Mat};
use crate::error::{Error, Result};
use crate::grid::GridChart;
use crate::structure::CompatibleStructure;

/// Increasing multi-indices of length `k` in `0..d`, lexicographic.
pub fn multi_indices(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, d, k, &mut Vec::new(), &mut out);
    out
}

fn position_of(list: &[Vec<usize>], idx: &[usize]) -> Option<usize> {
    list.iter().position(|m| m == idx)
}

#[derive(Clone, Debug)]
pub struct FormField {
    chart: GridChart,
    degree: usize,
    indices: Vec<Vec<usize>>,
    comps: Vec<Vec<f64>>,
}

impl FormField {
    pub fn zeros(chart: &GridChart, degree: usize) -> Result<Self> {
        let d = chart.dim();
        if degree > d {
            return Err(Error::Degree(format!("degree {degree} exceeds dimension {d}")));
        }
        let indices = multi_indices(d, degree);
        let comps = vec![vec![0.0; chart.len()]; indices.len()];
        Ok(Self {
            chart: chart.clone(),
            degree,
            indices,
            comps,
        })
    }

    pub fn from_scalar(chart: &GridChart, values: Vec<f64>) -> Result<Self> {
        Self::from_components(chart, 0, vec![values])
    }

    pub fn from_components(chart: &GridChart, degree: usize, comps: Vec<Vec<f64>>) -> Result<Self> {
        let mut f = Self::zeros(chart, degree)?;
        if comps.len() != f.indices.len() || comps.iter().any(|c| c.len() != chart.len()) {
            return Err(Error::Shape(format!(
                "expected {} components of length {}",
                f.indices.len(),
                chart.len()
            )));
        }
        f.comps = comps;
        Ok(f)
    }

    /// Constant form `ω = Σ dx_α∧dy_α`.
    pub fn omega(chart: &GridChart) -> Self {
        let mut f = Self::zeros(chart, 2).expect("dimension ≥ 4");
        for a in 0..chart.half_dim() {
            let k = position_of(&f.indices, &[2 * a, 2 * a + 1]).expect("pair present");
            f.comps[k].iter_mut().for_each(|v| *v = 1.0);
        }
        f
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.comps
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.comps
    }

    /// Component for an increasing multi-index.
    pub fn component(&self, idx: &[usize]) -> Option<&[f64]> {
        position_of(&self.indices, idx).map(|k| self.comps[k].as_slice())
    }

    /// Coefficient `b(∂ᵢ,∂ⱼ)` of a 2-form at a point, any `i, j`.
    pub fn pair_value(&self, i: usize, j: usize, p: usize) -> f64 {
        debug_assert_eq!(self.degree, 2);
        let d = self.chart.dim();
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.comps[algebra::pair_index(d, i, j)][p],
            std::cmp::Ordering::Greater => -self.comps[algebra::pair_index(d, j, i)][p],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// Antisymmetric coefficient block of a 2-form at a point.
    pub fn matrix_at(&self, p: usize) -> Mat {
        let d = self.chart.dim();
        let mut m = algebra::zero_mat();
        for (k, &(i, j)) in algebra::pairs(d).iter().enumerate() {
            m[i][j] = self.comps[k][p];
            m[j][i] = -self.comps[k][p];
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&self, alpha: f64, other: &FormField) -> Result<FormField> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (o, b) in out.comps.iter_mut().zip(&other.comps) {
            o.par_iter_mut().zip(b.par_iter()).for_each(|(x, y)| *x += alpha * y);
        }
        Ok(out)
    }

    fn check_same(&self, other: &FormField) -> Result<()> {
        if !self.chart.same_shape(&other.chart) || self.degree != other.degree {
            return Err(Error::Shape("forms live on different charts or degrees".into()));
        }
        Ok(())
    }
}

/// Centered-difference exterior derivative.
pub fn exterior_derivative(a: &FormField) -> Result<FormField> {
    let d = a.chart.dim();
    if a.degree >= d {
        return Err(Error::Degree(format!(
            "cannot differentiate a {}-form on a {d}-dimensional torus",
            a.degree
        )));
    }
    let mut out = FormField::zeros(&a.chart, a.degree + 1)?;
    // one derivative per (source component, axis) pair actually used
    let mut cache: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; d]; a.indices.len()];
    for (kk, target) in out.indices.clone().iter().enumerate() {
        for m in 0..target.len() {
            let axis = target[m];
            let rest: Vec<usize> = target.iter().enumerate().filter(|&(q, _)| q != m).map(|(_, &v)| v).collect();
            let src = position_of(&a.indices, &rest).expect("sub-index present");
            if cache[src][axis].is_none() {
                cache[src][axis] = Some(a.chart.centered_diff(&a.comps[src], axis));
            }
            let deriv = cache[src][axis].as_ref().expect("cached");
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            out.comps[kk]
                .par_iter_mut()
                .zip(deriv.par_iter())
                .for_each(|(o, v)| *o += sign * v);
        }
    }
    Ok(out)
}

/// Gradient of a scalar field: `dφ` components.
pub fn gradient(chart: &GridChart, phi: &[f64]) -> Vec<Vec<f64>> {
    (0..chart.dim()).map(|a| chart.centered_diff(phi, a)).collect()
}

/// `(Ja)(X) = a(JX)`, i.e. `(Ja)_k = Σ_l a_l J_lk`.
pub fn apply_j_oneform(s: &CompatibleStructure, a: &FormField) -> Result<FormField> {
    if a.degree != 1 {
        return Err(Error::Degree(format!("expected a 1-form, got degree {}", a.degree)));
    }
    if !s.chart().same_shape(&a.chart) {
        return Err(Error::Shape("structure and form live on different charts".into()));
    }
    Ok(FormField {
        chart: a.chart.clone(),
        degree: 1,
        indices: a.indices.clone(),
        comps: apply_j_components(s, &a.comps),
    })
}

pub(crate) fn apply_j_components(s: &CompatibleStructure, a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = s.dim();
    let lat = s.lattice();
    let dd = d * d;
    let jv = s.j_values();
    (0..d)
        .map(|k| {
            (0..s.chart().len())
                .into_par_iter()
                .map(|p| {
                    let r = lat.reduce(p);
                    (0..d).map(|l| a[l][p] * jv[r * dd + l * d + k]).sum()
                })
                .collect()
        })
        .collect()
}

/// Pointwise graded wedge product.
pub fn wedge(a: &FormField, b: &FormField) -> Result<FormField> {
    let d = a.chart.dim();
    if !a.chart.same_shape(&b.chart) {
        return Err(Error::Shape("wedge factors live on different charts".into()));
    }
    if a.degree + b.degree > d {
        return Err(Error::Degree(format!(
            "degree {} + {} exceeds dimension {d}",
            a.degree, b.degree
        )));
    }
    let mut out = FormField::zeros(&a.chart, a.degree + b.degree)?;
    for (ia, ma) in a.indices.iter().enumerate() {
        for (ib, mb) in b.indices.iter().enumerate() {
            if ma.iter().any(|v| mb.contains(v)) {
                continue;
            }
            let mut cat = ma.clone();
            cat.extend_from_slice(mb);
            let sign = perm_sign(&cat);
            cat.sort_unstable();
            let k = position_of(&out.indices, &cat).expect("target index");
            let (ca, cb) = (&a.comps[ia], &b.comps[ib]);
            out.comps[k]
                .par_iter_mut()
                .enumerate()
                .for_each(|(p, o)| *o += sign * ca[p] * cb[p]);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bidegree {
    TwoZero,
    OneOne,
    ZeroTwo,
}

impl Bidegree {
    pub fn from_pq(p: usize, q: usize) -> Result<Self> {
        match (p, q) {
            (2, 0) => Ok(Self::TwoZero),
            (1, 1) => Ok(Self::OneOne),
            (0, 2) => Ok(Self::ZeroTwo),
            _ => Err(Error::Argument(format!("({p},{q}) is not a bidegree of a 2-form"))),
        }
    }
}

/// Bidegree part of a real 2-form block given `J` at the point.
///
/// With `π = ½(I − iJ)` projecting onto `T^{1,0}`: `P₂₀B = πᵀBπ`,
/// `P₀₂B = π̄ᵀBπ̄`, `P₁₁B = ½(B + JᵀBJ)`.
pub fn project_block(b: &Mat, j: &Mat, d: usize, which: Bidegree) -> [[Complex64; algebra::MAXD]; algebra::MAXD] {
    let mut out = [[Complex64::zero(); algebra::MAXD]; algebra::MAXD];
    match which {
        Bidegree::OneOne => {
            let jt = algebra::transpose(j, d);
            let q = algebra::matmul(&algebra::matmul(&jt, b, d), j, d);
            for i in 0..d {
                for k in 0..d {
                    out[i][k] = Complex64::new(0.5 * (b[i][k] + q[i][k]), 0.0);
                }
            }
        }
        Bidegree::TwoZero | Bidegree::ZeroTwo => {
            let sgn = if which == Bidegree::TwoZero { -1.0 } else { 1.0 };
            // π_ab = ½(δ_ab + sgn·i J_ab)
            let pi = |a: usize, c: usize| {
                let delta = if a == c { 0.5 } else { 0.0 };
                Complex64::new(delta, 0.5 * sgn * j[a][c])
            };
            let mut tmp = [[Complex64::zero(); algebra::MAXD]; algebra::MAXD];
            for a in 0..d {
                for k in 0..d {
                    let mut s = Complex64::zero();
                    for c in 0..d {
                        s += pi(c, k) * b[a][c];
                    }
                    tmp[a][k] = s;
                }
            }
            for i in 0..d {
                for k in 0..d {
                    let mut s = Complex64::zero();
                    for a in 0..d {
                        s += pi(a, i) * tmp[a][k];
                    }
                    out[i][k] = s;
                }
            }
        }
    }
    out
}

/// Complex 2-form of pure bidegree, stored by coordinate pair components.
#[derive(Clone, Debug)]
pub struct ComplexFormField {
    chart: GridChart,
    bidegree: Bidegree,
    comps: Vec<Vec<Complex64>>,
}

impl ComplexFormField {
    pub fn bidegree(&self) -> Bidegree {
        self.bidegree
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    pub fn components(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    pub fn value(&self, i: usize, j: usize, p: usize) -> Complex64 {
        let d = self.chart.dim();
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.comps[algebra::pair_index(d, i, j)][p],
            std::cmp::Ordering::Greater => -self.comps[algebra::pair_index(d, j, i)][p],
            std::cmp::Ordering::Equal => Complex64::zero(),
        }
    }

    pub fn conj(&self) -> ComplexFormField {
        let bidegree = match self.bidegree {
            Bidegree::TwoZero => Bidegree::ZeroTwo,
            Bidegree::ZeroTwo => Bidegree::TwoZero,
            Bidegree::OneOne => Bidegree::OneOne,
        };
        ComplexFormField {
            chart: self.chart.clone(),
            bidegree,
            comps: self
                .comps
                .iter()
                .map(|c| c.iter().map(|v| v.conj()).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Largest imaginary part across components.
    pub fn max_imag(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.im.abs()))
    }
}

pub fn bidegree_project(
    s: &CompatibleStructure,
    b: &FormField,
    p: usize,
    q: usize,
) -> Result<ComplexFormField> {
    let which = Bidegree::from_pq(p, q)?;
    if b.degree != 2 {
        return Err(Error::Degree(format!("expected a 2-form, got degree {}", b.degree)));
    }
    if !s.chart().same_shape(&b.chart) {
        return Err(Error::Shape("structure and form live on different charts".into()));
    }
    let d = s.dim();
    let np = algebra::pair_count(d);
    let pr = algebra::pairs(d);
    let per_point: Vec<Vec<Complex64>> = (0..b.chart.len())
        .into_par_iter()
        .map(|pt| {
            let blk = project_block(&b.matrix_at(pt), &s.j_at(pt), d, which);
            pr.iter().map(|&(i, k)| blk[i][k]).collect()
        })
        .collect();
    let mut comps = vec![vec![Complex64::zero(); b.chart.len()]; np];
    for (pt, row) in per_point.into_iter().enumerate() {
        for k in 0..np {
            comps[k][pt] = row[k];
        }
    }
    Ok(ComplexFormField {
        chart: b.chart.clone(),
        bidegree: which,
        comps,
    })
}

/// Pointwise ratio of a top form to `ω^n`.
#[derive(Clone, Debug)]
pub struct TopFormRatio {
    pub values: Vec<f64>,
}

/// Top-form coefficient of `ω^n` in the coordinate volume basis.
pub fn omega_power_coefficient(n: usize) -> f64 {
    factorial(n)
}

pub fn top_ratio(s: &CompatibleStructure, t: &FormField) -> Result<TopFormRatio> {
    let d = s.dim();
    if t.degree != d {
        return Err(Error::Degree(format!("expected a {d}-form, got degree {}", t.degree)));
    }
    let c = omega_power_coefficient(s.half_dim());
    Ok(TopFormRatio {
        values: t.comps[0].iter().map(|v| v / c).collect(),
    })
}

/// `∫ f ω^n/n!` by the periodic rectangle rule; the normalized volume of the
/// unit torus is 1.
pub fn integrate(chart: &GridChart, f: &[f64]) -> f64 {
    let parts: Vec<(f64, f64)> = f.par_chunks(4096).map(|c| neumaier(c.iter().copied())).collect();
    let (s, comp) = neumaier(parts.iter().flat_map(|&(s, c)| [s, c]));
    (s + comp) * chart.cell_volume()
}

// compensated sum, returned as (sum, correction)
fn neumaier(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    (s, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::I;
    use crate::structure::{standard_structure, twisted_structure, StructureRecipe};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn chart4(n: usize) -> GridChart {
        GridChart::uniform(2, n).unwrap()
    }

    fn random_form(chart: &GridChart, k: usize, seed: u64) -> FormField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = FormField::zeros(chart, k).unwrap();
        for c in f.components_mut() {
            c.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        f
    }

    #[test]
    fn d_of_constant_vanishes_and_dd_is_zero() {
        let c = chart4(8);
        let one = FormField::from_scalar(&c, vec![3.0; c.len()]).unwrap();
        assert_eq!(exterior_derivative(&one).unwrap().max_abs(), 0.0);
        let phi = c.sample(|x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[3]).cos());
        let f = FormField::from_scalar(&c, phi).unwrap();
        let dd = exterior_derivative(&exterior_derivative(&f).unwrap()).unwrap();
        assert!(dd.max_abs() <= 1e-12);
        let r = random_form(&c, 1, 3);
        let dd1 = exterior_derivative(&exterior_derivative(&r).unwrap()).unwrap();
        assert!(dd1.max_abs() <= 1e-12);
        let top = random_form(&c, 4, 1);
        assert!(matches!(exterior_derivative(&top), Err(Error::Degree(_))));
    }

    #[test]
    fn d_of_oneform_converges_at_second_order() {
        // a = sin(2πy₁) dx₁  ⇒  da = −2π cos(2πy₁) dx₁∧dy₁
        let mut errs = vec![];
        for n in [8, 16, 32] {
            let c = GridChart::new(2, &[8, n, 8, 8]).unwrap();
            let mut comps = vec![vec![0.0; c.len()]; 4];
            comps[0] = c.sample(|x| (2.0 * PI * x[1]).sin());
            let a = FormField::from_components(&c, 1, comps).unwrap();
            let da = exterior_derivative(&a).unwrap();
            let exact = c.sample(|x| -2.0 * PI * (2.0 * PI * x[1]).cos());
            let got = da.component(&[0, 1]).unwrap();
            errs.push(
                got.iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
            assert!(da.component(&[0, 2]).unwrap().iter().all(|v| *v == 0.0));
        }
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
        }
    }

    #[test]
    fn j_action_on_standard_coframe() {
        let c = chart4(8);
        let s = standard_structure(&c);
        let mut comps = vec![vec![0.0; c.len()]; 4];
        comps[0] = vec![1.0; c.len()];
        let dx1 = FormField::from_components(&c, 1, comps).unwrap();
        let jdx1 = apply_j_oneform(&s, &dx1).unwrap();
        assert!(jdx1.components()[1].iter().all(|v| *v == -1.0));
        assert!(jdx1.components()[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn j_action_squares_to_minus_one_and_matches_dense_product() {
        let c = chart4(8);
        let s = twisted_structure(&c, &StructureRecipe::twisted_default(2)).unwrap();
        let a = random_form(&c, 1, 7);
        let ja = apply_j_oneform(&s, &a).unwrap();
        let jja = apply_j_oneform(&s, &ja).unwrap();
        assert!(jja.axpy(1.0, &a).unwrap().max_abs() <= 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = rng.gen_range(0..c.len());
            let j = s.analytic_j(&c.position(p));
            for k in 0..4 {
                let oracle: f64 = (0..4).map(|l| a.components()[l][p] * j[l][k]).sum();
                assert!((oracle - ja.components()[k][p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn volume_wedge_and_odd_self_wedge() {
        let c = chart4(8);
        let om = FormField::omega(&c);
        let vol = wedge(&om, &om).unwrap();
        assert!(vol.components()[0].iter().all(|v| *v == 2.0));
        let a = random_form(&c, 1, 5);
        assert!(wedge(&a, &a).unwrap().max_abs() <= 1e-14);
        let b = random_form(&c, 3, 6);
        assert!(matches!(wedge(&b, &b), Err(Error::Degree(_))));
    }

    #[test]
    fn two_form_wedge_matches_permutation_oracle() {
        let c = chart4(8);
        let a = random_form(&c, 2, 1);
        let b = random_form(&c, 2, 2);
        let w = wedge(&a, &b).unwrap();
        // (a∧b)(e0..e3) = (1/(2!2!)) Σ_σ sgn σ a(eσ0,eσ1) b(eσ2,eσ3)
        for p in [0, 99, 1234] {
            let mut sum = 0.0;
            let mut perm = [0usize, 1, 2, 3];
            fn heap(k: usize, perm: &mut [usize; 4], out: &mut Vec<[usize; 4]>) {
                if k == 1 {
                    out.push(*perm);
                    return;
                }
                for i in 0..k {
                    heap(k - 1, perm, out);
                    if k % 2 == 0 {
                        perm.swap(i, k - 1);
                    } else {
                        perm.swap(0, k - 1);
                    }
                }
            }
            let mut all = vec![];
            heap(4, &mut perm, &mut all);
            assert_eq!(all.len(), 24);
            for s in all {
                sum += perm_sign(&s) * a.pair_value(s[0], s[1], p) * b.pair_value(s[2], s[3], p);
            }
            assert!((sum / 4.0 - w.components()[0][p]).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_is_type_one_one() {
        let c = chart4(8);
        let s = twisted_structure(&c, &StructureRecipe::twisted_default(2)).unwrap();
        let om = FormField::omega(&c);
        let p20 = bidegree_project(&s, &om, 2, 0).unwrap();
        let p11 = bidegree_project(&s, &om, 1, 1).unwrap();
        assert!(p20.max_abs() <= 1e-12);
        for (k, comp) in p11.components().iter().enumerate() {
            for (pt, v) in comp.iter().enumerate() {
                assert!((v.re - om.components()[k][pt]).abs() <= 1e-12);
            }
        }
        assert!(matches!(bidegree_project(&s, &om, 2, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn real_part_of_theta_wedge_theta_has_no_one_one_part() {
        // θ¹∧θ² with θ^α = (dx_α + i dy_α)/√2
        let c = chart4(8);
        let s = standard_structure(&c);
        let mut comps = vec![vec![0.0; c.len()]; 6];
        // Re((dx1 + i dy1)∧(dx2 + i dy2))/2 = (dx1∧dx2 − dy1∧dy2)/2
        comps[algebra::pair_index(4, 0, 2)] = vec![0.5; c.len()];
        comps[algebra::pair_index(4, 1, 3)] = vec![-0.5; c.len()];
        let b = FormField::from_components(&c, 2, comps).unwrap();
        assert!(bidegree_project(&s, &b, 1, 1).unwrap().max_abs() <= 1e-14);
    }

    #[test]
    fn top_ratio_and_integration() {
        let c = chart4(8);
        let s = standard_structure(&c);
        let om = FormField::omega(&c);
        let vol = wedge(&om, &om).unwrap();
        assert!(top_ratio(&s, &vol).unwrap().values.iter().all(|v| *v == 1.0));
        let twice = vol.axpy(1.0, &vol).unwrap();
        assert!(top_ratio(&s, &twice).unwrap().values.iter().all(|v| *v == 2.0));
        assert!((integrate(&c, &vec![1.0; c.len()]) - 1.0).abs() < 1e-14);
        let sine = c.sample(|x| (2.0 * PI * x[0]).sin());
        assert!(integrate(&c, &sine).abs() < 1e-14);
    }

    fn block_from(v: &[f64]) -> Mat {
        let mut m = algebra::zero_mat();
        for (k, (i, j)) in algebra::pairs(4).into_iter().enumerate() {
            m[i][j] = v[k];
            m[j][i] = -v[k];
        }
        m
    }

    proptest! {
        #[test]
        fn projectors_split_and_are_idempotent(
            v in proptest::collection::vec(-1.0f64..1.0, 6),
            x in 0.0f64..1.0,
        ) {
            let c = chart4(8);
            let s = twisted_structure(&c, &StructureRecipe::twisted_default(2)).unwrap();
            let j = s.analytic_j(&[x, 0.0, 0.0, 0.0]);
            let b = block_from(&v);
            let p20 = project_block(&b, &j, 4, Bidegree::TwoZero);
            let p02 = project_block(&b, &j, 4, Bidegree::ZeroTwo);
            let p11 = project_block(&b, &j, 4, Bidegree::OneOne);
            for i in 0..4 {
                for k in 0..4 {
                    let sum = p20[i][k] + p02[i][k] + p11[i][k];
                    prop_assert!((sum.re - b[i][k]).abs() < 1e-12 && sum.im.abs() < 1e-12);
                    prop_assert!((p20[i][k].conj() - p02[i][k]).norm() < 1e-12);
                }
            }
            // idempotence on the real and imaginary parts separately
            let re = {
                let mut m = algebra::zero_mat();
                for i in 0..4 { for k in 0..4 { m[i][k] = p20[i][k].re; } }
                m
            };
            let im = {
                let mut m = algebra::zero_mat();
                for i in 0..4 { for k in 0..4 { m[i][k] = p20[i][k].im; } }
                m
            };
            let a = project_block(&re, &j, 4, Bidegree::TwoZero);
            let bb = project_block(&im, &j, 4, Bidegree::TwoZero);
            for i in 0..4 {
                for k in 0..4 {
                    let again = a[i][k] + I * bb[i][k];
                    prop_assert!((again - p20[i][k]).norm() < 1e-12);
                }
            }
        }

        #[test]
        fn wedge_is_graded_commutative_and_associative(seed in 0u64..1000) {
            let c = chart4(8);
            let a = random_form(&c, 1, seed);
            let b = random_form(&c, 2, seed + 1);
            let e = random_form(&c, 1, seed + 2);
            let ab = wedge(&a, &b).unwrap();
            let ba = wedge(&b, &a).unwrap();
            prop_assert!(ab.axpy(-1.0, &ba).unwrap().max_abs() < 1e-12);
            let ae = wedge(&a, &e).unwrap();
            let ea = wedge(&e, &a).unwrap();
            prop_assert!(ae.axpy(1.0, &ea).unwrap().max_abs() < 1e-12);
            let left = wedge(&wedge(&a, &b).unwrap(), &e).unwrap();
            let right = wedge(&a, &wedge(&b, &e).unwrap()).unwrap();
            prop_assert!(left.axpy(-1.0, &right).unwrap().max_abs() < 1e-12);
        }
    }
}
