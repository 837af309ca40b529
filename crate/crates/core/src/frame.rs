//! Unitary frames, the second canonical connection and its torsion.
//!
//! Everything here depends on `J` alone and therefore lives on the reduced
//! lattice of the structure. The connection is Levi-Civita corrected by
//! `−½ J(∇J)`; torsion is extracted from `Θ^α = dθ^α + ω_β^α∧θ^β`.

use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;

use crate::algebra::{self, matmul, omega_matrix, CVec, Mat, I, MAXD};
use crate::error::{Error, Result};
use crate::grid::{GridChart, ReducedLattice};
use crate::structure::CompatibleStructure;

/// Neighbour jumps up to `FRAME_JUMP_FACTOR · h` count as smooth.
pub const FRAME_JUMP_FACTOR: f64 = 64.0;
const DEGENERACY_TOL: f64 = 1e-8;

pub fn default_seeds(n: usize) -> Vec<usize> {
    (0..n).map(|a| 2 * a).collect()
}

/// Pointwise J-adapted Gram–Schmidt: `e_α = (ε_α − iJε_α)/√2`.
///
/// Returns the index of the first degenerate seed on failure.
pub fn point_frame(j: &Mat, d: usize, seeds: &[usize]) -> std::result::Result<[CVec; 3], usize> {
    let g = matmul(&omega_matrix(d), j, d);
    let gdot = |u: &[f64; MAXD], v: &[f64; MAXD]| -> f64 {
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                s += u[a] * g[a][b] * v[b];
            }
        }
        s
    };
    let mut basis: Vec<[f64; MAXD]> = Vec::with_capacity(d);
    let mut e = [[Complex64::zero(); MAXD]; 3];
    for (alpha, &seed) in seeds.iter().enumerate() {
        let mut v = [0.0; MAXD];
        v[seed] = 1.0;
        let start = gdot(&v, &v).sqrt();
        for w in &basis {
            let c = gdot(w, &v);
            for k in 0..d {
                v[k] -= c * w[k];
            }
        }
        let norm = gdot(&v, &v).sqrt();
        if !(norm > DEGENERACY_TOL * start) {
            return Err(alpha);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let jv = algebra::mat_vec(j, &v, d);
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        for k in 0..d {
            e[alpha][k] = Complex64::new(v[k] * s2, -jv[k] * s2);
        }
        basis.push(v);
        basis.push(jv);
    }
    Ok(e)
}

/// Coframe `θ^α(X) = g(ē_α, X)`.
pub fn point_coframe(e: &[CVec; 3], j: &Mat, n: usize, d: usize) -> [CVec; 3] {
    let g = matmul(&omega_matrix(d), j, d);
    let mut th = [[Complex64::zero(); MAXD]; 3];
    for a in 0..n {
        for k in 0..d {
            let mut s = Complex64::zero();
            for i in 0..d {
                s += e[a][i].conj() * g[i][k];
            }
            th[a][k] = s;
        }
    }
    th
}

#[derive(Clone, Debug)]
pub struct UnitaryFrame {
    lattice: ReducedLattice,
    n: usize,
    d: usize,
    e: Vec<Complex64>,
    theta: Vec<Complex64>,
    max_jump: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct FrameDefects {
    pub unitarity: f64,
    pub alignment: f64,
    pub duality: f64,
}

pub fn build_frame(s: &CompatibleStructure) -> Result<UnitaryFrame> {
    build_frame_with_seeds(s, &default_seeds(s.half_dim()))
}

pub fn build_frame_with_seeds(s: &CompatibleStructure, seeds: &[usize]) -> Result<UnitaryFrame> {
    let n = s.half_dim();
    let d = s.dim();
    if seeds.len() != n || seeds.iter().any(|&a| a >= d) {
        return Err(Error::Argument(format!("need {n} seed axes below {d}")));
    }
    let lat = s.lattice().clone();
    let per: Vec<std::result::Result<([CVec; 3], [CVec; 3]), usize>> = (0..lat.len())
        .into_par_iter()
        .map(|r| {
            let j = s.j_reduced(r);
            point_frame(&j, d, seeds).map(|e| (e, point_coframe(&e, &j, n, d)))
        })
        .collect();
    let mut e = vec![Complex64::zero(); lat.len() * n * d];
    let mut theta = vec![Complex64::zero(); lat.len() * n * d];
    for (r, res) in per.into_iter().enumerate() {
        match res {
            Ok((fe, ft)) => {
                for a in 0..n {
                    for k in 0..d {
                        e[(r * n + a) * d + k] = fe[a][k];
                        theta[(r * n + a) * d + k] = ft[a][k];
                    }
                }
            }
            Err(alpha) => {
                return Err(Error::Frame {
                    point: lat.representative(r),
                    message: format!(
                        "Gram–Schmidt degenerates at frame vector {} (seed axis {})",
                        alpha + 1,
                        seeds[alpha]
                    ),
                })
            }
        }
    }
    let mut frame = UnitaryFrame {
        lattice: lat,
        n,
        d,
        e,
        theta,
        max_jump: 0.0,
    };
    frame.check_continuity()?;
    Ok(frame)
}

impl UnitaryFrame {
    pub fn lattice(&self) -> &ReducedLattice {
        &self.lattice
    }

    pub fn half_dim(&self) -> usize {
        self.n
    }

    pub fn max_neighbour_jump(&self) -> f64 {
        self.max_jump
    }

    /// `e_α` at reduced point `r`, as coordinate components.
    pub fn e(&self, r: usize, alpha: usize) -> CVec {
        let mut v = [Complex64::zero(); MAXD];
        let base = (r * self.n + alpha) * self.d;
        v[..self.d].copy_from_slice(&self.e[base..base + self.d]);
        v
    }

    pub fn theta(&self, r: usize, alpha: usize) -> CVec {
        let mut v = [Complex64::zero(); MAXD];
        let base = (r * self.n + alpha) * self.d;
        v[..self.d].copy_from_slice(&self.theta[base..base + self.d]);
        v
    }

    pub fn e_all(&self, r: usize) -> [CVec; 3] {
        let mut out = [[Complex64::zero(); MAXD]; 3];
        for a in 0..self.n {
            out[a] = self.e(r, a);
        }
        out
    }

    fn check_continuity(&mut self) -> Result<()> {
        let lat = &self.lattice;
        let nd = self.n * self.d;
        let mut worst = (0.0f64, 0usize, 0.0f64);
        for &axis in lat.axes() {
            let h = lat.spacing(axis).expect("dependent axis");
            for r in 0..lat.len() {
                let q = lat.shift(r, axis, 1);
                let jump = (0..nd)
                    .map(|k| (self.e[r * nd + k] - self.e[q * nd + k]).norm())
                    .fold(0.0, f64::max);
                if jump / h > worst.0 / worst.2.max(1e-300) || worst.2 == 0.0 {
                    worst = (jump, r, h);
                }
                self.max_jump = self.max_jump.max(jump);
            }
        }
        if worst.2 > 0.0 && worst.0 > FRAME_JUMP_FACTOR * worst.2 {
            return Err(Error::FrameDiscontinuity {
                point: lat.representative(worst.1),
                jump: worst.0,
                threshold: FRAME_JUMP_FACTOR * worst.2,
            });
        }
        Ok(())
    }

    /// Unitarity `g(e_α, ē_β) = δ`, alignment `Je = ie`, duality of `θ`.
    pub fn defects(&self, s: &CompatibleStructure) -> FrameDefects {
        let (n, d) = (self.n, self.d);
        (0..self.lattice.len())
            .into_par_iter()
            .map(|r| {
                let j = s.j_reduced(r);
                let g = s.metric_reduced(r);
                let mut out = FrameDefects::default();
                for a in 0..n {
                    let ea = self.e(r, a);
                    let je = algebra::mat_cvec(&j, &ea, d);
                    for k in 0..d {
                        out.alignment = out.alignment.max((je[k] - I * ea[k]).norm());
                    }
                    for b in 0..n {
                        let eb = self.e(r, b);
                        let ebc: CVec = std::array::from_fn(|k| eb[k].conj());
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let gab = algebra::bilinear(&ea, &g, &ebc, d);
                        out.unitarity = out.unitarity.max((gab - delta).norm());
                        let th = self.theta(r, a);
                        let on_e: Complex64 = (0..d).map(|k| th[k] * eb[k]).sum();
                        let on_ebar: Complex64 = (0..d).map(|k| th[k] * ebc[k]).sum();
                        out.duality = out.duality.max((on_e - delta).norm()).max(on_ebar.norm());
                    }
                }
                out
            })
            .reduce(FrameDefects::default, |a, b| FrameDefects {
                unitarity: a.unitarity.max(b.unitarity),
                alignment: a.alignment.max(b.alignment),
                duality: a.duality.max(b.duality),
            })
    }
}

/// Finite-difference derivatives of a per-point block field on the lattice;
/// returns one array per axis (zeros on axes the lattice ignores).
fn lattice_derivatives<T>(lat: &ReducedLattice, data: &[T], width: usize, d: usize) -> Vec<Vec<T>>
where
    T: Copy + Default + Send + Sync + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    (0..d)
        .map(|a| {
            lat.diff(data, width, a)
                .unwrap_or_else(|| vec![T::default(); data.len()])
        })
        .collect()
}

fn block(data: &[f64], r: usize, d: usize) -> Mat {
    let mut m = algebra::zero_mat();
    for a in 0..d {
        for b in 0..d {
            m[a][b] = data[r * d * d + a * d + b];
        }
    }
    m
}

/// Connection 1-forms `ω_α^β(∂ᵢ)` of the second canonical connection,
/// defined by `∇e_α = ω_α^β e_β`.
#[derive(Clone, Debug)]
pub struct ConnectionField {
    lattice: ReducedLattice,
    n: usize,
    d: usize,
    forms: Vec<Complex64>,
    j_defect: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct ConnectionDefects {
    /// `max |ω_α^β + conj(ω_β^α)|`: discrete `∇¹g`.
    pub metric: f64,
    /// `max |∂J + [C, J]|`: discrete `∇¹J`.
    pub complex_structure: f64,
}

pub fn connection_forms(s: &CompatibleStructure, f: &UnitaryFrame) -> Result<ConnectionField> {
    let (n, d) = (s.half_dim(), s.dim());
    let lat = s.lattice();
    if lat != f.lattice() {
        return Err(Error::Shape("frame was built for a different structure".into()));
    }
    let dd = d * d;
    let gvals: Vec<f64> = (0..lat.len())
        .flat_map(|r| {
            let g = s.metric_reduced(r);
            (0..dd).map(move |k| g[k / d][k % d])
        })
        .collect();
    let dg = lattice_derivatives(lat, &gvals, dd, d);
    let dj = lattice_derivatives(lat, s.j_values(), dd, d);
    let de = lattice_derivatives(lat, &f.e, n * d, d);
    let per: Vec<(Vec<Complex64>, f64)> = (0..lat.len())
        .into_par_iter()
        .map(|r| {
            let j = s.j_reduced(r);
            let g = s.metric_reduced(r);
            let ginv = algebra::from_dmatrix(
                &algebra::to_dmatrix(&g, d)
                    .try_inverse()
                    .expect("metric is positive definite"),
            );
            let dgs: Vec<Mat> = (0..d).map(|i| block(&dg[i], r, d)).collect();
            let mut out = vec![Complex64::zero(); n * n * d];
            let mut jdef: f64 = 0.0;
            for i in 0..d {
                // Γ_i with (Γ_i)^k_j = Γ^k_{ij}
                let mut gam = algebra::zero_mat();
                for k in 0..d {
                    for jj in 0..d {
                        let mut sum = 0.0;
                        for l in 0..d {
                            sum += ginv[k][l] * (dgs[i][l][jj] + dgs[jj][l][i] - dgs[l][i][jj]);
                        }
                        gam[k][jj] = 0.5 * sum;
                    }
                }
                let dji = block(&dj[i], r, d);
                let nabla_j = algebra::mat_sub(
                    &algebra::mat_sub(&dji, &matmul(&j, &gam, d), d),
                    &algebra::mat_sub(&algebra::zero_mat(), &matmul(&gam, &j, d), d),
                    d,
                );
                let corr = matmul(&j, &nabla_j, d);
                let mut c = gam;
                for a in 0..d {
                    for b in 0..d {
                        c[a][b] -= 0.5 * corr[a][b];
                    }
                }
                let comm = algebra::mat_sub(&matmul(&c, &j, d), &matmul(&j, &c, d), d);
                for a in 0..d {
                    for b in 0..d {
                        jdef = jdef.max((dji[a][b] + comm[a][b]).abs());
                    }
                }
                for alpha in 0..n {
                    let ea = f.e(r, alpha);
                    let ce = algebra::mat_cvec(&c, &ea, d);
                    let base = (r * n + alpha) * d;
                    for beta in 0..n {
                        let th = f.theta(r, beta);
                        let mut v = Complex64::zero();
                        for k in 0..d {
                            v += th[k] * (de[i][base + k] + ce[k]);
                        }
                        out[(alpha * n + beta) * d + i] = v;
                    }
                }
            }
            (out, jdef)
        })
        .collect();
    let mut forms = Vec::with_capacity(lat.len() * n * n * d);
    let mut j_defect: f64 = 0.0;
    for (v, jd) in per {
        forms.extend(v);
        j_defect = j_defect.max(jd);
    }
    Ok(ConnectionField {
        lattice: lat.clone(),
        n,
        d,
        forms,
        j_defect,
    })
}

impl ConnectionField {
    /// `ω_α^β(∂ᵢ)` at reduced point `r`.
    pub fn form(&self, r: usize, alpha: usize, beta: usize, i: usize) -> Complex64 {
        self.forms[((r * self.n + alpha) * self.n + beta) * self.d + i]
    }

    /// `ω_α^β(v)` for a complex tangent vector.
    pub fn eval(&self, r: usize, alpha: usize, beta: usize, v: &CVec) -> Complex64 {
        (0..self.d).map(|i| self.form(r, alpha, beta, i) * v[i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.forms.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn defects(&self) -> ConnectionDefects {
        let n = self.n;
        let mut metric: f64 = 0.0;
        for r in 0..self.lattice.len() {
            for a in 0..n {
                for b in 0..n {
                    for i in 0..self.d {
                        let v = self.form(r, a, b, i) + self.form(r, b, a, i).conj();
                        metric = metric.max(v.norm());
                    }
                }
            }
        }
        ConnectionDefects {
            metric,
            complex_structure: self.j_defect,
        }
    }
}

/// Torsion components of the second canonical connection.
#[derive(Clone, Debug)]
pub struct TorsionField {
    lattice: ReducedLattice,
    n: usize,
    /// `T^α_{βγ}`, indexed `[α][β][γ]`.
    t: Vec<Complex64>,
    /// `N^α_{β̄γ̄}`, indexed `[α][β][γ]`.
    nbar: Vec<Complex64>,
    /// `Θ^α(e_β, ē_γ)`, indexed `[α][β][γ]`.
    mixed: Vec<Complex64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct TorsionSummary {
    pub max_two_zero: f64,
    pub max_one_one: f64,
    pub max_nijenhuis: f64,
    pub cyclic_defect: f64,
}

pub fn torsion(s: &CompatibleStructure, f: &UnitaryFrame, c: &ConnectionField) -> Result<TorsionField> {
    let (n, d) = (s.half_dim(), s.dim());
    let lat = s.lattice();
    if lat != f.lattice() || lat != &c.lattice {
        return Err(Error::Shape("frame and connection belong to different structures".into()));
    }
    let dth = lattice_derivatives(lat, &f.theta, n * d, d);
    let n3 = n * n * n;
    let per: Vec<[Vec<Complex64>; 3]> = (0..lat.len())
        .into_par_iter()
        .map(|r| {
            let mut big = vec![[[Complex64::zero(); MAXD]; MAXD]; n];
            for alpha in 0..n {
                let base = (r * n + alpha) * d;
                for i in 0..d {
                    for j in 0..d {
                        let mut v = dth[i][base + j] - dth[j][base + i];
                        for beta in 0..n {
                            let thb = f.theta(r, beta);
                            v += c.form(r, beta, alpha, i) * thb[j] - c.form(r, beta, alpha, j) * thb[i];
                        }
                        big[alpha][i][j] = v;
                    }
                }
            }
            let e = f.e_all(r);
            let eb: [CVec; 3] = std::array::from_fn(|a| std::array::from_fn(|k| e[a][k].conj()));
            let pair = |m: &[[Complex64; MAXD]; MAXD], u: &CVec, v: &CVec| -> Complex64 {
                let mut s = Complex64::zero();
                for i in 0..d {
                    for j in 0..d {
                        s += u[i] * m[i][j] * v[j];
                    }
                }
                s
            };
            let mut t = vec![Complex64::zero(); n3];
            let mut nb = vec![Complex64::zero(); n3];
            let mut mx = vec![Complex64::zero(); n3];
            for a in 0..n {
                for b in 0..n {
                    for g in 0..n {
                        let k = (a * n + b) * n + g;
                        t[k] = 0.5 * pair(&big[a], &e[b], &e[g]);
                        nb[k] = 0.5 * pair(&big[a], &eb[b], &eb[g]);
                        mx[k] = pair(&big[a], &e[b], &eb[g]);
                    }
                }
            }
            [t, nb, mx]
        })
        .collect();
    let mut out = TorsionField {
        lattice: lat.clone(),
        n,
        t: Vec::with_capacity(lat.len() * n3),
        nbar: Vec::with_capacity(lat.len() * n3),
        mixed: Vec::with_capacity(lat.len() * n3),
    };
    for [t, nb, mx] in per {
        out.t.extend(t);
        out.nbar.extend(nb);
        out.mixed.extend(mx);
    }
    Ok(out)
}

impl TorsionField {
    pub fn t(&self, r: usize, a: usize, b: usize, g: usize) -> Complex64 {
        let n = self.n;
        self.t[((r * n + a) * n + b) * n + g]
    }

    pub fn n_bar(&self, r: usize, a: usize, b: usize, g: usize) -> Complex64 {
        let n = self.n;
        self.nbar[((r * n + a) * n + b) * n + g]
    }

    pub fn mixed(&self, r: usize, a: usize, b: usize, g: usize) -> Complex64 {
        let n = self.n;
        self.mixed[((r * n + a) * n + b) * n + g]
    }

    pub fn lattice(&self) -> &ReducedLattice {
        &self.lattice
    }

    pub fn summary(&self) -> TorsionSummary {
        let n = self.n;
        let mut s = TorsionSummary {
            max_two_zero: self.t.iter().fold(0.0, |m, v| m.max(v.norm())),
            max_one_one: self.mixed.iter().fold(0.0, |m, v| m.max(v.norm())),
            max_nijenhuis: self.nbar.iter().fold(0.0, |m, v| m.max(v.norm())),
            cyclic_defect: 0.0,
        };
        for r in 0..self.lattice.len() {
            for a in 0..n {
                for b in 0..n {
                    for g in 0..n {
                        let v = self.n_bar(r, g, a, b) + self.n_bar(r, a, b, g) + self.n_bar(r, b, g, a);
                        s.cyclic_defect = s.cyclic_defect.max(v.norm());
                    }
                }
            }
        }
        s
    }
}

/// Coordinate Nijenhuis tensor `N(∂a,∂b)^k` from `J` and its derivatives.
pub fn nijenhuis_from_jet(j: &Mat, dj: &[Mat], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d * d];
    for a in 0..d {
        for b in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    s += j[i][a] * dj[i][k][b] - j[i][b] * dj[i][k][a];
                }
                for l in 0..d {
                    s += j[k][l] * (dj[b][l][a] - dj[a][l][b]);
                }
                out[(a * d + b) * d + k] = s;
            }
        }
    }
    out
}

/// Nijenhuis tensor on the reduced lattice, `[a][b][k]` per point.
#[derive(Clone, Debug)]
pub struct NijenhuisField {
    lattice: ReducedLattice,
    d: usize,
    data: Vec<f64>,
}

pub fn nijenhuis_coordinate(s: &CompatibleStructure) -> NijenhuisField {
    let d = s.dim();
    let lat = s.lattice();
    let dd = d * d;
    let dj = lattice_derivatives(lat, s.j_values(), dd, d);
    let data: Vec<f64> = (0..lat.len())
        .into_par_iter()
        .flat_map_iter(|r| {
            let j = s.j_reduced(r);
            let djs: Vec<Mat> = (0..d).map(|i| block(&dj[i], r, d)).collect();
            nijenhuis_from_jet(&j, &djs, d)
        })
        .collect();
    NijenhuisField {
        lattice: lat.clone(),
        d,
        data,
    }
}

impl NijenhuisField {
    pub fn lattice(&self) -> &ReducedLattice {
        &self.lattice
    }

    pub fn value(&self, r: usize, a: usize, b: usize, k: usize) -> f64 {
        let d = self.d;
        self.data[((r * d + a) * d + b) * d + k]
    }

    /// `N(u, v)` for complex tangent vectors.
    pub fn apply(&self, r: usize, u: &CVec, v: &CVec) -> CVec {
        let d = self.d;
        let mut out = [Complex64::zero(); MAXD];
        for a in 0..d {
            if u[a] == Complex64::zero() {
                continue;
            }
            for b in 0..d {
                let c = u[a] * v[b];
                if c == Complex64::zero() {
                    continue;
                }
                for k in 0..d {
                    out[k] += c * self.value(r, a, b, k);
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest of `|N(X,Y) + N(Y,X)|` and `|N(JX,Y) + J N(X,Y)|` on coordinate pairs.
    pub fn identity_defect(&self, s: &CompatibleStructure) -> f64 {
        let d = self.d;
        let mut m: f64 = 0.0;
        for r in 0..self.lattice.len() {
            let j = s.j_reduced(r);
            for a in 0..d {
                for b in 0..d {
                    for k in 0..d {
                        m = m.max((self.value(r, a, b, k) + self.value(r, b, a, k)).abs());
                        // N(J∂a, ∂b) = Σ_c J_ca N(∂c, ∂b)
                        let lhs: f64 = (0..d).map(|c| j[c][a] * self.value(r, c, b, k)).sum();
                        let jn: f64 = (0..d).map(|l| j[k][l] * self.value(r, a, b, l)).sum();
                        m = m.max((lhs + jn).abs());
                    }
                }
            }
        }
        m
    }
}

/// Covariant derivatives of a potential in the unitary frame.
#[derive(Clone, Debug)]
pub struct CovariantHessian {
    n: usize,
    /// `φ_α`, `n` per point.
    pub phi_a: Vec<Complex64>,
    /// `φ_{αβ}`, `n²` per point.
    pub phi_ab: Vec<Complex64>,
    /// `φ_{αβ̄}`, `n²` per point.
    pub phi_abar: Vec<Complex64>,
}

impl CovariantHessian {
    pub fn a(&self, p: usize, alpha: usize) -> Complex64 {
        self.phi_a[p * self.n + alpha]
    }

    pub fn ab(&self, p: usize, alpha: usize, beta: usize) -> Complex64 {
        self.phi_ab[(p * self.n + alpha) * self.n + beta]
    }

    pub fn abar(&self, p: usize, alpha: usize, beta: usize) -> Complex64 {
        self.phi_abar[(p * self.n + alpha) * self.n + beta]
    }

    /// Largest `|φ_{αβ̄} − conj(φ_{βᾱ})|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n;
        let pts = self.phi_a.len() / n;
        (0..pts)
            .into_par_iter()
            .map(|p| {
                let mut m: f64 = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        m = m.max((self.abar(p, a, b) - self.abar(p, b, a).conj()).norm());
                    }
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// `dφ_α − φ_β ω_α^β = φ_{αβ}θ^β + φ_{αβ̄}θ̄^β`.
pub fn covariant_hessian(
    s: &CompatibleStructure,
    f: &UnitaryFrame,
    c: &ConnectionField,
    phi: &[f64],
) -> Result<CovariantHessian> {
    let chart: &GridChart = s.chart();
    if phi.len() != chart.len() {
        return Err(Error::Shape("potential does not match the chart".into()));
    }
    let (n, d) = (s.half_dim(), s.dim());
    let lat = s.lattice();
    let grad: Vec<Vec<f64>> = (0..d).map(|a| chart.centered_diff(phi, a)).collect();
    let len = chart.len();
    let grad = &grad;
    let phi_a: Vec<Complex64> = (0..len)
        .into_par_iter()
        .flat_map_iter(|p| {
            let r = lat.reduce(p);
            (0..n).map(move |a| {
                let e = f.e(r, a);
                (0..d).map(|k| e[k] * grad[k][p]).sum::<Complex64>()
            })
        })
        .collect();
    // derivatives of each φ_α along every axis
    let mut dphi_a: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(n);
    for a in 0..n {
        let col: Vec<Complex64> = (0..len).map(|p| phi_a[p * n + a]).collect();
        dphi_a.push((0..d).map(|i| chart.centered_diff(&col, i)).collect());
    }
    let per: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..len)
        .into_par_iter()
        .map(|p| {
            let r = lat.reduce(p);
            let e = f.e_all(r);
            let mut ab = vec![Complex64::zero(); n * n];
            let mut abar = vec![Complex64::zero(); n * n];
            for a in 0..n {
                for g in 0..n {
                    let eg = e[g];
                    let egb: CVec = std::array::from_fn(|k| eg[k].conj());
                    let mut v = Complex64::zero();
                    let mut vb = Complex64::zero();
                    for i in 0..d {
                        v += eg[i] * dphi_a[a][i][p];
                        vb += egb[i] * dphi_a[a][i][p];
                    }
                    for b in 0..n {
                        let pb = phi_a[p * n + b];
                        v -= pb * c.eval(r, a, b, &eg);
                        vb -= pb * c.eval(r, a, b, &egb);
                    }
                    ab[a * n + g] = v;
                    abar[a * n + g] = vb;
                }
            }
            (ab, abar)
        })
        .collect();
    let mut phi_ab = Vec::with_capacity(len * n * n);
    let mut phi_abar = Vec::with_capacity(len * n * n);
    for (ab, abar) in per {
        phi_ab.extend(ab);
        phi_abar.extend(abar);
    }
    Ok(CovariantHessian {
        n,
        phi_a,
        phi_ab,
        phi_abar,
    })
}

/// Frame-path `τ(φ)(e_β,e_γ) = −4i conj(Σ_α φ_α N^α_{β̄γ̄})` and
/// `H(φ) = δ − 2φ_{αβ̄}`, both `n²` per grid point.
pub struct FramePath {
    pub tau: Vec<Complex64>,
    pub h: Vec<Complex64>,
}

pub fn frame_path_tau_h(
    s: &CompatibleStructure,
    hess: &CovariantHessian,
    tor: &TorsionField,
) -> FramePath {
    let n = s.half_dim();
    let lat = s.lattice();
    let len = s.chart().len();
    let per: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..len)
        .into_par_iter()
        .map(|p| {
            let r = lat.reduce(p);
            let mut tau = vec![Complex64::zero(); n * n];
            let mut h = vec![Complex64::zero(); n * n];
            for b in 0..n {
                for g in 0..n {
                    let mut acc = Complex64::zero();
                    for a in 0..n {
                        acc += hess.a(p, a) * tor.n_bar(r, a, b, g);
                    }
                    tau[b * n + g] = Complex64::new(0.0, -4.0) * acc.conj();
                    let delta = if b == g { 1.0 } else { 0.0 };
                    h[b * n + g] = Complex64::new(delta, 0.0) - 2.0 * hess.abar(p, b, g);
                }
            }
            (tau, h)
        })
        .collect();
    let mut out = FramePath {
        tau: Vec::with_capacity(len * n * n),
        h: Vec::with_capacity(len * n * n),
    };
    for (t, h) in per {
        out.tau.extend(t);
        out.h.extend(h);
    }
    out
}
