//! Second-order jets: value, gradient and Hessian of a scalar function.

use std::ops::{Add, Mul};

use crate::algebra::{zero_mat, Mat, MAXD};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub g: [f64; MAXD],
    pub h: Mat,
}

impl Jet2 {
    pub fn zero() -> Self {
        Self {
            v: 0.0,
            g: [0.0; MAXD],
            h: zero_mat(),
        }
    }

    pub fn constant(v: f64) -> Self {
        Self { v, ..Self::zero() }
    }

    pub fn is_zero(&self) -> bool {
        self.v == 0.0 && self.g.iter().all(|x| *x == 0.0) && self.h.iter().flatten().all(|x| *x == 0.0)
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.v *= c;
        self.g.iter_mut().for_each(|x| *x *= c);
        self.h.iter_mut().flatten().for_each(|x| *x *= c);
        self
    }

    /// Jet of `f(y)` where `x = x₀ + L y`: gradient `Lᵀ∇f`, Hessian `LᵀHL`.
    pub fn pull_back(&self, l: &Mat, d: usize) -> Self {
        let mut out = Self::constant(self.v);
        for i in 0..d {
            out.g[i] = (0..d).map(|k| l[k][i] * self.g[k]).sum();
        }
        let mut hl = zero_mat();
        for k in 0..d {
            for j in 0..d {
                hl[k][j] = (0..d).map(|m| self.h[k][m] * l[m][j]).sum();
            }
        }
        for i in 0..d {
            for j in 0..d {
                out.h[i][j] = (0..d).map(|k| l[k][i] * hl[k][j]).sum();
            }
        }
        out
    }
}

impl Add for Jet2 {
    type Output = Jet2;

    fn add(mut self, o: Jet2) -> Jet2 {
        self.v += o.v;
        for i in 0..MAXD {
            self.g[i] += o.g[i];
            for j in 0..MAXD {
                self.h[i][j] += o.h[i][j];
            }
        }
        self
    }
}

impl Mul for Jet2 {
    type Output = Jet2;

    fn mul(self, o: Jet2) -> Jet2 {
        let mut out = Jet2::constant(self.v * o.v);
        for i in 0..MAXD {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
            for j in 0..MAXD {
                out.h[i][j] = self.v * o.h[i][j]
                    + o.v * self.h[i][j]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord(i: usize, x: f64) -> Jet2 {
        let mut j = Jet2::constant(x);
        j.g[i] = 1.0;
        j
    }

    #[test]
    fn product_rule() {
        // f = x0² x1 at (2, 3)
        let f = coord(0, 2.0) * coord(0, 2.0) * coord(1, 3.0);
        assert_eq!(f.v, 12.0);
        assert_eq!(f.g[0], 12.0);
        assert_eq!(f.g[1], 4.0);
        assert_eq!(f.h[0][0], 6.0);
        assert_eq!(f.h[0][1], 4.0);
        assert_eq!(f.h[1][0], 4.0);
        assert_eq!(f.h[1][1], 0.0);
    }

    #[test]
    fn pull_back_through_linear_map() {
        // f(x) = x0 x1 with x = L y, L = [[1,1],[0,2]]  ⇒ f = (y0+y1)·2y1
        let f = coord(0, 0.0) * coord(1, 0.0);
        let mut l = zero_mat();
        l[0][0] = 1.0;
        l[0][1] = 1.0;
        l[1][1] = 2.0;
        let g = f.pull_back(&l, 2);
        assert_eq!(g.h[0][0], 0.0);
        assert_eq!(g.h[0][1], 2.0);
        assert_eq!(g.h[1][1], 4.0);
    }
}
