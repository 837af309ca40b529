//! Analytic trigonometric potentials on the unit torus.
//!
//! A potential is a sum of terms `c · Π sin/cos(2π k x_axis)`; jets are exact,
//! which the boundary construction and the convergence oracles rely on.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridChart;
use crate::jet::Jet2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Wave {
    Sin,
    Cos,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrigFactor {
    pub wave: Wave,
    pub freq: f64,
    pub axis: usize,
}

impl TrigFactor {
    fn jet(&self, x: &[f64]) -> Jet2 {
        let k = 2.0 * PI * self.freq;
        let (s, c) = (k * x[self.axis]).sin_cos();
        let (v, d1, d2) = match self.wave {
            Wave::Sin => (s, k * c, -k * k * s),
            Wave::Cos => (c, -k * s, -k * k * c),
        };
        let mut j = Jet2::constant(v);
        j.g[self.axis] = d1;
        j.h[self.axis][self.axis] = d2;
        j
    }

    fn value(&self, x: &[f64]) -> f64 {
        let a = 2.0 * PI * self.freq * x[self.axis];
        match self.wave {
            Wave::Sin => a.sin(),
            Wave::Cos => a.cos(),
        }
    }

    fn label(&self) -> String {
        let name = match self.wave {
            Wave::Sin => "sin",
            Wave::Cos => "cos",
        };
        let var = if self.axis % 2 == 0 { 'x' } else { 'y' };
        let f = if self.freq == 1.0 {
            String::new()
        } else {
            format!("{}", self.freq)
        };
        format!("{name}({f}{var}{})", self.axis / 2 + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigTerm {
    pub coefficient: f64,
    pub factors: Vec<TrigFactor>,
}

impl TrigTerm {
    fn jet(&self, x: &[f64]) -> Jet2 {
        self.factors
            .iter()
            .fold(Jet2::constant(1.0), |acc, f| acc * f.jet(x))
            .scale(self.coefficient)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.coefficient * self.factors.iter().map(|f| f.value(x)).product::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigPotential {
    pub terms: Vec<TrigTerm>,
}

impl TrigPotential {
    pub fn single(wave: Wave, axis: usize) -> Self {
        Self {
            terms: vec![TrigTerm {
                coefficient: 1.0,
                factors: vec![TrigFactor {
                    wave,
                    freq: 1.0,
                    axis,
                }],
            }],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| TrigTerm {
                    coefficient: c * t.coefficient,
                    factors: t.factors.clone(),
                })
                .collect(),
        }
    }

    pub fn max_axis(&self) -> Option<usize> {
        self.terms.iter().flat_map(|t| t.factors.iter().map(|f| f.axis)).max()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    pub fn jet(&self, x: &[f64]) -> Jet2 {
        self.terms
            .iter()
            .fold(Jet2::zero(), |acc, t| acc + t.jet(x))
    }

    pub fn sample(&self, chart: &GridChart) -> Vec<f64> {
        chart.sample(|x| self.value(x))
    }
}

impl fmt::Display for TrigPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| {
                let mut s = if t.coefficient == 1.0 {
                    String::new()
                } else {
                    format!("{}", t.coefficient)
                };
                for fac in &t.factors {
                    if !s.is_empty() {
                        s.push('*');
                    }
                    s.push_str(&fac.label());
                }
                if s.is_empty() {
                    s.push('1');
                }
                s
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

fn parse_trig_factor(tok: &str) -> Result<TrigFactor> {
    let bad = || Error::Parse(format!("cannot parse potential factor `{tok}`"));
    let (wave, rest) = if let Some(r) = tok.strip_prefix("sin(") {
        (Wave::Sin, r)
    } else if let Some(r) = tok.strip_prefix("cos(") {
        (Wave::Cos, r)
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
    Ok(TrigFactor {
        wave,
        freq,
        axis: 2 * (alpha - 1) + usize::from(is_y),
    })
}

impl FromStr for TrigPotential {
    type Err = Error;

    /// Parses sums of products such as `0.05*sin(x1)*cos(y1) + cos(2x2)`.
    fn from_str(s: &str) -> Result<Self> {
        let text: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if text.is_empty() || text == "0" {
            return Ok(Self { terms: vec![] });
        }
        let mut terms = Vec::new();
        let signed = text.replace("e-", "e#").replace('-', "+-").replace("e#", "e-");
        for raw in signed.split('+').filter(|t| !t.is_empty()) {
            let (sign, body) = match raw.strip_prefix('-') {
                Some(b) => (-1.0, b),
                None => (1.0, raw),
            };
            let mut term = TrigTerm {
                coefficient: sign,
                factors: vec![],
            };
            for tok in body.split('*') {
                if let Ok(c) = tok.parse::<f64>() {
                    term.coefficient *= c;
                } else {
                    term.factors.push(parse_trig_factor(tok)?);
                }
            }
            terms.push(term);
        }
        Ok(Self { terms })
    }
}

impl Serialize for TrigPotential {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TrigPotential {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Twelve low-frequency candidates: every single `sin`/`cos` of one
/// coordinate, then `sin·cos` products across distinct complex coordinates
/// until twelve are listed.
pub fn default_candidates(n: usize) -> Vec<TrigPotential> {
    let d = 2 * n;
    let mut out = Vec::with_capacity(12);
    for axis in 0..d {
        for wave in [Wave::Sin, Wave::Cos] {
            out.push(TrigPotential::single(wave, axis));
        }
    }
    'pairs: for a in 0..d {
        for b in a + 1..d {
            if out.len() >= 12 {
                break 'pairs;
            }
            if a / 2 == b / 2 {
                continue;
            }
            out.push(TrigPotential {
                terms: vec![TrigTerm {
                    coefficient: 1.0,
                    factors: vec![
                        TrigFactor { wave: Wave::Sin, freq: 1.0, axis: a },
                        TrigFactor { wave: Wave::Cos, freq: 1.0, axis: b },
                    ],
                }],
            });
        }
    }
    out.truncate(12);
    out
}

/// Random smooth potential: `terms` products of one or two factors with
/// frequencies 1 or 2 and coefficients uniform in `[−amplitude, amplitude]`.
pub fn random_potential<R: Rng>(rng: &mut R, n: usize, terms: usize, amplitude: f64) -> TrigPotential {
    let d = 2 * n;
    let mut out = Vec::with_capacity(terms);
    for _ in 0..terms {
        let nf = rng.gen_range(1..=2);
        let factors = (0..nf)
            .map(|_| TrigFactor {
                wave: if rng.gen_bool(0.5) { Wave::Sin } else { Wave::Cos },
                freq: rng.gen_range(1..=2) as f64,
                axis: rng.gen_range(0..d),
            })
            .collect();
        out.push(TrigTerm {
            coefficient: rng.gen_range(-amplitude..=amplitude),
            factors,
        });
    }
    TrigPotential { terms: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parse_and_print_round_trip() {
        let p: TrigPotential = "0.05*sin(x1)*cos(y1) - cos(2x2) + 1e-3*sin(y2)".parse().unwrap();
        assert_eq!(p.terms.len(), 3);
        assert_eq!(p.terms[2].coefficient, 1e-3);
        assert_eq!(p.terms[1].coefficient, -1.0);
        let q: TrigPotential = p.to_string().parse().unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        assert!((p.value(&x) - q.value(&x)).abs() < 1e-15);
        assert!("sin(q1)".parse::<TrigPotential>().is_err());
    }

    #[test]
    fn jet_matches_finite_differences() {
        let p: TrigPotential = "sin(x1)*cos(2y2) + 0.3*cos(x2)".parse().unwrap();
        let x = [0.13, 0.27, 0.61, 0.92];
        let j = p.jet(&x);
        let h = 1e-5;
        for a in 0..4 {
            let mut xp = x;
            xp[a] += h;
            let mut xm = x;
            xm[a] -= h;
            assert!(((p.value(&xp) - p.value(&xm)) / (2.0 * h) - j.g[a]).abs() < 1e-6);
            let jp = p.jet(&xp);
            let jm = p.jet(&xm);
            for b in 0..4 {
                assert!(((jp.g[b] - jm.g[b]) / (2.0 * h) - j.h[a][b]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn twelve_default_candidates() {
        for n in [2, 3] {
            let c = default_candidates(n);
            assert_eq!(c.len(), 12);
            assert!(c.iter().all(|p| p.max_axis().unwrap() < 2 * n));
            let labels: std::collections::BTreeSet<String> = c.iter().map(|p| p.to_string()).collect();
            assert_eq!(labels.len(), 12);
        }
    }

    #[test]
    fn random_potentials_are_reproducible() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        assert_eq!(random_potential(&mut a, 2, 4, 0.1), random_potential(&mut b, 2, 4, 0.1));
    }
}
