//! Run configuration: one JSON document per run, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gcy_core::potentials::{default_candidates, random_potential, TrigPotential};
use gcy_core::solver::SolveOptions;
use gcy_core::structure::{default_generator, StructureKind};
use gcy_core::{GridChart, StructureRecipe};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Validate,
    Analyze,
    Boundary,
    Solve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub kind: StructureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

impl StructureSpec {
    pub fn recipe(&self, n: usize) -> anyhow::Result<StructureRecipe> {
        let mut r = match self.kind {
            StructureKind::Standard => StructureRecipe::standard(n),
            StructureKind::Twisted => StructureRecipe::twisted_default(n),
        };
        if let Some(e) = self.epsilon {
            r.epsilon = e;
        }
        if let Some(g) = &self.generator {
            r.generator = g.clone();
        } else if self.kind == StructureKind::Twisted {
            r.generator = default_generator(n);
        }
        if let Some(p) = &self.profile {
            r.profile = p.parse().map_err(|e| anyhow::anyhow!("structure profile: {e}"))?;
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Uniform(usize),
    Axes(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSource {
    File {
        file: PathBuf,
    },
    Expr(TrigPotential),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSpec {
    One,
    Manufactured(TrigPotential),
    File(PathBuf),
    FromBoundaryWitness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSet {
    Default,
    Random {
        count: usize,
        terms: usize,
        amplitude: f64,
    },
    List(Vec<TrigPotential>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
    #[serde(default = "default_restart")]
    pub restart: usize,
    #[serde(default = "default_max_linear_iter")]
    pub max_linear_iter: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_max_iter() -> usize {
    SolveOptions::default().max_iter
}
fn default_linear_tol() -> f64 {
    SolveOptions::default().linear_tol
}
fn default_restart() -> usize {
    SolveOptions::default().restart
}
fn default_max_linear_iter() -> usize {
    SolveOptions::default().max_linear_iter
}
fn default_steps() -> usize {
    4
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: default_max_iter(),
            linear_tol: default_linear_tol(),
            restart: default_restart(),
            max_linear_iter: default_max_linear_iter(),
            steps: default_steps(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self, n: usize) -> SolveOptions {
        let base = SolveOptions::for_half_dim(n);
        SolveOptions {
            tol: self.tol.unwrap_or(base.tol),
            max_iter: self.max_iter,
            linear_tol: self.linear_tol,
            restart: self.restart,
            max_linear_iter: self.max_linear_iter,
        }
    }
}

fn default_half_dim() -> usize {
    2
}
fn default_r_list() -> Vec<f64> {
    vec![4.0, 8.0, 16.0]
}
fn default_local_resolution() -> usize {
    gcy_core::boundary::DEFAULT_LOCAL_RESOLUTION
}
fn default_candidates_set() -> CandidateSet {
    CandidateSet::Default
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_half_dim")]
    pub half_dim: usize,
    pub structure: StructureSpec,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSource>,
    #[serde(default = "default_candidates_set")]
    pub candidates: CandidateSet,
    #[serde(default = "default_r_list", rename = "R_list")]
    pub r_list: Vec<f64>,
    #[serde(default = "default_local_resolution")]
    pub local_resolution: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn chart(&self) -> anyhow::Result<GridChart> {
        let n = self.half_dim;
        let dims = match &self.grid {
            GridSpec::Uniform(m) => vec![*m; 2 * n],
            GridSpec::Axes(v) => v.clone(),
        };
        if dims.len() != 2 * n {
            bail!("grid lists {} axes but half_dim = {n} needs {}", dims.len(), 2 * n);
        }
        Ok(GridChart::new(n, &dims)?)
    }

    pub fn candidates(&self) -> Vec<TrigPotential> {
        match &self.candidates {
            CandidateSet::Default => default_candidates(self.half_dim),
            CandidateSet::Random {
                count,
                terms,
                amplitude,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..*count)
                    .map(|_| random_potential(&mut rng, self.half_dim, *terms, *amplitude))
                    .collect()
            }
            CandidateSet::List(v) => v.clone(),
        }
    }
}

/// `16` or `16,16,16,32`.
pub fn parse_grid_override(s: &str) -> anyhow::Result<GridSpec> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad grid override `{s}`"))?;
    Ok(match parts.as_slice() {
        [m] => GridSpec::Uniform(*m),
        _ => GridSpec::Axes(parts),
    })
}
