use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gcy_core::boundary::{check_local_resolution, search_r, select_seed, BoundaryOutcome, SeedPotential};
use gcy_core::cy_operator::{analyze, f_top, Potential};
use gcy_core::forms::integrate;
use gcy_core::frame::nijenhuis_coordinate;
use gcy_core::io::{write_json, write_point_csv, write_table_csv, FieldFile};
use gcy_core::solver::{continuity_solve_with, gauge_project};
use gcy_core::structure::{build_structure, validate_structure};
use gcy_core::{CompatibleStructure, Error, GridChart};
use serde::Serialize;

use crate::config::{Command, PotentialSource, RunConfig, TargetSpec};

pub struct Outcome {
    pub code: i32,
    pub summary: String,
}

/// Exit code for an error chain: 2 validation, 3 precondition, 4 resolution,
/// 5 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Resolution { .. } => 4,
                Error::Precondition(_) | Error::NoSeed(_) | Error::EllipticityLoss { .. } => 3,
                Error::Consistency(_)
                | Error::Frame { .. }
                | Error::FrameDiscontinuity { .. }
                | Error::UnboundedAmplitude { .. }
                | Error::SeedSearch(_)
                | Error::AmplitudeExceedsOne { .. }
                | Error::RSearch(_) => 5,
                _ => 2,
            };
        }
    }
    2
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;
    let chart = cfg.chart()?;
    let recipe = cfg.structure.recipe(cfg.half_dim)?;
    let s = build_structure(&chart, &recipe)?;
    let outcome = match cmd {
        Command::Validate => validate(&s, out),
        Command::Analyze => analyze_cmd(cfg, &s, out),
        Command::Boundary => boundary(cfg, &s, out).map(|(o, _, _)| o),
        Command::Solve => solve(cfg, &s, out),
    }?;
    std::fs::write(out.join("summary.txt"), &outcome.summary)?;
    Ok(outcome)
}

fn validate(s: &CompatibleStructure, out: &Path) -> anyhow::Result<Outcome> {
    #[derive(Serialize)]
    struct Report {
        #[serde(flatten)]
        structure: gcy_core::structure::ValidationReport,
        nijenhuis_max: f64,
        integrable: bool,
    }
    let v = validate_structure(s);
    let nij = nijenhuis_coordinate(s).max_abs();
    let rep = Report {
        structure: v.clone(),
        nijenhuis_max: nij,
        integrable: nij <= gcy_core::boundary::INTEGRABLE_THRESHOLD,
    };
    write_json(&out.join("validation.json"), &rep)?;
    let mut text = String::new();
    writeln!(text, "structure validation: {}", if v.passed { "passed" } else { "FAILED" })?;
    writeln!(text, "  max |J² + I|           {:.3e}", v.j_square_defect)?;
    writeln!(text, "  max |ω(J·,J·) − ω|     {:.3e}", v.omega_invariance_defect)?;
    writeln!(text, "  max |g − gᵀ|           {:.3e}", v.metric_symmetry_defect)?;
    writeln!(text, "  min eigenvalue of g    {:.6}", v.min_metric_eigenvalue)?;
    writeln!(text, "  max |N|                {:.3e}", nij)?;
    if let Some(p) = &v.worst_point {
        writeln!(text, "  worst grid point       {p:?}")?;
    }
    Ok(Outcome {
        code: if v.passed { 0 } else { 2 },
        summary: text,
    })
}

fn load_scalar(chart: &GridChart, path: &Path) -> anyhow::Result<Vec<f64>> {
    let file = FieldFile::load(path).with_context(|| format!("cannot load field {}", path.display()))?;
    if file.dims != chart.resolution() {
        return Err(Error::Shape(format!(
            "field {} has resolution {:?}, run grid is {:?}",
            path.display(),
            file.dims,
            chart.resolution()
        ))
        .into());
    }
    Ok(file.into_scalar()?)
}

fn dump_scalar(chart: &GridChart, path: &Path, v: &[f64]) -> anyhow::Result<()> {
    FieldFile::real(chart, 0, vec![v.to_vec()]).save(path)?;
    Ok(())
}

fn analyze_cmd(cfg: &RunConfig, s: &CompatibleStructure, out: &Path) -> anyhow::Result<Outcome> {
    let chart = s.chart();
    let (label, values) = match &cfg.potential {
        None => ("0".to_string(), vec![0.0; chart.len()]),
        Some(PotentialSource::Expr(t)) => {
            if t.max_axis().is_some_and(|a| a >= chart.dim()) {
                bail!(Error::Argument(format!("potential `{t}` uses an axis beyond the torus")));
            }
            (t.to_string(), t.sample(chart))
        }
        Some(PotentialSource::File { file }) => (file.display().to_string(), load_scalar(chart, file)?),
    };
    let rep = analyze(s, &Potential::new(values.clone()))?;
    let summary = rep.summary();
    #[derive(Serialize)]
    struct Report<'a> {
        potential: &'a str,
        #[serde(flatten)]
        summary: &'a gcy_core::cy_operator::PotentialSummary,
    }
    write_json(
        &out.join("report.json"),
        &Report {
            potential: &label,
            summary: &summary,
        },
    )?;
    let names: Vec<String> = (0..rep.f_components.len()).map(|j| format!("F{j}")).collect();
    let mut cols: Vec<(&str, &[f64])> = vec![("phi", &values), ("F", &rep.f_total), ("F_sum", &rep.f_sum)];
    for (name, c) in names.iter().zip(&rep.f_components) {
        cols.push((name, c));
    }
    write_point_csv(&out.join("fields.csv"), chart, &cols)?;
    dump_scalar(chart, &out.join("phi.gcyf"), &values)?;
    dump_scalar(chart, &out.join("F.gcyf"), &rep.f_total)?;
    let mut text = String::new();
    writeln!(text, "potential {label}")?;
    writeln!(text, "  F in [{:.6}, {:.6}], ∫F = {:.12}", summary.f_min, summary.f_max, summary.f_integral)?;
    for c in &summary.components {
        writeln!(text, "  F{} in [{:.3e}, {:.3e}]", c.j, c.min, c.max)?;
    }
    writeln!(
        text,
        "  taming margin {:.6} at {:?} ({})",
        summary.margin,
        summary.margin_point,
        if summary.taming { "tames J" } else { "does not tame J" }
    )?;
    match summary.amplitude {
        Some(a) => writeln!(text, "  positivity amplitude {a:.10}")?,
        None => writeln!(text, "  positivity amplitude unbounded")?,
    }
    writeln!(text, "  F0 > 0: {}, Fj ≥ 0: {}", summary.f0_positive, summary.fj_nonnegative)?;
    Ok(Outcome { code: 0, summary: text })
}

#[derive(Serialize)]
struct SeedSummary<'a> {
    candidate: String,
    potential: String,
    scale: f64,
    epsilon1: f64,
    p0: &'a [usize],
    lambda: &'a [f64],
    pair: (usize, usize),
    r0: f64,
    scores: &'a [gcy_core::boundary::CandidateScore],
}

fn seed_summary(seed: &SeedPotential) -> SeedSummary<'_> {
    SeedSummary {
        candidate: seed.scores[seed.candidate].candidate.clone(),
        potential: seed.potential.to_string(),
        scale: seed.scale,
        epsilon1: seed.epsilon1,
        p0: &seed.basepoint,
        lambda: &seed.lambda,
        pair: seed.pair,
        r0: seed.chart.r0(),
        scores: &seed.scores,
    }
}

fn boundary(
    cfg: &RunConfig,
    s: &CompatibleStructure,
    out: &Path,
) -> anyhow::Result<(Outcome, SeedPotential, BoundaryOutcome)> {
    for &r in &cfg.r_list {
        if r > 2.0 {
            check_local_resolution(r, cfg.local_resolution)?;
        }
    }
    let seed = select_seed(s, &cfg.candidates()).map_err(|e| match e {
        Error::NoSeed(msg) => Error::NoSeed(format!(
            "{msg}; J is integrable, so F maps the taming potentials onto the admissible densities and no boundary witness exists"
        )),
        other => other,
    })?;
    let found = search_r(s, &seed, &cfg.r_list, cfg.local_resolution)?;
    let res = &found.result;
    #[derive(Serialize)]
    struct Report<'a> {
        seed: SeedSummary<'a>,
        attempts: &'a [gcy_core::boundary::RAttempt],
        boundary: &'a gcy_core::boundary::BoundaryReport,
        grid: gcy_core::cy_operator::PotentialSummary,
    }
    write_json(
        &out.join("boundary.json"),
        &Report {
            seed: seed_summary(&seed),
            attempts: &found.attempts,
            boundary: &res.report,
            grid: res.grid.summary(),
        },
    )?;
    let chart = s.chart();
    dump_scalar(chart, &out.join("phi0.gcyf"), res.potential.values())?;
    let names: Vec<String> = (0..res.grid.f_components.len()).map(|j| format!("F{j}")).collect();
    let mut cols: Vec<(&str, &[f64])> = vec![("phi0", res.potential.values()), ("F", &res.grid.f_total)];
    for (name, c) in names.iter().zip(&res.grid.f_components) {
        cols.push((name, c));
    }
    write_point_csv(&out.join("fields.csv"), chart, &cols)?;
    let rows: Vec<Vec<f64>> = found
        .attempts
        .iter()
        .map(|a| {
            vec![
                a.radius,
                a.min_f.unwrap_or(f64::NAN),
                a.margin.unwrap_or(f64::NAN),
                a.tau12_min.unwrap_or(f64::NAN),
                a.min_f1_near_p0.unwrap_or(f64::NAN),
                f64::from(u8::from(a.accepted)),
            ]
        })
        .collect();
    write_table_csv(
        &out.join("attempts.csv"),
        &["R", "minF", "margin", "tau12_min", "minF1_near_p0", "accepted"],
        &rows,
    )?;
    let r = &res.report;
    let mut text = String::new();
    writeln!(text, "seed {} (ε₁ = {:.4e}) at p0 = {:?}", seed.potential, seed.epsilon1, seed.basepoint)?;
    for a in &found.attempts {
        match &a.error {
            Some(e) => writeln!(text, "  R = {}: {e}", a.radius)?,
            None => writeln!(
                text,
                "  R = {}: min F = {:.4e}, margin = {:.3e}, accepted = {}",
                a.radius,
                a.min_f.unwrap_or(f64::NAN),
                a.margin.unwrap_or(f64::NAN),
                a.accepted
            )?,
        }
    }
    writeln!(text, "boundary witness at R0 = {} with bump amplitude a = {:.10}", r.radius, r.amplitude)?;
    writeln!(text, "  taming margin {:.3e} (inside Δ_R: {})", r.margin, r.margin_inside)?;
    writeln!(text, "  min F {:.4e} (grid {:.4e}, local {:.4e})", r.min_f, r.min_f_grid, r.min_f_local)?;
    writeln!(text, "  min |τ12| {:.4e} against ε₁/2 = {:.4e}", r.tau12_min, seed.epsilon1 / 2.0)?;
    Ok((Outcome { code: 0, summary: text }, seed, found))
}

fn normalized(chart: &GridChart, f: Vec<f64>) -> Vec<f64> {
    let c = 1.0 / integrate(chart, &f);
    f.into_iter().map(|v| c * v).collect()
}

fn solve(cfg: &RunConfig, s: &CompatibleStructure, out: &Path) -> anyhow::Result<Outcome> {
    let chart = s.chart();
    let target = cfg.target.clone().unwrap_or(TargetSpec::One);
    let mut star = None;
    let mut text = String::new();
    let (label, f) = match &target {
        TargetSpec::One => ("1".to_string(), vec![1.0; chart.len()]),
        TargetSpec::Manufactured(t) => {
            if t.max_axis().is_some_and(|a| a >= chart.dim()) {
                bail!(Error::Argument(format!("potential `{t}` uses an axis beyond the torus")));
            }
            let phi = gauge_project(chart, &t.sample(chart));
            let f = normalized(chart, f_top(s, &phi));
            star = Some(phi);
            (format!("F({t})"), f)
        }
        TargetSpec::File(p) => (p.display().to_string(), load_scalar(chart, p)?),
        TargetSpec::FromBoundaryWitness => {
            let (o, _, found) = boundary(cfg, s, out)?;
            text.push_str(&o.summary);
            let f = normalized(chart, found.result.grid.f_total.clone());
            ("F(phi0)".to_string(), f)
        }
    };
    let opts = cfg.solver.options(cfg.half_dim);
    let (phi, rep) = continuity_solve_with(s, &f, cfg.solver.steps, &opts)?;
    let error = star.as_ref().map(|st| {
        phi.values()
            .iter()
            .zip(st)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    #[derive(Serialize)]
    struct Report<'a> {
        target: &'a str,
        tol: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        manufactured_error: Option<f64>,
        #[serde(flatten)]
        report: &'a gcy_core::solver::SolveReport,
    }
    write_json(
        &out.join("solve.json"),
        &Report {
            target: &label,
            tol: opts.tol,
            manufactured_error: error,
            report: &rep,
        },
    )?;
    let trace: Vec<Vec<f64>> = rep
        .trace
        .iter()
        .map(|t| vec![t.iter as f64, t.residual, t.margin, t.step])
        .collect();
    write_table_csv(&out.join("trace.csv"), &["iter", "residual", "margin", "step"], &trace)?;
    let path: Vec<Vec<f64>> = rep
        .path
        .iter()
        .map(|p| {
            vec![
                p.t,
                p.residual,
                p.margin,
                p.dt,
                f64::from(u8::from(p.accepted)),
                p.newton_iterations as f64,
            ]
        })
        .collect();
    write_table_csv(
        &out.join("path.csv"),
        &["t", "residual", "margin", "dt", "accepted", "newton_iterations"],
        &path,
    )?;
    dump_scalar(chart, &out.join("phi.gcyf"), phi.values())?;
    writeln!(text, "continuation toward {label}")?;
    writeln!(
        text,
        "  {} after {} Newton iterations, t reached {}",
        if rep.converged { "converged" } else { "did not converge" },
        rep.iters,
        rep.t_reached
    )?;
    writeln!(text, "  residual ‖F(φ) − f‖∞ = {:.3e} (tol {:.1e})", rep.residual, opts.tol)?;
    writeln!(text, "  taming margin {:.6}", rep.margin)?;
    if let Some(e) = error {
        writeln!(text, "  ‖φ − φ*‖∞ = {e:.3e}")?;
    }
    if let Some(fail) = &rep.failure {
        writeln!(text, "  failure: {fail}")?;
    }
    Ok(Outcome {
        code: if rep.converged { 0 } else { 5 },
        summary: text,
    })
}

pub fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("gcy-out"))
}
