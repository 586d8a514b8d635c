//! Pipelines behind the command-line verbs and their artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vkflex::export::{write_csv, write_grid};
use vkflex::nash_kuiper::{
    full_flexibility, FlexOptions, FlexOutput, FlexReport, FlexSchedule, Practical,
};
use vkflex::stage::{run_stage, StageOutput, StageParams, StageReport};
use vkflex::Field;

use crate::config::{ExperimentConfig, FlexSection, Pipeline, ScheduleKind, StageSection};
use crate::fit::{fit_loglog, RateFit};
use crate::problem::{self, Problem};
use crate::verify::{verify_ma, MaResiduals};

/// One expectation and whether the run met it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// One row of a stage sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub l: f64,
    pub lambda: f64,
    pub lambda_l: f64,
    pub deficit: f64,
    pub floor: f64,
    pub internal_deficit: f64,
    pub hessian_v: f64,
    pub hessian_w: f64,
    pub dv_c0: f64,
    pub dv_c1: f64,
    pub dw_c0: f64,
    pub dw_c1: f64,
    pub telescoping_residual: f64,
    pub input_deficit: f64,
    pub m_budget: f64,
}

impl SweepRow {
    fn from_report(r: &StageReport) -> Self {
        Self {
            l: r.l,
            lambda: r.lambda,
            lambda_l: r.lambda * r.l,
            deficit: r.deficit,
            floor: r.mollification_floor,
            internal_deficit: r.internal_deficit,
            hessian_v: r.hessian_v,
            hessian_w: r.hessian_w,
            dv_c0: r.dv_c0,
            dv_c1: r.dv_c1,
            dw_c0: r.dw_c0,
            dw_c1: r.dw_c1,
            telescoping_residual: r.telescoping_residual,
            input_deficit: r.input_deficit,
            m_budget: r.m_budget,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFits {
    /// `|D~|_0 - floor` against `lambda l`.
    pub deficit: Option<RateFit>,
    /// `|D_S|_0` against `lambda l`.
    pub internal_deficit: Option<RateFit>,
    /// `|grad^2 v~|_0` against `lambda l`.
    pub hessian_raw: Option<RateFit>,
    /// `|grad^2 v~|_0 / lambda^(gamma / 2)` against `lambda l`.
    pub hessian: Option<RateFit>,
}

#[derive(Clone, Debug)]
pub enum Artifacts {
    Stage(Box<StageOutput>),
    Sweep { rows: Vec<SweepRow>, fits: SweepFits, reports: Vec<StageReport> },
    Flex { output: Box<FlexOutput>, ma: Option<MaResiduals> },
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub pipeline: Pipeline,
    pub checks: Vec<Check>,
    pub summary: Value,
    pub artifacts: Artifacts,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn stage_params(s: &StageSection, l: f64, lambda: f64) -> StageParams {
    StageParams {
        gamma: s.gamma,
        beta: s.beta,
        r0: s.r0,
        trim: s.trim,
        profile: s.profile,
        ..StageParams::new(l, lambda)
    }
}

pub fn flex_options(f: &FlexSection, alphas: &[f64]) -> FlexOptions {
    let schedule = match f.schedule {
        ScheduleKind::Practical => FlexSchedule::Practical(Practical {
            l0: f.l0,
            lambda0: f.lambda0,
            l_ratio: f.l_ratio,
            lambda_ratio: f.lambda_ratio,
        }),
        ScheduleKind::Analytic => FlexSchedule::Analytic { c: f.c },
    };
    let mut o = FlexOptions::new(f.epsilon, f.alpha, schedule);
    o.first_step.rho = f.rho;
    o.first_step.lambda = f.first_step_lambda;
    o.nk.iterations = f.iterations;
    o.nk.r0 = f.r0;
    o.nk.gamma = f.gamma;
    o.nk.beta = f.beta;
    o.nk.trim = f.trim;
    o.nk.alphas = alphas.to_vec();
    o
}

/// Problem data for a validated configuration.
pub fn setup(cfg: &ExperimentConfig) -> Result<Problem> {
    let mut cfg = cfg.clone();
    cfg.resolve_problem()?;
    let grid = cfg.grid.grid()?;
    problem::build(&cfg.problem, &grid, cfg.experiment.seed)
}

fn sweep_fits(rows: &[SweepRow], gamma: f64) -> SweepFits {
    let x: Vec<f64> = rows.iter().map(|r| r.lambda_l).collect();
    let fit = |y: Vec<f64>| fit_loglog(&x, &y).ok();
    SweepFits {
        deficit: fit(rows.iter().map(|r| r.deficit - r.floor).collect()),
        internal_deficit: fit(rows.iter().map(|r| r.internal_deficit).collect()),
        hessian_raw: fit(rows.iter().map(|r| r.hessian_v).collect()),
        hessian: fit(rows.iter().map(|r| r.hessian_v / r.lambda.powf(gamma / 2.0)).collect()),
    }
}

fn slope_check(name: &str, fit: Option<&RateFit>, target: Option<f64>, tol: f64) -> Option<Check> {
    let target = target?;
    Some(match fit {
        Some(f) => Check::new(
            name,
            f.within(target, tol),
            format!("slope {:.4} (95% CI {:.3}..{:.3}), target {target} +- {tol}", f.slope, f.ci95[0], f.ci95[1]),
        ),
        None => Check::new(name, false, "fit undefined (non-positive data)".into()),
    })
}

/// Deficits in the order they were produced: initial, after the first step,
/// after each stage.
pub fn flex_track(r: &FlexReport) -> Vec<f64> {
    let mut t = vec![r.initial_deficit, r.first_step.remaining];
    if let Some(nk) = &r.nk {
        t.extend(nk.iterations.iter().map(|i| i.deficit));
    }
    t
}

fn run_sweep(cfg: &ExperimentConfig, p: &Problem) -> Result<Outcome> {
    let s = cfg.stage()?;
    let points: Vec<(f64, f64)> = s
        .l
        .iter()
        .flat_map(|&l| s.lambda.iter().map(move |&lam| (l, lam)))
        .collect();
    let reports = points
        .par_iter()
        .map(|&(l, lam)| {
            run_stage(&p.v, &p.w, &p.a, &stage_params(s, l, lam))
                .map(|o| o.report)
                .with_context(|| format!("stage at l {l}, lambda {lam}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SweepRow> = reports.iter().map(SweepRow::from_report).collect();
    let fits = sweep_fits(&rows, s.gamma);
    let e = &cfg.expect;
    let mut checks = Vec::new();
    checks.extend(slope_check("deficit slope", fits.deficit.as_ref(), e.deficit_slope, e.slope_tolerance));
    checks.extend(slope_check("hessian slope", fits.hessian.as_ref(), e.hessian_slope, e.slope_tolerance));
    let summary = json!({"rows": rows, "fits": fits});
    Ok(Outcome {
        name: cfg.experiment.name.clone(),
        pipeline: Pipeline::Sweep,
        checks,
        summary,
        artifacts: Artifacts::Sweep { rows, fits, reports },
    })
}

fn run_single_stage(cfg: &ExperimentConfig, p: &Problem) -> Result<Outcome> {
    let s = cfg.stage()?;
    let out = run_stage(&p.v, &p.w, &p.a, &stage_params(s, s.l[0], s.lambda[0]))
        .context("running the stage")?;
    let summary = serde_json::to_value(&out.report)?;
    Ok(Outcome {
        name: cfg.experiment.name.clone(),
        pipeline: Pipeline::Stage,
        checks: Vec::new(),
        summary,
        artifacts: Artifacts::Stage(Box::new(out)),
    })
}

fn run_flex(cfg: &ExperimentConfig, p: &Problem) -> Result<Outcome> {
    let f = cfg.flex()?;
    let opts = flex_options(f, &cfg.experiment.alphas);
    let out = full_flexibility(&p.v, &p.w, &p.a, &opts).context("running full flexibility")?;
    let ma = match &p.f {
        Some(rhs) => {
            let g = out.v.grid();
            Some(verify_ma(&out.v, &out.w, &p.a.restrict(g)?, &rhs.restrict(g)?)?)
        }
        None => None,
    };
    let r = &out.report;
    let e = &cfg.expect;
    let track = flex_track(r);
    let mut checks = Vec::new();
    if e.close {
        checks.push(Check::new(
            "closeness",
            r.close,
            format!("|v~ - v|_0 {:.4e}, |w~ - w|_0 {:.4e}, epsilon {}", r.v_distance, r.w_distance, r.epsilon),
        ));
    }
    if e.monotone {
        let mono = track.windows(2).all(|w| w[1] <= w[0]);
        checks.push(Check::new("monotone deficit", mono, format!("track [{}]", fmt_list(&track))));
    }
    if let Some(ratio) = e.deficit_ratio {
        let got = r.final_deficit / r.initial_deficit;
        checks.push(Check::new(
            "deficit reduction",
            got <= ratio,
            format!("final / initial {got:.4e}, bound {ratio:e}"),
        ));
    }
    if let (Some(factor), Some(m)) = (e.ma_factor, &ma) {
        let bound = factor * m.vk + e.ma_offset;
        checks.push(Check::new(
            "weak Monge-Ampere consistency",
            m.weak <= bound,
            format!("weak {:.4e}, VK {:.4e}, bound {bound:.4e}", m.weak, m.vk),
        ));
    }
    let summary = json!({
        "report": r,
        "deficit_track": track,
        "termination": r.nk.as_ref().map(|n| n.termination),
        "ma": ma,
    });
    Ok(Outcome {
        name: cfg.experiment.name.clone(),
        pipeline: Pipeline::Flex,
        checks,
        summary,
        artifacts: Artifacts::Flex {
            output: Box::new(out),
            ma,
        },
    })
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

/// Runs the configured pipeline; artifacts go to `out` when given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Outcome> {
    cfg.validate()?;
    let p = setup(cfg)?;
    let outcome = match cfg.experiment.pipeline {
        Pipeline::Stage => run_single_stage(cfg, &p)?,
        Pipeline::Sweep => run_sweep(cfg, &p)?,
        Pipeline::Flex => run_flex(cfg, &p)?,
    };
    if let Some(dir) = out {
        write_artifacts(dir, cfg, &outcome)?;
    }
    Ok(outcome)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Flattens nested JSON into `key.sub = value` lines.
pub fn flat_record(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, x, out);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), x, out);
                }
            }
            _ => out.push_str(&format!("{prefix} = {v}\n")),
        }
    }
    let mut out = String::new();
    walk("", v, &mut out);
    out
}

fn write_rows<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(
        out,
        "l,lambda,lambda_l,deficit,floor,internal_deficit,hessian_v,hessian_w,dv_c0,dv_c1,dw_c0,dw_c1,telescoping,input_deficit,m_budget"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.l,
            r.lambda,
            r.lambda_l,
            r.deficit,
            r.floor,
            r.internal_deficit,
            r.hessian_v,
            r.hessian_w,
            r.dv_c0,
            r.dv_c1,
            r.dw_c0,
            r.dw_c1,
            r.telescoping_residual,
            r.input_deficit,
            r.m_budget
        )?;
    }
    Ok(())
}

fn write_fields(dir: &Path, fields: &[(&str, &Field)]) -> Result<()> {
    write_grid(&mut create(dir, "fields.grid")?, fields)?;
    write_csv(&mut create(dir, "fields.csv")?, fields)?;
    Ok(())
}

fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, o: &Outcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    match &o.artifacts {
        Artifacts::Stage(out) => {
            create(dir, "stage_report.txt")?.write_all(flat_record(&o.summary).as_bytes())?;
            write_rows(create(dir, "stage.csv")?, &[SweepRow::from_report(&out.report)])?;
            write_fields(dir, &[("v", &out.v), ("w", &out.w), ("deficit", &out.deficit)])?;
        }
        Artifacts::Sweep { rows, reports, .. } => {
            write_rows(create(dir, "sweep.csv")?, rows)?;
            let mut kv = create(dir, "stage_reports.txt")?;
            for (i, r) in reports.iter().enumerate() {
                writeln!(kv, "# point {i}")?;
                kv.write_all(flat_record(&serde_json::to_value(r)?).as_bytes())?;
            }
        }
        Artifacts::Flex { output, .. } => {
            if let Some(nk) = &output.report.nk {
                nk.write_csv(create(dir, "iterations.csv")?)?;
            }
            write_fields(dir, &[("v", &output.v), ("w", &output.w), ("deficit", &output.deficit)])?;
        }
    }
    let summary = json!({
        "name": o.name,
        "pipeline": o.pipeline,
        "seed": cfg.experiment.seed,
        "config": cfg,
        "passed": o.passed(),
        "checks": o.checks,
        "result": o.summary,
    });
    let mut s = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut s, &summary)?;
    writeln!(s)?;
    Ok(())
}

/// Writes the initial problem fields of a configuration.
pub fn export_problem(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let p = setup(cfg)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut fields: Vec<(&str, &Field)> = vec![("v", &p.v), ("w", &p.w), ("a", &p.a)];
    if let Some(f) = &p.f {
        fields.push(("f", f));
    }
    write_fields(dir, &fields)?;
    Ok(dir.join("fields.grid"))
}
