use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use glycontrol::fuzzy::{ts_model_for, PdcController, TsModel};
use glycontrol::io::{self, GainsFile};
use glycontrol::lmi::{self, RuleVerification, SynthesisOptions, SynthesisResult};
use glycontrol::presets::{self, Preset};
use glycontrol::sim::{self, Metrics, PumpMap, Scenario, SimConfig};
use glycontrol::verify::{hinf_norm, VertexSystem, VerifyError};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{self, Design, DesignFlags, RunConfig, SimFlags};
use crate::error::CliError;

/// Margin allowed between the computed norm and `γ`.
pub const NORM_SLACK: f64 = 1e-4;
const NORM_TOL: f64 = 1e-7;
const RESIDUAL_TOL: f64 = 1e-8;

fn other(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Other(e.into())
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(CliError::Other)
}

/// Starts a report file from scratch, so reruns produce identical files.
fn fresh_report(path: &Path) -> Result<(), CliError> {
    fs::write(path, "").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn design_options(d: &Design) -> SynthesisOptions {
    let base = SynthesisOptions::default();
    SynthesisOptions {
        mu: d.mu,
        x0: d.x0.clone(),
        eps_feas: d.eps_feas.unwrap_or(base.eps_feas),
        gamma_max: d.gamma_max.unwrap_or(base.gamma_max),
        ..base
    }
}

#[derive(Debug, Serialize)]
struct RuleReport {
    rule: usize,
    gamma: f64,
    hinf_norm: f64,
    hinf_block_max_eig: f64,
    spectral_abscissa: f64,
    input_bound_residual: f64,
    initial_condition_residual: f64,
    gain_identity_residual: f64,
    passed: bool,
    gain: Vec<f64>,
}

fn check_rules(result: &SynthesisResult, ts: &TsModel) -> Result<(Vec<RuleVerification>, Vec<RuleReport>), CliError> {
    let checks = lmi::verify_solution(result, ts).map_err(other)?;
    let mut rows = Vec::with_capacity(checks.len());
    for (c, (sol, rule)) in checks.iter().zip(result.rules.iter().zip(&ts.rules)) {
        let sys = VertexSystem::closed_loop(rule, &sol.gain).map_err(other)?;
        let norm = match hinf_norm(&sys, NORM_TOL) {
            Ok(n) => n,
            Err(VerifyError::Unstable(_)) => f64::INFINITY,
            Err(e) => return Err(other(e)),
        };
        rows.push(RuleReport {
            rule: c.rule,
            gamma: sol.gamma,
            hinf_norm: norm,
            hinf_block_max_eig: c.hinf_block_max_eig,
            spectral_abscissa: c.spectral_abscissa,
            input_bound_residual: c.input_bound_residual,
            initial_condition_residual: c.initial_condition_residual,
            gain_identity_residual: c.gain_identity_residual,
            passed: c.passed(RESIDUAL_TOL) && norm <= sol.gamma + NORM_SLACK,
            gain: sol.gain.transpose().as_slice().to_vec(),
        });
    }
    Ok((checks, rows))
}

fn print_rules(rows: &[RuleReport]) {
    for r in rows {
        let gain: Vec<String> = r.gain.iter().map(|g| format!("{g:.6e}")).collect();
        println!(
            "rule {}: gamma = {:.6}  hinf = {:.6}  abscissa = {:.3e}  {}  K = [{}]",
            r.rule + 1,
            r.gamma,
            r.hinf_norm,
            r.spectral_abscissa,
            if r.passed { "ok" } else { "FAILED" },
            gain.join(", ")
        );
    }
}

pub fn synthesize(flags: &DesignFlags, cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let design = config::resolve_design(flags, cfg)?;
    let ts = ts_model_for(&design.plant, design.sector).map_err(|e| CliError::Config(e.to_string()))?;
    let result = lmi::synthesize(&ts, &design_options(&design))?;
    let (checks, rows) = check_rules(&result, &ts)?;

    prepare_dir(out)?;
    let tag = design.tag();
    let gains_path = out.join(format!("gains_{tag}.json"));
    GainsFile::from_result(&design.plant, design.sector, design.preset.map(|p| p.name), &result, Some(&checks))
        .write(&gains_path)
        .map_err(other)?;
    let report = out.join(format!("synthesize_{tag}.toml"));
    fresh_report(&report)?;
    for r in &rows {
        io::append_report(&report, "rule", r).map_err(other)?;
    }

    println!("model {}  mu = {}  rules = {}", design.plant.name(), design.mu, rows.len());
    print_rules(&rows);
    println!("gains written to {}", gains_path.display());
    if let Some(bad) = rows.iter().find(|r| !r.passed) {
        return Err(CliError::Verification(format!("rule {} failed its a-posteriori checks", bad.rule + 1)));
    }
    Ok(gains_path)
}

pub fn verify(gains_path: &Path, out: &Path) -> Result<(), CliError> {
    let gains = GainsFile::read(gains_path).map_err(|e| CliError::Config(e.to_string()))?;
    let result = gains.to_result().map_err(|e| CliError::Config(e.to_string()))?;
    let ts = gains.ts_model().map_err(|e| CliError::Config(e.to_string()))?;
    let (_, rows) = check_rules(&result, &ts)?;

    prepare_dir(out)?;
    let stem = gains_path.file_stem().and_then(|s| s.to_str()).unwrap_or("gains");
    let report = out.join(format!("verify_{stem}.toml"));
    fresh_report(&report)?;
    for r in &rows {
        io::append_report(&report, "verification", r).map_err(other)?;
    }
    print_rules(&rows);
    match rows.iter().filter(|r| !r.passed).count() {
        0 => {
            println!("all {} rules verified", rows.len());
            Ok(())
        }
        n => Err(CliError::Verification(format!("{n} of {} rules failed", rows.len()))),
    }
}

/// Controller, design model and Lyapunov matrices for a simulation run.
struct Loaded {
    design: Design,
    ts: TsModel,
    result: SynthesisResult,
}

fn load_or_synthesize(flags: &DesignFlags, cfg: &RunConfig, gains: Option<&Path>) -> Result<Loaded, CliError> {
    let Some(path) = gains else {
        let design = config::resolve_design(flags, cfg)?;
        let ts = ts_model_for(&design.plant, design.sector).map_err(|e| CliError::Config(e.to_string()))?;
        let result = lmi::synthesize(&ts, &design_options(&design))?;
        return Ok(Loaded { design, ts, result });
    };
    let file = GainsFile::read(path).map_err(|e| CliError::Config(e.to_string()))?;
    let model = config::resolve_model(flags.model, cfg).ok();
    if let Some(m) = model {
        if m.as_str() != file.plant.name() {
            return Err(CliError::Config(format!(
                "gains in {} are for the {} model, not {}",
                path.display(),
                file.plant.name(),
                m.as_str()
            )));
        }
    }
    let model = match file.plant.name() {
        "bergman" => config::ModelName::Bergman,
        _ => config::ModelName::Tolic,
    };
    let preset = config::resolve_preset(model, flags.preset.as_deref().or(cfg.preset.as_deref()).or(file.preset.as_deref()))?;
    let result = file.to_result().map_err(|e| CliError::Config(e.to_string()))?;
    let ts = file.ts_model().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Loaded {
        design: Design {
            plant: file.plant,
            sector: file.sector_bounds,
            preset,
            mu: file.mu,
            x0: Some(result.x0.clone()),
            eps_feas: Some(file.eps_feas),
            gamma_max: None,
        },
        ts,
        result,
    })
}

pub struct SimArgs<'a> {
    pub design: &'a DesignFlags,
    pub sim: &'a SimFlags,
    pub gains: Option<&'a Path>,
    pub pump_map: Option<PumpMap>,
}

pub fn simulate(args: &SimArgs<'_>, cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let loaded = load_or_synthesize(args.design, cfg, args.gains)?;
    let mut sim_cfg = config::resolve_sim(args.sim, cfg, loaded.design.preset)?;
    if args.pump_map.is_some() {
        sim_cfg.pump_map = args.pump_map;
    }
    let ctrl = PdcController::new(loaded.result.gains()).map_err(other)?;
    let lyap: Vec<DMatrix<f64>> = loaded
        .result
        .rules
        .iter()
        .map(|r| r.lyapunov().context("stored X is not positive definite"))
        .collect::<anyhow::Result<_>>()?;
    let plant = &loaded.design.plant;
    let trace = sim::simulate_closed_loop(plant, &loaded.ts, &ctrl, &sim_cfg, Some(&lyap)).map_err(other)?;
    let m = sim::metrics(&trace, plant);

    prepare_dir(out)?;
    let tag = format!("{}_alpha{}", loaded.design.tag(), sim_cfg.alpha);
    let trace_path = out.join(format!("trace_{tag}.csv"));
    io::write_trace_file(&trace_path, &trace).map_err(other)?;
    let report = out.join(format!("simulate_{tag}.toml"));
    fresh_report(&report)?;
    io::append_report(&report, "simulation", &SimReport::new(&sim_cfg, &m, loaded.result.max_gamma())).map_err(other)?;

    println!("{}", metrics_line(&m));
    println!("trace written to {}", trace_path.display());
    if let Some(f) = &trace.failure {
        return Err(CliError::Other(anyhow::anyhow!("simulation stopped early: {f}")));
    }
    Ok(trace_path)
}

#[derive(Debug, Serialize)]
struct SimReport<'a> {
    config: &'a SimConfig,
    metrics: &'a Metrics,
    max_gamma: f64,
}

impl<'a> SimReport<'a> {
    fn new(config: &'a SimConfig, metrics: &'a Metrics, max_gamma: f64) -> Self {
        Self { config, metrics, max_gamma }
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.digits$}"))
}

fn metrics_line(m: &Metrics) -> String {
    format!(
        "peak = {:.2} mg/dl  min = {:.2} mg/dl  settling = {} min  final = {:+.3}  max pump = {:.3}  hypo = {}  ratio = {}{}",
        m.peak_glucose,
        m.min_glucose,
        opt(m.settling_time, 1),
        m.final_deviation,
        m.max_u_pump,
        m.hypoglycemia,
        opt(m.hinf_ratio, 3),
        if m.failed { "  (run failed)" } else { "" }
    )
}

pub const SWEEP_ALPHAS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Serialize)]
struct SweepEntry<'a> {
    preset: &'a str,
    mu: f64,
    u_max: f64,
    alpha: f64,
    max_gamma: f64,
    metrics: &'a Metrics,
}

pub fn sweep(flags: &DesignFlags, sim_flags: &SimFlags, cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    use rayon::prelude::*;

    let model = config::resolve_model(flags.model, cfg)?;
    let plant = config::build_plant(model, cfg)?;
    let design = config::resolve_design(
        &DesignFlags {
            model: Some(model),
            preset: None,
            mu: Some(1.0),
            ..flags.clone()
        },
        cfg,
    )?;
    let ts = ts_model_for(&plant, design.sector).map_err(|e| CliError::Config(e.to_string()))?;
    let sets: &[Preset] = presets::for_model(model.as_str()).unwrap_or_default();

    let designs: Vec<(&Preset, SynthesisResult)> = sets
        .par_iter()
        .map(|p| {
            let opts = design_options(&Design { mu: p.mu, ..design.clone() });
            lmi::synthesize(&ts, &opts).map(|r| (p, r))
        })
        .collect::<Result<_, _>>()?;
    let controllers: Vec<PdcController> = designs
        .iter()
        .map(|(_, r)| PdcController::new(r.gains()))
        .collect::<Result<_, _>>()
        .map_err(other)?;

    let mut scenarios = Vec::new();
    for ((p, _), ctrl) in designs.iter().zip(&controllers) {
        for alpha in SWEEP_ALPHAS {
            let flags = SimFlags { alpha: Some(alpha), u_max: Some(p.u_max), ..sim_flags.clone() };
            scenarios.push(Scenario {
                label: p.name.to_owned(),
                controller: ctrl,
                config: config::resolve_sim(&flags, cfg, Some(p))?,
            });
        }
    }
    let rows = sim::sweep(&plant, &ts, &scenarios).map_err(other)?;

    prepare_dir(out)?;
    let csv_path = out.join(format!("sweep_{}.csv", model.as_str()));
    let report = out.join(format!("sweep_{}.toml", model.as_str()));
    fresh_report(&report)?;
    let mut csv = String::from(
        "preset,mu,u_max,alpha,max_gamma,peak_glucose,min_glucose,settling_time,final_deviation,max_u_pump,hypoglycemia,hinf_ratio,failed\n",
    );
    println!(
        "{:<7} {:>6} {:>6} {:>5} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8} {:>6} {:>8}",
        "preset", "mu", "u_max", "alpha", "gamma", "peak", "min", "settle", "final", "pump", "hypo", "ratio"
    );
    for (row, sc) in rows.iter().zip(&scenarios) {
        let (p, r) = designs
            .iter()
            .find(|(p, _)| p.name == sc.label)
            .context("sweep row without a design")?;
        let m = &row.metrics;
        let g = r.max_gamma();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.name,
            p.mu,
            row.u_max,
            row.alpha,
            g,
            m.peak_glucose,
            m.min_glucose,
            m.settling_time.map_or(String::new(), |v| v.to_string()),
            m.final_deviation,
            m.max_u_pump,
            m.hypoglycemia,
            m.hinf_ratio.map_or(String::new(), |v| v.to_string()),
            m.failed
        );
        println!(
            "{:<7} {:>6} {:>6} {:>5} {:>9.3} {:>9.2} {:>9.2} {:>9} {:>+8.2} {:>8.3} {:>6} {:>8}",
            p.name,
            p.mu,
            row.u_max,
            row.alpha,
            g,
            m.peak_glucose,
            m.min_glucose,
            opt(m.settling_time, 1),
            m.final_deviation,
            m.max_u_pump,
            m.hypoglycemia,
            opt(m.hinf_ratio, 3)
        );
        let entry = SweepEntry {
            preset: p.name,
            mu: p.mu,
            u_max: row.u_max,
            alpha: row.alpha,
            max_gamma: g,
            metrics: m,
        };
        io::append_report(&report, "run", &entry).map_err(other)?;
    }
    fs::write(&csv_path, csv).with_context(|| format!("cannot write {}", csv_path.display()))?;
    println!("summary written to {}", csv_path.display());
    Ok(csv_path)
}
