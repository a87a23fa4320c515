use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::error::{CssError, Result};
use crate::evolve::{integrate, RunStatus, SimConfig, SimState};
use crate::gauge;
use crate::grid::{charge, h1m_seminorm_sq};
use crate::io;
use crate::linop::{
    coercivity_ratio, constrained_quotients, inner_r, weighted_norm, Linearization,
};
use crate::modulate;
use crate::scenario::{
    realize_initial, report, run_scenario, write_report, GridParams, InitialData,
    ScenarioConfig,
};
use crate::soliton::{lambda_soliton, sampled_soliton, SolitonSpec};
use crate::stationary::{groundstate_with, threshold_charge};
use crate::virial::{cauchy_schwarz_gap, make_cutoff, virial_accel_check, virial_series};

#[derive(Parser)]
#[command(name = "csslab", version, about = "equivariant Chern-Simons-Schrodinger lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a soliton profile with its gauge potentials
    Soliton {
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 60.0)]
        r_max: f64,
        #[arg(long, default_value_t = 8192)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a time evolution described by a JSON config
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evolve initial data and tabulate the truncated virial series
    Virial {
        #[arg(long)]
        config: PathBuf,
    },
    /// Linearization spectrum report at the soliton
    Spectrum {
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[arg(long, default_value_t = 60.0)]
        r_max: f64,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the stationary profile at coupling g (or sweep a table)
    Groundstate {
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[arg(long, default_value_t = 1.5)]
        g: f64,
        #[arg(long)]
        table: bool,
        #[arg(long, default_value_t = 40.0)]
        r_max: f64,
        #[arg(long, default_value_t = 8192)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit modulation parameters to a field file and report the remainder
    Modulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named scenario from a JSON config
    Scenario {
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge scenario verdicts under a directory
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// CSSLAB_OUT_DIR redirects output; it never touches physics parameters.
fn out_override(dir: PathBuf) -> PathBuf {
    match std::env::var_os("CSSLAB_OUT_DIR") {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => dir,
    }
}

fn exit_code(e: &CssError) -> i32 {
    match e {
        CssError::Blowup { .. } => 2,
        CssError::NoConvergence(_)
        | CssError::SolverFailure(_)
        | CssError::BracketFailure(_)
        | CssError::NotInTube { .. } => 3,
        _ => 1,
    }
}

#[derive(Debug, Deserialize)]
struct SimulateConfig {
    grid: GridParams,
    initial: InitialData,
    sim: SimConfig,
    output_dir: PathBuf,
    #[serde(default)]
    write_snapshots: bool,
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CssError::Config(format!("cannot read {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| {
        CssError::Config(format!("{} does not parse: {e}", path.display()))
    })
}

fn cmd_soliton(m: u32, lambda: f64, gamma: f64, r_max: f64, n: usize, out: PathBuf) -> Result<i32> {
    let out = out_override(out);
    let grid = crate::grid::build_grid(r_max, n)?;
    let spec = SolitonSpec { m, lambda, gamma, pc_time: None };
    let f = sampled_soliton(&spec, &grid)?;
    let pots = gauge::potentials(&f);
    io::ensure_dir(&out)?;
    io::write_field(&out.join("soliton"), &f, Some(&pots))?;
    io::write_json(
        &out.join("soliton_summary.json"),
        &serde_json::json!({
            "m": m,
            "lambda": lambda,
            "gamma": gamma,
            "charge": charge(&f),
            "energy_selfdual": gauge::energy(&f, &pots, 1.0),
            "h1m_seminorm": h1m_seminorm_sq(&f).sqrt(),
            "tail_warning": pots.tail_warning,
        }),
    )?;
    Ok(0)
}

fn cmd_simulate(config: &Path) -> Result<i32> {
    let cfg: SimulateConfig = load_config(config)?;
    cfg.sim.validate()?;
    let out = out_override(cfg.output_dir);
    let grid = cfg.grid.build()?;
    let f0 = realize_initial(&cfg.initial, &grid)?;
    let traj = integrate(SimState::new(f0, cfg.sim.g), &cfg.sim)?;
    io::ensure_dir(&out)?;
    io::write_diagnostics(&out.join("diagnostics.csv"), &traj.diagnostics)?;
    io::write_field(&out.join("field_final"), traj.final_field(), None)?;
    if cfg.write_snapshots {
        use std::io::Write;
        let mut idx =
            std::io::BufWriter::new(std::fs::File::create(out.join("snapshots.csv"))?);
        writeln!(idx, "index,t,file")?;
        for (i, (t, f)) in traj.snapshots.iter().enumerate() {
            let stem = out.join(format!("snapshot_{i:05}"));
            io::write_field(&stem, f, None)?;
            writeln!(idx, "{i},{},snapshot_{i:05}.csv", io::fmt_f64(*t))?;
        }
        idx.flush()?;
    }
    io::write_json(&out.join("sim_summary.json"), &traj.status)?;
    match traj.status {
        RunStatus::Completed => Ok(0),
        RunStatus::BlowupDetected { .. } => Ok(2),
    }
}

#[derive(Debug, Deserialize)]
struct VirialConfig {
    grid: GridParams,
    initial: InitialData,
    sim: SimConfig,
    output_dir: PathBuf,
    #[serde(default)]
    r_cut: Option<f64>,
}

fn cmd_virial(config: &Path) -> Result<i32> {
    let cfg: VirialConfig = load_config(config)?;
    cfg.sim.validate()?;
    let out = out_override(cfg.output_dir);
    let grid = cfg.grid.build()?;
    let f0 = realize_initial(&cfg.initial, &grid)?;
    let traj = integrate(SimState::new(f0, cfg.sim.g), &cfg.sim)?;
    let r_cut = cfg.r_cut.unwrap_or(grid.r_max / 2.0);
    let cutoff = make_cutoff(r_cut, &grid)?;
    let rows = virial_series(&traj, cfg.sim.g, &cutoff)?;
    let accel = virial_accel_check(&traj, cfg.sim.g, None)?;
    let gap = cauchy_schwarz_gap(traj.final_field(), &cutoff);
    io::ensure_dir(&out)?;
    io::write_virial_series(&out.join("virial.csv"), &rows)?;
    io::write_json(
        &out.join("virial_summary.json"),
        &serde_json::json!({
            "r_cut": r_cut,
            "accel": accel,
            "cauchy_schwarz_gap_final": gap,
            "status": traj.status,
        }),
    )?;
    match traj.status {
        RunStatus::Completed => Ok(0),
        RunStatus::BlowupDetected { .. } => Ok(2),
    }
}

fn cmd_spectrum(m: u32, r_max: f64, n: usize, k: usize, out: PathBuf) -> Result<i32> {
    let out = out_override(out);
    let grid = crate::grid::build_grid(r_max, n)?;
    let lin = Linearization::at_soliton(m, &grid)?;
    let qn = h1m_seminorm_sq(&lin.q_field()).sqrt();
    let iq = crate::grid::Field {
        m,
        grid: grid.clone(),
        u: lin.q.iter().map(|&v| num_complex::Complex64::new(0.0, v)).collect(),
    };
    let lq = lambda_soliton(m, &grid);
    let quotients = constrained_quotients(&lin, k)?;
    io::ensure_dir(&out)?;
    io::write_json(
        &out.join("spectrum.json"),
        &serde_json::json!({
            "m": m,
            "kernel_residual_i_q": weighted_norm(&lin.l_q(&iq)) / qn,
            "kernel_residual_lambda_q": weighted_norm(&lin.l_q(&lq)) / qn,
            "coercivity_ratio": coercivity_ratio(&lin)?,
            "constrained_quotients": quotients,
        }),
    )?;
    Ok(0)
}

fn cmd_groundstate(m: u32, g: f64, table: bool, r_max: f64, n: usize, out: PathBuf) -> Result<i32> {
    let out = out_override(out);
    let grid = crate::grid::build_grid(r_max, n)?;
    io::ensure_dir(&out)?;
    if table {
        use std::io::Write;
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(out.join("groundstates.csv"))?);
        writeln!(w, "m,g,charge,energy,residual,alpha")?;
        for gv in [1.25, 1.5, 2.0, 3.0] {
            let sol = groundstate_with(m, gv, 1.0, &grid)?;
            writeln!(
                w,
                "{m},{},{},{},{},{}",
                io::fmt_f64(gv),
                io::fmt_f64(sol.charge),
                io::fmt_f64(sol.energy),
                io::fmt_f64(sol.residual),
                io::fmt_f64(sol.alpha)
            )?;
        }
        w.flush()?;
        return Ok(0);
    }
    let sol = groundstate_with(m, g, 1.0, &grid)?;
    let thresh = threshold_charge(m, g)?;
    io::write_field(&out.join("groundstate"), &sol.profile, None)?;
    io::write_json(
        &out.join("groundstate_summary.json"),
        &serde_json::json!({
            "m": sol.m,
            "g": sol.g,
            "omega": sol.omega,
            "charge": sol.charge,
            "energy": sol.energy,
            "residual": sol.residual,
            "alpha": sol.alpha,
            "brackets": sol.brackets,
            "threshold_charge": thresh.charge,
            "minimality_unverified": thresh.minimality_unverified,
        }),
    )?;
    Ok(0)
}

fn cmd_modulate(input: &Path, out: PathBuf) -> Result<i32> {
    let out = out_override(out);
    let f = io::read_field(input)?;
    io::ensure_dir(&out)?;
    match modulate::fit(&f) {
        Ok(fit) => {
            let check = modulate::rigidity_bound_check(&fit, &f)?;
            io::write_field(&out.join("remainder"), &fit.eps, None)?;
            io::write_json(
                &out.join("modulate_report.json"),
                &serde_json::json!({
                    "in_tube": true,
                    "lambda0": fit.lambda0,
                    "gamma0": fit.gamma0,
                    "iterations": fit.iterations,
                    "rho1": fit.rho1,
                    "rho2": fit.rho2,
                    "eps_charge": inner_r(&fit.eps, &fit.eps),
                    "rigidity_ratio": check.ratio,
                    "energy": check.energy,
                    "degenerate": check.degenerate,
                }),
            )?;
            Ok(0)
        }
        Err(CssError::NotInTube { rho1, rho2 }) => {
            io::write_json(
                &out.join("modulate_report.json"),
                &serde_json::json!({
                    "in_tube": false,
                    "rho1": rho1,
                    "rho2": rho2,
                }),
            )?;
            Ok(3)
        }
        Err(e) => Err(e),
    }
}

fn cmd_scenario(config: &Path) -> Result<i32> {
    let mut cfg: ScenarioConfig = load_config(config)?;
    cfg.output_dir = out_override(cfg.output_dir);
    let summary = run_scenario(&cfg)?;
    for item in &summary.items {
        let verdict = if item.pass { "pass" } else { "FAIL" };
        println!(
            "{}  {}  measured {:.6e} {} {:.6e}  [{verdict}]",
            summary.scenario,
            item.name,
            item.measured,
            if item.cmp == "le" { "<=" } else { ">=" },
            item.bound
        );
    }
    if summary.status == "blowup_detected" && !summary.blowup_expected {
        return Ok(2);
    }
    if !summary.passed {
        return Ok(4);
    }
    Ok(0)
}

fn cmd_report(dir: &Path, out: PathBuf) -> Result<i32> {
    let out = out_override(out);
    let rep = report(dir)?;
    write_report(dir, &out, &rep)?;
    for run in &rep.runs {
        let verdict = if run.passed { "pass" } else { "FAIL" };
        println!("{}  {}  [{verdict}]", run.dir, run.scenario);
    }
    Ok(if rep.all_passed { 0 } else { 4 })
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Soliton { m, lambda, gamma, r_max, n, out } => {
            cmd_soliton(m, lambda, gamma, r_max, n, out)
        }
        Cmd::Simulate { config } => cmd_simulate(&config),
        Cmd::Virial { config } => cmd_virial(&config),
        Cmd::Spectrum { m, r_max, n, k, out } => cmd_spectrum(m, r_max, n, k, out),
        Cmd::Groundstate { m, g, table, r_max, n, out } => {
            cmd_groundstate(m, g, table, r_max, n, out)
        }
        Cmd::Modulate { input, out } => cmd_modulate(&input, out),
        Cmd::Scenario { config } => cmd_scenario(&config),
        Cmd::Report { dir, out } => cmd_report(&dir, out),
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
