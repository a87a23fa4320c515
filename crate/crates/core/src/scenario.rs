use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CssError, Result};
use crate::evolve::{integrate, RunStatus, Scheme, SimConfig, SimState, Trajectory};
use crate::grid::{build_grid, charge, weighted_l2_diff, Field, RadialGrid};
use crate::io;
use crate::linop::{
    coercivity_ratio, constrained_quotients, inner_r, weighted_norm, Linearization,
};
use crate::modulate;
use crate::numerics::loglog_slope;
use crate::soliton::{lambda_soliton, pc_soliton_exact, sampled_soliton, soliton, SolitonSpec};
use crate::stationary::groundstate_with;
use crate::virial::{cauchy_schwarz_gap, make_cutoff, virial_accel_check, virial_series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    StaticSoliton,
    PcBlowup,
    SubthresholdScatter,
    ThresholdPerturb,
    VirialSuite,
    SpectrumSuite,
    GroundstateTable,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::StaticSoliton => "static_soliton",
            ScenarioKind::PcBlowup => "pc_blowup",
            ScenarioKind::SubthresholdScatter => "subthreshold_scatter",
            ScenarioKind::ThresholdPerturb => "threshold_perturb",
            ScenarioKind::VirialSuite => "virial_suite",
            ScenarioKind::SpectrumSuite => "spectrum_suite",
            ScenarioKind::GroundstateTable => "groundstate_table",
        }
    }

    /// Blow-up termination is the demonstrated outcome only here; anywhere
    /// else it flips the exit status to "unexpected blowup".
    pub fn expects_blowup(self) -> bool {
        matches!(self, ScenarioKind::PcBlowup)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridParams {
    pub r_max: f64,
    pub n: usize,
}

impl GridParams {
    pub fn build(&self) -> Result<Arc<RadialGrid>> {
        build_grid(self.r_max, self.n)
    }
}

fn default_amplitude() -> f64 {
    1.0
}
fn default_width() -> f64 {
    1.0
}

/// Initial data for a run: a closed-form family member or a field file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    /// e^{i gamma} lambda Q(lambda r)
    Soliton(SolitonSpec),
    /// pseudoconformal orbit sampled at t0 with horizon pc_time
    PcSoliton { spec: SolitonSpec, t0: f64 },
    /// named closed form; `gaussian` is a r^m exp(-(r/w)^2)
    Expression {
        id: String,
        m: u32,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_width")]
        width: f64,
    },
    /// field CSV written by this tool (shape header alongside)
    Csv { path: PathBuf },
}

pub fn realize_initial(init: &InitialData, grid: &Arc<RadialGrid>) -> Result<Field> {
    match init {
        InitialData::Soliton(spec) => sampled_soliton(spec, grid),
        InitialData::PcSoliton { spec, t0 } => pc_soliton_exact(spec, *t0, grid),
        InitialData::Expression { id, m, amplitude, width } => match id.as_str() {
            "gaussian" => {
                let (a, w, mm) = (*amplitude, *width, *m as i32);
                Ok(Field::from_real_fn(*m, grid, |r| {
                    a * r.powi(mm) * (-(r / w) * (r / w)).exp()
                }))
            }
            other => Err(CssError::Config(format!(
                "unknown expression id {other:?}; known: gaussian"
            ))),
        },
        InitialData::Csv { path } => {
            let f = io::read_field(path)?;
            if (f.grid.r_max - grid.r_max).abs() > 1e-12 || f.n() != grid.n {
                return Err(CssError::Config(format!(
                    "field file {} has grid ({}, {}), run wants ({}, {})",
                    path.display(),
                    f.grid.r_max,
                    f.n(),
                    grid.r_max,
                    grid.n
                )));
            }
            Ok(f)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub grid: Option<GridParams>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub initial: Option<InitialData>,
    pub output_dir: PathBuf,
    /// drives the perturbation draw in threshold_perturb; echoed everywhere
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub m_values: Option<Vec<u32>>,
    #[serde(default)]
    pub g_values: Option<Vec<f64>>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid {
            if !(g.r_max > 0.0) || g.n < 16 {
                return Err(CssError::Config(format!(
                    "grid ({}, {}) out of range",
                    g.r_max, g.n
                )));
            }
        }
        if let Some(sim) = &self.sim {
            sim.validate()?;
        }
        if let Some(InitialData::Csv { path }) = &self.initial {
            if !path.exists() {
                return Err(CssError::Config(format!(
                    "initial-data file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// "le": pass iff measured <= bound; "ge": pass iff measured >= bound
    pub cmp: String,
    pub pass: bool,
}

fn le(name: &str, measured: f64, bound: f64) -> CheckItem {
    CheckItem {
        name: name.to_string(),
        measured,
        bound,
        cmp: "le".to_string(),
        pass: measured <= bound,
    }
}

fn ge(name: &str, measured: f64, bound: f64) -> CheckItem {
    CheckItem {
        name: name.to_string(),
        measured,
        bound,
        cmp: "ge".to_string(),
        pass: measured >= bound,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub seed: u64,
    pub grid: GridParams,
    /// completed | blowup_detected
    pub status: String,
    pub blowup_expected: bool,
    pub items: Vec<CheckItem>,
    pub passed: bool,
    /// measured quantities recorded without an asserted bound
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
}

/// Wall-clock facts live here, away from the numeric outputs, so re-runs with
/// the same config and seed produce byte-identical data files.
#[derive(Debug, Serialize)]
struct RunMeta {
    unix_time_s: u64,
    version: &'static str,
}

fn write_meta(dir: &Path) -> Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    io::write_json(
        &dir.join("run_meta.json"),
        &RunMeta { unix_time_s: now, version: env!("CARGO_PKG_VERSION") },
    )
}

fn status_string(traj: &Trajectory) -> String {
    match traj.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::BlowupDetected { .. } => "blowup_detected".to_string(),
    }
}

fn base_sim(dt: f64, t_end: f64, stride: usize) -> SimConfig {
    SimConfig {
        dt,
        t_end,
        scheme: Scheme::Strang,
        picard_tol: 1e-10,
        picard_max: 50,
        blowup_threshold: 1e3,
        g: 1.0,
        snapshot_stride: stride,
        linear: false,
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    cfg.validate()?;
    io::ensure_dir(&cfg.output_dir)?;
    let mut summary = match cfg.scenario {
        ScenarioKind::StaticSoliton => static_soliton(cfg)?,
        ScenarioKind::PcBlowup => pc_blowup(cfg)?,
        ScenarioKind::SubthresholdScatter => subthreshold_scatter(cfg)?,
        ScenarioKind::ThresholdPerturb => threshold_perturb(cfg)?,
        ScenarioKind::VirialSuite => virial_suite(cfg)?,
        ScenarioKind::SpectrumSuite => spectrum_suite(cfg)?,
        ScenarioKind::GroundstateTable => groundstate_table(cfg)?,
    };
    summary.passed = summary.items.iter().all(|i| i.pass);
    io::write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    write_meta(&cfg.output_dir)?;
    Ok(summary)
}

fn static_soliton(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    let grid_p = cfg.grid.unwrap_or(GridParams { r_max: 60.0, n: 16384 });
    let grid = grid_p.build()?;
    let init = cfg.initial.clone().unwrap_or(InitialData::Soliton(SolitonSpec {
        m: 1,
        lambda: 1.0,
        gamma: 0.0,
        pc_time: None,
    }));
    let f0 = realize_initial(&init, &grid)?;
    let sim = cfg.sim.clone().unwrap_or_else(|| base_sim(5e-4, 0.5, 200));
    let traj = integrate(SimState::new(f0.clone(), sim.g), &sim)?;
    let q0 = charge(&f0);
    let dev = weighted_l2_diff(traj.final_field(), &f0) / q0.sqrt();
    let drift = (traj.diagnostics.last().unwrap().charge - q0).abs() / q0;
    io::write_diagnostics(&cfg.output_dir.join("diagnostics.csv"), &traj.diagnostics)?;
    io::write_field(&cfg.output_dir.join("field_final"), traj.final_field(), None)?;
    Ok(ScenarioSummary {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.seed,
        grid: grid_p,
        status: status_string(&traj),
        blowup_expected: false,
        items: vec![
            le("rel_l2_deviation", dev, 1e-4),
            le("rel_charge_drift", drift, 1e-8),
        ],
        passed: false,
        notes: vec![],
        artifacts: vec!["diagnostics.csv".into(), "field_final.csv".into()],
    })
}

fn pc_blowup(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    let grid_p = cfg.grid.unwrap_or(GridParams { r_max: 40.0, n: 16384 });
    let grid = grid_p.build()?;
    let init = cfg.initial.clone().unwrap_or(InitialData::PcSoliton {
        spec: SolitonSpec { m: 1, lambda: 1.5, gamma: 0.0, pc_time: Some(1.0) },
        t0: 0.0,
    });
    let big_t = match &init {
        InitialData::PcSoliton { spec, .. } => spec.pc_time.ok_or_else(|| {
            CssError::Config("pc_blowup needs a pc_time horizon".into())
        })?,
        _ => return Err(CssError::Config("pc_blowup takes pc_soliton initial data".into())),
    };
    let f0 = realize_initial(&init, &grid)?;
    let mut sim = cfg.sim.clone().unwrap_or_else(|| base_sim(2.5e-4, 0.6, 40));
    if sim.t_end >= big_t {
        return Err(CssError::Config(format!(
            "t_end {} is at or past the horizon {big_t}",
            sim.t_end
        )));
    }
    sim.blowup_threshold = sim.blowup_threshold.min(25.0);
    let traj = integrate(SimState::new(f0, sim.g), &sim)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for row in &traj.diagnostics {
        xs.push(big_t - row.t);
        ys.push(row.h1m);
    }
    let exponent = loglog_slope(&xs, &ys)?;
    let t_last = traj.diagnostics.last().unwrap().t;
    let exact_end = match &init {
        InitialData::PcSoliton { spec, .. } => pc_soliton_exact(spec, t_last, &grid)?,
        _ => unreachable!(),
    };
    let track =
        weighted_l2_diff(traj.final_field(), &exact_end) / charge(&exact_end).sqrt();
    let growth = traj.diagnostics.last().unwrap().h1m / traj.diagnostics[0].h1m;
    io::write_diagnostics(&cfg.output_dir.join("diagnostics.csv"), &traj.diagnostics)?;
    Ok(ScenarioSummary {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.seed,
        grid: grid_p,
        status: status_string(&traj),
        blowup_expected: true,
        items: vec![
            le("seminorm_exponent_error", (exponent + 1.0).abs(), 0.05),
            le("rel_l2_tracking", track, 1e-2),
            ge("seminorm_growth", growth, 2.0),
        ],
        passed: false,
        notes: vec![format!("fitted growth exponent {exponent:.4} in (T - t)")],
        artifacts: vec!["diagnostics.csv".into()],
    })
}

fn subthreshold_scatter(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    let grid_p = cfg.grid.unwrap_or(GridParams { r_max: 30.0, n: 4096 });
    let grid = grid_p.build()?;
    let init = cfg.initial.clone().unwrap_or(InitialData::Expression {
        id: "gaussian".into(),
        m: 1,
        amplitude: 0.5,
        width: 2.0,
    });
    let f0 = realize_initial(&init, &grid)?;
    let threshold = 8.0 * std::f64::consts::PI * (f0.m as f64 + 1.0);
    let sim = cfg.sim.clone().unwrap_or_else(|| base_sim(2e-3, 5.0, 250));
    let traj = integrate(SimState::new(f0, sim.g), &sim)?;
    let l4_first = traj.diagnostics[0].l4.powi(4);
    let l4_last = traj.diagnostics.last().unwrap().l4.powi(4);
    let decay = 1.0 - l4_last / l4_first;
    io::write_diagnostics(&cfg.output_dir.join("diagnostics.csv"), &traj.diagnostics)?;
    Ok(ScenarioSummary {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.seed,
        grid: grid_p,
        status: status_string(&traj),
        blowup_expected: false,
        items: vec![
            ge("l4_mass_decay", decay, 0.75),
            le("charge_vs_threshold", traj.diagnostics[0].charge, threshold),
        ],
        passed: false,
        notes: vec![],
        artifacts: vec!["diagnostics.csv".into()],
    })
}

/// Draws the seeded perturbation for threshold_perturb: a few random ring
/// bumps, normalized to the requested charge-norm size.
fn seeded_bump(m: u32, grid: &Arc<RadialGrid>, seed: u64, size: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for _ in 0..4 {
        let center: f64 = rng.gen_range(1.0..6.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.gen_range(0.5..1.0);
        modes.push((center, phase, amp));
    }
    let mut d = Field::from_fn(m, grid, |r| {
        let mut v = Complex64::ZERO;
        for &(c, p, a) in &modes {
            v += Complex64::from_polar(a * (-(r - c) * (r - c)).exp(), p);
        }
        v * r.powi(m as i32) * (-(r / 8.0) * (r / 8.0)).exp()
    });
    let norm = charge(&d).sqrt();
    for v in d.u.iter_mut() {
        *v *= size / norm;
    }
    d
}

fn threshold_perturb(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    let grid_p = cfg.grid.unwrap_or(GridParams { r_max: 40.0, n: 8192 });
    let grid = grid_p.build()?;
    let m = cfg.m_values.as_ref().and_then(|v| v.first().copied()).unwrap_or(1);
    let q = soliton(m, &grid);
    let d = seeded_bump(m, &grid, cfg.seed, 0.02);
    let mut f = q.clone();
    for (a, b) in f.u.iter_mut().zip(&d.u) {
        *a += b;
    }
    let f = modulate::renormalize(&f);
    let fit = modulate::fit(&f)?;
    let check = modulate::rigidity_bound_check(&fit, &f)?;
    let eps_fraction = inner_r(&fit.eps, &fit.eps).sqrt() / charge(&q).sqrt();
    io::write_field(&cfg.output_dir.join("perturbed"), &f, None)?;
    io::write_field(&cfg.output_dir.join("remainder"), &fit.eps, None)?;
    io::write_json(
        &cfg.output_dir.join("fit.json"),
        &serde_json::json!({
            "lambda0": fit.lambda0,
            "gamma0": fit.gamma0,
            "iterations": fit.iterations,
            "rho1": fit.rho1,
            "rho2": fit.rho2,
            "rigidity_ratio": check.ratio,
            "energy": check.energy,
            "eps_norm": check.eps_norm,
            "degenerate": check.degenerate,
            "grad_norm_ratio": check.grad_norm_ratio,
        }),
    )?;
    Ok(ScenarioSummary {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.seed,
        grid: grid_p,
        status: "completed".to_string(),
        blowup_expected: false,
        items: vec![
            le("fit_iterations", fit.iterations as f64, 50.0),
            le("eps_charge_fraction", eps_fraction, 0.1),
            ge("perturbation_energy", check.energy, 0.0),
        ],
        passed: false,
        notes: vec![format!(
            "rigidity ratio {:.4} at eps norm {:.3e} (empirical, no asserted constant)",
            check.ratio, check.eps_norm
        )],
        artifacts: vec!["perturbed.csv".into(), "remainder.csv".into(), "fit.json".into()],
    })
}

fn virial_suite(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    let grid_p = cfg.grid.unwrap_or(GridParams { r_max: 30.0, n: 8192 });
    let grid = grid_p.build()?;
    let init = cfg.initial.clone().unwrap_or(InitialData::Expression {
        id: "gaussian".into(),
        m: 1,
        amplitude: 1.0,
        width: 1.0,
    });
    let f0 = realize_initial(&init, &grid)?;
    let sim = cfg.sim.clone().unwrap_or_else(|| base_sim(1e-3, 0.25, 5));
    let traj = integrate(SimState::new(f0, sim.g), &sim)?;
    let cutoff = make_cutoff(grid.r_max / 2.0, &grid)?;
    let accel = virial_accel_check(&traj, sim.g, None)?;
    let rows = virial_series(&traj, sim.g, &cutoff)?;
    let scale = accel.sixteen_e.abs();
    let rate_fd_dev = rows[1..rows.len() - 1]
        .iter()
        .map(|r| (r.dv_fd - r.rate).abs())
        .fold(0.0_f64, f64::max)
        / scale;
    let gap = cauchy_schwarz_gap(traj.final_field(), &cutoff);
    io::write_virial_series(&cfg.output_dir.join("virial.csv"), &rows)?;
    io::write_json(&cfg.output_dir.join("accel.json"), &accel)?;
    Ok(ScenarioSummary {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.seed,
        grid: grid_p,
        status: status_string(&traj),
        blowup_expected: false,
        items: vec![
            le("accel_vs_16e", accel.max_rel_dev, 1e-2),
            le("rate_vs_fd", rate_fd_dev, 1e-2),
            ge("cauchy_schwarz_gap", gap, -1e-6),
        ],
        passed: false,
        notes: vec![format!("16E = {:.6}", accel.sixteen_e)],
        artifacts: vec!["virial.csv".into(), "accel.json".into()],
    })
}

/// Kernel residuals are an O(h^2) discretization effect, so they are measured
/// on a fine lattice; the dense eigensolve stays on the coarse one.
fn kernel_residuals(m: u32, r_max: f64, n: usize) -> Result<(f64, f64)> {
    let grid = build_grid(r_max, n)?;
    let lin = Linearization::at_soliton(m, &grid)?;
    let qn = crate::grid::h1m_seminorm_sq(&lin.q_field()).sqrt();
    let iq = Field {
        m,
        grid: grid.clone(),
        u: lin.q.iter().map(|&v| Complex64::new(0.0, v)).collect(),
    };
    let lq = lambda_soliton(m, &grid);
    Ok((
        weighted_norm(&lin.l_q(&iq)) / qn,
        weighted_norm(&lin.l_q(&lq)) / qn,
    ))
}

fn spectrum_suite(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    let grid_p = cfg.grid.unwrap_or(GridParams { r_max: 60.0, n: 512 });
    let grid = grid_p.build()?;
    let m = cfg.m_values.as_ref().and_then(|v| v.first().copied()).unwrap_or(1);
    let lin = Linearization::at_soliton(m, &grid)?;
    let n_fine = grid_p.n.max(8192);
    let (res_iq, res_lq) = kernel_residuals(m, grid_p.r_max, n_fine)?;
    let ratio = coercivity_ratio(&lin)?;
    let quotients = constrained_quotients(&lin, 10)?;
    io::write_json(
        &cfg.output_dir.join("spectrum.json"),
        &serde_json::json!({
            "m": m,
            "kernel_grid_n": n_fine,
            "kernel_residual_i_q": res_iq,
            "kernel_residual_lambda_q": res_lq,
            "coercivity_ratio": ratio,
            "constrained_quotients": quotients,
        }),
    )?;
    Ok(ScenarioSummary {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.seed,
        grid: grid_p,
        status: "completed".to_string(),
        blowup_expected: false,
        items: vec![
            le("kernel_residual_i_q", res_iq, 1e-3),
            le("kernel_residual_lambda_q", res_lq, 1e-3),
            ge("coercivity_ratio", ratio, 0.0),
            ge("min_constrained_quotient", quotients[0], 0.0),
        ],
        passed: false,
        notes: vec![format!(
            "measured coercivity constant {ratio:.4} at m = {m} (recorded, not asserted)"
        )],
        artifacts: vec!["spectrum.json".into()],
    })
}

fn groundstate_table(cfg: &ScenarioConfig) -> Result<ScenarioSummary> {
    let grid_p = cfg.grid.unwrap_or(GridParams { r_max: 40.0, n: 8192 });
    let grid = grid_p.build()?;
    let ms = cfg.m_values.clone().unwrap_or_else(|| vec![0, 1]);
    let gs = cfg.g_values.clone().unwrap_or_else(|| vec![1.25, 1.5, 2.0, 3.0]);
    let mut rows = Vec::new();
    let mut max_residual = 0.0_f64;
    for &m in &ms {
        for &g in &gs {
            let sol = groundstate_with(m, g, 1.0, &grid)?;
            max_residual = max_residual.max(sol.residual);
            rows.push((m, g, sol.charge, sol.energy, sol.residual, sol.alpha));
        }
    }
    let path = cfg.output_dir.join("groundstates.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "m,g,charge,energy,residual,alpha")?;
        for (m, g, c, e, res, a) in &rows {
            writeln!(
                w,
                "{m},{},{},{},{},{}",
                io::fmt_f64(*g),
                io::fmt_f64(*c),
                io::fmt_f64(*e),
                io::fmt_f64(*res),
                io::fmt_f64(*a)
            )?;
        }
        w.flush()?;
    }
    Ok(ScenarioSummary {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.seed,
        grid: grid_p,
        status: "completed".to_string(),
        blowup_expected: false,
        items: vec![le("max_stationary_residual", max_residual, 1e-6)],
        passed: false,
        notes: vec![format!("{} states solved; minimality not certified", rows.len())],
        artifacts: vec!["groundstates.csv".into()],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunVerdict {
    pub dir: String,
    pub scenario: String,
    pub passed: bool,
    pub failed_items: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub runs: Vec<RunVerdict>,
    pub all_passed: bool,
}

/// Merges the verdicts found under `root`: either a single run directory with
/// a summary.json, or a directory of such run directories.
pub fn report(root: &Path) -> Result<ReportSummary> {
    let mut summary_files = Vec::new();
    if root.join("summary.json").exists() {
        summary_files.push(root.join("summary.json"));
    } else {
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for d in subdirs {
            let s = d.join("summary.json");
            if s.exists() {
                summary_files.push(s);
            }
        }
    }
    if summary_files.is_empty() {
        return Err(CssError::Config(format!(
            "no summary.json under {}",
            root.display()
        )));
    }
    let mut runs = Vec::new();
    for path in &summary_files {
        let s: ScenarioSummary = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        runs.push(RunVerdict {
            dir: path
                .parent()
                .and_then(|p| p.file_name())
                .map(|o| o.to_string_lossy().into_owned())
                .unwrap_or_default(),
            scenario: s.scenario.clone(),
            passed: s.passed,
            failed_items: s
                .items
                .iter()
                .filter(|i| !i.pass)
                .map(|i| i.name.clone())
                .collect(),
        });
    }
    let all_passed = runs.iter().all(|r| r.passed);
    Ok(ReportSummary { runs, all_passed })
}

/// Writes the merged verdict as JSON plus a per-item CSV ledger.
pub fn write_report(root: &Path, out_dir: &Path, rep: &ReportSummary) -> Result<()> {
    io::ensure_dir(out_dir)?;
    io::write_json(&out_dir.join("report.json"), rep)?;
    let mut summary_files = Vec::new();
    if root.join("summary.json").exists() {
        summary_files.push(root.join("summary.json"));
    } else {
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for d in subdirs {
            let s = d.join("summary.json");
            if s.exists() {
                summary_files.push(s);
            }
        }
    }
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("report.csv"))?);
    writeln!(w, "scenario,item,cmp,measured,bound,pass")?;
    for path in &summary_files {
        let s: ScenarioSummary = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for item in &s.items {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.scenario,
                item.name,
                item.cmp,
                io::fmt_f64(item.measured),
                io::fmt_f64(item.bound),
                item.pass
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_missing_initial_file() {
        let cfg = ScenarioConfig {
            scenario: ScenarioKind::StaticSoliton,
            grid: None,
            sim: None,
            initial: Some(InitialData::Csv { path: PathBuf::from("/nonexistent/f.csv") }),
            output_dir: PathBuf::from("/tmp/unused"),
            seed: 0,
            m_values: None,
            g_values: None,
        };
        assert!(matches!(cfg.validate(), Err(CssError::Config(_))));
    }

    #[test]
    fn seeded_bump_is_deterministic_per_seed() {
        let grid = build_grid(20.0, 256).unwrap();
        let a = seeded_bump(1, &grid, 7, 0.02);
        let b = seeded_bump(1, &grid, 7, 0.02);
        let c = seeded_bump(1, &grid, 8, 0.02);
        assert_eq!(a.u, b.u);
        assert!(weighted_l2_diff(&a, &c) > 1e-4);
        assert!((charge(&a).sqrt() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn scatter_scenario_passes_and_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig {
            scenario: ScenarioKind::SubthresholdScatter,
            grid: Some(GridParams { r_max: 20.0, n: 1024 }),
            sim: Some(base_sim(4e-3, 3.0, 250)),
            initial: None,
            output_dir: dir.path().join("run"),
            seed: 3,
            m_values: None,
            g_values: None,
        };
        let s1 = run_scenario(&cfg).unwrap();
        assert!(s1.passed, "{:?}", s1.items);
        let bytes1 = std::fs::read(cfg.output_dir.join("diagnostics.csv")).unwrap();
        let s2 = run_scenario(&cfg).unwrap();
        assert!(s2.passed);
        let bytes2 = std::fs::read(cfg.output_dir.join("diagnostics.csv")).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn report_merges_verdicts_and_flags_failures() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |name: &str, pass: bool| {
            let d = dir.path().join(name);
            std::fs::create_dir_all(&d).unwrap();
            let s = ScenarioSummary {
                scenario: name.to_string(),
                seed: 0,
                grid: GridParams { r_max: 1.0, n: 16 },
                status: "completed".into(),
                blowup_expected: false,
                items: vec![CheckItem {
                    name: "x".into(),
                    measured: 1.0,
                    bound: if pass { 2.0 } else { 0.5 },
                    cmp: "le".into(),
                    pass,
                }],
                passed: pass,
                notes: vec![],
                artifacts: vec![],
            };
            io::write_json(&d.join("summary.json"), &s).unwrap();
        };
        mk("a_good", true);
        mk("b_bad", false);
        let rep = report(dir.path()).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert!(!rep.all_passed);
        assert_eq!(rep.runs[1].failed_items, vec!["x".to_string()]);
    }
}
