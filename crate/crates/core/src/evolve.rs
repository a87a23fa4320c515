use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CssError, Result};
use crate::gauge::{energy, potential_multiplier, potentials, GaugePotentials};
use crate::grid::{charge, h1m_seminorm_sq, l4_norm_4, laplacian_bands, Field, RadialGrid};
use crate::numerics::thomas_complex;

fn default_picard_tol() -> f64 {
    1e-10
}
fn default_picard_max() -> usize {
    50
}
fn default_blowup_threshold() -> f64 {
    1e3
}
fn default_stride() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Strang,
    CrankNicolson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max: usize,
    /// Run aborts with blowup status once the H1_m seminorm exceeds this
    /// multiple of its initial value.
    #[serde(default = "default_blowup_threshold")]
    pub blowup_threshold: f64,
    pub g: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Drop the self-interaction entirely and run the free flow.
    #[serde(default)]
    pub linear: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(CssError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.picard_tol > 0.0) {
            return Err(CssError::Config("picard_tol must be positive".into()));
        }
        if !self.t_end.is_finite() || self.t_end < 0.0 {
            return Err(CssError::Config(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if self.snapshot_stride == 0 {
            return Err(CssError::Config("snapshot_stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LedgerRow {
    pub t: f64,
    pub charge: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub field: Field,
    pub potentials: GaugePotentials,
    pub ledger: Vec<LedgerRow>,
}

impl SimState {
    pub fn new(field: Field, g: f64) -> Self {
        let p = potentials(&field);
        let row = LedgerRow { t: 0.0, charge: charge(&field), energy: energy(&field, &p, g) };
        SimState { t: 0.0, field, potentials: p, ledger: vec![row] }
    }
}

/// Crank-Nicolson propagator for the kinetic flow d_t u = i (Lap_m - V) u,
/// reusing the cached Laplacian bands; V enters on the diagonal.
struct CnSolver {
    lo: Vec<f64>,
    di: Vec<f64>,
    hi: Vec<f64>,
}

impl CnSolver {
    fn new(grid: &RadialGrid, m: u32) -> Self {
        let (lo, di, hi) = laplacian_bands(grid, m);
        CnSolver { lo, di, hi }
    }

    /// Solves (I - z (L - V)) out = (I + z (L - V)) u with z = i dt / 2.
    fn advance(&self, u: &[Complex64], v: Option<&[f64]>, dt: f64) -> Result<Vec<Complex64>> {
        let n = u.len();
        let z = Complex64::new(0.0, 0.5 * dt);
        let apply = |j: usize| -> Complex64 {
            let mut acc = self.di[j] * u[j];
            if j > 0 {
                acc += self.lo[j - 1] * u[j - 1];
            }
            if j < n - 1 {
                acc += self.hi[j] * u[j + 1];
            }
            if let Some(vs) = v {
                acc -= vs[j] * u[j];
            }
            acc
        };
        let rhs: Vec<Complex64> = (0..n).map(|j| u[j] + z * apply(j)).collect();
        let one = Complex64::new(1.0, 0.0);
        let diag: Vec<Complex64> = (0..n)
            .map(|j| {
                let vj = v.map_or(0.0, |vs| vs[j]);
                one - z * (self.di[j] - vj)
            })
            .collect();
        let lower: Vec<Complex64> = self.lo.iter().map(|&l| -z * l).collect();
        let upper: Vec<Complex64> = self.hi.iter().map(|&hv| -z * hv).collect();
        for d in &diag {
            if d.norm() < 1e-300 {
                return Err(CssError::SolverFailure(
                    "singular tridiagonal system, dt/grid combination is bad".into(),
                ));
            }
        }
        Ok(thomas_complex(&lower, &diag, &upper, &rhs))
    }
}

fn phase_rotate(u: &mut [Complex64], v: &[f64], dt_half: f64) {
    for (uj, &vj) in u.iter_mut().zip(v) {
        *uj *= Complex64::from_polar(1.0, -dt_half * vj);
    }
}

fn rebuild(state: &SimState, u: Vec<Complex64>, t: f64) -> SimState {
    let field = Field { m: state.field.m, grid: Arc::clone(&state.field.grid), u };
    let p = potentials(&field);
    SimState { t, field, potentials: p, ledger: state.ledger.clone() }
}

/// Strang split step: exact half-step phase rotation by the real multiplier V
/// (|u| is invariant, so the potentials stay exact during the substep), CN
/// kinetic step, refreshed half-step phase.
pub fn step_strang(state: &SimState, dt: f64, g: f64) -> Result<SimState> {
    step_strang_impl(state, dt, g, false)
}

pub fn step_strang_linear(state: &SimState, dt: f64) -> Result<SimState> {
    step_strang_impl(state, dt, 0.0, true)
}

fn step_strang_impl(state: &SimState, dt: f64, g: f64, linear: bool) -> Result<SimState> {
    let solver = CnSolver::new(&state.field.grid, state.field.m);
    let mut u = state.field.u.clone();
    if !linear {
        let v = potential_multiplier(&state.field, &state.potentials, g);
        phase_rotate(&mut u, &v, 0.5 * dt);
    }
    let mut u = solver.advance(&u, None, dt)?;
    if !linear {
        let mid = Field { m: state.field.m, grid: Arc::clone(&state.field.grid), u: u.clone() };
        let p = potentials(&mid);
        let v = potential_multiplier(&mid, &p, g);
        phase_rotate(&mut u, &v, 0.5 * dt);
    }
    Ok(rebuild(state, u, state.t + dt))
}

/// Fully implicit midpoint step: Picard iteration freezing the potentials at
/// the midpoint field until the successive-iterate gap drops below tol.
/// Preserves discrete stationary states exactly, which Strang does not.
pub fn step_cn(state: &SimState, dt: f64, g: f64) -> Result<SimState> {
    step_cn_impl(state, dt, g, false)
}

pub fn step_cn_linear(state: &SimState, dt: f64) -> Result<SimState> {
    step_cn_impl(state, dt, 0.0, true)
}

fn step_cn_impl(state: &SimState, dt: f64, g: f64, linear: bool) -> Result<SimState> {
    let cfgish = (1e-10, 50); // defaults used by the direct-step entry points
    step_cn_with(state, dt, g, linear, cfgish.0, cfgish.1)
}

fn step_cn_with(
    state: &SimState,
    dt: f64,
    g: f64,
    linear: bool,
    tol: f64,
    max_iter: usize,
) -> Result<SimState> {
    let solver = CnSolver::new(&state.field.grid, state.field.m);
    let u0 = &state.field.u;
    if linear {
        let u1 = solver.advance(u0, None, dt)?;
        return Ok(rebuild(state, u1, state.t + dt));
    }
    let grid = &state.field.grid;
    let mut un = u0.clone();
    let mut last_gap = f64::INFINITY;
    for _ in 0..max_iter {
        let mid: Vec<Complex64> = u0.iter().zip(&un).map(|(a, b)| 0.5 * (a + b)).collect();
        let mid_field = Field { m: state.field.m, grid: Arc::clone(grid), u: mid };
        let p = potentials(&mid_field);
        let v = potential_multiplier(&mid_field, &p, g);
        let u1 = solver.advance(u0, Some(&v), dt)?;
        let gap: f64 = grid
            .w
            .iter()
            .zip(&u1)
            .zip(&un)
            .map(|((&w, a), b)| w * (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            * (2.0 * std::f64::consts::PI).sqrt();
        un = u1;
        last_gap = gap;
        if gap < tol {
            return Ok(rebuild(state, un, state.t + dt));
        }
    }
    Err(CssError::NoConvergence(format!(
        "picard stalled after {max_iter} sweeps, last gap {last_gap:.3e}"
    )))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiagRow {
    pub t: f64,
    pub charge: f64,
    pub energy: f64,
    pub h1m: f64,
    pub l4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunStatus {
    Completed,
    BlowupDetected { t: f64 },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// (t, field) pairs every snapshot_stride steps; always includes the
    /// initial and final states.
    pub snapshots: Vec<(f64, Field)>,
    pub diagnostics: Vec<DiagRow>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn final_field(&self) -> &Field {
        &self.snapshots.last().expect("trajectory always holds the initial snapshot").1
    }
}

fn diag_row(state: &SimState, g: f64) -> DiagRow {
    DiagRow {
        t: state.t,
        charge: charge(&state.field),
        energy: energy(&state.field, &state.potentials, g),
        h1m: h1m_seminorm_sq(&state.field).sqrt(),
        l4: l4_norm_4(&state.field).powf(0.25),
    }
}

pub fn integrate(state: SimState, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut state = state;
    let t0 = state.t;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let h1m0 = h1m_seminorm_sq(&state.field).sqrt();
    let mut snapshots = vec![(state.t, state.field.clone())];
    let mut diagnostics = vec![diag_row(&state, cfg.g)];
    state.ledger = vec![LedgerRow {
        t: state.t,
        charge: diagnostics[0].charge,
        energy: diagnostics[0].energy,
    }];
    let mut status = RunStatus::Completed;
    for k in 1..=steps {
        let next = match cfg.scheme {
            Scheme::Strang => step_strang_impl(&state, cfg.dt, cfg.g, cfg.linear)?,
            Scheme::CrankNicolson => step_cn_with(
                &state,
                cfg.dt,
                cfg.g,
                cfg.linear,
                cfg.picard_tol,
                cfg.picard_max,
            )?,
        };
        state = next;
        state.t = t0 + k as f64 * cfg.dt; // avoid accumulated rounding in t
        let row = diag_row(&state, cfg.g);
        state.ledger.push(LedgerRow { t: row.t, charge: row.charge, energy: row.energy });
        diagnostics.push(row);
        if k % cfg.snapshot_stride == 0 {
            snapshots.push((state.t, state.field.clone()));
        }
        if row.h1m > cfg.blowup_threshold * h1m0 {
            status = RunStatus::BlowupDetected { t: state.t };
            break;
        }
    }
    if snapshots.last().map(|(t, _)| *t) != Some(state.t) {
        snapshots.push((state.t, state.field.clone()));
    }
    Ok(Trajectory { snapshots, diagnostics, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, weighted_l2, weighted_l2_diff};
    use crate::soliton::soliton;

    #[test]
    fn zero_field_stays_zero() {
        let g = build_grid(20.0, 256).unwrap();
        let z = Field::zeros(1, &g);
        let state = SimState::new(z, 1.0);
        let s1 = step_strang(&state, 1e-3, 1.0).unwrap();
        let s2 = step_cn(&state, 1e-3, 1.0).unwrap();
        assert!(weighted_l2(&s1.field) == 0.0);
        assert!(weighted_l2(&s2.field) == 0.0);
    }

    #[test]
    fn strang_charge_is_conserved_to_rounding() {
        let g = build_grid(30.0, 1024).unwrap();
        let q = soliton(1, &g);
        let q0 = charge(&q);
        let mut state = SimState::new(q, 1.0);
        for _ in 0..20 {
            state = step_strang(&state, 1e-3, 1.0).unwrap();
        }
        assert!((charge(&state.field) - q0).abs() / q0 < 1e-12);
    }

    #[test]
    fn both_schemes_agree_at_second_order_on_short_run() {
        let g = build_grid(30.0, 1024).unwrap();
        let q = soliton(1, &g);
        let scale = Field {
            m: 1,
            grid: Arc::clone(&g),
            u: q.u.iter().map(|u| 0.9 * u).collect(),
        };
        let state = SimState::new(scale, 1.0);
        let mut a = state.clone();
        let mut b = state;
        for _ in 0..40 {
            a = step_strang(&a, 5e-3, 1.0).unwrap();
            b = step_cn(&b, 5e-3, 1.0).unwrap();
        }
        let gap = weighted_l2_diff(&a.field, &b.field);
        assert!(gap < 1e-2, "gap {gap}");
    }

    #[test]
    fn integrate_reports_blowup_status() {
        let g = build_grid(40.0, 2048).unwrap();
        let spec = crate::soliton::SolitonSpec {
            m: 1,
            lambda: 1.0,
            gamma: 0.0,
            pc_time: Some(1.0),
        };
        let v = crate::soliton::pc_soliton_exact(&spec, 0.0, &g).unwrap();
        let cfg = SimConfig {
            dt: 1e-3,
            t_end: 0.99,
            scheme: Scheme::Strang,
            picard_tol: 1e-10,
            picard_max: 50,
            blowup_threshold: 3.0,
            g: 1.0,
            snapshot_stride: 1000,
            linear: false,
        };
        let traj = integrate(SimState::new(v, 1.0), &cfg).unwrap();
        assert!(matches!(traj.status, RunStatus::BlowupDetected { .. }));
    }
}
