use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CssError, Result};
use crate::grid::{Field, RadialGrid};
use crate::numerics::CellInterp;

/// Self-dual soliton profile: Q(r) = sqrt(8) (m+1) r^m / (1 + r^{2(m+1)}).
/// Annihilated by the covariant lowering derivative, charge 8 pi (m+1).
pub fn soliton_value(m: u32, r: f64) -> f64 {
    let mp1 = (m + 1) as f64;
    let t = r.powi(2 * (m as i32 + 1));
    8.0_f64.sqrt() * mp1 * r.powi(m as i32) / (1.0 + t)
}

pub fn soliton(m: u32, grid: &Arc<RadialGrid>) -> Field {
    Field::from_real_fn(m, grid, |r| soliton_value(m, r))
}

/// Generator of the scaling symmetry applied to Q: (1 + r d_r) Q, in closed
/// form (m+1) Q (1 - r^{2(m+1)}) / (1 + r^{2(m+1)}).
pub fn lambda_soliton_value(m: u32, r: f64) -> f64 {
    let t = r.powi(2 * (m as i32 + 1));
    (m + 1) as f64 * soliton_value(m, r) * (1.0 - t) / (1.0 + t)
}

pub fn lambda_soliton(m: u32, grid: &Arc<RadialGrid>) -> Field {
    Field::from_real_fn(m, grid, |r| lambda_soliton_value(m, r))
}

/// A_theta[Q] in closed form: -2 (m+1) t / (1 + t) with t = r^{2(m+1)}.
pub fn a_theta_soliton_value(m: u32, r: f64) -> f64 {
    let t = r.powi(2 * (m as i32 + 1));
    -2.0 * (m + 1) as f64 * t / (1.0 + t)
}

/// A_0[Q] = Q^2 / 2, a consequence of the self-dual structure.
pub fn a_zero_soliton_value(m: u32, r: f64) -> f64 {
    let q = soliton_value(m, r);
    0.5 * q * q
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolitonSpec {
    pub m: u32,
    /// scale: u(r) = e^{i gamma} lambda Q(lambda r)
    pub lambda: f64,
    /// global phase in radians
    pub gamma: f64,
    /// blow-up horizon T of the pseudoconformal orbit, if any
    #[serde(default)]
    pub pc_time: Option<f64>,
}

impl SolitonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(CssError::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if let Some(t) = self.pc_time {
            if !(t > 0.0) || !t.is_finite() {
                return Err(CssError::InvalidArgument(format!(
                    "pc_time must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// e^{i gamma} lambda Q(lambda r), sampled from the closed form rather than
/// resampled from a lattice profile: the scaling orbit is exact.
pub fn sampled_soliton(spec: &SolitonSpec, grid: &Arc<RadialGrid>) -> Result<Field> {
    spec.validate()?;
    let phase = Complex64::from_polar(1.0, spec.gamma);
    let lam = spec.lambda;
    Ok(Field::from_fn(spec.m, grid, |r| phase * lam * soliton_value(spec.m, lam * r)))
}

pub fn apply_phase(f: &Field, gamma: f64) -> Field {
    let phase = Complex64::from_polar(1.0, gamma);
    Field {
        m: f.m,
        grid: Arc::clone(&f.grid),
        u: f.u.iter().map(|u| phase * u).collect(),
    }
}

/// u -> lambda u(lambda r) by cubic interpolation on the lattice; charge is
/// preserved in the continuum and to interpolation accuracy here. Samples
/// requested past r_max read zero.
pub fn apply_scaling(f: &Field, lambda: f64) -> Result<Field> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CssError::InvalidArgument(format!("scale must be positive, got {lambda}")));
    }
    let interp = CellInterp::new(f.grid.h, f.grid.r_max, f.m, &f.u);
    let u = f.grid.r.iter().map(|&r| lambda * interp.eval(lambda * r)).collect();
    Ok(Field { m: f.m, grid: Arc::clone(&f.grid), u })
}

/// Pseudoconformal image of the scaled soliton: with s = T - t,
///   v(t, r) = e^{i gamma} (lambda0 / s) Q(lambda0 r / s) e^{-i r^2 / (4 s)}.
/// Exact solution collapsing at t = T; charge is time independent while the
/// H1_m seminorm grows like (T - t)^{-2}.
pub fn pc_soliton_exact(spec: &SolitonSpec, t: f64, grid: &Arc<RadialGrid>) -> Result<Field> {
    spec.validate()?;
    let big_t = spec.pc_time.ok_or_else(|| {
        CssError::InvalidArgument("pseudoconformal orbit needs pc_time".into())
    })?;
    if t >= big_t {
        return Err(CssError::InvalidArgument(format!(
            "time {t} is at or past the blow-up horizon {big_t}"
        )));
    }
    let s = big_t - t;
    let lam = spec.lambda / s;
    let phase = Complex64::from_polar(1.0, spec.gamma);
    Ok(Field::from_fn(spec.m, grid, |r| {
        let chirp = Complex64::from_polar(1.0, -r * r / (4.0 * s));
        phase * lam * soliton_value(spec.m, lam * r) * chirp
    }))
}
