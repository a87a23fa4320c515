use num_complex::Complex64;

use crate::error::{CssError, Result};
use crate::evolve::{integrate, SimConfig, SimState, Trajectory};
use crate::gauge::{a_theta, energy, energy_bogomolnyi, potentials};
use crate::grid::{radial_derivative, Field, RadialGrid};

/// Quintic blend H(s) on [0, 1] with H, H', H'' matching r^2 at s = 0
/// (value 1, slope 2, curvature 2 in units of R^2) and a triple zero at
/// s = 1, so the cutoff is C^2 across both seams.
fn blend(s: f64) -> f64 {
    1.0 + 2.0 * s + s * s - 25.0 * s * s * s + 34.0 * s * s * s * s
        - 13.0 * s * s * s * s * s
}

fn blend_d(s: f64) -> f64 {
    2.0 + 2.0 * s - 75.0 * s * s + 136.0 * s * s * s - 65.0 * s * s * s * s
}

fn blend_dd(s: f64) -> f64 {
    2.0 - 150.0 * s + 408.0 * s * s - 260.0 * s * s * s
}

/// Smooth truncation of r^2: identity below R, quintic blend on [R, 2R],
/// zero beyond. Carries the recorded nodewise bound |chi'|^2 <= C chi.
#[derive(Debug, Clone)]
pub struct Cutoff {
    pub r_cut: f64,
    pub chi: Vec<f64>,
    pub dchi: Vec<f64>,
    pub d2chi: Vec<f64>,
    /// observed sup of |chi'|^2 / chi over a fine analytic sample
    pub cap_constant: f64,
}

pub fn cutoff_value(r_cut: f64, r: f64) -> (f64, f64, f64) {
    if r < r_cut {
        (r * r, 2.0 * r, 2.0)
    } else if r < 2.0 * r_cut {
        let s = (r - r_cut) / r_cut;
        (
            r_cut * r_cut * blend(s),
            r_cut * blend_d(s),
            blend_dd(s),
        )
    } else {
        (0.0, 0.0, 0.0)
    }
}

pub fn make_cutoff(r_cut: f64, grid: &RadialGrid) -> Result<Cutoff> {
    if !(r_cut > 0.0) {
        return Err(CssError::InvalidArgument(format!("cutoff radius {r_cut} not positive")));
    }
    if 2.0 * r_cut > grid.r_max {
        return Err(CssError::InvalidArgument(format!(
            "cutoff needs 2R <= r_max: R = {r_cut}, r_max = {}",
            grid.r_max
        )));
    }
    let mut chi = Vec::with_capacity(grid.n);
    let mut dchi = Vec::with_capacity(grid.n);
    let mut d2chi = Vec::with_capacity(grid.n);
    for &r in &grid.r {
        let (c, d, dd) = cutoff_value(r_cut, r);
        chi.push(c);
        dchi.push(d);
        d2chi.push(dd);
    }
    // sup |chi'|^2 / chi: 4 exactly on [0, R], peaks inside the blend, tends
    // to 0 at the triple zero; nodewise ratios folded in so the recorded
    // constant dominates every lattice point
    let mut cap: f64 = 4.0;
    for k in 0..20_000 {
        let s = (k as f64 + 0.5) / 20_000.0;
        let c = blend(s);
        if c <= 0.0 {
            continue;
        }
        cap = cap.max(blend_d(s) * blend_d(s) / c);
    }
    for (j, &c) in chi.iter().enumerate() {
        if c > 0.0 {
            cap = cap.max(dchi[j] * dchi[j] / c);
        }
    }
    if cap > 36.0 {
        return Err(CssError::InvalidArgument(format!(
            "cutoff blend violates the slope-squared cap: {cap:.3} > 36"
        )));
    }
    Ok(Cutoff { r_cut, chi, dchi, d2chi, cap_constant: cap })
}

/// 2 pi int r^2 |u|^2 r dr.
pub fn virial(f: &Field) -> f64 {
    let s: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .zip(&f.grid.r)
        .map(|((&w, u), &r)| w * r * r * u.norm_sqr())
        .sum();
    2.0 * std::f64::consts::PI * s
}

/// True when the outermost cell carries more than 1e-6 of the virial sum,
/// i.e. the untruncated moment is visibly domain-limited.
pub fn virial_boundary_warning(f: &Field) -> bool {
    let total = virial(f);
    if total == 0.0 {
        return false;
    }
    let n = f.n();
    let last = 2.0
        * std::f64::consts::PI
        * f.grid.w[n - 1]
        * f.grid.r[n - 1]
        * f.grid.r[n - 1]
        * f.u[n - 1].norm_sqr();
    last > 1e-6 * total
}

pub fn virial_truncated(f: &Field, cutoff: &Cutoff) -> f64 {
    let s: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .zip(&cutoff.chi)
        .map(|((&w, u), &c)| w * c * u.norm_sqr())
        .sum();
    2.0 * std::f64::consts::PI * s
}

/// d/dt of the truncated moment along the flow:
/// 4 pi sum w chi' Im(conj(u) du/dr). This is also twice the integral of the
/// radial stress-energy flux density r Im(conj(u) u_r) against chi'/r.
pub fn virial_rate(f: &Field, cutoff: &Cutoff) -> f64 {
    let d = radial_derivative(&f.grid, &f.u);
    let s: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .zip(&d)
        .zip(&cutoff.dchi)
        .map(|(((&w, u), du), &dc)| w * dc * (u.conj() * du).im)
        .sum();
    4.0 * std::f64::consts::PI * s
}

/// RHS - |LHS| of the Cauchy-Schwarz bound at g = 1:
///   |int chi' Im(conj(f) d_r f) dx| <= sqrt(2 E [f] * int |f|^2 |chi'|^2 dx).
/// Uses the completed-square energy, which makes the bound an exact discrete
/// Cauchy-Schwarz inequality: the gap can only dip below zero by rounding.
pub fn cauchy_schwarz_gap(f: &Field, cutoff: &Cutoff) -> f64 {
    let p = potentials(f);
    let e = energy_bogomolnyi(f, &p, 1.0);
    let lhs = 0.5 * virial_rate(f, cutoff);
    let weight: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .zip(&cutoff.dchi)
        .map(|((&w, u), &dc)| w * dc * dc * u.norm_sqr())
        .sum();
    let rhs_sq = 2.0 * e.max(0.0) * 2.0 * std::f64::consts::PI * weight;
    rhs_sq.max(0.0).sqrt() - lhs.abs()
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct VirialRow {
    pub t: f64,
    pub v: f64,
    pub dv_fd: f64,
    pub rate: f64,
    pub sixteen_e: f64,
}

/// The truncated moment along a trajectory together with its finite-difference
/// slope, the stress-energy rate, and the flat 16 E line. Centered differences
/// inside, one-sided at the two ends.
pub fn virial_series(traj: &Trajectory, g: f64, cutoff: &Cutoff) -> Result<Vec<VirialRow>> {
    let snaps = &traj.snapshots;
    if snaps.len() < 3 {
        return Err(CssError::InvalidArgument(format!(
            "need at least 3 snapshots for a difference series, have {}",
            snaps.len()
        )));
    }
    let e0 = {
        let f0 = &snaps[0].1;
        let p = potentials(f0);
        energy(f0, &p, g)
    };
    let v: Vec<f64> = snaps.iter().map(|(_, f)| virial_truncated(f, cutoff)).collect();
    let t: Vec<f64> = snaps.iter().map(|(t, _)| *t).collect();
    let last = snaps.len() - 1;
    let mut rows = Vec::with_capacity(snaps.len());
    for k in 0..snaps.len() {
        let dv_fd = if k == 0 {
            (v[1] - v[0]) / (t[1] - t[0])
        } else if k == last {
            (v[last] - v[last - 1]) / (t[last] - t[last - 1])
        } else {
            (v[k + 1] - v[k - 1]) / (t[k + 1] - t[k - 1])
        };
        rows.push(VirialRow {
            t: t[k],
            v: v[k],
            dv_fd,
            rate: virial_rate(&snaps[k].1, cutoff),
            sixteen_e: 16.0 * e0,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RemainderTerms {
    pub charge_beyond: f64,
    pub grad_beyond: f64,
    pub l4_beyond: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AccelReport {
    pub sixteen_e: f64,
    /// max relative deviation of the second difference of the moment series
    /// from 16 E across interior snapshots
    pub max_rel_dev: f64,
    pub remainder: Option<RemainderTerms>,
}

/// Second finite difference of the (possibly truncated) moment series against
/// the flat 16 E law. Snapshots must be uniformly spaced; a ragged final
/// snapshot is dropped.
pub fn virial_accel_check(
    traj: &Trajectory,
    g: f64,
    cutoff: Option<&Cutoff>,
) -> Result<AccelReport> {
    let mut snaps: Vec<(f64, &Field)> =
        traj.snapshots.iter().map(|(t, f)| (*t, f)).collect();
    if snaps.len() >= 3 {
        let dt0 = snaps[1].0 - snaps[0].0;
        let dt_last = snaps[snaps.len() - 1].0 - snaps[snaps.len() - 2].0;
        if (dt_last - dt0).abs() > 1e-12 {
            snaps.pop();
        }
    }
    if snaps.len() < 3 {
        return Err(CssError::InvalidArgument(format!(
            "need at least 3 uniformly spaced snapshots, have {}",
            snaps.len()
        )));
    }
    let dt = snaps[1].0 - snaps[0].0;
    let v: Vec<f64> = snaps
        .iter()
        .map(|(_, f)| match cutoff {
            Some(c) => virial_truncated(f, c),
            None => virial(f),
        })
        .collect();
    let e0 = {
        let f0 = snaps[0].1;
        let p = potentials(f0);
        energy(f0, &p, g)
    };
    let target = 16.0 * e0;
    let mut max_rel_dev = 0.0_f64;
    for k in 1..v.len() - 1 {
        let acc = (v[k + 1] - 2.0 * v[k] + v[k - 1]) / (dt * dt);
        let dev = if target != 0.0 {
            (acc - target).abs() / target.abs()
        } else {
            acc.abs()
        };
        max_rel_dev = max_rel_dev.max(dev);
    }
    let remainder = cutoff.map(|c| {
        let mut charge_beyond = 0.0_f64;
        let mut grad_beyond = 0.0_f64;
        let mut l4_beyond = 0.0_f64;
        for (_, f) in &snaps {
            let ath = a_theta(f);
            let d = radial_derivative(&f.grid, &f.u);
            let m = f.m as f64;
            let mut q = 0.0;
            let mut gr = 0.0;
            let mut l4 = 0.0;
            for j in 0..f.n() {
                if f.grid.r[j] <= c.r_cut {
                    continue;
                }
                let w = f.grid.w[j];
                let p2 = f.u[j].norm_sqr();
                q += w * p2;
                let cfac = (m + ath[j]) / f.grid.r[j];
                gr += w * (d[j].norm_sqr() + cfac * cfac * p2);
                l4 += w * p2 * p2;
            }
            let tau = 2.0 * std::f64::consts::PI;
            charge_beyond = charge_beyond.max(tau * q);
            grad_beyond = grad_beyond.max(tau * gr);
            l4_beyond = l4_beyond.max(tau * l4);
        }
        RemainderTerms { charge_beyond, grad_beyond, l4_beyond }
    });
    Ok(AccelReport { sixteen_e: target, max_rel_dev, remainder })
}

/// Tests the identity 8 t^2 E[e^{i r^2 / 4t} phi_0] = int r^2 |phi(t)|^2:
/// returns (lhs, rhs). Negative t runs the flow backward.
pub fn conformal_cooperation(f0: &Field, t: f64, cfg: &SimConfig) -> Result<(f64, f64)> {
    if t == 0.0 {
        return Err(CssError::InvalidArgument("cooperation check needs t != 0".into()));
    }
    let modulated = Field {
        m: f0.m,
        grid: std::sync::Arc::clone(&f0.grid),
        u: f0
            .u
            .iter()
            .zip(&f0.grid.r)
            .map(|(u, &r)| u * Complex64::from_polar(1.0, r * r / (4.0 * t)))
            .collect(),
    };
    let p = potentials(&modulated);
    let lhs = 8.0 * t * t * energy(&modulated, &p, cfg.g);

    let steps = (t.abs() / cfg.dt).round().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut state = SimState::new(f0.clone(), cfg.g);
    for _ in 0..steps {
        state = match cfg.scheme {
            crate::evolve::Scheme::Strang => crate::evolve::step_strang(&state, dt, cfg.g)?,
            crate::evolve::Scheme::CrankNicolson => crate::evolve::step_cn(&state, dt, cfg.g)?,
        };
    }
    let rhs = virial(&state.field);
    Ok((lhs, rhs))
}

/// Runs the flow and checks |dV/dt| <= 2 sqrt(2 E) sqrt(C) sqrt(V) along the
/// whole trajectory, V truncated by the cutoff and C its recorded constant.
/// Returns the worst signed margin (negative means violated beyond rounding).
pub fn rate_bound_margin(
    f0: &Field,
    cutoff: &Cutoff,
    cfg: &SimConfig,
) -> Result<f64> {
    let state = SimState::new(f0.clone(), cfg.g);
    let traj = integrate(state, cfg)?;
    let mut worst = f64::INFINITY;
    for (_, f) in &traj.snapshots {
        let p = potentials(f);
        let e = energy_bogomolnyi(f, &p, cfg.g).max(0.0);
        let v = virial_truncated(f, cutoff).max(0.0);
        let bound = 2.0 * (2.0 * e).sqrt() * cutoff.cap_constant.sqrt() * v.sqrt();
        let margin = bound - virial_rate(f, cutoff).abs();
        worst = worst.min(margin);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_relative_eq;

    #[test]
    fn cutoff_matches_square_inside_and_dies_smoothly() {
        let g = build_grid(40.0, 4096).unwrap();
        let c = make_cutoff(10.0, &g).unwrap();
        let (v, d, _) = cutoff_value(10.0, 5.0);
        assert_relative_eq!(v, 25.0);
        assert_relative_eq!(d, 10.0);
        let (v2, d2, _) = cutoff_value(10.0, 20.0);
        assert_eq!(v2, 0.0);
        assert_eq!(d2, 0.0);
        assert!(c.cap_constant <= 36.0, "recorded constant {}", c.cap_constant);
        assert!(c.cap_constant >= 4.0);
        assert!(make_cutoff(25.0, &g).is_err());
    }

    #[test]
    fn cutoff_blend_is_c2_at_seams() {
        assert_relative_eq!(blend(0.0), 1.0);
        assert_relative_eq!(blend_d(0.0), 2.0);
        assert_relative_eq!(blend_dd(0.0), 2.0);
        assert_relative_eq!(blend(1.0), 0.0);
        assert_relative_eq!(blend_d(1.0), 0.0);
        assert_relative_eq!(blend_dd(1.0), 0.0);
    }

    #[test]
    fn gaussian_virial_is_pi() {
        let g = build_grid(25.0, 4096).unwrap();
        let f = Field::from_real_fn(0, &g, |r| (-r * r / 2.0).exp());
        assert_relative_eq!(virial(&f), std::f64::consts::PI, max_relative = 1e-10);
        assert!(!virial_boundary_warning(&f));
        assert_eq!(virial(&Field::zeros(0, &g)), 0.0);
        let c = make_cutoff(12.0, &g).unwrap();
        assert_relative_eq!(virial_truncated(&f, &c), virial(&f), max_relative = 1e-10);
    }

    #[test]
    fn rate_vanishes_for_real_profiles() {
        let g = build_grid(30.0, 1024).unwrap();
        let c = make_cutoff(10.0, &g).unwrap();
        let f = Field::from_real_fn(1, &g, |r| r * (-r * r).exp());
        assert!(virial_rate(&f, &c).abs() < 1e-14);
    }

    #[test]
    fn chirped_gaussian_rate_hits_closed_form() {
        // chi = r^2 on the support: rate = 4 pi int r^3 e^{-r^2} dr = 2 pi
        let g = build_grid(25.0, 8192).unwrap();
        let c = make_cutoff(12.0, &g).unwrap();
        let f = Field::from_fn(0, &g, |r| {
            Complex64::from_polar((-r * r / 2.0).exp(), r * r / 4.0)
        });
        assert_relative_eq!(
            virial_rate(&f, &c),
            2.0 * std::f64::consts::PI,
            max_relative = 1e-3
        );
    }

    #[test]
    fn gap_is_nonnegative_for_chirped_soliton() {
        let g = build_grid(60.0, 32768).unwrap();
        let c = make_cutoff(10.0, &g).unwrap();
        let q = crate::soliton::soliton(1, &g);
        let f = Field::from_fn(1, &g, |r| {
            Complex64::from_polar(0.9 * crate::soliton::soliton_value(1, r), r * r / 8.0)
        });
        assert!(cauchy_schwarz_gap(&f, &c) >= -1e-6);
        // real soliton: rate side is exactly zero and the energy side is the
        // residual of the discrete self-dual identity, shrinking with h
        let gq = cauchy_schwarz_gap(&q, &c);
        assert!(gq >= -1e-6 && gq < 1e-3, "gap {gq}");
    }
}
