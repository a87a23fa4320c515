use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{CssError, Result};
use crate::grid::{charge, radial_derivative, Field};
use crate::numerics::{cum_backward_midpoint, cum_forward_midpoint};

/// Tail contribution threshold above which the outer integral of a_zero is
/// visibly truncated by the finite domain.
const TAIL_WARN_RATIO: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GaugePotentials {
    pub a_theta: Vec<f64>,
    pub a_zero: Vec<f64>,
    /// Set when |u(r_n)|^2 r_n exceeds 1e-8 of the charge, i.e. when the
    /// truncated tail integral is not negligible.
    pub tail_warning: bool,
}

/// A_theta(r) = -1/2 int_0^r |u|^2 s ds, cumulative midpoint rule. The value
/// at the last node approaches -charge / 4 pi for decayed tails.
pub fn a_theta(f: &Field) -> Vec<f64> {
    let u2: Vec<f64> = f.u.iter().map(|u| u.norm_sqr()).collect();
    cum_forward_midpoint(&u2, &f.grid.w, f.grid.h).into_iter().map(|c| -0.5 * c).collect()
}

/// A_0(r) = -int_r^{r_max} (m + A_theta) |u|^2 / s ds, gauge-fixed to vanish
/// at the outer edge. The true integral runs to infinity; the dropped tail is
/// flagged through `tail_truncation_warning`.
pub fn a_zero(f: &Field, ath: &[f64]) -> Result<Vec<f64>> {
    if ath.len() != f.n() {
        return Err(CssError::ShapeMismatch(format!(
            "a_theta has {} samples, field has {}",
            ath.len(),
            f.n()
        )));
    }
    let m = f.m as f64;
    let integrand: Vec<f64> = f
        .u
        .iter()
        .zip(ath)
        .zip(&f.grid.r)
        .map(|((u, &a), &r)| (m + a) * u.norm_sqr() / r)
        .collect();
    Ok(cum_backward_midpoint(&integrand, &f.grid.w, f.grid.h).into_iter().map(|t| -t).collect())
}

pub fn tail_truncation_warning(f: &Field) -> bool {
    let n = f.n();
    f.u[n - 1].norm_sqr() * f.grid.r[n - 1] > TAIL_WARN_RATIO * charge(f)
}

pub fn potentials(f: &Field) -> GaugePotentials {
    let ath = a_theta(f);
    let a0 = a_zero(f, &ath).expect("a_theta freshly computed on the same grid");
    GaugePotentials { a_theta: ath, a_zero: a0, tail_warning: tail_truncation_warning(f) }
}

/// Covariant lowering derivative D_+ u = u' - (m + A_theta) u / r. Annihilates
/// the self-dual solitons.
pub fn bogomolnyi(f: &Field, ath: &[f64]) -> Field {
    let d = radial_derivative(&f.grid, &f.u);
    let m = f.m as f64;
    let u: Vec<Complex64> = d
        .iter()
        .zip(&f.u)
        .zip(ath)
        .zip(&f.grid.r)
        .map(|(((du, u), &a), &r)| du - u * ((m + a) / r))
        .collect();
    Field { m: f.m, grid: Arc::clone(&f.grid), u }
}

/// 2 pi int |u'|^2 + ((m + A_theta)/r)^2 |u|^2 r dr, the gauged H1 seminorm.
pub fn covariant_grad_sq(f: &Field, ath: &[f64]) -> f64 {
    let d = radial_derivative(&f.grid, &f.u);
    let m = f.m as f64;
    let s: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .zip(&d)
        .zip(ath.iter().zip(&f.grid.r))
        .map(|(((&w, u), du), (&a, &r))| {
            let c = (m + a) / r;
            w * (du.norm_sqr() + c * c * u.norm_sqr())
        })
        .sum();
    2.0 * std::f64::consts::PI * s
}

/// Real multiplier V with (i d_t + Lap_m) u = V u: the gauge terms
/// 2 m A_theta / r^2 + A_0 + A_theta^2 / r^2 minus the focusing term g |u|^2.
pub fn potential_multiplier(f: &Field, p: &GaugePotentials, g: f64) -> Vec<f64> {
    let m = f.m as f64;
    f.grid
        .r
        .iter()
        .zip(&f.u)
        .zip(p.a_theta.iter().zip(&p.a_zero))
        .map(|((&r, u), (&ath, &a0))| {
            (2.0 * m * ath + ath * ath) / (r * r) + a0 - g * u.norm_sqr()
        })
        .collect()
}

pub fn nonlinearity(f: &Field, p: &GaugePotentials, g: f64) -> Field {
    let v = potential_multiplier(f, p, g);
    let u = f.u.iter().zip(&v).map(|(u, &vj)| u * vj).collect();
    Field { m: f.m, grid: Arc::clone(&f.grid), u }
}

/// E = pi int (|u'|^2 + ((m+A_theta)/r)^2 |u|^2) r dr - (g/2) pi int |u|^4 r dr.
pub fn energy(f: &Field, p: &GaugePotentials, g: f64) -> f64 {
    let grad = covariant_grad_sq(f, &p.a_theta);
    let l4: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .map(|(&w, u)| {
            let q = u.norm_sqr();
            w * q * q
        })
        .sum();
    0.5 * grad - 0.5 * g * std::f64::consts::PI * l4
}

/// Same energy after completing the square: pi int |D_+ u|^2 r dr
/// + (1-g)/2 pi int |u|^4. Agrees with `energy` up to quadrature error and
/// shows E >= 0 for g <= 1.
pub fn energy_bogomolnyi(f: &Field, p: &GaugePotentials, g: f64) -> f64 {
    let d = bogomolnyi(f, &p.a_theta);
    let pi = std::f64::consts::PI;
    let dsq: f64 = f.grid.w.iter().zip(&d.u).map(|(&w, v)| w * v.norm_sqr()).sum();
    let l4: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .map(|(&w, u)| {
            let q = u.norm_sqr();
            w * q * q
        })
        .sum();
    pi * dsq + 0.5 * (1.0 - g) * pi * l4
}

/// Observed ratio of the gauged to the plain H1_m seminorm, a diagnostic for
/// the norm equivalence on charge-bounded sets.
pub fn norm_equivalence_ratio(f: &Field) -> Result<f64> {
    let h1 = crate::grid::h1m_seminorm_sq(f);
    if h1 == 0.0 {
        return Err(CssError::InvalidArgument("zero field".into()));
    }
    let p = potentials(f);
    Ok(covariant_grad_sq(f, &p.a_theta) / h1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_relative_eq;

    #[test]
    fn a_zero_rejects_shape_mismatch() {
        let g = build_grid(10.0, 64).unwrap();
        let f = Field::from_real_fn(0, &g, |r| (-r * r).exp());
        assert!(a_zero(&f, &vec![0.0; 63]).is_err());
    }

    #[test]
    fn a_theta_tends_to_minus_charge_over_4pi() {
        let g = build_grid(25.0, 2048).unwrap();
        let f = Field::from_real_fn(1, &g, |r| r * (-r * r / 2.0).exp());
        let ath = a_theta(&f);
        let q = charge(&f);
        assert_relative_eq!(
            ath[g.n - 1],
            -q / (4.0 * std::f64::consts::PI),
            max_relative = 1e-10
        );
    }

    #[test]
    fn tail_warning_fires_on_truncated_profiles() {
        let g = build_grid(4.0, 256).unwrap();
        let wide = Field::from_real_fn(0, &g, |r| (-r * r / 8.0).exp());
        assert!(tail_truncation_warning(&wide));
        let g2 = build_grid(25.0, 256).unwrap();
        let narrow = Field::from_real_fn(0, &g2, |r| (-r * r / 2.0).exp());
        assert!(!tail_truncation_warning(&narrow));
    }

    #[test]
    fn duplicate_nonlinearity_route_matches_at_m_zero() {
        // same algebra, independently arranged: explicit partial sums instead
        // of the shared cumulative helpers
        let g = build_grid(18.0, 512).unwrap();
        let f = Field::from_fn(0, &g, |r| {
            Complex64::new((-r * r / 2.0).exp(), 0.3 * r * (-r * r / 3.0).exp())
        });
        let gc = 1.3;
        let p = potentials(&f);
        let fast = nonlinearity(&f, &p, gc);

        let n = g.n;
        let u2: Vec<f64> = f.u.iter().map(|u| u.norm_sqr()).collect();
        let mut slow = vec![Complex64::ZERO; n];
        let fwd_self = |j: usize| 0.5 * g.w[j] - g.h * g.h / 8.0;
        let bwd_self = |j: usize| 0.5 * g.h - g.h * g.h * g.h / (8.0 * g.w[j]);
        for j in 0..n {
            let mut ath = 0.0;
            for k in 0..j {
                ath += g.w[k] * u2[k];
            }
            ath += fwd_self(j) * u2[j];
            ath *= -0.5;
            let mut a0 = bwd_self(j) * ath * u2[j] / g.r[j];
            for k in j + 1..n {
                let mut athk = 0.0;
                for l in 0..k {
                    athk += g.w[l] * u2[l];
                }
                athk += fwd_self(k) * u2[k];
                athk *= -0.5;
                a0 += g.h * athk * u2[k] / g.r[k];
            }
            a0 = -a0;
            slow[j] = f.u[j] * (ath * ath / (g.r[j] * g.r[j]) + a0 - gc * u2[j]);
        }
        for j in 0..n {
            assert!(
                (fast.u[j] - slow[j]).norm() < 1e-12,
                "node {j}: {} vs {}",
                fast.u[j],
                slow[j]
            );
        }
    }

    #[test]
    fn energy_of_gaussian_matches_closed_form() {
        // E[e^{-r^2/2}] at m=0, g=1 equals pi (3/8 + ln(4/3)/32)
        let g = build_grid(30.0, 8192).unwrap();
        let f = Field::from_real_fn(0, &g, |r| (-r * r / 2.0).exp());
        let p = potentials(&f);
        let e = energy(&f, &p, 1.0);
        let closed = std::f64::consts::PI * (3.0 / 8.0 + (4.0_f64 / 3.0).ln() / 32.0);
        assert_relative_eq!(e, closed, max_relative = 3e-5);
    }
}
