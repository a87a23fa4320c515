use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{CssError, Result};

/// Cell-centered radial lattice on (0, r_max]: r_j = (j - 1/2) h, h = r_max / n.
/// Quadrature weight w_j = r_j h approximates the measure r dr (midpoint rule),
/// and sums of w_j telescope to r_max^2 / 2 up to rounding.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub r_max: f64,
    pub n: usize,
    pub h: f64,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn build_grid(r_max: f64, n: usize) -> Result<Arc<RadialGrid>> {
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(CssError::InvalidGrid(format!("r_max must be positive, got {r_max}")));
    }
    if n < 16 {
        return Err(CssError::InvalidGrid(format!("need at least 16 cells, got {n}")));
    }
    let h = r_max / n as f64;
    let r: Vec<f64> = (1..=n).map(|j| (j as f64 - 0.5) * h).collect();
    let w: Vec<f64> = r.iter().map(|&rj| rj * h).collect();
    Ok(Arc::new(RadialGrid { r_max, n, h, r, w }))
}

/// Radial profile of an equivariant wave e^{i m theta} u(r). Only u is stored;
/// the winding number m enters through the centrifugal terms of the operators.
#[derive(Debug, Clone)]
pub struct Field {
    pub m: u32,
    pub grid: Arc<RadialGrid>,
    pub u: Vec<Complex64>,
}

impl Field {
    pub fn new(m: u32, grid: &Arc<RadialGrid>, u: Vec<Complex64>) -> Result<Self> {
        if u.len() != grid.n {
            return Err(CssError::ShapeMismatch(format!(
                "{} samples on a {}-cell grid",
                u.len(),
                grid.n
            )));
        }
        Ok(Field { m, grid: Arc::clone(grid), u })
    }

    pub fn zeros(m: u32, grid: &Arc<RadialGrid>) -> Self {
        Field { m, grid: Arc::clone(grid), u: vec![Complex64::ZERO; grid.n] }
    }

    pub fn from_fn(m: u32, grid: &Arc<RadialGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        let u = grid.r.iter().map(|&r| f(r)).collect();
        Field { m, grid: Arc::clone(grid), u }
    }

    pub fn from_real_fn(m: u32, grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(m, grid, |r| Complex64::new(f(r), 0.0))
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn same_shape(&self, other: &Field) -> Result<()> {
        if self.grid.n != other.grid.n
            || self.grid.r_max != other.grid.r_max
            || self.m != other.m
        {
            return Err(CssError::ShapeMismatch(format!(
                "(m={}, n={}, r_max={}) vs (m={}, n={}, r_max={})",
                self.m, self.grid.n, self.grid.r_max, other.m, other.grid.n, other.grid.r_max
            )));
        }
        Ok(())
    }
}

pub fn charge(f: &Field) -> f64 {
    let s: f64 = f.grid.w.iter().zip(&f.u).map(|(&w, u)| w * u.norm_sqr()).sum();
    2.0 * std::f64::consts::PI * s
}

pub fn l4_norm_4(f: &Field) -> f64 {
    let s: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .map(|(&w, u)| {
            let p = u.norm_sqr();
            w * p * p
        })
        .sum();
    2.0 * std::f64::consts::PI * s
}

/// Centered first derivative in the interior, 3-point one-sided at both ends.
pub fn radial_derivative(grid: &RadialGrid, u: &[Complex64]) -> Vec<Complex64> {
    let n = u.len();
    let h = grid.h;
    let mut d = vec![Complex64::ZERO; n];
    if n < 3 {
        return d;
    }
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    for j in 1..n - 1 {
        d[j] = (u[j + 1] - u[j - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    d
}

/// 2 pi * integral of |u'|^2 + m^2 |u|^2 / r^2 against r dr.
pub fn h1m_seminorm_sq(f: &Field) -> f64 {
    let d = radial_derivative(&f.grid, &f.u);
    let m2 = (f.m as f64) * (f.m as f64);
    let s: f64 = f
        .grid
        .w
        .iter()
        .zip(&f.u)
        .zip(&d)
        .zip(&f.grid.r)
        .map(|(((&w, u), du), &r)| w * (du.norm_sqr() + m2 * u.norm_sqr() / (r * r)))
        .sum();
    2.0 * std::f64::consts::PI * s
}

/// Tridiagonal bands (lower, diagonal, upper) of the flux-form radial
/// Laplacian with angular momentum m:
///   (1/(r_j h^2)) [ r_{j+1/2} (u_{j+1} - u_j) - r_{j-1/2} (u_j - u_{j-1}) ] - m^2 u_j / r_j^2.
/// The inner face radius r_{1/2} = 0, so the first row never reads a ghost
/// value and the scheme is parity-blind at the origin. The outer ghost is
/// Dirichlet, which keeps the r_{n+1/2} flux on the diagonal. Symmetric under
/// the weights w.
pub fn laplacian_bands(grid: &RadialGrid, m: u32) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = grid.n;
    let h = grid.h;
    let m2 = (m as f64) * (m as f64);
    let mut lo = vec![0.0; n - 1];
    let mut di = vec![0.0; n];
    let mut hi = vec![0.0; n - 1];
    for j in 0..n {
        let r = grid.r[j];
        let r_in = j as f64 * h; // r_{j-1/2}
        let r_out = (j + 1) as f64 * h; // r_{j+1/2}
        let scale = 1.0 / (r * h * h);
        di[j] = -(r_in + r_out) * scale - m2 / (r * r);
        if j > 0 {
            lo[j - 1] = r_in * scale;
        }
        if j < n - 1 {
            hi[j] = r_out * scale;
        }
    }
    (lo, di, hi)
}

pub fn laplacian_m(f: &Field) -> Field {
    let (lo, di, hi) = laplacian_bands(&f.grid, f.m);
    let n = f.n();
    let mut out = vec![Complex64::ZERO; n];
    for j in 0..n {
        let mut v = di[j] * f.u[j];
        if j > 0 {
            v += lo[j - 1] * f.u[j - 1];
        }
        if j < n - 1 {
            v += hi[j] * f.u[j + 1];
        }
        out[j] = v;
    }
    Field { m: f.m, grid: Arc::clone(&f.grid), u: out }
}

/// Peak of r^{1/2} |u| measured against charge^{1/4} h1m^{1/4}; scale invariant.
pub fn strauss_ratio(f: &Field) -> Result<f64> {
    let q = charge(f);
    let s = h1m_seminorm_sq(f);
    if q == 0.0 || s == 0.0 {
        return Err(CssError::InvalidArgument("strauss ratio of a zero field".into()));
    }
    let peak = f
        .grid
        .r
        .iter()
        .zip(&f.u)
        .map(|(&r, u)| r.sqrt() * u.norm())
        .fold(0.0_f64, f64::max);
    Ok(peak / (q.powf(0.25) * s.powf(0.25)))
}

/// Fraction of the charge carried by the outermost cell; used by the gauge and
/// virial routines to warn when tails are visibly truncated.
pub fn boundary_tail_ratio(f: &Field) -> f64 {
    let q = charge(f);
    if q == 0.0 {
        return 0.0;
    }
    let n = f.n();
    f.u[n - 1].norm_sqr() * f.grid.r[n - 1] / q
}

pub fn weighted_l2(f: &Field) -> f64 {
    charge(f).sqrt()
}

/// Weighted L2 distance, 2 pi included.
pub fn weighted_l2_diff(a: &Field, b: &Field) -> f64 {
    let s: f64 = a
        .grid
        .w
        .iter()
        .zip(&a.u)
        .zip(&b.u)
        .map(|((&w, x), y)| w * (x - y).norm_sqr())
        .sum();
    (2.0 * std::f64::consts::PI * s).sqrt()
}
