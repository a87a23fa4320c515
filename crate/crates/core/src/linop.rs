use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CssError, Result};
use crate::gauge;
use crate::grid::{radial_derivative, Field, RadialGrid};
use crate::numerics::{cum_backward_midpoint, cum_forward_midpoint};
use crate::soliton;

/// (Re, Im) view of a field; the operator algebra here is R-linear, not
/// C-linear, under the pairing (u, v)_r = 2 pi sum w Re(u conj(v)).
#[derive(Debug, Clone)]
pub struct RealPairField {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub m: u32,
    pub grid: Arc<RadialGrid>,
}

impl RealPairField {
    pub fn from_field(f: &Field) -> Self {
        RealPairField {
            re: f.u.iter().map(|u| u.re).collect(),
            im: f.u.iter().map(|u| u.im).collect(),
            m: f.m,
            grid: Arc::clone(&f.grid),
        }
    }

    pub fn to_field(&self) -> Field {
        Field {
            m: self.m,
            grid: Arc::clone(&self.grid),
            u: self.re.iter().zip(&self.im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
        }
    }
}

pub fn inner_r(a: &Field, b: &Field) -> f64 {
    let s: f64 = a
        .grid
        .w
        .iter()
        .zip(&a.u)
        .zip(&b.u)
        .map(|((&w, x), y)| w * (x * y.conj()).re)
        .sum();
    2.0 * std::f64::consts::PI * s
}

pub fn weighted_norm(f: &Field) -> f64 {
    inner_r(f, f).sqrt()
}

/// B_f g = (1/r) int_0^r Re(conj(f) g) s ds, cumulative midpoint quadrature.
pub fn b_op(f: &Field, g: &Field) -> Field {
    assert_eq!(f.n(), g.n(), "b_op needs matching grids");
    let prod: Vec<f64> = f
        .u
        .iter()
        .zip(&g.u)
        .map(|(a, b)| (a.conj() * b).re)
        .collect();
    let c = cum_forward_midpoint(&prod, &f.grid.w, f.grid.h);
    Field {
        m: f.m,
        grid: Arc::clone(&f.grid),
        u: c.iter().zip(&f.grid.r).map(|(&v, &r)| Complex64::new(v / r, 0.0)).collect(),
    }
}

/// B*_f g = f(r) int_r^inf Re(g) ds, plain ds measure. Exact weighted
/// transpose of b_op: the two cumulative rules are transposes under w.
pub fn b_adj(f: &Field, g: &Field) -> Field {
    assert_eq!(f.n(), g.n(), "b_adj needs matching grids");
    let reg: Vec<f64> = g.u.iter().map(|v| v.re).collect();
    let t = cum_backward_midpoint(&reg, &f.grid.w, f.grid.h);
    Field {
        m: f.m,
        grid: Arc::clone(&f.grid),
        u: f.u.iter().zip(&t).map(|(a, &v)| a * v).collect(),
    }
}

/// Scaling generator (1 + r d_r) f with the shared derivative stencils.
pub fn lambda_gen(f: &Field) -> Field {
    let d = radial_derivative(&f.grid, &f.u);
    Field {
        m: f.m,
        grid: Arc::clone(&f.grid),
        u: f
            .u
            .iter()
            .zip(&d)
            .zip(&f.grid.r)
            .map(|((u, du), &r)| u + r * du)
            .collect(),
    }
}

/// Exact transpose of the first-derivative stencil under the weights w,
/// built by scattering each row's coefficients. Agrees with the analytic
/// adjoint -d_r - 1/r to second order but is transpose-exact discretely.
fn deriv_transpose_w(grid: &RadialGrid, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    let h2 = 2.0 * grid.h;
    let w = &grid.w;
    let mut acc = vec![Complex64::ZERO; n];
    // row 0: (-3 u0 + 4 u1 - u2) / 2h
    acc[0] += -3.0 / h2 * w[0] * v[0];
    acc[1] += 4.0 / h2 * w[0] * v[0];
    acc[2] += -1.0 / h2 * w[0] * v[0];
    for j in 1..n - 1 {
        acc[j - 1] += -1.0 / h2 * w[j] * v[j];
        acc[j + 1] += 1.0 / h2 * w[j] * v[j];
    }
    // row n-1: (3 u_{n-1} - 4 u_{n-2} + u_{n-3}) / 2h
    acc[n - 1] += 3.0 / h2 * w[n - 1] * v[n - 1];
    acc[n - 2] += -4.0 / h2 * w[n - 1] * v[n - 1];
    acc[n - 3] += 1.0 / h2 * w[n - 1] * v[n - 1];
    acc.iter().zip(w).map(|(a, &wk)| a / wk).collect()
}

const DPLUS_RESIDUAL_GUARD: f64 = 5e-2;

/// Frozen data for the linearization at the soliton. The stored a_theta is
/// the closed form; the operators run on the quadrature route internally so
/// that the quadratic expansion of the potentials is an exact discrete
/// identity, and the two routes are cross-checked at construction.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub m: u32,
    pub q: Vec<f64>,
    pub a_theta: Vec<f64>,
    pub grid: Arc<RadialGrid>,
    /// |D+ Q| / |d_r Q| in the weighted norm, recorded at construction
    pub d_plus_residual: f64,
    ath_quad: Vec<f64>,
}

impl Linearization {
    pub fn at_soliton(m: u32, grid: &Arc<RadialGrid>) -> Result<Self> {
        let qf = soliton::soliton(m, grid);
        let closed: Vec<f64> =
            grid.r.iter().map(|&r| soliton::a_theta_soliton_value(m, r)).collect();
        let lin = Self::build(qf, Some(closed))?;
        if lin.d_plus_residual > DPLUS_RESIDUAL_GUARD {
            return Err(CssError::InvalidGrid(format!(
                "grid too coarse for the linearization: self-dual residual {:.3e}",
                lin.d_plus_residual
            )));
        }
        Ok(lin)
    }

    /// Same operator algebra around an arbitrary real profile; no self-dual
    /// residual guard applies (it measures distance from the soliton family).
    pub fn at_profile(profile: &Field) -> Result<Self> {
        let max_re = profile.u.iter().map(|u| u.re.abs()).fold(0.0_f64, f64::max);
        let max_im = profile.u.iter().map(|u| u.im.abs()).fold(0.0_f64, f64::max);
        if max_im > 1e-12 * max_re.max(1.0) {
            return Err(CssError::InvalidArgument(
                "linearization profile must be real".into(),
            ));
        }
        Self::build(profile.clone(), None)
    }

    fn build(qf: Field, closed: Option<Vec<f64>>) -> Result<Self> {
        let grid = Arc::clone(&qf.grid);
        let m = qf.m;
        let ath_quad = gauge::a_theta(&qf);
        if let Some(c) = &closed {
            let dev = c
                .iter()
                .zip(&ath_quad)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            // quadrature error is O(h^2); a formula mismatch would be O(1)
            let tol = (10.0 * grid.h * grid.h).max(5e-2);
            if dev > tol {
                return Err(CssError::InvalidGrid(format!(
                    "closed-form and quadrature gauge fields disagree by {dev:.3e}"
                )));
            }
        }
        let a_theta = closed.unwrap_or_else(|| ath_quad.clone());
        let q: Vec<f64> = qf.u.iter().map(|u| u.re).collect();
        let dq = radial_derivative(&grid, &qf.u);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..grid.n {
            let c = (m as f64 + ath_quad[j]) / grid.r[j];
            let dplus = dq[j].re - c * q[j];
            num += grid.w[j] * dplus * dplus;
            den += grid.w[j] * dq[j].re * dq[j].re;
        }
        let d_plus_residual = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        Ok(Linearization { m, q, a_theta, grid, d_plus_residual, ath_quad })
    }

    pub fn q_field(&self) -> Field {
        Field {
            m: self.m,
            grid: Arc::clone(&self.grid),
            u: self.q.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    fn dplus_coeff(&self) -> Vec<f64> {
        self.ath_quad
            .iter()
            .zip(&self.grid.r)
            .map(|(&a, &r)| (self.m as f64 + a) / r)
            .collect()
    }

    /// D+ at the base profile: eps' - ((m + A_theta[Q])/r) eps.
    pub fn d_plus(&self, eps: &Field) -> Field {
        let d = radial_derivative(&self.grid, &eps.u);
        let c = self.dplus_coeff();
        Field {
            m: self.m,
            grid: Arc::clone(&self.grid),
            u: d
                .iter()
                .zip(&eps.u)
                .zip(&c)
                .map(|((du, u), &cj)| du - cj * u)
                .collect(),
        }
    }

    /// Weighted transpose of d_plus; analytically -d_r - (1 + m + A_theta)/r.
    pub fn d_plus_adj(&self, f: &Field) -> Field {
        let dt = deriv_transpose_w(&self.grid, &f.u);
        let c = self.dplus_coeff();
        Field {
            m: self.m,
            grid: Arc::clone(&self.grid),
            u: dt
                .iter()
                .zip(&f.u)
                .zip(&c)
                .map(|((d, u), &cj)| d - cj * u)
                .collect(),
        }
    }

    /// L_Q eps = D+ eps + Q B_Q eps (the B term reads only Re eps).
    pub fn l_q(&self, eps: &Field) -> Field {
        let mut out = self.d_plus(eps);
        let qf = self.q_field();
        let b = b_op(&qf, eps);
        for j in 0..self.grid.n {
            out.u[j].re += self.q[j] * b.u[j].re;
        }
        out
    }

    /// Exact weighted transpose of l_q: D+^T f + Q B*_Q(Q Re f).
    pub fn l_q_adj(&self, f: &Field) -> Field {
        let mut out = self.d_plus_adj(f);
        let scaled = Field {
            m: self.m,
            grid: Arc::clone(&self.grid),
            u: f
                .u
                .iter()
                .zip(&self.q)
                .map(|(v, &qj)| Complex64::new(qj * v.re, 0.0))
                .collect(),
        };
        let t = cum_backward_midpoint(
            &scaled.u.iter().map(|v| v.re).collect::<Vec<_>>(),
            &self.grid.w,
            self.grid.h,
        );
        for j in 0..self.grid.n {
            out.u[j].re += self.q[j] * t[j];
        }
        out
    }

    /// Quadratic remainder: eps B_Q eps + (Q/2) B_eps eps + (eps/2) B_eps eps.
    pub fn n_q(&self, eps: &Field) -> Field {
        let qf = self.q_field();
        let b1 = b_op(&qf, eps);
        let b2 = b_op(eps, eps);
        let u = (0..self.grid.n)
            .map(|j| {
                eps.u[j] * b1.u[j].re
                    + 0.5 * self.q[j] * b2.u[j].re
                    + 0.5 * eps.u[j] * b2.u[j].re
            })
            .collect();
        Field { m: self.m, grid: Arc::clone(&self.grid), u }
    }

    /// The self-dual second variation L*_Q L_Q.
    pub fn curly_l(&self, eps: &Field) -> Field {
        self.l_q_adj(&self.l_q(eps))
    }

    /// |2 E[Q + delta eps] - |L_Q(delta eps)|^2| with the completed-square
    /// energy at g = 1; decays like delta^3 since the mismatch is the
    /// quadratic remainder paired against the linear term.
    pub fn energy_expansion_gap(&self, eps: &Field, delta: f64) -> f64 {
        let v = Field {
            m: self.m,
            grid: Arc::clone(&self.grid),
            u: self
                .q
                .iter()
                .zip(&eps.u)
                .map(|(&qj, e)| Complex64::new(qj, 0.0) + delta * e)
                .collect(),
        };
        let p = gauge::potentials(&v);
        let e = gauge::energy_bogomolnyi(&v, &p, 1.0);
        let scaled = Field {
            m: self.m,
            grid: Arc::clone(&self.grid),
            u: eps.u.iter().map(|x| delta * x).collect(),
        };
        let l = self.l_q(&scaled);
        (2.0 * e - inner_r(&l, &l)).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    LQ,
    CurlyL,
}

const ASSEMBLY_NODE_LIMIT: usize = 8192;

/// Dense 2n x 2n matrix of the chosen operator acting on stacked (Re, Im)
/// coordinates. Both operators are block diagonal: the B-term only couples
/// Re to Re.
pub fn assemble_matrix(kind: OperatorKind, lin: &Linearization) -> Result<DMatrix<f64>> {
    let n = lin.grid.n;
    if n > ASSEMBLY_NODE_LIMIT {
        return Err(CssError::SizeLimit(format!(
            "dense assembly wants n <= {ASSEMBLY_NODE_LIMIT}, grid has {n}"
        )));
    }
    let mut mat = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let mut basis = Field::zeros(lin.m, &lin.grid);
    for c in 0..2 * n {
        let (idx, imag) = if c < n { (c, false) } else { (c - n, true) };
        basis.u[idx] = if imag { Complex64::new(0.0, 1.0) } else { Complex64::new(1.0, 0.0) };
        let out = match kind {
            OperatorKind::LQ => lin.l_q(&basis),
            OperatorKind::CurlyL => lin.curly_l(&basis),
        };
        for j in 0..n {
            mat[(j, c)] = out.u[j].re;
            mat[(n + j, c)] = out.u[j].im;
        }
        basis.u[idx] = Complex64::ZERO;
    }
    Ok(mat)
}

fn block_operator_matrix(lin: &Linearization, imag_block: bool) -> DMatrix<f64> {
    let n = lin.grid.n;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut basis = Field::zeros(lin.m, &lin.grid);
    let unit = if imag_block { Complex64::new(0.0, 1.0) } else { Complex64::new(1.0, 0.0) };
    for c in 0..n {
        basis.u[c] = unit;
        let out = lin.l_q(&basis);
        for j in 0..n {
            mat[(j, c)] = if imag_block { out.u[j].im } else { out.u[j].re };
        }
        basis.u[c] = Complex64::ZERO;
    }
    mat
}

fn h1m_gram_block(lin: &Linearization) -> DMatrix<f64> {
    let n = lin.grid.n;
    let grid = &lin.grid;
    let h2 = 2.0 * grid.h;
    let mut d = DMatrix::<f64>::zeros(n, n);
    d[(0, 0)] = -3.0 / h2;
    d[(0, 1)] = 4.0 / h2;
    d[(0, 2)] = -1.0 / h2;
    for j in 1..n - 1 {
        d[(j, j - 1)] = -1.0 / h2;
        d[(j, j + 1)] = 1.0 / h2;
    }
    d[(n - 1, n - 1)] = 3.0 / h2;
    d[(n - 1, n - 2)] = -4.0 / h2;
    d[(n - 1, n - 3)] = 1.0 / h2;
    // weight rows by sqrt(w): G = 2 pi (D^T W D + W pot)
    for j in 0..n {
        let s = grid.w[j].sqrt();
        for k in 0..n {
            d[(j, k)] *= s;
        }
    }
    let mut g = d.transpose() * &d;
    let tau = 2.0 * std::f64::consts::PI;
    for j in 0..n {
        let r = grid.r[j];
        let pot = if lin.m == 0 {
            1.0 / ((1.0 + r) * (1.0 + r))
        } else {
            (lin.m as f64) * (lin.m as f64) / (r * r)
        };
        g[(j, j)] += grid.w[j] * pot;
    }
    g *= tau;
    g
}

fn householder_deflate(mat: &DMatrix<f64>, v: &nalgebra::DVector<f64>) -> DMatrix<f64> {
    let n = mat.nrows();
    let sigma = 2.0 / v.dot(v);
    let mv = mat * v;
    let vt_mv = v.dot(&mv);
    let mut out = mat.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] += -sigma * v[i] * mv[j] - sigma * mv[i] * v[j]
                + sigma * sigma * vt_mv * v[i] * v[j];
        }
    }
    out.view((1, 1), (n - 1, n - 1)).into_owned()
}

fn smallest_quotients_block(
    lin: &Linearization,
    imag_block: bool,
    constrained: bool,
    k: usize,
) -> Result<Vec<f64>> {
    let n = lin.grid.n;
    if n > ASSEMBLY_NODE_LIMIT {
        return Err(CssError::SizeLimit(format!(
            "coercivity assembly wants n <= {ASSEMBLY_NODE_LIMIT}, grid has {n}"
        )));
    }
    let a = block_operator_matrix(lin, imag_block);
    let tau = 2.0 * std::f64::consts::PI;
    let mut aw = a;
    for j in 0..n {
        let s = (tau * lin.grid.w[j]).sqrt();
        for c in 0..n {
            aw[(j, c)] *= s;
        }
    }
    let s_mat = aw.transpose() * &aw;
    let g_mat = h1m_gram_block(lin);

    let (s_red, g_red) = if constrained {
        // constraint vectors: Re block pairs against Lambda Q, Im against Q
        let c: Vec<f64> = if imag_block {
            lin.q.clone()
        } else {
            lin.grid.r.iter().map(|&r| soliton::lambda_soliton_value(lin.m, r)).collect()
        };
        let mut b = nalgebra::DVector::<f64>::from_iterator(
            n,
            c.iter().zip(&lin.grid.w).map(|(&cj, &wj)| wj * cj),
        );
        let norm = b.norm();
        let sign = if b[0] >= 0.0 { 1.0 } else { -1.0 };
        b[0] += sign * norm;
        (householder_deflate(&s_mat, &b), householder_deflate(&g_mat, &b))
    } else {
        (s_mat, g_mat)
    };

    let chol = g_red
        .clone()
        .cholesky()
        .ok_or_else(|| CssError::SolverFailure("seminorm Gram matrix not positive".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&s_red)
        .ok_or_else(|| CssError::SolverFailure("triangular solve failed".into()))?;
    let z = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| CssError::SolverFailure("triangular solve failed".into()))?;
    let mut sym = z.transpose();
    let zc = sym.clone();
    for i in 0..sym.nrows() {
        for j in 0..sym.ncols() {
            sym[(i, j)] = 0.5 * (zc[(i, j)] + zc[(j, i)]);
        }
    }
    let eig = sym.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.truncate(k);
    Ok(vals)
}

/// Smallest k Rayleigh quotients |L_Q u|^2 / |u|^2_{H1_m} over the constraint
/// set u perp_r {iQ, Lambda Q} (both operator blocks merged). For m = 0 the
/// denominator uses the (1+r)^{-2} weighted norm.
pub fn constrained_quotients(lin: &Linearization, k: usize) -> Result<Vec<f64>> {
    let mut vals = smallest_quotients_block(lin, false, true, k)?;
    vals.extend(smallest_quotients_block(lin, true, true, k)?);
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.truncate(k);
    Ok(vals)
}

pub fn coercivity_ratio(lin: &Linearization) -> Result<f64> {
    let vals = constrained_quotients(lin, 1)?;
    Ok(vals[0].max(0.0).sqrt())
}

/// Same minimization without the kernel constraints; the kernel directions
/// drive this to zero.
pub fn coercivity_ratio_unconstrained(lin: &Linearization) -> Result<f64> {
    let mut vals = smallest_quotients_block(lin, false, false, 1)?;
    vals.extend(smallest_quotients_block(lin, true, false, 1)?);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(min.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, h1m_seminorm_sq};
    use approx::assert_relative_eq;

    #[test]
    fn b_of_soliton_against_itself_matches_closed_form() {
        // m=0: B_Q Q = 4r/(1+r^2), value 2 at r=1
        let g = build_grid(50.0, 16384).unwrap();
        let q = soliton::soliton(0, &g);
        let b = b_op(&q, &q);
        for (j, &r) in g.r.iter().enumerate() {
            let expect = 4.0 * r / (1.0 + r * r);
            assert!(
                (b.u[j].re - expect).abs() < 1e-5,
                "r={r}: {} vs {expect}",
                b.u[j].re
            );
        }
        let j_mid = (1.0 / g.h - 0.5).round() as usize;
        assert_relative_eq!(g.r[j_mid], 1.0, epsilon = g.h);
        assert_relative_eq!(b.u[j_mid].re, 4.0 * g.r[j_mid] / (1.0 + g.r[j_mid] * g.r[j_mid]), epsilon = 1e-6);
    }

    #[test]
    fn b_ops_vanish_on_zero() {
        let g = build_grid(20.0, 256).unwrap();
        let q = soliton::soliton(1, &g);
        let z = Field::zeros(1, &g);
        assert!(weighted_norm(&b_op(&q, &z)) == 0.0);
        assert!(weighted_norm(&b_adj(&q, &z)) == 0.0);
    }

    #[test]
    fn b_adjoint_identity_to_rounding() {
        let g = build_grid(30.0, 2048).unwrap();
        let f = Field::from_fn(1, &g, |r| Complex64::new(r * (-r / 2.0).exp(), 0.4 * (-r).exp()));
        let a = Field::from_fn(1, &g, |r| {
            Complex64::new((-r * r / 9.0).exp(), r * (-r * r / 7.0).exp())
        });
        let b = Field::from_fn(1, &g, |r| {
            Complex64::new((1.0 + r).recip(), (-r / 3.0).exp() * r * r)
        });
        let lhs = inner_r(&b_op(&f, &a), &b);
        let rhs = inner_r(&a, &b_adj(&f, &b));
        assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
    }

    #[test]
    fn kernel_residuals_small_and_second_order() {
        let mut ratios = Vec::new();
        for n in [8192usize, 16384] {
            let g = build_grid(60.0, n).unwrap();
            let lin = Linearization::at_soliton(1, &g).unwrap();
            let qn = h1m_seminorm_sq(&lin.q_field()).sqrt();
            let iq = Field {
                m: 1,
                grid: Arc::clone(&g),
                u: lin.q.iter().map(|&v| Complex64::new(0.0, v)).collect(),
            };
            let lq = soliton::lambda_soliton(1, &g);
            let r1 = weighted_norm(&lin.l_q(&iq)) / qn;
            let r2 = weighted_norm(&lin.l_q(&lq)) / qn;
            assert!(r1 < 1e-3, "iQ residual {r1}");
            assert!(r2 < 1e-3, "lambda Q residual {r2}");
            ratios.push((r1, r2));
        }
        assert!(ratios[0].1 / ratios[1].1 > 3.0, "second-order shrink: {ratios:?}");
    }

    #[test]
    fn decomposition_is_exact_up_to_selfdual_residual() {
        let g = build_grid(40.0, 4096).unwrap();
        let lin = Linearization::at_soliton(1, &g).unwrap();
        let eps = Field::from_fn(1, &g, |r| {
            Complex64::new(0.3 * r * (-r * r / 4.0).exp(), -0.2 * r * (-r * r / 6.0).exp())
        });
        let v = Field {
            m: 1,
            grid: Arc::clone(&g),
            u: lin
                .q
                .iter()
                .zip(&eps.u)
                .map(|(&qj, e)| Complex64::new(qj, 0.0) + e)
                .collect(),
        };
        let ath = gauge::a_theta(&v);
        let full = gauge::bogomolnyi(&v, &ath);
        let l = lin.l_q(&eps);
        let nq = lin.n_q(&eps);
        let d0 = lin.d_plus(&lin.q_field());
        // bogomolnyi(Q+eps) - L eps - N eps = D+ Q exactly (to rounding)
        for j in 0..g.n {
            let lhs = full.u[j] - l.u[j] - nq.u[j];
            assert!(
                (lhs - d0.u[j]).norm() < 1e-11,
                "node {j}: {} vs {}",
                lhs,
                d0.u[j]
            );
        }
    }

    #[test]
    fn lambda_gen_matches_soliton_closed_form() {
        let g = build_grid(30.0, 8192).unwrap();
        let q = soliton::soliton(0, &g);
        let lq = lambda_gen(&q);
        for (j, &r) in g.r.iter().enumerate() {
            if r > 20.0 {
                break;
            }
            let expect = 8.0_f64.sqrt() * (1.0 - r * r) / ((1.0 + r * r) * (1.0 + r * r));
            assert!(
                (lq.u[j].re - expect).abs() < 5e-4,
                "r={r}: {} vs {expect}",
                lq.u[j].re
            );
        }
        let z = Field::zeros(0, &g);
        assert!(weighted_norm(&lambda_gen(&z)) == 0.0);
    }

    #[test]
    fn assembled_matrix_agrees_with_apply_and_is_weighted_symmetric() {
        let g = build_grid(15.0, 256).unwrap();
        let lin = Linearization::at_soliton(1, &g).unwrap();
        let mat = assemble_matrix(OperatorKind::LQ, &lin).unwrap();
        let n = g.n;
        let iq = Field {
            m: 1,
            grid: Arc::clone(&g),
            u: lin.q.iter().map(|&v| Complex64::new(0.0, v)).collect(),
        };
        let direct = lin.l_q(&iq);
        let mut x = nalgebra::DVector::<f64>::zeros(2 * n);
        for j in 0..n {
            x[j] = iq.u[j].re;
            x[n + j] = iq.u[j].im;
        }
        let y = &mat * x;
        let scale = direct.u.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        for j in 0..n {
            assert!((y[j] - direct.u[j].re).abs() < 1e-12 * scale.max(1.0));
            assert!((y[n + j] - direct.u[j].im).abs() < 1e-12 * scale.max(1.0));
        }

        // curly L is W-symmetric to rounding because the adjoint route is the
        // exact weighted transpose
        let cl = assemble_matrix(OperatorKind::CurlyL, &lin).unwrap();
        let mut wvec = vec![0.0; 2 * n];
        for j in 0..n {
            wvec[j] = g.w[j];
            wvec[n + j] = g.w[j];
        }
        let mut max_asym = 0.0_f64;
        let mut max_entry = 0.0_f64;
        for i in 0..2 * n {
            for j in 0..2 * n {
                let a = wvec[i] * cl[(i, j)];
                let b = wvec[j] * cl[(j, i)];
                max_asym = max_asym.max((a - b).abs());
                max_entry = max_entry.max(a.abs());
            }
        }
        assert!(max_asym < 1e-11 * max_entry, "asymmetry {max_asym} vs scale {max_entry}");
    }

    #[test]
    fn assembly_rejects_oversized_grids() {
        let g = build_grid(60.0, 16384).unwrap();
        let lin = Linearization::at_soliton(1, &g).unwrap();
        assert!(matches!(
            assemble_matrix(OperatorKind::LQ, &lin),
            Err(CssError::SizeLimit(_))
        ));
    }

    #[test]
    fn coercivity_positive_under_constraints_and_zero_without() {
        let g = build_grid(30.0, 512).unwrap();
        let lin = Linearization::at_soliton(1, &g).unwrap();
        let ratio = coercivity_ratio(&lin).unwrap();
        assert!(ratio > 0.1 && ratio < 1.0, "constrained ratio {ratio}");
        let free = coercivity_ratio_unconstrained(&lin).unwrap();
        assert!(free < 0.1 * ratio, "unconstrained {free} vs constrained {ratio}");
    }

    #[test]
    fn adjoint_pairing_for_interior_fields() {
        let g = build_grid(30.0, 4096).unwrap();
        let lin = Linearization::at_soliton(1, &g).unwrap();
        // bump fields vanishing near both ends
        let bump = |c: f64, wdt: f64| {
            move |r: f64| {
                let x = (r - c) / wdt;
                (-x * x).exp()
            }
        };
        let u = Field::from_fn(1, &g, |r| {
            Complex64::new(bump(5.0, 1.0)(r), 0.5 * bump(7.0, 1.5)(r))
        });
        let v = Field::from_fn(1, &g, |r| {
            Complex64::new(-0.3 * bump(4.0, 0.8)(r), bump(6.0, 1.2)(r))
        });
        let lhs = inner_r(&lin.l_q(&u), &v);
        let rhs = inner_r(&u, &lin.l_q_adj(&v));
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }
}
