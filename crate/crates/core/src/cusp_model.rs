//! The fibered model near a smooth divisor D. In the cusp coordinate t ∈ [A, T]
//! the metric is ω_D + 2c(t) e^{−t} dt∧η̃ with fiber coefficient
//! c = a − ½(φ₀″ − φ₀′), and χ contributes χ_D + 2b(t) e^{−t} dt∧η̃ with
//! b(t) = b + β e^{−t}. The reduced J-residual is
//!
//! ```text
//! R = b(t) + c·s − n·c + (n/2) |∂_z φ_t|² / γ,   s = χ_D / γ,
//! ```
//!
//! where on a flat divisor torus γ = g_D − dd^c_D φ is the D-part of the metric and
//! on a point model γ ≡ 1 and s is given. The product solution c ≡ a exists
//! exactly when s = n − b/a.
//!
//! The model operator is Δ̃⁰u = ⟨χ_D, dd^c_D u⟩_{ω_D} − κ(∂_t − ∂_t²)u, inverted on
//! fiber-invariant data by `greens_solve`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{JeqError, Result};
use crate::geom_core::{complex_hessian_at, first_difference, second_difference_center, Grid, Mat};
use crate::krylov::{gmres, solve_tridiagonal, KrylovOptions};

/// The divisor factor of the model.
#[derive(Clone, Debug, PartialEq)]
pub enum DivisorModel {
    /// D-terms reduce to constants; `s` = tr_{ω_D} χ_D and `n` is the total complex dimension.
    Point { n: usize, s: f64 },
    /// D a flat 2-torus (a complex curve grid) with constant ω_D = g_d and χ_D given per point.
    FlatTorus {
        grid: Grid,
        g_d: f64,
        chi_d: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CuspGeometry {
    /// Inner cut A.
    pub a_cut: f64,
    /// Outer truncation T.
    pub t_max: f64,
    /// Number of t-nodes, including both ends.
    pub mt: usize,
    pub a: f64,
    pub b: f64,
    /// Amplitude β of the decaying part of the χ fiber coefficient.
    pub tail_beta: f64,
    pub divisor: DivisorModel,
}

impl CuspGeometry {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(JeqError::InvalidInput(m));
        if !(self.a_cut >= 1.0 && self.a_cut < self.t_max) {
            return bad(format!(
                "need 1 <= A < T, got A = {}, T = {}",
                self.a_cut, self.t_max
            ));
        }
        if self.mt < 8 {
            return bad(format!("need at least 8 t-nodes, got {}", self.mt));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return bad(format!(
                "a and b must be positive, got a = {}, b = {}",
                self.a, self.b
            ));
        }
        if !self.tail_beta.is_finite() {
            return bad("tail amplitude must be finite".into());
        }
        match &self.divisor {
            DivisorModel::Point { n, s } => {
                if *n < 1 || !s.is_finite() {
                    return bad("point model needs n >= 1 and a finite trace".into());
                }
            }
            DivisorModel::FlatTorus { grid, g_d, chi_d } => {
                if grid.complex_dim() != 1 {
                    return bad("divisor torus must be a complex curve grid".into());
                }
                if chi_d.len() != grid.len() {
                    return bad("chi_d must have one value per divisor point".into());
                }
                if !(*g_d > 0.0) || chi_d.iter().any(|x| !(*x > 0.0)) {
                    return bad("omega_D and chi_D must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        match &self.divisor {
            DivisorModel::Point { n, .. } => *n,
            DivisorModel::FlatTorus { .. } => 2,
        }
    }

    /// Number of divisor samples per t-node.
    pub fn d_len(&self) -> usize {
        match &self.divisor {
            DivisorModel::Point { .. } => 1,
            DivisorModel::FlatTorus { grid, .. } => grid.len(),
        }
    }

    pub fn h(&self) -> f64 {
        (self.t_max - self.a_cut) / (self.mt - 1) as f64
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.mt).map(|i| self.a_cut + i as f64 * h).collect()
    }

    /// The limit trace n − b/a required of the divisor pair.
    pub fn s_target(&self) -> f64 {
        self.n() as f64 - self.b / self.a
    }

    fn b_at(&self, t: f64) -> f64 {
        self.b + self.tail_beta * (-t).exp()
    }

    /// Default coefficient b/a² of the t-part of Δ̃⁰.
    pub fn default_kappa(&self) -> f64 {
        self.b / (self.a * self.a)
    }
}

/// a = 2b / (n − C_D).
pub fn background_coefficients(b: f64, c_d: f64, n: usize) -> Result<f64> {
    if !(b > 0.0) {
        return Err(JeqError::InvalidInput(format!(
            "b must be positive, got {b}"
        )));
    }
    let gap = n as f64 - c_d;
    if !(gap > 0.0) {
        return Err(JeqError::DegenerateClass(format!(
            "C_D = {c_d} is not below n = {n}"
        )));
    }
    Ok(2.0 * b / gap)
}

/// A field sampled on the t-grid times the divisor samples, t-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CuspField {
    pub t: Vec<f64>,
    pub d_len: usize,
    pub values: Vec<f64>,
}

impl CuspField {
    pub fn from_fn(geometry: &CuspGeometry, f: impl Fn(f64, usize) -> f64) -> Self {
        let t = geometry.t_nodes();
        let d_len = geometry.d_len();
        let values = t
            .iter()
            .flat_map(|&ti| (0..d_len).map(move |p| (ti, p)))
            .map(|(ti, p)| f(ti, p))
            .collect();
        CuspField { t, d_len, values }
    }

    pub fn at(&self, i: usize, p: usize) -> f64 {
        self.values[i * self.d_len + p]
    }

    fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.d_len..(i + 1) * self.d_len]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum EndRule {
    /// Second-order one-sided stencils at both ends.
    OneSided,
    /// One-sided at t = A, reflecting ghost node (φ′ = 0) at t = T.
    Neumann,
}

/// (u_t, u_tt) at node i of a t-series with spacing h.
fn t_derivs(u: &dyn Fn(usize) -> f64, m: usize, h: f64, i: usize, rule: EndRule) -> (f64, f64) {
    if i == 0 {
        let (u0, u1, u2, u3) = (u(0), u(1), u(2), u(3));
        (
            (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h),
            (2.0 * u0 - 5.0 * u1 + 4.0 * u2 - u3) / (h * h),
        )
    } else if i == m - 1 {
        match rule {
            EndRule::Neumann => (0.0, 2.0 * (u(m - 2) - u(m - 1)) / (h * h)),
            EndRule::OneSided => {
                let (u0, u1, u2, u3) = (u(m - 1), u(m - 2), u(m - 3), u(m - 4));
                (
                    (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * h),
                    (2.0 * u0 - 5.0 * u1 + 4.0 * u2 - u3) / (h * h),
                )
            }
        }
    } else {
        let (l, c, r) = (u(i - 1), u(i), u(i + 1));
        ((r - l) / (2.0 * h), (r - 2.0 * c + l) / (h * h))
    }
}

fn t_derivative_fields(f: &CuspField, h: f64, rule: EndRule) -> (Vec<f64>, Vec<f64>) {
    let m = f.t.len();
    let dl = f.d_len;
    let mut d1 = vec![0.0; f.values.len()];
    let mut d2 = vec![0.0; f.values.len()];
    for p in 0..dl {
        let u = |i: usize| f.values[i * dl + p];
        for i in 0..m {
            let (a, b) = t_derivs(&u, m, h, i, rule);
            d1[i * dl + p] = a;
            d2[i * dl + p] = b;
        }
    }
    (d1, d2)
}

/// dd^c_D of one node slice on the divisor grid (a scalar on a curve).
fn ddc_d(grid: &Grid, u: &[f64], p: usize) -> f64 {
    complex_hessian_at(grid, u, p).get(0, 0).re
}

/// Pointwise coefficients of the reduced equation.
#[derive(Clone, Copy, Debug, Default)]
struct Coeffs {
    c: f64,
    gamma: f64,
    s: f64,
    q: f64,
    fx: f64,
    fy: f64,
    chi: f64,
    r: f64,
}

struct Evaluated {
    coeffs: Vec<Coeffs>,
    /// First node and value violating positivity.
    degenerate: Option<(usize, f64)>,
}

fn evaluate(geom: &CuspGeometry, phi: &CuspField, rule: EndRule) -> Evaluated {
    let m = phi.t.len();
    let dl = phi.d_len;
    let h = geom.h();
    let n = geom.n() as f64;
    let (d1, d2) = t_derivative_fields(phi, h, rule);
    let coeffs: Vec<Coeffs> = (0..m * dl)
        .into_par_iter()
        .map(|k| {
            let (i, p) = (k / dl, k % dl);
            let c = geom.a - 0.5 * (d2[k] - d1[k]);
            let bt = geom.b_at(phi.t[i]);
            match &geom.divisor {
                DivisorModel::Point { s, .. } => Coeffs {
                    c,
                    gamma: 1.0,
                    s: *s,
                    chi: *s,
                    r: bt + c * s - n * c,
                    ..Default::default()
                },
                DivisorModel::FlatTorus { grid, g_d, chi_d } => {
                    let gamma = g_d - ddc_d(grid, phi.node(i), p);
                    let slice = &d1[i * dl..(i + 1) * dl];
                    let fx = first_difference(grid, slice, p, 0);
                    let fy = first_difference(grid, slice, p, 1);
                    let q = 0.25 * (fx * fx + fy * fy);
                    let chi = chi_d[p];
                    let s = chi / gamma;
                    let r = bt + c * s - n * c + 0.5 * n * q / gamma;
                    Coeffs {
                        c,
                        gamma,
                        s,
                        q,
                        fx,
                        fy,
                        chi,
                        r,
                    }
                }
            }
        })
        .collect();
    let mut degenerate = None;
    for (k, co) in coeffs.iter().enumerate() {
        if !(co.c > 0.0 && co.gamma > 0.0 && 2.0 * co.c * co.gamma > co.q) {
            degenerate = Some((k / dl, co.c));
            break;
        }
    }
    Evaluated { coeffs, degenerate }
}

/// The reduced J-residual of a profile, with one-sided second-order t-stencils at
/// both ends.
pub fn reduced_residual(phi: &CuspField, geometry: &CuspGeometry) -> Result<CuspField> {
    geometry.validate()?;
    check_shape(phi, geometry)?;
    let ev = evaluate(geometry, phi, EndRule::OneSided);
    if let Some((node, c)) = ev.degenerate {
        return Err(JeqError::MetricDegenerate { node, c });
    }
    Ok(CuspField {
        t: phi.t.clone(),
        d_len: phi.d_len,
        values: ev.coeffs.iter().map(|c| c.r).collect(),
    })
}

fn check_shape(f: &CuspField, geometry: &CuspGeometry) -> Result<()> {
    if f.t.len() != geometry.mt
        || f.d_len != geometry.d_len()
        || f.values.len() != f.t.len() * f.d_len
    {
        return Err(JeqError::InvalidInput(
            "field does not match the cusp grid".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CuspSolveOptions {
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub krylov_rel_tol: f64,
}

impl Default for CuspSolveOptions {
    fn default() -> Self {
        CuspSolveOptions {
            newton_tol: 1e-11,
            max_newton_iters: 60,
            krylov_rel_tol: 1e-10,
        }
    }
}

/// Asymptotic fit of a solved profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticFit {
    pub c_inf: f64,
    pub c1: f64,
    /// Decay rate of φ₀ − c_∞; +∞ when the tail is flat.
    pub eta: f64,
    pub degenerate: bool,
    /// Limit of tr_{ω_D} χ_D along the profile (sup over the divisor of its distance to the target).
    pub s_inf: f64,
    pub s_target: f64,
    /// sup over D of |s_∞ − (n − b/a)|.
    pub gap: f64,
    /// |a − b/(n − s_∞)|: how far the limit fiber coefficient is from a.
    pub limit_gap: f64,
    /// Shared decay rate of the fiber-oscillating part, when a divisor torus is present.
    pub eta_perp: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CuspProfile {
    pub phi: CuspField,
    /// Fiber mean of φ per t-node.
    pub phi0: Vec<f64>,
    /// Fiber mean of c per t-node.
    pub c: Vec<f64>,
    /// Fiber sup of |R| per t-node.
    pub residual: Vec<f64>,
    pub residual_sup: f64,
    pub newton_iters: usize,
    pub fit: AsymptoticFit,
    /// The limit fiber coefficient b/(n − s_∞) differs from a, so φ₀ grows linearly.
    pub non_product_limit: bool,
}

struct Jacobian<'a> {
    geom: &'a CuspGeometry,
    coeffs: &'a [Coeffs],
    m: usize,
    dl: usize,
    h: f64,
}

impl Jacobian<'_> {
    /// Embeds unknowns (nodes 1..m) into a full field with zero at node 0.
    fn embed(&self, v: &[f64]) -> CuspField {
        let mut values = vec![0.0; self.m * self.dl];
        values[self.dl..].copy_from_slice(v);
        CuspField {
            t: vec![0.0; self.m],
            d_len: self.dl,
            values,
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let f = self.embed(v);
        let (d1, d2) = t_derivative_fields(&f, self.h, EndRule::Neumann);
        let n = self.geom.n() as f64;
        let dl = self.dl;
        out.par_iter_mut().enumerate().for_each(|(k0, o)| {
            let k = k0 + dl;
            let (i, p) = (k / dl, k % dl);
            let co = &self.coeffs[k];
            let dc = -0.5 * (d2[k] - d1[k]);
            *o = match &self.geom.divisor {
                DivisorModel::Point { .. } => dc * (co.s - n),
                DivisorModel::FlatTorus { grid, .. } => {
                    let dgamma = -ddc_d(grid, f.node(i), p);
                    let slice = &d1[i * dl..(i + 1) * dl];
                    let dfx = first_difference(grid, slice, p, 0);
                    let dfy = first_difference(grid, slice, p, 1);
                    let dq = 0.5 * (co.fx * dfx + co.fy * dfy);
                    let ds = -co.chi * dgamma / (co.gamma * co.gamma);
                    dc * (co.s - n)
                        + co.c * ds
                        + 0.5 * n * (dq / co.gamma - co.q * dgamma / (co.gamma * co.gamma))
                }
            };
        });
    }

    /// Column-wise tridiagonal approximation (t-couplings plus the divisor diagonal).
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let n = self.geom.n() as f64;
        let (m, dl, h) = (self.m, self.dl, self.h);
        let cen = match &self.geom.divisor {
            DivisorModel::Point { .. } => 0.0,
            DivisorModel::FlatTorus { grid, .. } => {
                0.25 * (second_difference_center(grid, 0, 0) + second_difference_center(grid, 1, 1))
            }
        };
        let cols: Vec<Vec<f64>> = (0..dl)
            .into_par_iter()
            .map(|p| {
                let rows = m - 1;
                let mut lower = vec![0.0; rows];
                let mut diag = vec![0.0; rows];
                let mut upper = vec![0.0; rows];
                let mut rhs = vec![0.0; rows];
                for k in 0..rows {
                    let i = k + 1;
                    let co = &self.coeffs[i * dl + p];
                    let al = -0.5 * (co.s - n);
                    let dd = cen * (co.c * co.chi + 0.5 * n * co.q) / (co.gamma * co.gamma);
                    if i == m - 1 {
                        lower[k] = al * 2.0 / (h * h);
                        diag[k] = al * -2.0 / (h * h) + dd;
                    } else {
                        lower[k] = al * (1.0 / (h * h) + 0.5 / h);
                        diag[k] = al * -2.0 / (h * h) + dd;
                        upper[k] = al * (1.0 / (h * h) - 0.5 / h);
                    }
                    rhs[k] = r[k * dl + p];
                }
                solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
                rhs
            })
            .collect();
        for (p, col) in cols.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                z[k * dl + p] = *v;
            }
        }
    }
}

fn fiber_stats(f: &CuspField) -> (Vec<f64>, Vec<f64>) {
    let m = f.t.len();
    let mean = (0..m)
        .map(|i| f.node(i).iter().sum::<f64>() / f.d_len as f64)
        .collect();
    let sup = (0..m)
        .map(|i| f.node(i).iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .collect();
    (mean, sup)
}

/// Damped Newton–Krylov solve of the reduced equation with φ(A) = boundary and
/// φ_t(T) = 0, followed by the asymptotic fit.
pub fn solve_cusp_bvp(
    geometry: &CuspGeometry,
    boundary: f64,
    opts: &CuspSolveOptions,
) -> Result<CuspProfile> {
    geometry.validate()?;
    let m = geometry.mt;
    let dl = geometry.d_len();
    let h = geometry.h();
    let mut phi = CuspField::from_fn(geometry, |_, _| boundary);
    let mut ev = evaluate(geometry, &phi, EndRule::Neumann);
    if let Some((node, c)) = ev.degenerate {
        return Err(JeqError::MetricDegenerate { node, c });
    }
    let interior_sup =
        |ev: &Evaluated| ev.coeffs[dl..].iter().fold(0.0f64, |a, c| a.max(c.r.abs()));
    let mut iters = 0;
    loop {
        let rsup = interior_sup(&ev);
        if rsup <= opts.newton_tol {
            break;
        }
        if iters >= opts.max_newton_iters {
            return Err(JeqError::NewtonStalled {
                residual: rsup,
                reason: "iteration limit".into(),
            });
        }
        let jac = Jacobian {
            geom: geometry,
            coeffs: &ev.coeffs,
            m,
            dl,
            h,
        };
        let r: Vec<f64> = ev.coeffs[dl..].iter().map(|c| c.r).collect();
        let mut x = vec![0.0; r.len()];
        gmres(
            |v, o| jac.apply(v, o),
            |v, z| jac.precondition(v, z),
            &r,
            &mut x,
            KrylovOptions {
                rel_tol: opts.krylov_rel_tol,
                max_iters: 2000,
                restart: 60,
            },
        )
        .map_err(|e| JeqError::NewtonStalled {
            residual: rsup,
            reason: e.to_string(),
        })?;
        let mut lambda = 1.0;
        loop {
            let mut trial = phi.clone();
            for (v, d) in trial.values[dl..].iter_mut().zip(&x) {
                *v -= lambda * d;
            }
            let tev = evaluate(geometry, &trial, EndRule::Neumann);
            if tev.degenerate.is_none() && interior_sup(&tev) < rsup {
                phi = trial;
                ev = tev;
                break;
            }
            lambda *= 0.5;
            if lambda < 1.0 / 1024.0 {
                if let Some((node, c)) = tev.degenerate {
                    return Err(JeqError::MetricDegenerate { node, c });
                }
                return Err(JeqError::NewtonStalled {
                    residual: rsup,
                    reason: "no admissible damped step".into(),
                });
            }
        }
        iters += 1;
    }
    let residual_field = CuspField {
        t: phi.t.clone(),
        d_len: dl,
        values: ev.coeffs.iter().map(|c| c.r).collect(),
    };
    let c_field = CuspField {
        t: phi.t.clone(),
        d_len: dl,
        values: ev.coeffs.iter().map(|c| c.c).collect(),
    };
    let (phi0, _) = fiber_stats(&phi);
    let (c_mean, _) = fiber_stats(&c_field);
    let (_, res_sup) = fiber_stats(&residual_field);
    let residual_sup = res_sup[1..].iter().fold(0.0f64, |a, v| a.max(*v));
    let fit = fit_asymptotics(&phi, geometry).or_else(|e| match e {
        JeqError::FitDegenerate { c_inf } => Ok(degenerate_fit(c_inf, &phi, geometry)),
        e => Err(e),
    })?;
    let non_product_limit = fit.limit_gap > 1e-6 * geometry.a.max(1.0);
    Ok(CuspProfile {
        phi,
        phi0,
        c: c_mean,
        residual: res_sup,
        residual_sup,
        newton_iters: iters,
        fit,
        non_product_limit,
    })
}

/// Δ̃⁰u = ⟨χ_D, dd^c_D u⟩_{ω_D} − κ(∂_t − ∂_t²)u, with one-sided second-order
/// t-stencils at the ends.
pub fn tilde_delta0_apply(u: &CuspField, geometry: &CuspGeometry, kappa: f64) -> Result<CuspField> {
    check_shape(u, geometry)?;
    let (d1, d2) = t_derivative_fields(u, geometry.h(), EndRule::OneSided);
    let dl = u.d_len;
    let values = (0..u.values.len())
        .map(|k| {
            let t_part = -kappa * (d1[k] - d2[k]);
            match &geometry.divisor {
                DivisorModel::Point { .. } => t_part,
                DivisorModel::FlatTorus { grid, g_d, chi_d } => {
                    let (i, p) = (k / dl, k % dl);
                    chi_d[p] * ddc_d(grid, u.node(i), p) / (g_d * g_d) + t_part
                }
            }
        })
        .collect();
    Ok(CuspField {
        t: u.t.clone(),
        d_len: dl,
        values,
    })
}

/// How ∫_T^∞ e^{−u} g₀(u) du is approximated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TailMode {
    Zero,
    /// g₀(T) e^{−η(u−T)} with η from the last two samples.
    Exponential,
}

/// The decaying solution of −κ(∂_t − ∂_t²)v = g₀ with v(A) = 0:
/// v(t) = −(1/κ) ∫_A^t e^s ∫_s^∞ e^{−u} g₀(u) du ds, by cumulative trapezoid rules.
pub fn greens_solve(g0: &[f64], t: &[f64], kappa: f64, tail: TailMode) -> Result<Vec<f64>> {
    let m = t.len();
    if m < 3 || g0.len() != m {
        return Err(JeqError::InvalidInput(
            "greens_solve needs matching samples on at least 3 nodes".into(),
        ));
    }
    if !(kappa > 0.0) {
        return Err(JeqError::InvalidInput(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let tail_integral = match tail {
        TailMode::Zero => 0.0,
        TailMode::Exponential => {
            let (ga, gb) = (g0[m - 2], g0[m - 1]);
            if gb == 0.0 {
                0.0
            } else {
                let ratio = ga / gb;
                if !(ratio > 1.0) {
                    return Err(JeqError::TailFitFailed(format!(
                        "samples {ga:e}, {gb:e} at the truncation do not decay"
                    )));
                }
                let eta = ratio.ln() / (t[m - 1] - t[m - 2]);
                gb * (-t[m - 1]).exp() / (1.0 + eta)
            }
        }
    };
    let w: Vec<f64> = t.iter().zip(g0).map(|(ti, g)| (-ti).exp() * g).collect();
    let mut inner = vec![0.0; m];
    inner[m - 1] = tail_integral;
    for i in (0..m - 1).rev() {
        inner[i] = inner[i + 1] + 0.5 * (t[i + 1] - t[i]) * (w[i] + w[i + 1]);
    }
    let e: Vec<f64> = t.iter().zip(&inner).map(|(ti, s)| ti.exp() * s).collect();
    let mut v = vec![0.0; m];
    for i in 1..m {
        v[i] = v[i - 1] + 0.5 * (t[i] - t[i - 1]) * (e[i - 1] + e[i]);
    }
    Ok(v.into_iter().map(|x| (0.0 - x) / kappa).collect())
}

/// u = u₀(t) + u_⊥ with u₀ the fiber mean.
pub fn fiber_decompose(u: &CuspField) -> (Vec<f64>, CuspField) {
    let (mean, _) = fiber_stats(u);
    let dl = u.d_len;
    let values = u
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| v - mean[k / dl])
        .collect();
    (
        mean,
        CuspField {
            t: u.t.clone(),
            d_len: dl,
            values,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TranslationReport {
    pub shifts: Vec<f64>,
    /// sup over the window and the divisor of |φ(t_j + τ) − φ(t_j + W/2)|.
    pub differences: Vec<f64>,
    /// Each difference is below the previous one (or negligible).
    pub monotone: bool,
    /// The last difference is at most a tenth of the first.
    pub decaying: bool,
}

fn interpolate(f: &CuspField, t: f64, p: usize) -> f64 {
    let h = f.t[1] - f.t[0];
    let x = ((t - f.t[0]) / h).clamp(0.0, (f.t.len() - 1) as f64);
    let i = (x.floor() as usize).min(f.t.len() - 2);
    let s = x - i as f64;
    (1.0 - s) * f.at(i, p) + s * f.at(i + 1, p)
}

/// Shifts t_j = A + j² that fit a window of the given width.
pub fn default_shifts(profile: &CuspField, window: f64) -> Vec<f64> {
    let a = profile.t[0];
    let t_max = *profile.t.last().unwrap();
    (0..)
        .map(|j: usize| a + (j * j) as f64)
        .take_while(|s| s + window <= t_max)
        .collect()
}

/// Differences of the translated profiles φ(· + t_j) over a window of width `window`.
pub fn translation_sequence_test(
    profile: &CuspField,
    shifts: &[f64],
    window: f64,
) -> Result<TranslationReport> {
    let t_max = *profile.t.last().unwrap();
    let t_min = profile.t[0];
    let mut differences = Vec::with_capacity(shifts.len());
    for &s in shifts {
        if s < t_min || s + window > t_max + 1e-12 {
            return Err(JeqError::WindowTooShort {
                start: s,
                end: s + window,
                t_max,
            });
        }
        let center = s + 0.5 * window;
        let mut d: f64 = 0.0;
        for p in 0..profile.d_len {
            let c = interpolate(profile, center, p);
            for (i, &t) in profile.t.iter().enumerate() {
                if t >= s - 1e-12 && t <= s + window + 1e-12 {
                    d = d.max((profile.at(i, p) - c).abs());
                }
            }
        }
        differences.push(d);
    }
    let scale = differences.first().copied().unwrap_or(0.0).max(1e-300);
    let monotone = differences
        .windows(2)
        .all(|w| w[1] < w[0] || w[1] <= 1e-14 * scale.max(1.0));
    let decaying = match (differences.first(), differences.last()) {
        (Some(f), Some(l)) => *f == 0.0 || *l <= 0.1 * f,
        _ => true,
    };
    Ok(TranslationReport {
        shifts: shifts.to_vec(),
        differences,
        monotone,
        decaying,
    })
}

fn tail_window_start(geometry: &CuspGeometry) -> f64 {
    0.5 * (geometry.a_cut + geometry.t_max)
}

/// Least-squares fit of every series in `ys` against the columns, sharing them.
/// Returns the coefficients per series and the total squared residual.
fn project(basis: &DMatrix<f64>, ys: &[Vec<f64>]) -> (Vec<DVector<f64>>, f64) {
    let svd = basis.clone().svd(true, true);
    let mut sse = 0.0;
    let coefs = ys
        .iter()
        .map(|y| {
            let yv = DVector::from_column_slice(y);
            let c = svd.solve(&yv, 1e-13).expect("svd with vectors");
            let r = &yv - basis * &c;
            sse += r.norm_squared();
            c
        })
        .collect();
    (coefs, sse)
}

/// Columns [1, e^{−η(t−t₀)}, e^{ν(t−T)}]; the last one absorbs the reflection
/// layer the φ_t(T) = 0 truncation creates.
fn exp_basis(t: &[f64], eta: f64, nu: f64) -> DMatrix<f64> {
    let t0 = t[0];
    let tn = *t.last().unwrap();
    DMatrix::from_fn(t.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (-eta * (t[i] - t0)).exp(),
        _ => (nu * (t[i] - tn)).exp(),
    })
}

/// Minimizes a smooth one-dimensional function of log η: grid scan, golden section,
/// then Newton steps on a finite-difference model.
fn minimize_log(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let k = 120;
    let xs: Vec<f64> = (0..=k)
        .map(|i| lo.ln() + (hi.ln() - lo.ln()) * i as f64 / k as f64)
        .collect();
    let vals: Vec<f64> = xs.iter().map(|x| f(x.exp())).collect();
    let mut best = 0;
    for i in 0..vals.len() {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    let (mut a, mut b) = (xs[best.saturating_sub(1)], xs[(best + 1).min(k)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
    }
    0.5 * (a + b)
}

/// Gauss–Newton refinement of η for one series with the linear coefficients
/// eliminated.
fn refine_eta(t: &[f64], y: &[f64], mut eta: f64, nu: f64) -> f64 {
    let ys = [y.to_vec()];
    let resid = |e: f64| {
        let basis = exp_basis(t, e, nu);
        let (c, _) = project(&basis, &ys);
        DVector::from_column_slice(y) - basis * &c[0]
    };
    let mut r = resid(eta);
    for _ in 0..20 {
        let step = 1e-6 * eta;
        let j = (resid(eta + step) - resid(eta - step)) / (2.0 * step);
        let jj = j.norm_squared();
        if jj == 0.0 {
            break;
        }
        let next = eta - j.dot(&r) / jj;
        if !(next > 0.0) {
            break;
        }
        let rn = resid(next);
        if rn.norm_squared() >= r.norm_squared() {
            break;
        }
        eta = next;
        r = rn;
    }
    eta
}

/// Fits φ₀ ≈ c_∞ + c₁ e^{−ηt} on the tail half-window t ≥ (A+T)/2, allowing for
/// the reflection layer e^{t−T} of the truncation, and checks the limit trace.
pub fn fit_asymptotics(phi: &CuspField, geometry: &CuspGeometry) -> Result<AsymptoticFit> {
    let (phi0, perp) = fiber_decompose(phi);
    let start = tail_window_start(geometry);
    let idx: Vec<usize> = (0..phi.t.len())
        .filter(|&i| phi.t[i] >= start - 1e-12)
        .collect();
    if idx.len() < 8 {
        return Err(JeqError::InvalidInput(format!(
            "tail window holds {} samples, need 8",
            idx.len()
        )));
    }
    let t: Vec<f64> = idx.iter().map(|&i| phi.t[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| phi0[i]).collect();
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let (s_inf, s_target, gap, eta_perp) = limit_trace(&perp, &idx, &t, geometry);
    let limit_gap = limit_gap(geometry, s_inf);
    if hi - lo <= 1e-12 * scale {
        return Err(JeqError::FitDegenerate {
            c_inf: y.iter().sum::<f64>() / y.len() as f64,
        });
    }
    let ys = [y.clone()];
    let sse = |eta: f64| project(&exp_basis(&t, eta, 1.0), &ys).1;
    let eta = minimize_log(&sse, 1e-2, 50.0).exp();
    let eta = refine_eta(&t, &y, eta, 1.0);
    let (c, _) = project(&exp_basis(&t, eta, 1.0), &ys);
    let c = &c[0];
    Ok(AsymptoticFit {
        c_inf: c[0],
        c1: c[1] * (eta * t[0]).exp(),
        eta,
        degenerate: false,
        s_inf,
        s_target,
        gap,
        limit_gap,
        eta_perp,
    })
}

fn limit_gap(geometry: &CuspGeometry, s_inf: f64) -> f64 {
    let n = geometry.n() as f64;
    (geometry.a - geometry.b / (n - s_inf)).abs()
}

fn degenerate_fit(c_inf: f64, phi: &CuspField, geometry: &CuspGeometry) -> AsymptoticFit {
    let (_, perp) = fiber_decompose(phi);
    let start = tail_window_start(geometry);
    let idx: Vec<usize> = (0..phi.t.len())
        .filter(|&i| phi.t[i] >= start - 1e-12)
        .collect();
    let t: Vec<f64> = idx.iter().map(|&i| phi.t[i]).collect();
    let (s_inf, s_target, gap, eta_perp) = limit_trace(&perp, &idx, &t, geometry);
    AsymptoticFit {
        c_inf,
        c1: 0.0,
        eta: f64::INFINITY,
        degenerate: true,
        s_inf,
        s_target,
        gap,
        limit_gap: limit_gap(geometry, s_inf),
        eta_perp,
    }
}

/// Limit trace of χ_D against the limit divisor metric. On a divisor torus the
/// oscillating part is extrapolated to w_∞ by a shared-rate exponential fit and
/// s_∞ = χ_D / (g_D − dd^c w_∞). Returns (s_∞ at the worst point, target, gap, η_⊥).
fn limit_trace(
    perp: &CuspField,
    idx: &[usize],
    t: &[f64],
    geometry: &CuspGeometry,
) -> (f64, f64, f64, Option<f64>) {
    let target = geometry.s_target();
    match &geometry.divisor {
        DivisorModel::Point { s, .. } => (*s, target, (s - target).abs(), None),
        DivisorModel::FlatTorus { grid, g_d, chi_d } => {
            let dl = perp.d_len;
            let ys: Vec<Vec<f64>> = (0..dl)
                .map(|p| idx.iter().map(|&i| perp.at(i, p)).collect())
                .collect();
            let spread = ys.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            let last = perp.t.len() - 1;
            let (w_inf, eta_perp): (Vec<f64>, Option<f64>) = if spread <= 1e-13 {
                ((0..dl).map(|p| perp.at(last, p)).collect(), None)
            } else {
                let sse2 = |eta: f64, nu: f64| project(&exp_basis(t, eta, nu), &ys).1;
                // alternate one-dimensional searches over the decay and reflection rates
                let mut nu = 1.0;
                let mut eta = 1.0;
                for _ in 0..4 {
                    eta = minimize_log(&|e| sse2(e, nu), 1e-2, 50.0).exp();
                    nu = minimize_log(&|v| sse2(eta, v), 1e-2, 50.0).exp();
                }
                let (c, _) = project(&exp_basis(t, eta, nu), &ys);
                (c.iter().map(|ci| ci[0]).collect(), Some(eta))
            };
            let mut worst = target;
            let mut gap: f64 = 0.0;
            for p in 0..dl {
                let gamma = g_d - ddc_d(grid, &w_inf, p);
                let s = chi_d[p] / gamma;
                if (s - target).abs() >= gap {
                    gap = (s - target).abs();
                    worst = s;
                }
            }
            (worst, target, gap, eta_perp)
        }
    }
}

/// Metric and χ samples of the model background for a profile φ at every (t, divisor)
/// node, with the weight ρ = e^t, for the asymptotic deviation check. The fiber
/// direction is the last coordinate; the common factor 2e^{−t} is dropped.
pub fn background_samples(
    phi: &CuspField,
    geometry: &CuspGeometry,
) -> Result<(Vec<Mat>, Vec<Mat>, Vec<f64>)> {
    check_shape(phi, geometry)?;
    let ev = evaluate(geometry, phi, EndRule::Neumann);
    if let Some((node, c)) = ev.degenerate {
        return Err(JeqError::MetricDegenerate { node, c });
    }
    let n = geometry.n();
    let dl = phi.d_len;
    let mut omega = Vec::with_capacity(ev.coeffs.len());
    let mut chi = Vec::with_capacity(ev.coeffs.len());
    let mut rho = Vec::with_capacity(ev.coeffs.len());
    for (k, co) in ev.coeffs.iter().enumerate() {
        let t = phi.t[k / dl];
        let bt = geometry.b_at(t);
        match &geometry.divisor {
            DivisorModel::Point { s, .. } => {
                let mut wd = vec![1.0; n];
                wd[n - 1] = co.c;
                let mut xd = vec![if n > 1 { s / (n - 1) as f64 } else { 0.0 }; n];
                xd[n - 1] = bt;
                omega.push(Mat::from_diag(&wd));
                chi.push(Mat::from_diag(&xd));
            }
            DivisorModel::FlatTorus { .. } => {
                let zeta = (0.5 * co.q).sqrt();
                omega.push(Mat::from_real_rows(2, &[co.gamma, zeta, zeta, co.c]));
                chi.push(Mat::from_diag(&[co.chi, bt]));
            }
        }
        rho.push(t.exp());
    }
    Ok((omega, chi, rho))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(s: f64, beta: f64, mt: usize) -> CuspGeometry {
        CuspGeometry {
            a_cut: 1.0,
            t_max: 16.0,
            mt,
            a: 2.0,
            b: 1.0,
            tail_beta: beta,
            divisor: DivisorModel::Point { n: 2, s },
        }
    }

    #[test]
    fn background_coefficient_examples() {
        assert_eq!(background_coefficients(1.0, 0.0, 2).unwrap(), 1.0);
        assert_eq!(background_coefficients(1.0, 1.0, 2).unwrap(), 2.0);
        assert!(matches!(
            background_coefficients(1.0, 2.0, 2),
            Err(JeqError::DegenerateClass(_))
        ));
    }

    #[test]
    fn constant_profiles() {
        let g = point(1.5, 0.0, 50);
        let f = CuspField::from_fn(&g, |_, _| 0.7);
        assert!(reduced_residual(&f, &g).unwrap().sup_norm() < 1e-13);
        let g = point(1.2, 0.0, 50);
        let r = reduced_residual(&f, &g).unwrap();
        assert!(r
            .values
            .iter()
            .all(|v| (v - (1.0 - 0.8 * 2.0)).abs() < 1e-12));
    }

    #[test]
    fn degenerate_fiber_coefficient() {
        let g = point(1.5, 0.0, 50);
        let f = CuspField::from_fn(&g, |t, _| -3.0 * t * t);
        assert!(matches!(
            reduced_residual(&f, &g),
            Err(JeqError::MetricDegenerate { .. })
        ));
    }

    #[test]
    fn product_boundary_zero() {
        let g = point(1.5, 0.0, 100);
        let p = solve_cusp_bvp(&g, 0.0, &CuspSolveOptions::default()).unwrap();
        assert!(p.phi.sup_norm() < 1e-14);
        assert!(p.fit.degenerate);
        assert!(p.fit.eta.is_infinite());
    }

    #[test]
    fn decaying_profile_fit() {
        let g = point(1.5, 0.5, 301);
        let p = solve_cusp_bvp(&g, 0.3, &CuspSolveOptions::default()).unwrap();
        assert!(p.residual_sup <= 1e-11);
        assert!((p.fit.eta - 1.0).abs() < 0.2, "eta {}", p.fit.eta);
        assert!(!p.non_product_limit);
    }

    #[test]
    fn mismatched_trace_is_flagged() {
        let g = point(1.2, 0.0, 200);
        let p = solve_cusp_bvp(&g, 0.0, &CuspSolveOptions::default()).unwrap();
        assert!(p.non_product_limit);
        let mid = p.c.len() / 2;
        assert!((p.c[mid] - 1.0 / 0.8).abs() < 1e-9);
        let shifts = default_shifts(&p.phi, 2.0);
        let rep = translation_sequence_test(&p.phi, &shifts, 2.0).unwrap();
        assert!(!rep.decaying);
    }

    #[test]
    fn synthetic_fit() {
        let g = point(1.5, 0.0, 400);
        let f = CuspField::from_fn(&g, |t, _| 2.0 + 0.1 * (-0.5 * t).exp());
        let fit = fit_asymptotics(&f, &g).unwrap();
        assert!((fit.c_inf - 2.0).abs() < 1e-8, "{fit:?}");
        assert!((fit.eta - 0.5).abs() < 1e-8, "{fit:?}");
        assert!((fit.c1 - 0.1).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn flat_profile_fit_is_degenerate() {
        let g = point(1.5, 0.0, 100);
        let f = CuspField::from_fn(&g, |_, _| 0.25);
        assert!(
            matches!(fit_asymptotics(&f, &g), Err(JeqError::FitDegenerate { c_inf }) if (c_inf - 0.25).abs() < 1e-15)
        );
    }

    #[test]
    fn tilde_operator_examples() {
        let g = point(1.5, 0.0, 801);
        let kappa = 0.25;
        let u = CuspField::from_fn(&g, |t, _| (-t).exp());
        let r = tilde_delta0_apply(&u, &g, kappa).unwrap();
        let err =
            r.t.iter()
                .zip(&r.values)
                .map(|(t, v)| (v - 2.0 * kappa * (-t).exp()).abs())
                .fold(0.0, f64::max);
        assert!(err < 2e-4, "{err}");
    }

    #[test]
    fn greens_zero_and_closed_form() {
        let t: Vec<f64> = (0..2001).map(|i| 1.0 + i as f64 * 0.01).collect();
        let v = greens_solve(&vec![0.0; t.len()], &t, 0.5, TailMode::Exponential).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        let kappa = 0.7;
        let g: Vec<f64> = t.iter().map(|s| kappa * (-s).exp()).collect();
        let v = greens_solve(&g, &t, kappa, TailMode::Exponential).unwrap();
        assert_eq!(v[0], 0.0);
        let a = t[0];
        let err = t
            .iter()
            .zip(&v)
            .map(|(s, x)| (x - 0.5 * ((-s).exp() - (-a).exp())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
        let bad: Vec<f64> = t.iter().map(|s| *s).collect();
        assert!(matches!(
            greens_solve(&bad, &t, 1.0, TailMode::Exponential),
            Err(JeqError::TailFitFailed(_))
        ));
    }

    #[test]
    fn translation_of_product_is_zero() {
        let g = point(1.5, 0.0, 200);
        let f = CuspField::from_fn(&g, |_, _| 0.3);
        let rep = translation_sequence_test(&f, &default_shifts(&f, 2.0), 2.0).unwrap();
        assert!(rep.differences.iter().all(|d| *d == 0.0));
        assert!(rep.monotone && rep.decaying);
        assert!(matches!(
            translation_sequence_test(&f, &[15.0], 2.0),
            Err(JeqError::WindowTooShort { .. })
        ));
    }
}
