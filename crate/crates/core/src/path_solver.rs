//! The two-parameter continuity path
//!
//! ```text
//! ω_φ^n = e^{εφ} ω_φ^{n−1} ∧ χ_t,   χ_t = tχ + (1−t)ω,
//! ```
//!
//! on a normalized torus pair, written in trace form
//! R(φ) = tr_{ω_φ} χ_t − n e^{−εφ}. Each (ε, t) is solved by damped Newton with a
//! Jacobi-preconditioned GMRES inner solve; `march_path` continues in t at ε₀ and
//! then halves ε down to a floor.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{JeqError, Result};
use crate::geom_core::{
    complex_gradient_at, complex_hessian_at, contract_second_differences,
    hessian_contraction_weights, mixed_volume, pair_index, second_difference_center, trace_at,
    volume, HermitianField, Mat, PotentialField, TraceDiagnostics,
};
use crate::krylov::{gmres, KrylovOptions};
use crate::subsolution::subsolution_slack;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathConfig {
    pub eps0: f64,
    pub eps_floor: f64,
    pub t_step: f64,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Step multiplier applied on each rejected line-search trial.
    pub backtrack: f64,
    /// Smallest accepted damping factor.
    pub min_step: f64,
    pub delta0_monitor: f64,
    /// Smallest t-increment before continuation gives up.
    pub min_dt: f64,
    /// Newton steps must keep the smallest eigenvalue of ω_φ above this floor.
    pub positivity_floor: f64,
    pub krylov_rel_tol: f64,
    pub krylov_restart: usize,
    /// Defaults to 10·N^{2n} when absent.
    pub krylov_max_iters: Option<usize>,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            eps0: 0.5,
            eps_floor: 1e-4,
            t_step: 0.25,
            newton_tol: 1e-10,
            max_newton_iters: 50,
            backtrack: 0.5,
            min_step: 1.0 / 1024.0,
            delta0_monitor: 0.1,
            min_dt: 1e-6,
            positivity_floor: 1e-8,
            krylov_rel_tol: 1e-8,
            krylov_restart: 50,
            krylov_max_iters: None,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(JeqError::InvalidInput(m.to_string()));
        if !(self.eps_floor > 0.0) {
            return bad("eps_floor must be positive");
        }
        if !(self.eps0 > self.eps_floor) {
            return bad("eps0 must exceed eps_floor");
        }
        if !(self.t_step > 0.0 && self.t_step <= 1.0) {
            return bad("t_step must lie in (0, 1]");
        }
        if !(self.newton_tol > 0.0) {
            return bad("newton_tol must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return bad("min_step must lie in (0, 1]");
        }
        if self.max_newton_iters == 0 || self.krylov_restart == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

/// A pair rescaled so that ∫ω^n = ∫ω^{n−1}∧χ = 1.
#[derive(Clone, Debug)]
pub struct NormalizedPair {
    pub omega: HermitianField,
    pub chi: HermitianField,
    /// C = ∫ω^n / ∫ω^{n−1}∧χ of the input pair.
    pub c: f64,
    pub omega_scale: f64,
    pub chi_scale: f64,
}

pub fn normalize_pair(omega: &HermitianField, chi: &HermitianField) -> Result<NormalizedPair> {
    omega.check_positive(0.0)?;
    chi.check_positive(0.0)?;
    let n = omega.grid.complex_dim() as f64;
    let v = volume(omega);
    let p = mixed_volume(omega, chi);
    let alpha = v.powf(-1.0 / n);
    let beta = 1.0 / (alpha.powf(n - 1.0) * p);
    Ok(NormalizedPair {
        omega: omega.scale(alpha),
        chi: chi.scale(beta),
        c: v / p,
        omega_scale: alpha,
        chi_scale: beta,
    })
}

/// Per-point data of ω_φ needed by the residual and the linearization.
struct Evaluation {
    residual: Vec<f64>,
    metric: Vec<Mat>,
    min_eig: f64,
    min_eig_at: usize,
}

fn chi_t_at(omega: &Mat, chi: &Mat, t: f64) -> Mat {
    chi.scale(t) + omega.scale(1.0 - t)
}

fn evaluate(
    phi: &PotentialField,
    eps: f64,
    t: f64,
    omega: &HermitianField,
    chi: &HermitianField,
) -> Evaluation {
    let grid = &phi.grid;
    let n = grid.complex_dim() as f64;
    let rows: Vec<(f64, Mat, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let g = omega.values[i] + complex_hessian_at(grid, &phi.values, i);
            let e = g.min_eigenvalue();
            let r = if e > 0.0 {
                let x = chi_t_at(&omega.values[i], &chi.values[i], t);
                trace_at(&g, &x) - n * (-eps * phi.values[i]).exp()
            } else {
                f64::NAN
            };
            (r, g, e)
        })
        .collect();
    let mut min_eig = f64::INFINITY;
    let mut min_eig_at = 0;
    let mut residual = Vec::with_capacity(rows.len());
    let mut metric = Vec::with_capacity(rows.len());
    for (i, (r, g, e)) in rows.into_iter().enumerate() {
        if e < min_eig {
            min_eig = e;
            min_eig_at = i;
        }
        residual.push(r);
        metric.push(g);
    }
    Evaluation {
        residual,
        metric,
        min_eig,
        min_eig_at,
    }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// R(φ) = tr_{ω_φ} χ_t − n e^{−εφ}.
pub fn residual(
    phi: &PotentialField,
    eps: f64,
    t: f64,
    omega: &HermitianField,
    chi: &HermitianField,
) -> Result<PotentialField> {
    let ev = evaluate(phi, eps, t, omega, chi);
    if !(ev.min_eig > 0.0) {
        return Err(JeqError::NonPositiveMetric {
            index: ev.min_eig_at,
            min_eig: ev.min_eig,
        });
    }
    Ok(PotentialField {
        grid: phi.grid.clone(),
        values: ev.residual,
    })
}

/// The linearized operator frozen at φ: L u = tr(K dd^c u) − nε e^{−εφ} u with
/// K = g_φ^{-1} χ_t g_φ^{-1}.
struct Linearization {
    weights: Vec<f64>,
    npairs: usize,
    zeroth: Vec<f64>,
    diag: Vec<f64>,
}

impl Linearization {
    fn new(
        phi: &PotentialField,
        metric: &[Mat],
        eps: f64,
        t: f64,
        omega: &HermitianField,
        chi: &HermitianField,
    ) -> Self {
        let grid = &phi.grid;
        let d = grid.real_dim();
        let npairs = d * (d + 1) / 2;
        let n = grid.complex_dim() as f64;
        let centers: Vec<f64> = (0..d)
            .map(|a| second_difference_center(grid, a, a))
            .collect();
        let per_point: Vec<(Vec<f64>, f64, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let inv = metric[i].inverse().expect("positive metric");
                let x = chi_t_at(&omega.values[i], &chi.values[i], t);
                let k = (inv * x * inv).hermitian_part();
                let w = hessian_contraction_weights(&k);
                let z = n * eps * (-eps * phi.values[i]).exp();
                let mut dg = -z;
                for a in 0..d {
                    dg += w[pair_index(d, a, a)] * centers[a];
                }
                (w, z, dg)
            })
            .collect();
        let mut weights = Vec::with_capacity(npairs * grid.len());
        let mut zeroth = Vec::with_capacity(grid.len());
        let mut diag = Vec::with_capacity(grid.len());
        for (w, z, dg) in per_point {
            weights.extend_from_slice(&w);
            zeroth.push(z);
            diag.push(dg);
        }
        Linearization {
            weights,
            npairs,
            zeroth,
            diag,
        }
    }

    fn apply(&self, grid: &crate::geom_core::Grid, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let w = &self.weights[i * self.npairs..(i + 1) * self.npairs];
            *o = contract_second_differences(grid, u, i, w) - self.zeroth[i] * u[i];
        });
    }
}

/// L u at φ.
pub fn linearized_apply(
    u: &PotentialField,
    phi: &PotentialField,
    eps: f64,
    t: f64,
    omega: &HermitianField,
    chi: &HermitianField,
) -> Result<PotentialField> {
    let ev = evaluate(phi, eps, t, omega, chi);
    if !(ev.min_eig > 0.0) {
        return Err(JeqError::NonPositiveMetric {
            index: ev.min_eig_at,
            min_eig: ev.min_eig,
        });
    }
    let lin = Linearization::new(phi, &ev.metric, eps, t, omega, chi);
    let mut out = vec![0.0; u.values.len()];
    lin.apply(&u.grid, &u.values, &mut out);
    Ok(PotentialField {
        grid: u.grid.clone(),
        values: out,
    })
}

/// Runtime diagnostics of one accepted state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateDiagnostics {
    pub trace: TraceDiagnostics,
    pub phi_sup: f64,
    pub eps_phi_sup: f64,
    /// (∫ φ² ω^n)^{1/2}
    pub phi_l2: f64,
    /// ∫ |dφ|²_ω ω^n, with |dφ|² normalized to the Euclidean gradient when ω = I.
    pub gradient_energy: f64,
    /// sup tr_{χ_t} ω_φ
    pub tr_chi_omega_sup: f64,
    pub osc_phi: f64,
}

#[derive(Clone, Debug)]
pub struct PathState {
    pub eps: f64,
    pub t: f64,
    pub phi: PotentialField,
    pub residual_sup: f64,
    pub newton_iters: usize,
    pub diagnostics: StateDiagnostics,
}

fn diagnostics(
    phi: &PotentialField,
    ev: &Evaluation,
    eps: f64,
    t: f64,
    omega: &HermitianField,
    chi: &HermitianField,
) -> StateDiagnostics {
    let grid = &phi.grid;
    let n = grid.complex_dim();
    let dv = grid.cell_volume();
    let rows: Vec<(f64, f64, f64, f64, f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let g = &ev.metric[i];
            let x = chi_t_at(&omega.values[i], &chi.values[i], t);
            let tr = trace_at(g, &x);
            let e = g.eigenvalues_hermitian();
            let tr_chi = trace_at(&x, g);
            let w0 = omega.values[i];
            let vol = w0.det().re;
            let grad = complex_gradient_at(grid, &phi.values, i);
            let inv0 = w0.inverse().expect("positive background");
            let mut q = 0.0;
            for j in 0..n {
                for k in 0..n {
                    q += (grad[k].conj() * inv0.get(k, j) * grad[j]).re;
                }
            }
            (
                tr,
                e[0],
                e[n - 1],
                tr_chi,
                vol * phi.values[i] * phi.values[i],
                4.0 * q * vol,
            )
        })
        .collect();
    let mut d = TraceDiagnostics {
        min_trace: f64::INFINITY,
        max_trace: f64::NEG_INFINITY,
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        residual_sup: sup_abs(&ev.residual),
    };
    let (mut l2, mut ge, mut trc) = (0.0, 0.0, f64::NEG_INFINITY);
    for (tr, emin, emax, tr_chi, p2, g2) in rows {
        d.min_trace = d.min_trace.min(tr);
        d.max_trace = d.max_trace.max(tr);
        d.min_eigenvalue = d.min_eigenvalue.min(emin);
        d.max_eigenvalue = d.max_eigenvalue.max(emax);
        trc = trc.max(tr_chi);
        l2 += p2;
        ge += g2;
    }
    let sup = phi.sup_norm();
    StateDiagnostics {
        trace: d,
        phi_sup: sup,
        eps_phi_sup: eps * sup,
        phi_l2: (l2 * dv).sqrt(),
        gradient_energy: ge * dv,
        tr_chi_omega_sup: trc,
        osc_phi: phi.max() - phi.min(),
    }
}

/// Damped Newton solve of R(φ) = 0 at fixed (ε, t), starting from `phi_init`.
pub fn newton_solve(
    phi_init: &PotentialField,
    eps: f64,
    t: f64,
    omega: &HermitianField,
    chi: &HermitianField,
    config: &PathConfig,
) -> Result<PathState> {
    let grid = phi_init.grid.clone();
    let mut phi = phi_init.clone();
    let mut ev = evaluate(&phi, eps, t, omega, chi);
    if !(ev.min_eig >= config.positivity_floor) {
        return Err(JeqError::NewtonStalled {
            residual: f64::NAN,
            reason: format!(
                "initial metric not positive at point {} (min eigenvalue {:e})",
                ev.min_eig_at, ev.min_eig
            ),
        });
    }
    let max_krylov = config.krylov_max_iters.unwrap_or(10 * grid.len());
    let opts = KrylovOptions {
        rel_tol: config.krylov_rel_tol,
        max_iters: max_krylov,
        restart: config.krylov_restart,
    };
    let mut iters = 0;
    loop {
        let rsup = sup_abs(&ev.residual);
        if rsup <= config.newton_tol {
            let diagnostics = diagnostics(&phi, &ev, eps, t, omega, chi);
            return Ok(PathState {
                eps,
                t,
                phi,
                residual_sup: rsup,
                newton_iters: iters,
                diagnostics,
            });
        }
        if iters >= config.max_newton_iters {
            return Err(JeqError::MaxIters { residual: rsup });
        }
        let lin = Linearization::new(&phi, &ev.metric, eps, t, omega, chi);
        // (−L) x = R, then φ ← φ − λx
        let apply = |u: &[f64], out: &mut [f64]| {
            lin.apply(&grid, u, out);
            out.iter_mut().for_each(|v| *v = -*v);
        };
        let precond = |v: &[f64], out: &mut [f64]| {
            for ((o, vi), di) in out.iter_mut().zip(v).zip(&lin.diag) {
                *o = vi / (-di);
            }
        };
        let mut x = vec![0.0; grid.len()];
        gmres(apply, precond, &ev.residual, &mut x, opts)?;
        let mut lambda = 1.0;
        loop {
            let values: Vec<f64> = phi
                .values
                .iter()
                .zip(&x)
                .map(|(p, d)| p - lambda * d)
                .collect();
            let trial = PotentialField {
                grid: grid.clone(),
                values,
            };
            let tev = evaluate(&trial, eps, t, omega, chi);
            let ok = tev.min_eig >= config.positivity_floor && sup_abs(&tev.residual) < rsup;
            if ok {
                phi = trial;
                ev = tev;
                break;
            }
            lambda *= config.backtrack;
            if lambda < config.min_step {
                return Err(JeqError::NewtonStalled {
                    residual: rsup,
                    reason: "no admissible damped step".into(),
                });
            }
        }
        iters += 1;
    }
}

/// One row of the per-step trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub eps: f64,
    pub t: f64,
    pub newton_iters: usize,
    pub residual_sup: f64,
    pub phi_sup: f64,
    pub phi_l2: f64,
    pub eps_phi_sup: f64,
    pub tr_chi_omega_sup: f64,
    pub osc_phi: f64,
    pub gradient_energy: f64,
    pub delta0_ok: bool,
    pub growth_bound_ok: bool,
}

/// Least-squares fit of log sup tr_χ ω_φ ≈ log C + A · osc φ over accepted steps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub c: f64,
    pub a: f64,
}

#[derive(Clone, Debug)]
pub struct PathRun {
    pub final_state: PathState,
    pub trace: Vec<StepRecord>,
    /// Solutions at t = 1 for each ε level, in schedule order.
    pub eps_levels: Vec<(f64, PotentialField)>,
    /// Mean-zero ε → 0 extrapolation from the last levels.
    pub extrapolated: PotentialField,
    /// Polynomial degree in ε of the extrapolation (levels used minus one).
    pub extrapolation_order: usize,
    pub growth_fit: GrowthFit,
    pub delta0_ok_all: bool,
    pub subsolution_delta: f64,
    pub warnings: Vec<String>,
}

fn fit_growth(records: &[StepRecord]) -> GrowthFit {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.tr_chi_omega_sup > 0.0)
        .map(|r| (r.osc_phi, r.tr_chi_omega_sup.ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = if sxx > 1e-24 { sxy / sxx } else { 0.0 };
    GrowthFit {
        c: (my - a * mx).exp(),
        a,
    }
}

/// Value at ε = 0 of the interpolating polynomial through (ε_i, φ_i), per point.
pub fn extrapolate_to_zero(levels: &[(f64, &PotentialField)]) -> PotentialField {
    let grid = levels[0].1.grid.clone();
    let k = levels.len();
    let values = (0..grid.len())
        .map(|p| {
            let mut acc = 0.0;
            for i in 0..k {
                let mut li = 1.0;
                for j in 0..k {
                    if i != j {
                        li *= (0.0 - levels[j].0) / (levels[i].0 - levels[j].0);
                    }
                }
                acc += li * levels[i].1.values[p];
            }
            acc
        })
        .collect();
    PotentialField { grid, values }
}

fn record(step: usize, s: &PathState, config: &PathConfig) -> StepRecord {
    let d = &s.diagnostics;
    StepRecord {
        step,
        eps: s.eps,
        t: s.t,
        newton_iters: s.newton_iters,
        residual_sup: s.residual_sup,
        phi_sup: d.phi_sup,
        phi_l2: d.phi_l2,
        eps_phi_sup: d.eps_phi_sup,
        tr_chi_omega_sup: d.tr_chi_omega_sup,
        osc_phi: d.osc_phi,
        gradient_energy: d.gradient_energy,
        delta0_ok: d.eps_phi_sup <= config.delta0_monitor,
        growth_bound_ok: true,
    }
}

fn recoverable(e: &JeqError) -> bool {
    matches!(
        e,
        JeqError::NewtonStalled { .. }
            | JeqError::MaxIters { .. }
            | JeqError::LinearSolveFailed { .. }
    )
}

/// Continuation in t at ε₀, then ε-halving at t = 1 down to ε_floor.
/// The pair is expected to be normalized.
pub fn march_path(
    omega: &HermitianField,
    chi: &HermitianField,
    config: &PathConfig,
) -> Result<PathRun> {
    config.validate()?;
    let mut warnings = Vec::new();
    let slack = subsolution_slack(omega, chi)?;
    if !slack.is_strict() {
        warnings.push(format!(
            "pair is not a strict subsolution (delta_max = {})",
            slack.delta_max
        ));
    }
    let v = volume(omega);
    let p = mixed_volume(omega, chi);
    if ((v - p) / v).abs() > 1e-10 {
        warnings.push(format!(
            "pair is not normalized: volume {v}, mixed volume {p}"
        ));
    }
    let grid = omega.grid.clone();
    let mut trace = Vec::new();
    let mut state = newton_solve(
        &PotentialField::zeros(&grid),
        config.eps0,
        0.0,
        omega,
        chi,
        config,
    )?;
    trace.push(record(0, &state, config));

    let mut dt = config.t_step;
    while state.t < 1.0 {
        let t_try = (state.t + dt).min(1.0);
        match newton_solve(&state.phi, config.eps0, t_try, omega, chi, config) {
            Ok(s) => {
                state = s;
                trace.push(record(trace.len(), &state, config));
                dt = (dt * 2.0).min(config.t_step);
            }
            Err(e) if recoverable(&e) => {
                dt *= 0.5;
                if dt < config.min_dt {
                    return Err(JeqError::ContinuationFailed { t: state.t, dt });
                }
            }
            Err(e) => return Err(e),
        }
    }

    let mut levels = vec![(state.eps, state.phi.clone())];
    while state.eps > config.eps_floor {
        let eps = (state.eps * 0.5).max(config.eps_floor);
        state = newton_solve(&state.phi, eps, 1.0, omega, chi, config)?;
        trace.push(record(trace.len(), &state, config));
        levels.push((eps, state.phi.clone()));
    }

    let used = levels.len().min(3);
    let tail: Vec<(f64, &PotentialField)> = levels[levels.len() - used..]
        .iter()
        .map(|(e, f)| (*e, f))
        .collect();
    let mut extrapolated = extrapolate_to_zero(&tail);
    let mean = extrapolated.mean();
    extrapolated.values.iter_mut().for_each(|v| *v -= mean);

    let growth_fit = fit_growth(&trace);
    for r in trace.iter_mut() {
        r.growth_bound_ok =
            r.tr_chi_omega_sup <= growth_fit.c * (growth_fit.a * r.osc_phi).exp() * (1.0 + 1e-12);
    }
    let delta0_ok_all = trace.iter().all(|r| r.delta0_ok);
    Ok(PathRun {
        final_state: state,
        trace,
        eps_levels: levels,
        extrapolated,
        extrapolation_order: used - 1,
        growth_fit,
        delta0_ok_all,
        subsolution_delta: slack.delta_max,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::{ddc, Grid};

    fn perturbed_pair(n: usize, points: usize, amp: f64) -> (HermitianField, HermitianField) {
        let g = Grid::new(n, points).unwrap();
        let omega = HermitianField::identity(&g);
        let chi = omega.add(&ddc(&PotentialField::from_fn(&g, |x| amp * x[0].cos())));
        let p = normalize_pair(&omega, &chi).unwrap();
        (p.omega, p.chi)
    }

    #[test]
    fn normalization_examples() {
        let g = Grid::with_periods(2, 8, vec![1.0; 4]).unwrap();
        let id = HermitianField::identity(&g);
        let p = normalize_pair(&id, &id).unwrap();
        assert!((p.c - 1.0).abs() < 1e-14);
        assert!((p.omega_scale - p.chi_scale).abs() < 1e-14);
        let p = normalize_pair(&id, &id.scale(2.0)).unwrap();
        assert!((p.c - 0.5).abs() < 1e-14);
        assert!((volume(&p.omega) - 1.0).abs() < 1e-13);
        assert!((mixed_volume(&p.omega, &p.chi) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn residual_vanishes_at_t_zero() {
        let (omega, chi) = perturbed_pair(2, 8, 0.1);
        let r = residual(&PotentialField::zeros(&omega.grid), 0.5, 0.0, &omega, &chi).unwrap();
        assert!(r.sup_norm() < 1e-14);
    }

    #[test]
    fn linearization_of_constants() {
        let (omega, chi) = perturbed_pair(2, 8, 0.1);
        let phi = PotentialField::from_fn(&omega.grid, |x| 0.05 * x[1].sin());
        let one = PotentialField::constant(&omega.grid, 1.0);
        let eps = 0.3;
        let lu = linearized_apply(&one, &phi, eps, 0.7, &omega, &chi).unwrap();
        for (l, p) in lu.values.iter().zip(&phi.values) {
            assert!((l + 2.0 * eps * (-eps * p).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn linearization_is_mean_free_for_constant_coefficients() {
        let g = Grid::new(2, 8).unwrap();
        let omega = HermitianField::constant(&g, Mat::from_real_rows(2, &[1.5, 0.2, 0.2, 1.0]));
        let chi = HermitianField::constant(&g, Mat::from_real_rows(2, &[1.0, -0.1, -0.1, 0.8]));
        let u = PotentialField::from_fn(&g, |x| {
            (x[0] - x[3]).sin() + 0.5 * (x[1] + 2.0 * x[2]).cos() + 0.1 * x[0]
        });
        let lu = linearized_apply(&u, &PotentialField::zeros(&g), 0.0, 1.0, &omega, &chi).unwrap();
        assert!(lu.mean().abs() < 1e-13);
    }

    #[test]
    fn newton_trivial_start() {
        let (omega, chi) = perturbed_pair(2, 8, 0.1);
        let cfg = PathConfig::default();
        let s = newton_solve(
            &PotentialField::zeros(&omega.grid),
            0.5,
            0.0,
            &omega,
            &chi,
            &cfg,
        )
        .unwrap();
        assert!(s.newton_iters <= 1);
        assert!(s.phi.sup_norm() == 0.0);
    }

    #[test]
    fn newton_rejects_non_positive_start() {
        let (omega, chi) = perturbed_pair(1, 8, 0.1);
        let bad = PotentialField::from_fn(&omega.grid, |x| -20.0 * x[0].cos());
        let r = newton_solve(&bad, 0.5, 1.0, &omega, &chi, &PathConfig::default());
        assert!(matches!(r, Err(JeqError::NewtonStalled { .. })));
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let g = Grid::new(1, 8).unwrap();
        let f = |e: f64| PotentialField::constant(&g, 1.0 + 2.0 * e - 3.0 * e * e);
        let (a, b, c) = (f(0.5), f(0.25), f(0.1));
        let z = extrapolate_to_zero(&[(0.5, &a), (0.25, &b), (0.1, &c)]);
        assert!(z.values.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn config_validation() {
        let mut c = PathConfig::default();
        assert!(c.validate().is_ok());
        c.eps0 = 1e-5;
        assert!(c.validate().is_err());
        let c = PathConfig {
            t_step: 0.0,
            ..PathConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
