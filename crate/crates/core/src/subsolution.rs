//! Pointwise subsolution certificate n ω^{n−1} ≥ (1+δ)(n−1) ω^{n−2} ∧ χ and the
//! weighted deviation of ω^n / (ω^{n−1} ∧ χ) from its normalized constant.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{JeqError, Result};
use crate::geom_core::{
    generalized_eigenvalues_at, mixed_discriminant, HermitianField, Mat, PotentialField,
};

/// Largest admissible δ and the grid point that limits it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlackReport {
    /// n / sup s* − 1, where s* = max_i Σ_{k≠i} μ_k. Infinite when n = 1.
    pub delta_max: f64,
    pub worst_point: usize,
    pub s_star_sup: f64,
}

impl SlackReport {
    /// A borderline certificate (δ_max = 0) does not count as strict.
    pub fn is_strict(&self) -> bool {
        self.delta_max > 0.0
    }
}

/// max_i Σ_{k≠i} μ_k for the eigenvalues of χ relative to ω at one point.
pub fn s_star_at(omega: &Mat, chi: &Mat) -> Option<f64> {
    let mu = generalized_eigenvalues_at(chi, omega)?;
    let total: f64 = mu.iter().sum();
    Some(total - mu[0])
}

pub fn subsolution_slack(omega: &HermitianField, chi: &HermitianField) -> Result<SlackReport> {
    let n = omega.grid.complex_dim();
    let s: Vec<f64> = omega
        .values
        .par_iter()
        .zip(chi.values.par_iter())
        .enumerate()
        .map(|(i, (g, x))| {
            s_star_at(g, x).ok_or(JeqError::NonPositiveMetric {
                index: i,
                min_eig: g.min_eigenvalue(),
            })
        })
        .collect::<Result<_>>()?;
    let mut worst = 0;
    for (i, v) in s.iter().enumerate() {
        if *v > s[worst] {
            worst = i;
        }
    }
    let sup = s[worst];
    let delta_max = if n == 1 || sup <= 0.0 {
        f64::INFINITY
    } else {
        n as f64 / sup - 1.0
    };
    Ok(SlackReport {
        delta_max,
        worst_point: worst,
        s_star_sup: sup,
    })
}

/// Whether (ω, tχ + (1−t)ω) satisfies the subsolution condition with constant δ.
pub fn path_subsolution_check(
    omega: &HermitianField,
    chi: &HermitianField,
    t: f64,
    delta: f64,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&t) {
        return Err(JeqError::InvalidInput(format!("t = {t} outside [0, 1]")));
    }
    let chi_t = chi.combine(t, omega, 1.0 - t);
    Ok(subsolution_slack(omega, &chi_t)?.delta_max >= delta)
}

/// ω^n / (ω^{n−1} ∧ χ) at one point, from mixed discriminants.
pub fn form_quotient_at(omega: &Mat, chi: &Mat) -> f64 {
    let n = omega.dim();
    let mut args = vec![*omega; n];
    args[n - 1] = *chi;
    omega.det().re / mixed_discriminant(&args).re
}

/// sup |ω^n/(ω^{n−1}∧χ) − 1| · ρ^η over matching samples.
pub fn asymptotic_deviation_samples(
    omega: &[Mat],
    chi: &[Mat],
    rho: &[f64],
    eta: f64,
) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for (i, ((g, x), r)) in omega.iter().zip(chi).zip(rho).enumerate() {
        if !(*r > 0.0) {
            return Err(JeqError::NonPositiveWeight { index: i });
        }
        let e = g.min_eigenvalue();
        if !(e > 0.0) {
            return Err(JeqError::NonPositiveMetric {
                index: i,
                min_eig: e,
            });
        }
        let dev = (form_quotient_at(g, x) - 1.0).abs() * r.powf(eta);
        sup = sup.max(dev);
    }
    Ok(sup)
}

pub fn asymptotic_deviation(
    omega: &HermitianField,
    chi: &HermitianField,
    rho: &PotentialField,
    eta: f64,
) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(JeqError::InvalidInput(format!(
            "decay exponent {eta} must be non-negative"
        )));
    }
    asymptotic_deviation_samples(&omega.values, &chi.values, &rho.values, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::{ddc, Grid};

    #[test]
    fn identity_pair_has_unit_slack() {
        let g = Grid::new(2, 8).unwrap();
        let id = HermitianField::identity(&g);
        let r = subsolution_slack(&id, &id).unwrap();
        assert!((r.delta_max - 1.0).abs() < 1e-14);
        assert!((r.s_star_sup - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_borderline_pair() {
        let g = Grid::new(2, 8).unwrap();
        let omega = HermitianField::constant(&g, Mat::from_diag(&[1.0, 2.0]));
        let chi = HermitianField::constant(&g, Mat::from_diag(&[2.0, 2.0]));
        let r = subsolution_slack(&omega, &chi).unwrap();
        assert!(r.delta_max.abs() < 1e-14);
        assert!(!r.is_strict());
    }

    #[test]
    fn worst_point_attains_the_sup() {
        let g = Grid::new(1, 8).unwrap();
        let omega = HermitianField::identity(&g);
        let chi = omega.add(&ddc(&PotentialField::from_fn(&g, |x| 0.3 * x[0].cos())));
        let r = subsolution_slack(&omega, &chi).unwrap();
        // n = 1: no constraint
        assert!(r.delta_max.is_infinite());
    }

    #[test]
    fn path_check_endpoints() {
        let g = Grid::new(2, 8).unwrap();
        let omega = HermitianField::identity(&g);
        let chi = omega.add(&ddc(&PotentialField::from_fn(&g, |x| {
            0.2 * x[0].cos() + 0.1 * x[3].sin()
        })));
        assert!(path_subsolution_check(&omega, &chi, 0.0, 1.0).unwrap());
        assert!(!path_subsolution_check(&omega, &chi, 0.0, 1.0 + 1e-9).unwrap());
        let d = subsolution_slack(&omega, &chi).unwrap().delta_max;
        assert!(path_subsolution_check(&omega, &chi, 1.0, d).unwrap());
        assert!(!path_subsolution_check(&omega, &chi, 1.0, d + 1e-9).unwrap());
        assert!(path_subsolution_check(&omega, &chi, 1.5, 0.0).is_err());
    }

    #[test]
    fn deviation_of_exact_solution_is_zero_and_weight_checked() {
        let g = Grid::new(2, 8).unwrap();
        let id = HermitianField::identity(&g);
        let rho = PotentialField::constant(&g, 2.0);
        assert!(asymptotic_deviation(&id, &id, &rho, 1.0).unwrap() < 1e-15);
        let chi = id.scale(1.1);
        let plain = asymptotic_deviation(&id, &chi, &rho, 0.0).unwrap();
        assert!((plain - (1.0 - 1.0 / 1.1)).abs() < 1e-14);
        let bad = PotentialField::constant(&g, 0.0);
        assert!(matches!(
            asymptotic_deviation(&id, &chi, &bad, 1.0),
            Err(JeqError::NonPositiveWeight { .. })
        ));
    }
}
