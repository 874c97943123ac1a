//! Energy functionals on the torus model: the Aubin–Mabuchi type energy E, its
//! twisted version E^T, relative entropy and the K-energy decomposition
//! M = (R̄/(n+1)) E − E^{Ric} + H.
//!
//! Top forms are densities relative to the coordinate measure, normalized so that
//! the density of ω^n is det ω and mixed products are mixed discriminants.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{JeqError, Result};
use crate::geom_core::{
    first_difference, omega_phi, ricci, top_form_density, trace_at, HermitianField, Mat,
    PotentialField,
};

fn check_positive(f: &HermitianField) -> Result<()> {
    f.check_positive(0.0)
}

/// Density of Σ_j A^{[n+extra−1−j]} ∧ B^{[j]} (∧ T when given), summed over j.
fn mixed_sum(a: &Mat, b: &Mat, t: Option<&Mat>) -> f64 {
    let n = a.dim();
    let slots = if t.is_some() { n - 1 } else { n };
    let mut total = 0.0;
    for j in 0..=slots {
        let mut args = Vec::with_capacity(n);
        args.extend(std::iter::repeat(*a).take(slots - j));
        args.extend(std::iter::repeat(*b).take(j));
        if let Some(t) = t {
            args.push(*t);
        }
        total += top_form_density(&args);
    }
    total
}

/// E(φ) = ∫ φ Σ_{j=0}^n ω_φ^{n−j} ∧ ω^j.
pub fn energy_e(phi: &PotentialField, omega: &HermitianField) -> Result<f64> {
    check_positive(omega)?;
    let g = omega_phi(omega, phi);
    check_positive(&g)?;
    let s: f64 = (0..phi.values.len())
        .into_par_iter()
        .map(|i| phi.values[i] * mixed_sum(&g.values[i], &omega.values[i], None))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(s * phi.grid.cell_volume())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwistedEnergy {
    pub value: f64,
    /// Whether T passed the discrete closedness test ∂_k T_{ij̄} = ∂_i T_{kj̄}.
    pub closed: bool,
}

/// sup over points and index triples of |∂_k T_{ij̄} − ∂_i T_{kj̄}|.
pub fn closedness_defect(t: &HermitianField) -> f64 {
    let grid = &t.grid;
    let n = grid.complex_dim();
    let mut defect: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let re: Vec<f64> = t.values.iter().map(|m| m.get(i, j).re).collect();
            let im: Vec<f64> = t.values.iter().map(|m| m.get(i, j).im).collect();
            for k in 0..n {
                if k == i {
                    continue;
                }
                let re2: Vec<f64> = t.values.iter().map(|m| m.get(k, j).re).collect();
                let im2: Vec<f64> = t.values.iter().map(|m| m.get(k, j).im).collect();
                for p in 0..grid.len() {
                    // ∂_k f = ½(D_{x_k} − i D_{y_k}) f for f = re + i im
                    let d = |r: &[f64], m: &[f64], axis: usize| {
                        let dx_re = first_difference(grid, r, p, 2 * axis);
                        let dx_im = first_difference(grid, m, p, 2 * axis);
                        let dy_re = first_difference(grid, r, p, 2 * axis + 1);
                        let dy_im = first_difference(grid, m, p, 2 * axis + 1);
                        (0.5 * (dx_re + dy_im), 0.5 * (dx_im - dy_re))
                    };
                    let a = d(&re, &im, k);
                    let b = d(&re2, &im2, i);
                    defect = defect.max((a.0 - b.0).hypot(a.1 - b.1));
                }
            }
        }
    }
    defect
}

/// E^T(φ) = ∫ φ Σ_{j=0}^{n−1} ω_φ^{n−1−j} ∧ ω^j ∧ T.
pub fn energy_et(
    phi: &PotentialField,
    omega: &HermitianField,
    t: &HermitianField,
) -> Result<TwistedEnergy> {
    check_positive(omega)?;
    let g = omega_phi(omega, phi);
    check_positive(&g)?;
    let s: f64 = (0..phi.values.len())
        .into_par_iter()
        .map(|i| phi.values[i] * mixed_sum(&g.values[i], &omega.values[i], Some(&t.values[i])))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let scale = t.max_abs().max(1.0);
    Ok(TwistedEnergy {
        value: s * phi.grid.cell_volume(),
        closed: closedness_defect(t) <= 1e-10 * scale,
    })
}

/// H = ∫ log(μ/μ₀) μ for densities μ, μ₀ with respect to a uniform cell measure.
pub fn entropy(mu: &[f64], mu0: &[f64], cell_volume: f64) -> Result<f64> {
    if mu.len() != mu0.len() || mu.is_empty() {
        return Err(JeqError::InvalidInput(
            "density arrays must be non-empty and of equal length".into(),
        ));
    }
    for (i, (a, b)) in mu.iter().zip(mu0).enumerate() {
        if !(*a > 0.0 && *b > 0.0) {
            return Err(JeqError::NonPositiveDensity { index: i });
        }
    }
    for d in [mu, mu0] {
        let mass: f64 = d.iter().sum::<f64>() * cell_volume;
        if !((mass - 1.0).abs() <= 1e-8) {
            return Err(JeqError::NotNormalized { mass });
        }
    }
    let s: f64 = mu.iter().zip(mu0).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(s * cell_volume)
}

/// Entropy of two top-form density fields on a common grid.
pub fn entropy_fields(mu: &PotentialField, mu0: &PotentialField) -> Result<f64> {
    entropy(&mu.values, &mu0.values, mu.grid.cell_volume())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub energy_ric: f64,
    pub entropy: f64,
    pub k_energy: f64,
    pub mean_scalar_curvature: f64,
    pub ric_closed: bool,
}

fn normalized_volume_density(f: &HermitianField) -> Vec<f64> {
    let d: Vec<f64> = f.values.iter().map(|m| m.det().re).collect();
    let mass: f64 = d.iter().sum::<f64>() * f.grid.cell_volume();
    d.into_iter().map(|v| v / mass).collect()
}

/// M(φ) = (R̄/(n+1)) E(φ) − E^{Ric ω}(φ) + H_{ω^n}(ω_φ^n), each measure normalized
/// to unit mass, with R̄ the grid mean of tr_ω Ric ω.
pub fn k_energy(phi: &PotentialField, omega: &HermitianField) -> Result<EnergyReport> {
    let n = omega.grid.complex_dim() as f64;
    let energy = energy_e(phi, omega)?;
    let ric = ricci(omega)?;
    let e_ric = energy_et(phi, omega, &ric)?;
    let g = omega_phi(omega, phi);
    let h = entropy(
        &normalized_volume_density(&g),
        &normalized_volume_density(omega),
        omega.grid.cell_volume(),
    )?;
    let r: f64 = omega
        .values
        .iter()
        .zip(&ric.values)
        .map(|(w, r)| trace_at(w, r))
        .sum();
    let r_bar = r / omega.values.len() as f64;
    Ok(EnergyReport {
        energy,
        energy_ric: e_ric.value,
        entropy: h,
        k_energy: r_bar / (n + 1.0) * energy - e_ric.value + h,
        mean_scalar_curvature: r_bar,
        ric_closed: e_ric.closed,
    })
}
