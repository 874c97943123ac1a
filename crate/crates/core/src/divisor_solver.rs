//! The J-equation on a flat curve. On a Riemann surface tr_{ω_ψ} χ = c is the
//! linear problem dd^c ψ = χ/c − ω, solvable exactly when c = ∫χ / ∫ω.

use crate::error::{JeqError, Result};
use crate::geom_core::{ddc, HermitianField, PotentialField};
use crate::krylov::{conjugate_gradient, dot, KrylovOptions};

fn require_curve(f: &HermitianField) -> Result<()> {
    if f.grid.complex_dim() != 1 {
        return Err(JeqError::InvalidInput(format!(
            "divisor fields must live on a complex curve, got dimension {}",
            f.grid.complex_dim()
        )));
    }
    Ok(())
}

fn densities(f: &HermitianField) -> Result<Vec<f64>> {
    f.values
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let v = m.get(0, 0).re;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(JeqError::NonPositiveMetric {
                    index: i,
                    min_eig: v,
                })
            }
        })
        .collect()
}

/// c = ∫χ / ∫ω.
pub fn curve_j_constant(omega: &HermitianField, chi: &HermitianField) -> Result<f64> {
    require_curve(omega)?;
    let w: f64 = densities(omega)?.iter().sum();
    let x: f64 = densities(chi)?.iter().sum();
    Ok(x / w)
}

#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub psi: PotentialField,
    /// sup |tr_{ω_ψ} χ − c|
    pub residual_sup: f64,
    pub iterations: usize,
}

/// Orthonormal basis of the null space of the discrete dd^c: the constant and the
/// modes alternating in sign along any subset of the real axes.
fn kernel_basis(f: &PotentialField) -> Vec<Vec<f64>> {
    let grid = &f.grid;
    let d = grid.real_dim();
    let norm = (grid.len() as f64).sqrt();
    (0..(1usize << d))
        .map(|mask| {
            (0..grid.len())
                .map(|i| {
                    let m = grid.multi_index(i);
                    let parity: usize = (0..d).filter(|a| mask & (1 << a) != 0).map(|a| m[a]).sum();
                    if parity % 2 == 0 {
                        1.0 / norm
                    } else {
                        -1.0 / norm
                    }
                })
                .collect()
        })
        .collect()
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, bi)| *x -= c * bi);
    }
}

/// Solves dd^c ψ = χ/c − ω on the periodic curve grid, with ψ of mean zero.
pub fn solve_poisson_on_d(
    omega: &HermitianField,
    chi: &HermitianField,
    c: f64,
) -> Result<PoissonSolution> {
    let expected = curve_j_constant(omega, chi)?;
    if !((c - expected).abs() <= 1e-8) {
        return Err(JeqError::SolvabilityViolated { given: c, expected });
    }
    let grid = omega.grid.clone();
    let w = densities(omega)?;
    let x = densities(chi)?;
    let rhs = PotentialField {
        grid: grid.clone(),
        values: w.iter().zip(&x).map(|(wi, xi)| xi / c - wi).collect(),
    };
    let basis = kernel_basis(&rhs);
    let mut b: Vec<f64> = rhs.values.iter().map(|v| -v).collect();
    project_out(&mut b, &basis);
    let apply = |u: &[f64], out: &mut [f64]| {
        let f = PotentialField {
            grid: grid.clone(),
            values: u.to_vec(),
        };
        let h = ddc(&f);
        for (o, m) in out.iter_mut().zip(&h.values) {
            *o = -m.get(0, 0).re;
        }
    };
    let mut psi = vec![0.0; grid.len()];
    let info = conjugate_gradient(
        apply,
        &b,
        &mut psi,
        KrylovOptions {
            rel_tol: 1e-14,
            max_iters: 10 * grid.len(),
            restart: 0,
        },
    )
    .or_else(|e| match e {
        // CG stagnates at roundoff on already-converged systems
        JeqError::LinearSolveFailed {
            iterations,
            relative_residual,
        } if relative_residual < 1e-11 => Ok(crate::krylov::KrylovInfo {
            iterations,
            relative_residual,
        }),
        e => Err(e),
    })?;
    project_out(&mut psi, &basis);
    let mean = psi.iter().sum::<f64>() / psi.len() as f64;
    psi.iter_mut().for_each(|v| *v -= mean);
    let psi = PotentialField {
        grid: grid.clone(),
        values: psi,
    };
    let h = ddc(&psi);
    let mut residual_sup: f64 = 0.0;
    for i in 0..grid.len() {
        let g = w[i] + h.values[i].get(0, 0).re;
        if !(g > 0.0) {
            return Err(JeqError::NonPositiveMetric {
                index: i,
                min_eig: g,
            });
        }
        residual_sup = residual_sup.max((x[i] / g - c).abs());
    }
    Ok(PoissonSolution {
        psi,
        residual_sup,
        iterations: info.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::{Grid, Mat};

    fn curve(points: usize) -> Grid {
        Grid::new(1, points).unwrap()
    }

    fn scalar_field(g: &Grid, f: impl Fn(&[f64]) -> f64) -> HermitianField {
        let values = (0..g.len())
            .map(|i| Mat::from_diag(&[f(&g.coords(i))]))
            .collect();
        HermitianField::new(g.clone(), values).unwrap()
    }

    #[test]
    fn constants() {
        let g = curve(8);
        let w = HermitianField::identity(&g);
        assert!((curve_j_constant(&w, &w).unwrap() - 1.0).abs() < 1e-15);
        assert!((curve_j_constant(&w, &w.scale(3.0)).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn proportional_forms_give_zero_potential() {
        let g = curve(16);
        let w = scalar_field(&g, |x| 1.0 + 0.2 * x[0].sin());
        let s = solve_poisson_on_d(&w, &w.scale(2.0), 2.0).unwrap();
        assert!(s.psi.sup_norm() < 1e-14);
    }

    #[test]
    fn mismatched_constant_is_rejected() {
        let g = curve(8);
        let w = HermitianField::identity(&g);
        let r = solve_poisson_on_d(&w, &w, 1.0 + 1e-6);
        assert!(matches!(r, Err(JeqError::SolvabilityViolated { .. })));
    }

    #[test]
    fn two_mode_perturbation_has_small_residual() {
        let g = curve(16);
        let w = HermitianField::identity(&g).scale(0.7);
        let x = scalar_field(&g, |p| {
            0.7 * (1.0 + 0.1 * p[0].cos() + 0.05 * (p[0] + p[1]).sin())
        });
        let c = curve_j_constant(&w, &x).unwrap();
        let s = solve_poisson_on_d(&w, &x, c).unwrap();
        assert!(s.residual_sup < 1e-10, "{}", s.residual_sup);
        assert!(s.psi.mean().abs() < 1e-15);
    }
}
