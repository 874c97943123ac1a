//! Discrete complex geometry on periodic grids: dd^c, trace and wedge algebra of
//! Hermitian fields, positivity, generalized eigenvalues and Ricci forms.
//!
//! Every second derivative is the composition of two central first differences,
//! `D_a D_b`, including the pure ones (`D_a D_a` has step 2h). With this stencil
//! the discrete integrals of the top forms ω_φ^n and ω_φ^{n-1}∧χ do not depend on
//! φ when n <= 2 (summation by parts holds exactly), which keeps the continuity
//! path well behaved as ε → 0. The price is a kernel of 2^{2n} grid modes that
//! alternate in sign along some axes.

pub mod grid;
pub mod io;
pub mod mat;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

pub use grid::{Grid, HermitianField, PotentialField};
pub use mat::{mixed_discriminant, Mat};

use crate::error::{JeqError, Result};

/// Pointwise summary of a candidate solution ω_φ against χ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceDiagnostics {
    pub min_trace: f64,
    pub max_trace: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub residual_sup: f64,
}

/// Unordered pairs (a, b), a <= b, of real axes in a fixed order.
pub fn axis_pairs(real_dim: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for a in 0..real_dim {
        for b in a..real_dim {
            v.push((a, b));
        }
    }
    v
}

/// Position of the unordered pair (a, b) in `axis_pairs`.
#[inline]
pub fn pair_index(real_dim: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * real_dim - a * (a + 1) / 2 + b
}

/// D_a D_b u at one point.
#[inline]
pub fn second_difference(grid: &Grid, u: &[f64], idx: usize, a: usize, b: usize) -> f64 {
    let ha = grid.spacing(a);
    if a == b {
        let p = grid.shift(idx, a, 2);
        let m = grid.shift(idx, a, -2);
        (u[p] - 2.0 * u[idx] + u[m]) / (4.0 * ha * ha)
    } else {
        let hb = grid.spacing(b);
        let pa = grid.shift(idx, a, 1);
        let ma = grid.shift(idx, a, -1);
        let pp = grid.shift(pa, b, 1);
        let pm = grid.shift(pa, b, -1);
        let mp = grid.shift(ma, b, 1);
        let mm = grid.shift(ma, b, -1);
        (u[pp] - u[pm] - u[mp] + u[mm]) / (4.0 * ha * hb)
    }
}

/// Central first difference D_a u at one point.
#[inline]
pub fn first_difference(grid: &Grid, u: &[f64], idx: usize, a: usize) -> f64 {
    let h = grid.spacing(a);
    (u[grid.shift(idx, a, 1)] - u[grid.shift(idx, a, -1)]) / (2.0 * h)
}

/// Complex Hessian ∂²u/∂z_j∂z̄_k at one point.
pub fn complex_hessian_at(grid: &Grid, u: &[f64], idx: usize) -> Mat {
    let n = grid.complex_dim();
    let d = 2 * n;
    let mut s = [[0.0f64; 6]; 6];
    for a in 0..d {
        for b in a..d {
            let v = second_difference(grid, u, idx, a, b);
            s[a][b] = v;
            s[b][a] = v;
        }
    }
    let mut h = Mat::zeros(n);
    for j in 0..n {
        for k in 0..n {
            let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
            let re = 0.25 * (s[xj][xk] + s[yj][yk]);
            let im = 0.25 * (s[xj][yk] - s[yj][xk]);
            h.set(j, k, Complex64::new(re, im));
        }
    }
    h
}

/// Complex gradient ∂u/∂z_j at one point.
pub fn complex_gradient_at(grid: &Grid, u: &[f64], idx: usize) -> [Complex64; 3] {
    let mut g = [Complex64::new(0.0, 0.0); 3];
    for (j, gj) in g.iter_mut().enumerate().take(grid.complex_dim()) {
        let dx = first_difference(grid, u, idx, 2 * j);
        let dy = first_difference(grid, u, idx, 2 * j + 1);
        *gj = Complex64::new(0.5 * dx, -0.5 * dy);
    }
    g
}

/// Weights w with tr(H(u) K) = Σ_pairs w[p] · D_a D_b u, for a Hermitian K.
pub fn hessian_contraction_weights(k: &Mat) -> Vec<f64> {
    let n = k.dim();
    let d = 2 * n;
    let mut w = vec![Complex64::new(0.0, 0.0); d * (d + 1) / 2];
    let i = Complex64::new(0.0, 1.0);
    for j in 0..n {
        for l in 0..n {
            let kappa = k.get(l, j) * 0.25;
            let (xj, yj, xl, yl) = (2 * j, 2 * j + 1, 2 * l, 2 * l + 1);
            w[pair_index(d, xj, xl)] += kappa;
            w[pair_index(d, yj, yl)] += kappa;
            w[pair_index(d, xj, yl)] += i * kappa;
            w[pair_index(d, yj, xl)] -= i * kappa;
        }
    }
    w.iter().map(|c| c.re).collect()
}

/// Σ_pairs w[p] · D_a D_b u at one point.
#[inline]
pub fn contract_second_differences(grid: &Grid, u: &[f64], idx: usize, w: &[f64]) -> f64 {
    let d = grid.real_dim();
    let mut s = 0.0;
    let mut p = 0;
    for a in 0..d {
        for b in a..d {
            let wp = w[p];
            if wp != 0.0 {
                s += wp * second_difference(grid, u, idx, a, b);
            }
            p += 1;
        }
    }
    s
}

/// Coefficient of u(idx) in D_a D_b u (zero for a != b).
pub fn second_difference_center(grid: &Grid, a: usize, b: usize) -> f64 {
    if a == b {
        let h = grid.spacing(a);
        -1.0 / (2.0 * h * h)
    } else {
        0.0
    }
}

/// The field (∂²φ/∂z_i∂z̄_j).
pub fn ddc(phi: &PotentialField) -> HermitianField {
    let grid = &phi.grid;
    let values: Vec<Mat> = (0..grid.len())
        .into_par_iter()
        .map(|i| complex_hessian_at(grid, &phi.values, i))
        .collect();
    HermitianField {
        grid: grid.clone(),
        values,
    }
}

fn require_positive(m: &Mat, index: usize) -> Result<()> {
    let e = m.min_eigenvalue();
    if e > 0.0 {
        Ok(())
    } else {
        Err(JeqError::NonPositiveMetric { index, min_eig: e })
    }
}

/// tr_G X = Re tr(G^{-1} X) for a positive G.
#[inline]
pub fn trace_at(g: &Mat, x: &Mat) -> f64 {
    let inv = g.inverse().expect("positive matrix is invertible");
    inv.trace_product_re(x)
}

/// Pointwise tr_{ω_φ} χ.
pub fn trace_ratio(omega_phi: &HermitianField, chi: &HermitianField) -> Result<PotentialField> {
    let values: Result<Vec<f64>> = omega_phi
        .values
        .par_iter()
        .zip(chi.values.par_iter())
        .enumerate()
        .map(|(i, (g, x))| {
            require_positive(g, i)?;
            Ok(trace_at(g, x))
        })
        .collect();
    Ok(PotentialField {
        grid: omega_phi.grid.clone(),
        values: values?,
    })
}

/// n · (G^{n-1} ∧ X) / G^n computed from mixed discriminants (no inverse).
pub fn wedge_ratio_at(g: &Mat, x: &Mat) -> f64 {
    let n = g.dim();
    let mut args = vec![*g; n];
    args[n - 1] = *x;
    n as f64 * mixed_discriminant(&args).re / g.det().re
}

/// Sorted eigenvalues μ of X relative to G (det(X − μG) = 0), via Cholesky of G.
pub fn generalized_eigenvalues_at(x: &Mat, g: &Mat) -> Option<Vec<f64>> {
    let l = g.cholesky()?;
    let li = l.inverse()?;
    let m = (li * *x * li.adjoint()).hermitian_part();
    let e = m.eigenvalues_hermitian();
    Some(e[..g.dim()].to_vec())
}

/// Per point, the eigenvalues of χ relative to ω in ascending order.
pub fn generalized_eigenvalues(
    chi: &HermitianField,
    omega: &HermitianField,
) -> Result<Vec<Vec<f64>>> {
    chi.values
        .par_iter()
        .zip(omega.values.par_iter())
        .enumerate()
        .map(|(i, (x, g))| {
            generalized_eigenvalues_at(x, g).ok_or(JeqError::NonPositiveMetric {
                index: i,
                min_eig: g.min_eigenvalue(),
            })
        })
        .collect()
}

/// Ricci form −dd^c log det g.
pub fn ricci(omega: &HermitianField) -> Result<HermitianField> {
    let logdet: Result<Vec<f64>> = omega
        .values
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            require_positive(g, i)?;
            Ok(g.det().re.ln())
        })
        .collect();
    let f = PotentialField {
        grid: omega.grid.clone(),
        values: logdet?,
    };
    Ok(ddc(&f).scale(-1.0))
}

/// Density of the mixed top form with respect to Lebesgue measure on the grid.
#[inline]
pub fn top_form_density(args: &[Mat]) -> f64 {
    match args.len() {
        1 => args[0].get(0, 0).re,
        _ => mixed_discriminant(args).re,
    }
}

/// Discrete ∫ ω^n.
pub fn volume(omega: &HermitianField) -> f64 {
    let s: f64 = omega.values.iter().map(|g| g.det().re).sum();
    s * omega.grid.cell_volume()
}

/// Discrete ∫ ω^{n−1} ∧ χ.
pub fn mixed_volume(omega: &HermitianField, chi: &HermitianField) -> f64 {
    let n = omega.grid.complex_dim();
    let s: f64 = omega
        .values
        .iter()
        .zip(&chi.values)
        .map(|(g, x)| {
            let mut args = vec![*g; n];
            args[n - 1] = *x;
            top_form_density(&args)
        })
        .sum();
    s * omega.grid.cell_volume()
}

/// ω + dd^c φ.
pub fn omega_phi(omega: &HermitianField, phi: &PotentialField) -> HermitianField {
    omega.add(&ddc(phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ddc_of_constant_is_zero() {
        let g = Grid::new(2, 8).unwrap();
        let f = ddc(&PotentialField::constant(&g, 3.7));
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn ddc_cos_one_dimensional() {
        // ∂∂̄ cos x = −cos(x)/4; the stencil multiplies by sin²h/h².
        let g = Grid::new(1, 32).unwrap();
        let h = g.spacing(0);
        let f = ddc(&PotentialField::from_fn(&g, |x| x[0].cos()));
        let factor = (h.sin() / h).powi(2);
        for i in 0..g.len() {
            let x = g.coords(i)[0];
            let want = -0.25 * x.cos() * factor;
            assert!((f.values[i].get(0, 0).re - want).abs() < 1e-14);
            assert!((f.values[i].get(0, 0).re + 0.25 * x.cos()).abs() < 0.25 * h * h);
        }
    }

    #[test]
    fn ddc_is_exactly_hermitian_and_mean_free() {
        let g = Grid::new(2, 8).unwrap();
        let phi = PotentialField::from_fn(&g, |x| {
            (x[0] + x[3].sin()).cos() + 0.3 * (x[1] - x[2]).sin()
        });
        let f = ddc(&phi);
        assert_eq!(f.hermitian_defect(), 0.0);
        for j in 0..2 {
            for k in 0..2 {
                let m: Complex64 =
                    f.values.iter().map(|a| a.get(j, k)).sum::<Complex64>() / g.len() as f64;
                assert!(m.norm() < 1e-13);
            }
        }
    }

    #[test]
    fn pluriharmonic_potential_has_small_hessian() {
        // Re(z1^2) = x^2 - y^2 is not periodic; use Re(e^{i z1}) = cos(x) e^{-y} restricted
        // to a short period in y so the grid sees a smooth function.
        let g = Grid::with_periods(1, 64, vec![2.0 * PI, 0.5]).unwrap();
        let f = ddc(&PotentialField::from_fn(&g, |x| x[0].cos() * (-x[1]).exp()));
        // interior rows only: the y-direction is not periodic for this function
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let m = g.multi_index(i);
            if m[1] >= 2 && m[1] + 2 < 64 {
                worst = worst.max(f.values[i].get(0, 0).norm());
            }
        }
        assert!(worst < 5e-3, "worst {worst}");
    }

    #[test]
    fn stencil_is_second_order() {
        let err = |n: usize| {
            let g = Grid::new(2, n).unwrap();
            let phi =
                PotentialField::from_fn(&g, |x| (x[0] + x[2]).sin() * x[1].cos() + (x[3]).cos());
            let f = ddc(&phi);
            let mut e: f64 = 0.0;
            for i in 0..g.len() {
                let x = g.coords(i);
                // exact complex Hessian of sin(x0+x2)cos(x1) + cos(x3)
                let s = (x[0] + x[2]).sin();
                let co = (x[0] + x[2]).cos();
                let c1 = x[1].cos();
                let s1 = x[1].sin();
                let fxx = -s * c1;
                let fyy = -s * c1;
                let f00 = 0.25 * (fxx + fyy);
                let fx0x1 = -s * c1; // ∂x0 ∂x2
                let fy0y1 = 0.0; // ∂x1 ∂x3
                let fx0y1 = 0.0; // ∂x0 ∂x3
                let fy0x1 = -co * s1; // ∂x1 ∂x2
                let f01 = c(0.25 * (fx0x1 + fy0y1), 0.25 * (fx0y1 - fy0x1));
                let f11 = 0.25 * (-s * c1 - x[3].cos());
                e = e.max((f.values[i].get(0, 0) - c(f00, 0.0)).norm());
                e = e.max((f.values[i].get(0, 1) - f01).norm());
                e = e.max((f.values[i].get(1, 1) - c(f11, 0.0)).norm());
            }
            e
        };
        let e8 = err(8);
        let e16 = err(16);
        let order = (e8 / e16).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn trace_ratio_examples() {
        let g = Grid::new(2, 8).unwrap();
        let id = HermitianField::identity(&g);
        let t = trace_ratio(&id, &id).unwrap();
        assert!(t.values.iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let a = Mat::from_diag(&[1.0, 2.0]);
        let b = Mat::from_diag(&[2.0, 2.0]);
        assert!((trace_at(&a, &b) - 3.0).abs() < 1e-15);
        let bad = HermitianField::constant(&g, Mat::from_diag(&[1.0, -1.0]));
        assert!(matches!(
            trace_ratio(&bad, &id),
            Err(JeqError::NonPositiveMetric { .. })
        ));
    }

    #[test]
    fn generalized_eigenvalue_examples() {
        let a = Mat::from_diag(&[1.0, 2.0]);
        let b = Mat::from_diag(&[2.0, 2.0]);
        let mu = generalized_eigenvalues_at(&b, &a).unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-15 && (mu[1] - 2.0).abs() < 1e-15);
        let mu = generalized_eigenvalues_at(&a, &a).unwrap();
        assert!(mu.iter().all(|m| (m - 1.0).abs() < 1e-15));
    }

    #[test]
    fn ricci_of_flat_metric_is_zero() {
        let g = Grid::new(2, 8).unwrap();
        let omega = HermitianField::constant(&g, Mat::from_real_rows(2, &[2.0, 0.5, 0.5, 1.0]));
        assert!(ricci(&omega).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn ricci_conformal_one_dimensional() {
        // ω = (1 + cos(x)/2): Ric = −¼ Δ log(1 + cos(x)/2)
        let err = |n: usize| {
            let g = Grid::new(1, n).unwrap();
            let omega = HermitianField {
                grid: g.clone(),
                values: (0..g.len())
                    .map(|i| Mat::from_diag(&[1.0 + 0.5 * g.coords(i)[0].cos()]))
                    .collect(),
            };
            let r = ricci(&omega).unwrap();
            let mut e: f64 = 0.0;
            for i in 0..g.len() {
                let x = g.coords(i)[0];
                let w = 1.0 + 0.5 * x.cos();
                let wp = -0.5 * x.sin();
                let wpp = -0.5 * x.cos();
                let lap_log = wpp / w - (wp / w).powi(2);
                e = e.max((r.values[i].get(0, 0).re + 0.25 * lap_log).abs());
            }
            e
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e2 < 1e-2);
        assert!((e1 / e2).log2() > 1.9);
    }

    #[test]
    fn ricci_conformal_two_dimensional() {
        let g = Grid::new(2, 16).unwrap();
        let u = PotentialField::from_fn(&g, |x| 0.2 * x[0].cos() + 0.1 * (x[1] + x[3]).sin());
        let omega = HermitianField {
            grid: g.clone(),
            values: u
                .values
                .iter()
                .map(|v| Mat::identity(2).scale(v.exp()))
                .collect(),
        };
        let r = ricci(&omega).unwrap();
        let want = ddc(&u.map(|v| 2.0 * v)).scale(-1.0);
        let diff = r.combine(1.0, &want, -1.0).max_abs();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn volume_is_potential_independent_for_low_dimensions() {
        for n in [1usize, 2] {
            let g = Grid::new(n, 8).unwrap();
            let omega = HermitianField::identity(&g);
            let chi = omega.add(&ddc(&PotentialField::from_fn(&g, |x| 0.1 * x[0].cos())));
            let phi = PotentialField::from_fn(&g, |x| {
                0.2 * (x[0] + x[g.real_dim() - 1]).sin() + 0.1 * x[1].cos()
            });
            let op = omega_phi(&omega, &phi);
            let v0 = volume(&omega);
            let v1 = volume(&op);
            assert!(((v1 - v0) / v0).abs() < 1e-12, "n={n}");
            let m0 = mixed_volume(&omega, &chi);
            let m1 = mixed_volume(&op, &chi);
            assert!(((m1 - m0) / m0).abs() < 1e-12, "n={n}");
        }
    }
}
