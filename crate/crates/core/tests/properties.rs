//! Property and oracle tests for the core library.

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jeq_core::cusp_model::{
    background_coefficients, background_samples, fiber_decompose, greens_solve, reduced_residual,
    tilde_delta0_apply, CuspField, CuspGeometry, DivisorModel, TailMode,
};
use jeq_core::functionals::{energy_e, entropy};
use jeq_core::geom_core::io::{load_field, save_potential, Field};
use jeq_core::geom_core::{complex_hessian_at, ddc, omega_phi};
use jeq_core::path_solver::{newton_solve, residual, PathConfig};
use jeq_core::subsolution::{
    asymptotic_deviation_samples, path_subsolution_check, subsolution_slack,
};
use jeq_core::surface_classes::{coefficient_b, j_constant, rational, Rational, SurfaceClassData};
use jeq_core::{Grid, HermitianField, Mat, PotentialField};

/// Positive definite A Aᴴ + I from six real entries (n = 2).
fn spd2(e: [f64; 6]) -> Mat {
    let a = Mat::from_rows(
        2,
        &[
            Complex64::new(e[0], 0.0),
            Complex64::new(e[1], e[2]),
            Complex64::new(e[3], e[4]),
            Complex64::new(e[5], 0.0),
        ],
    );
    let mut m = Mat::identity(2);
    for i in 0..2 {
        for j in 0..2 {
            let s: Complex64 = (0..2).map(|k| a.get(i, k) * a.get(j, k).conj()).sum();
            m.set(i, j, m.get(i, j) + s);
        }
    }
    m
}

fn entries() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-1.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn slack_is_scale_covariant(w in entries(), x in entries(), lambda in 0.2f64..5.0) {
        let g = Grid::new(2, 8).unwrap();
        let omega = HermitianField::constant(&g, spd2(w));
        let chi = HermitianField::constant(&g, spd2(x));
        let base = subsolution_slack(&omega, &chi).unwrap();
        let both = subsolution_slack(&omega.scale(lambda), &chi.scale(lambda)).unwrap();
        prop_assert!((both.delta_max - base.delta_max).abs() <= 1e-10 * (1.0 + base.delta_max.abs()));
        let chi_only = subsolution_slack(&omega, &chi.scale(lambda)).unwrap();
        let expected = 2.0 / (lambda * base.s_star_sup) - 1.0;
        prop_assert!((chi_only.delta_max - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
    }

    /// For n = 2 the condition along the path is monotone in t once δ ≤ 1/(n−1).
    #[test]
    fn path_subsolution_propagates_down(w in entries(), x in entries()) {
        let g = Grid::new(2, 8).unwrap();
        let omega = HermitianField::constant(&g, spd2(w));
        let chi = HermitianField::constant(&g, spd2(x));
        let d1 = subsolution_slack(&omega, &chi).unwrap().delta_max;
        prop_assume!(d1 > 0.0);
        let delta = d1.min(1.0) * (1.0 - 1e-9);
        prop_assert!(path_subsolution_check(&omega, &chi, 1.0, delta).unwrap());
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            prop_assert!(path_subsolution_check(&omega, &chi, t, delta).unwrap(), "fails at t = {}", t);
        }
    }

    #[test]
    fn j_constant_is_homogeneous(p in 1i64..20, q in 1i64..20, l in 1i64..9, m in 1i64..9) {
        let r = |a: i64| rational(a, 1);
        let qm = vec![vec![r(1), r(0)], vec![r(0), r(-1)]];
        let omega = vec![r(2), r(1)];
        let chi = vec![rational(p, q), r(0)];
        let base = j_constant(&SurfaceClassData::new(qm.clone(), omega.clone(), chi.clone(), None, None, false).unwrap())
            .unwrap();
        let lam = rational(l, m);
        let mu = rational(m, l + 1);
        let omega2: Vec<Rational> = omega.iter().map(|v| v * &lam).collect();
        let chi2: Vec<Rational> = chi.iter().map(|v| v * &mu).collect();
        let scaled = j_constant(&SurfaceClassData::new(qm, omega2, chi2, None, None, false).unwrap()).unwrap();
        prop_assert_eq!(scaled, base * lam / mu);
    }

    #[test]
    fn entropy_is_nonnegative(raw in prop::collection::vec((0.05f64..2.0, 0.05f64..2.0), 2..40)) {
        let (mu, mu0): (Vec<f64>, Vec<f64>) = raw.into_iter().unzip();
        let s: f64 = mu.iter().sum();
        let s0: f64 = mu0.iter().sum();
        let mu: Vec<f64> = mu.iter().map(|v| v / s).collect();
        let mu0: Vec<f64> = mu0.iter().map(|v| v / s0).collect();
        prop_assert!(entropy(&mu, &mu0, 1.0).unwrap() >= -1e-15);
    }

    /// a → b → a when C = 2 C_D (2 − C_D) / (2 + C_D), the class relation that
    /// makes the divisor constant consistent with the global one.
    #[test]
    fn fiber_coefficient_round_trip(num in 1i64..7, a in 1i64..50) {
        let c_d = rational(num, 4);
        let two = rational(2, 1);
        let c = &two * &c_d * (&two - &c_d) / (&two + &c_d);
        let a = rational(a, 3);
        let b = coefficient_b(&a, &c, &c_d).unwrap();
        let back = &two * &b / (&two - &c_d);
        prop_assert_eq!(back.clone(), a.clone());
        let f = |r: &Rational| jeq_core::surface_classes::rational_to_f64(r);
        let af = background_coefficients(f(&b), f(&c_d), 2).unwrap();
        prop_assert!((af - f(&a)).abs() <= 1e-12 * f(&a));
    }
}

#[test]
fn energy_derivative_matches_volume_pairing() {
    for (n, points, tol) in [(1usize, 16usize, 1e-9), (2, 8, 1e-9)] {
        let g = Grid::new(n, points).unwrap();
        let omega = HermitianField::identity(&g);
        let phi = PotentialField::from_fn(&g, |x| 0.1 * (x[0].cos() + x[1].sin() * x[0].sin()));
        let psi =
            PotentialField::from_fn(&g, |x| 0.3 * x[1].cos() + 0.2 * (x[0] - x[1]).sin() + 0.1);
        let h = 1e-4;
        let at = |s: f64| {
            let f = PotentialField {
                grid: g.clone(),
                values: phi
                    .values
                    .iter()
                    .zip(&psi.values)
                    .map(|(a, b)| a + s * b)
                    .collect(),
            };
            energy_e(&f, &omega).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let gphi = omega_phi(&omega, &phi);
        let pairing: f64 = psi
            .values
            .iter()
            .zip(&gphi.values)
            .map(|(p, m)| p * m.det().re)
            .sum::<f64>()
            * g.cell_volume()
            * (n as f64 + 1.0);
        let rel = (fd - pairing).abs() / pairing.abs().max(1.0);
        println!("n = {n}: dE = {fd:.12}, (n+1)∫ψω_φ^n = {pairing:.12}, rel {rel:.2e}");
        assert!(rel < tol, "n = {n}: relative error {rel:e}");
    }
}

/// Damped fixed-point iteration φ ← φ − τR as an independent solver.
#[test]
fn newton_agrees_with_fixed_point_iteration() {
    let g = Grid::new(1, 8).unwrap();
    let omega = HermitianField::identity(&g);
    let chi = omega.add(&ddc(&PotentialField::from_fn(&g, |x| {
        0.1 * x[0].cos() + 0.05 * x[1].sin()
    })));
    let (eps, t) = (0.5, 1.0);
    let cfg = PathConfig {
        newton_tol: 1e-12,
        ..PathConfig::default()
    };
    let newton = newton_solve(&PotentialField::zeros(&g), eps, t, &omega, &chi, &cfg).unwrap();
    let mut phi = PotentialField::zeros(&g);
    let mut it = 0;
    loop {
        let r = residual(&phi, eps, t, &omega, &chi).unwrap();
        if r.sup_norm() < 1e-13 || it > 5000 {
            break;
        }
        phi.values
            .iter_mut()
            .zip(&r.values)
            .for_each(|(p, ri)| *p -= 0.4 * ri);
        it += 1;
    }
    let diff = phi
        .values
        .iter()
        .zip(&newton.phi.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("fixed point: {it} iterations, sup difference {diff:.2e}");
    assert!(diff < 1e-10, "{diff:e}");
}

fn point_geometry(mt: usize) -> CuspGeometry {
    CuspGeometry {
        a_cut: 1.0,
        t_max: 16.0,
        mt,
        a: 2.0,
        b: 1.0,
        tail_beta: 0.5,
        divisor: DivisorModel::Point { n: 2, s: 1.5 },
    }
}

/// R = b(t) + c s − n c with c = a − ½(φ'' − φ') substituted by hand.
#[test]
fn reduced_residual_matches_symbolic_substitution() {
    let geom = point_geometry(61);
    let (p2, p1, p0) = (0.01, -0.1, 0.3);
    let phi = CuspField::from_fn(&geom, |t, _| p2 * t * t + p1 * t + p0);
    let r = reduced_residual(&phi, &geom).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &t) in phi.t.iter().enumerate() {
        let c = geom.a - 0.5 * (2.0 * p2 - (2.0 * p2 * t + p1));
        let expect = geom.b + geom.tail_beta * (-t).exp() + c * 1.5 - 2.0 * c;
        worst = worst.max((r.at(i, 0) - expect).abs());
    }
    assert!(worst < 1e-12, "{worst:e}");
}

/// A flat torus divisor with χ_D = s ω_D and fiber-constant φ reduces to the point model.
#[test]
fn torus_divisor_with_constant_data_reduces_to_point() {
    let grid = Grid::new(1, 8).unwrap();
    let (g_d, s) = (0.5, 1.5);
    let torus = CuspGeometry {
        divisor: DivisorModel::FlatTorus {
            grid: grid.clone(),
            g_d,
            chi_d: vec![s * g_d; grid.len()],
        },
        ..point_geometry(41)
    };
    let point = point_geometry(41);
    let f = |t: f64| 0.2 * (-t).exp() + 0.01 * t;
    let rt = reduced_residual(&CuspField::from_fn(&torus, |t, _| f(t)), &torus).unwrap();
    let rp = reduced_residual(&CuspField::from_fn(&point, |t, _| f(t)), &point).unwrap();
    for i in 0..41 {
        for p in 0..grid.len() {
            assert!((rt.at(i, p) - rp.at(i, 0)).abs() < 1e-14);
        }
    }
}

/// Δ̃⁰(v w) splits into the divisor part w · ⟨χ_D, dd^c v⟩ and v · (t-part of w).
#[test]
fn tilde_operator_is_separable() {
    let grid = Grid::new(1, 8).unwrap();
    let g_d = 0.5;
    let chi_d: Vec<f64> = (0..grid.len())
        .map(|p| 0.75 * (1.0 + 0.1 * grid.coords(p)[0].cos()))
        .collect();
    let torus = CuspGeometry {
        divisor: DivisorModel::FlatTorus {
            grid: grid.clone(),
            g_d,
            chi_d: chi_d.clone(),
        },
        ..point_geometry(33)
    };
    let point = point_geometry(33);
    let v: Vec<f64> = (0..grid.len())
        .map(|p| grid.coords(p)[0].sin() + 0.3 * grid.coords(p)[1].cos())
        .collect();
    let w = |t: f64| (-0.7 * t).exp();
    let kappa = 0.3;
    let full = tilde_delta0_apply(
        &CuspField::from_fn(&torus, |t, p| v[p] * w(t)),
        &torus,
        kappa,
    )
    .unwrap();
    let tpart =
        tilde_delta0_apply(&CuspField::from_fn(&point, |t, _| w(t)), &point, kappa).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &t) in full.t.iter().enumerate() {
        for p in 0..grid.len() {
            let dpart = chi_d[p] * complex_hessian_at(&grid, &v, p).get(0, 0).re / (g_d * g_d);
            let expect = w(t) * dpart + v[p] * tpart.at(i, 0);
            worst = worst.max((full.at(i, p) - expect).abs());
        }
    }
    assert!(worst < 1e-13, "{worst:e}");
}

/// Applying the t-part of Δ̃⁰ to the Green's solution recovers g₀ at second order.
#[test]
fn greens_solve_inverts_the_model_operator() {
    let kappa = 0.25;
    let g0 = |t: f64| (-t).exp() + 0.5 * (-2.0 * t).exp();
    let mut errors = Vec::new();
    for mt in [201usize, 401] {
        let geom = CuspGeometry {
            t_max: 21.0,
            ..point_geometry(mt)
        };
        let t = geom.t_nodes();
        let samples: Vec<f64> = t.iter().map(|&s| g0(s)).collect();
        let v = greens_solve(&samples, &t, kappa, TailMode::Exponential).unwrap();
        assert_eq!(v[0], 0.0);
        let field = CuspField {
            t: t.clone(),
            d_len: 1,
            values: v,
        };
        let back = tilde_delta0_apply(&field, &geom, kappa).unwrap();
        let err = (1..mt - 1).fold(0.0f64, |m, i| m.max((back.at(i, 0) - samples[i]).abs()));
        errors.push(err);
    }
    println!("greens inverse errors {errors:?}");
    assert!(errors[1] < errors[0] / 3.0 && errors[1] < 1e-3);
}

/// For a constant profile the background quotient deviates only through the β e^{−t}
/// construction residual, so the weighted deviation is sup |R| e^t / (b + a s).
#[test]
fn background_deviation_is_bounded_by_construction_residual() {
    let geom = point_geometry(61);
    let s = geom.s_target();
    let geom = CuspGeometry {
        divisor: DivisorModel::Point { n: 2, s },
        ..geom
    };
    let phi = CuspField::from_fn(&geom, |_, _| 0.0);
    let (omega, chi, rho) = background_samples(&phi, &geom).unwrap();
    let dev = asymptotic_deviation_samples(&omega, &chi, &rho, 1.0).unwrap();
    let r = reduced_residual(&phi, &geom).unwrap();
    let bound = r
        .values
        .iter()
        .zip(&phi.t)
        .fold(0.0f64, |m, (ri, t)| m.max(ri.abs() * t.exp()))
        / (geom.b + geom.a * s);
    assert!(dev.is_finite());
    // R ~ e^{-T} is weighted by e^T, so cancellation roundoff is amplified
    assert!((dev - bound).abs() < 1e-7 * bound, "{dev} vs {bound}");
}

#[test]
fn jeqf_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid::with_periods(2, 8, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let f = PotentialField::from_fn(&g, |x| x[0].sin() - 0.25 * x[3]);
    let path = dir.path().join("f.jeqf");
    save_potential(&path, &f).unwrap();
    match load_field(&path).unwrap() {
        Field::Potential(back) => assert_eq!(back.values, f.values),
        other => panic!("wrong kind {other:?}"),
    }
}

#[test]
fn fiber_projection_is_exact() {
    let geom = CuspGeometry {
        a_cut: 1.0,
        t_max: 5.0,
        mt: 20,
        a: 2.0,
        b: 1.0,
        tail_beta: 0.0,
        divisor: DivisorModel::FlatTorus {
            grid: Grid::new(1, 8).unwrap(),
            g_d: 1.0,
            chi_d: vec![1.5; 64],
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cell = std::cell::RefCell::new(&mut rng);
    let u = CuspField::from_fn(&geom, |_, _| cell.borrow_mut().gen_range(-1.0..1.0));
    let (u0, perp) = fiber_decompose(&u);
    for i in 0..geom.mt {
        let mean: f64 = (0..perp.d_len).map(|p| perp.at(i, p)).sum::<f64>() / perp.d_len as f64;
        assert!(mean.abs() < 1e-13);
        for p in 0..perp.d_len {
            assert!((u0[i] + perp.at(i, p) - u.at(i, p)).abs() < 1e-15);
        }
    }
    let again = CuspField {
        t: u.t.clone(),
        d_len: u.d_len,
        values: (0..u.values.len()).map(|k| u0[k / u.d_len]).collect(),
    };
    let (v0, vperp) = fiber_decompose(&again);
    assert!(v0.iter().zip(&u0).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!(vperp.sup_norm() < 1e-15);
}
