//! Matrix-free Krylov solvers (restarted GMRES, conjugate gradients) and a
//! tridiagonal direct solver used as a line preconditioner.

use crate::error::{JeqError, Result};

#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub restart: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            rel_tol: 1e-8,
            max_iters: 1000,
            restart: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned restarted GMRES for A x = b. `precond` applies M^{-1}.
/// `x` holds the initial guess on entry and the solution on exit.
pub fn gmres<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    x: &mut [f64],
    opts: KrylovOptions,
) -> Result<KrylovInfo>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let m = opts.restart.max(1);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovInfo {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = opts.rel_tol * bnorm;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut total = 0usize;
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut h = vec![vec![0.0f64; m]; m + 1];
    let mut cs = vec![0.0f64; m];
    let mut sn = vec![0.0f64; m];
    let mut g = vec![0.0f64; m + 1];

    loop {
        apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm2(&r);
        if beta <= target {
            return Ok(KrylovInfo {
                iterations: total,
                relative_residual: beta / bnorm,
            });
        }
        if total >= opts.max_iters {
            return Err(JeqError::LinearSolveFailed {
                iterations: total,
                relative_residual: beta / bnorm,
            });
        }
        v.clear();
        z.clear();
        v.push(r.iter().map(|ri| ri / beta).collect());
        g.iter_mut().for_each(|gi| *gi = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        let mut resid = beta;
        for k in 0..m {
            let mut zk = vec![0.0; n];
            precond(&v[k], &mut zk);
            apply(&zk, &mut w);
            z.push(zk);
            for i in 0..=k {
                let hik = dot(&w, &v[i]);
                h[i][k] = hik;
                let vi = &v[i];
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let hn = norm2(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if d == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / d;
                sn[k] = h[k + 1][k] / d;
            }
            h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            resid = g[k + 1].abs();
            total += 1;
            k_used = k + 1;
            if resid <= target || total >= opts.max_iters || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
        if !resid.is_finite() {
            return Err(JeqError::LinearSolveFailed {
                iterations: total,
                relative_residual: f64::NAN,
            });
        }
    }
}

/// Conjugate gradients for a symmetric positive (semi)definite operator, with the
/// right-hand side assumed to lie in its range.
pub fn conjugate_gradient<A>(
    apply: A,
    b: &[f64],
    x: &mut [f64],
    opts: KrylovOptions,
) -> Result<KrylovInfo>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovInfo {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 0..opts.max_iters {
        if rr.sqrt() <= opts.rel_tol * bnorm {
            return Ok(KrylovInfo {
                iterations: it,
                relative_residual: rr.sqrt() / bnorm,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(JeqError::LinearSolveFailed {
                iterations: it,
                relative_residual: rr.sqrt() / bnorm,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= opts.rel_tol * bnorm {
        Ok(KrylovInfo {
            iterations: opts.max_iters,
            relative_residual: rr.sqrt() / bnorm,
        })
    } else {
        Err(JeqError::LinearSolveFailed {
            iterations: opts.max_iters,
            relative_residual: rr.sqrt() / bnorm,
        })
    }
}

/// Solves a tridiagonal system in place (Thomas algorithm, no pivoting).
/// `lower[i]` multiplies x[i-1] in row i, `upper[i]` multiplies x[i+1].
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = if n > 1 { upper[0] / d } else { 0.0 };
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / d;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}
