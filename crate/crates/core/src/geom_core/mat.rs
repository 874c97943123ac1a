//! Small dense complex matrices (n <= 3) used as the per-point value type of
//! Hermitian fields.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;

pub const MAX_DIM: usize = 3;

/// A complex n×n matrix with n <= 3, stored row-major in a fixed buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    n: usize,
    a: [Complex64; 9],
}

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

impl Mat {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "matrix dimension must be 1..=3");
        Mat { n, a: [ZERO; 9] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.a[i * 3 + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.a[i * 3 + i] = Complex64::new(v, 0.0);
        }
        m
    }

    /// Builds a matrix from row-major complex entries.
    pub fn from_rows(n: usize, entries: &[Complex64]) -> Self {
        assert_eq!(entries.len(), n * n);
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.a[i * 3 + j] = entries[i * n + j];
            }
        }
        m
    }

    /// Builds a matrix from real row-major entries.
    pub fn from_real_rows(n: usize, entries: &[f64]) -> Self {
        let c: Vec<Complex64> = entries.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Mat::from_rows(n, &c)
    }

    /// The elementary matrix with a single one at (i, j).
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Mat::zeros(n);
        m.a[i * 3 + j] = Complex64::new(1.0, 0.0);
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.a[i * 3 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.a[i * 3 + j] = v;
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        for v in m.a.iter_mut() {
            *v *= s;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i * 3 + j] = self.a[j * 3 + i].conj();
            }
        }
        m
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self.a[i * 3 + i]).sum()
    }

    /// Largest entry of |M - M^†|.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                d = d.max((self.a[i * 3 + j] - self.a[j * 3 + i].conj()).norm());
            }
        }
        d
    }

    /// Replaces the matrix by (M + M^†)/2.
    pub fn hermitian_part(&self) -> Self {
        let mut m = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i * 3 + j] = (self.a[i * 3 + j] + self.a[j * 3 + i].conj()) * 0.5;
            }
        }
        m
    }

    pub fn det(&self) -> Complex64 {
        let a = &self.a;
        match self.n {
            1 => a[0],
            2 => a[0] * a[4] - a[1] * a[3],
            _ => {
                a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                    + a[2] * (a[3] * a[7] - a[4] * a[6])
            }
        }
    }

    /// Classical adjugate, so that M · adj(M) = det(M) · I.
    pub fn adjugate(&self) -> Self {
        let a = &self.a;
        let mut m = Mat::zeros(self.n);
        match self.n {
            1 => m.a[0] = Complex64::new(1.0, 0.0),
            2 => {
                m.a[0] = a[4];
                m.a[1] = -a[1];
                m.a[3] = -a[3];
                m.a[4] = a[0];
            }
            _ => {
                let c = |r0: usize, c0: usize, r1: usize, c1: usize| {
                    a[r0 * 3 + c0] * a[r1 * 3 + c1] - a[r0 * 3 + c1] * a[r1 * 3 + c0]
                };
                m.a[0] = c(1, 1, 2, 2);
                m.a[1] = -c(0, 1, 2, 2);
                m.a[2] = c(0, 1, 1, 2);
                m.a[3] = -c(1, 0, 2, 2);
                m.a[4] = c(0, 0, 2, 2);
                m.a[5] = -c(0, 0, 1, 2);
                m.a[6] = c(1, 0, 2, 1);
                m.a[7] = -c(0, 0, 2, 1);
                m.a[8] = c(0, 0, 1, 1);
            }
        }
        m
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.norm() == 0.0 || !d.re.is_finite() {
            return None;
        }
        let adj = self.adjugate();
        let inv_d = d.inv();
        let mut m = adj;
        for v in m.a.iter_mut() {
            *v *= inv_d;
        }
        Some(m)
    }

    /// Eigenvalues of a Hermitian matrix in ascending order (entries beyond n are zero).
    pub fn eigenvalues_hermitian(&self) -> [f64; 3] {
        let a = &self.a;
        match self.n {
            1 => [a[0].re, 0.0, 0.0],
            2 => {
                let mean = 0.5 * (a[0].re + a[4].re);
                let half = 0.5 * (a[0].re - a[4].re);
                let r = (half * half + a[1].norm_sqr()).sqrt();
                [mean - r, mean + r, 0.0]
            }
            _ => {
                let h = self.hermitian_part();
                let m = Matrix3::from_fn(|i, j| h.a[i * 3 + j]);
                let e = SymmetricEigen::new(m).eigenvalues;
                let mut v = [e[0], e[1], e[2]];
                v.sort_by(|x, y| x.total_cmp(y));
                v
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues_hermitian()[0]
    }

    /// Lower-triangular Cholesky factor L with M = L L^†, if M is positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let n = self.n;
        let mut l = Mat::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l.get(j, k).norm_sqr();
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l.set(j, j, Complex64::new(ljj, 0.0));
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, s / ljj);
            }
        }
        Some(l)
    }

    /// Real part of tr(self · other).
    #[inline]
    pub fn trace_product_re(&self, other: &Mat) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for k in 0..n {
                let p = self.a[i * 3 + k] * other.a[k * 3 + i];
                s += p.re;
            }
        }
        s
    }

    /// Frobenius max-norm of the entries.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max(self.get(i, j).norm());
            }
        }
        m
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(self, rhs: Mat) -> Mat {
        debug_assert_eq!(self.n, rhs.n);
        let mut m = self;
        for (x, y) in m.a.iter_mut().zip(rhs.a.iter()) {
            *x += *y;
        }
        m
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(self, rhs: Mat) -> Mat {
        debug_assert_eq!(self.n, rhs.n);
        let mut m = self;
        for (x, y) in m.a.iter_mut().zip(rhs.a.iter()) {
            *x -= *y;
        }
        m
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        let n = self.n;
        debug_assert_eq!(n, rhs.n);
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = ZERO;
                for k in 0..n {
                    s += self.a[i * 3 + k] * rhs.a[k * 3 + j];
                }
                m.a[i * 3 + j] = s;
            }
        }
        m
    }
}

/// Mixed discriminant D(A_1, ..., A_n) normalized so that D(A, ..., A) = det A,
/// evaluated by inclusion-exclusion over subsets of the arguments.
pub fn mixed_discriminant(args: &[Mat]) -> Complex64 {
    let n = args.len();
    assert!(n >= 1 && n <= MAX_DIM && args.iter().all(|m| m.dim() == n));
    let mut total = ZERO;
    for mask in 1u32..(1u32 << n) {
        let mut s = Mat::zeros(n);
        for (i, m) in args.iter().enumerate() {
            if mask & (1 << i) != 0 {
                s = s + *m;
            }
        }
        let sign = if (n as u32 - mask.count_ones()) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        total += s.det() * sign;
    }
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    total / fact
}
