//! Exact intersection arithmetic on a Kähler surface: the J-constant, the
//! Donaldson class 2[ω] − C[χ], the restricted constant C_D and the fiber
//! coefficient b.

use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{JeqError, Result};

pub type Rational = BigRational;

/// Parses an integer, a decimal-free fraction "p/q", or an integer string.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p = BigInt::from_str(p.trim())
            .map_err(|e| JeqError::InvalidInput(format!("bad numerator in {s:?}: {e}")))?;
        let q = BigInt::from_str(q.trim())
            .map_err(|e| JeqError::InvalidInput(format!("bad denominator in {s:?}: {e}")))?;
        if q.is_zero() {
            return Err(JeqError::InvalidInput(format!("zero denominator in {s:?}")));
        }
        Ok(Rational::new(p, q))
    } else {
        let p = BigInt::from_str(s)
            .map_err(|e| JeqError::InvalidInput(format!("bad rational {s:?}: {e}")))?;
        Ok(Rational::from_integer(p))
    }
}

pub fn rational(p: i64, q: i64) -> Rational {
    Rational::new(BigInt::from(p), BigInt::from(q))
}

/// "p/q", or "p" for integers.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// A tracked sublattice of H^{1,1} with its intersection form and classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceClassData {
    pub q: Vec<Vec<Rational>>,
    pub omega: Vec<Rational>,
    pub chi: Vec<Rational>,
    pub divisor: Option<Vec<Rational>>,
    pub kx: Option<Vec<Rational>>,
    /// User assertion that X carries no curves of negative self-intersection.
    pub no_negative_curves: bool,
}

impl SurfaceClassData {
    pub fn new(
        q: Vec<Vec<Rational>>,
        omega: Vec<Rational>,
        chi: Vec<Rational>,
        divisor: Option<Vec<Rational>>,
        kx: Option<Vec<Rational>>,
        no_negative_curves: bool,
    ) -> Result<Self> {
        let r = q.len();
        if r == 0 || q.iter().any(|row| row.len() != r) {
            return Err(JeqError::InvalidInput(
                "intersection matrix must be square and non-empty".into(),
            ));
        }
        for i in 0..r {
            for j in 0..i {
                if q[i][j] != q[j][i] {
                    return Err(JeqError::InvalidInput(format!(
                        "intersection matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let classes = [Some(&omega), Some(&chi), divisor.as_ref(), kx.as_ref()];
        if classes.iter().flatten().any(|c| c.len() != r) {
            return Err(JeqError::InvalidInput(format!(
                "class vectors must have length {r}"
            )));
        }
        let d = SurfaceClassData {
            q,
            omega,
            chi,
            divisor,
            kx,
            no_negative_curves,
        };
        if !d.pair(&d.omega, &d.omega).is_positive() {
            return Err(JeqError::InvalidInput("[omega]^2 must be positive".into()));
        }
        Ok(d)
    }

    /// Q(u, v) = uᵀ Q v.
    pub fn pair(&self, u: &[Rational], v: &[Rational]) -> Rational {
        let mut s = Rational::zero();
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                s += ui * &self.q[i][j] * vj;
            }
        }
        s
    }
}

/// C = [ω]² / ([ω]·[χ]).
pub fn j_constant(data: &SurfaceClassData) -> Result<Rational> {
    let p = data.pair(&data.omega, &data.chi);
    if p.is_zero() {
        return Err(JeqError::DegeneratePairing);
    }
    Ok(data.pair(&data.omega, &data.omega) / p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// α² > 0, α·[ω] > 0 and no negative curves asserted.
    KahlerByLam,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DonaldsonReport {
    pub c: Rational,
    pub alpha: Vec<Rational>,
    pub alpha_sq: Rational,
    pub alpha_dot_omega: Rational,
    pub verdict: Verdict,
    /// What was assumed rather than verified.
    pub assumptions: Vec<String>,
}

/// α = 2[ω] − C[χ] with its square and its pairing with [ω].
pub fn donaldson_check(data: &SurfaceClassData) -> Result<DonaldsonReport> {
    let c = j_constant(data)?;
    let two = Rational::from_integer(BigInt::from(2));
    let alpha: Vec<Rational> = data
        .omega
        .iter()
        .zip(&data.chi)
        .map(|(w, x)| &two * w - &c * x)
        .collect();
    let alpha_sq = data.pair(&alpha, &alpha);
    let alpha_dot_omega = data.pair(&alpha, &data.omega);
    let positive = alpha_sq.is_positive() && alpha_dot_omega.is_positive();
    let mut assumptions = Vec::new();
    if data.no_negative_curves {
        assumptions
            .push("no curves of negative self-intersection (asserted, not verified)".to_string());
    }
    let verdict = if positive && data.no_negative_curves {
        Verdict::KahlerByLam
    } else {
        Verdict::Inconclusive
    };
    Ok(DonaldsonReport {
        c,
        alpha,
        alpha_sq,
        alpha_dot_omega,
        verdict,
        assumptions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestrictedConstant {
    pub c_d: Rational,
    /// n − C_D > 0 with n = 2; present when the strict-subsolution check was requested.
    pub strict_subsolution_ok: Option<bool>,
}

/// C_D = ([χ]·[D]) / ([ω]·[D]).
pub fn restricted_constant_cd(
    data: &SurfaceClassData,
    check_strict: bool,
) -> Result<RestrictedConstant> {
    let d = data
        .divisor
        .as_ref()
        .ok_or_else(|| JeqError::InvalidInput("divisor class [D] is required".into()))?;
    let wd = data.pair(&data.omega, d);
    if !wd.is_positive() {
        return Err(JeqError::DegenerateRestriction(format_rational(&wd)));
    }
    let c_d = data.pair(&data.chi, d) / wd;
    let strict_subsolution_ok =
        check_strict.then(|| (Rational::from_integer(BigInt::from(2)) - &c_d).is_positive());
    Ok(RestrictedConstant {
        c_d,
        strict_subsolution_ok,
    })
}

/// b = a / (2/C − 1/C_D), defined when 2 C_D > C.
pub fn coefficient_b(a: &Rational, c: &Rational, c_d: &Rational) -> Result<Rational> {
    if !a.is_positive() || !c.is_positive() {
        return Err(JeqError::InvalidInput("a and C must be positive".into()));
    }
    let two = Rational::from_integer(BigInt::from(2));
    if &two * c_d <= *c {
        return Err(JeqError::ConditionViolated {
            two_cd: format_rational(&(&two * c_d)),
            c: format_rational(c),
        });
    }
    let denom = &two / c - Rational::one() / c_d;
    Ok(a / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: i64) -> Rational {
        rational(p, 1)
    }

    fn hyperbolic() -> SurfaceClassData {
        SurfaceClassData::new(
            vec![vec![r(1), r(0)], vec![r(0), r(-1)]],
            vec![r(2), r(1)],
            vec![r(1), r(0)],
            Some(vec![r(1), r(1)]),
            None,
            true,
        )
        .unwrap()
    }

    #[test]
    fn parsing() {
        assert_eq!(parse_rational("3/2").unwrap(), rational(3, 2));
        assert_eq!(parse_rational(" -4 ").unwrap(), r(-4));
        assert_eq!(parse_rational("6/4").unwrap(), rational(3, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("0.5").is_err());
        assert_eq!(format_rational(&rational(-6, 4)), "-3/2");
        assert_eq!(format_rational(&r(7)), "7");
    }

    #[test]
    fn hyperbolic_example() {
        let d = hyperbolic();
        assert_eq!(j_constant(&d).unwrap(), rational(3, 2));
        let rep = donaldson_check(&d).unwrap();
        assert_eq!(rep.alpha, vec![rational(5, 2), r(2)]);
        assert_eq!(rep.alpha_sq, rational(9, 4));
        assert_eq!(rep.alpha_dot_omega, r(3));
        assert_eq!(rep.verdict, Verdict::KahlerByLam);
        assert_eq!(restricted_constant_cd(&d, false).unwrap().c_d, r(1));
    }

    #[test]
    fn degenerate_inputs() {
        let q = vec![vec![r(1), r(0)], vec![r(0), r(-1)]];
        let d = SurfaceClassData::new(
            q.clone(),
            vec![r(1), r(0)],
            vec![r(0), r(1)],
            Some(vec![r(0), r(1)]),
            None,
            false,
        )
        .unwrap();
        assert!(matches!(j_constant(&d), Err(JeqError::DegeneratePairing)));
        assert!(matches!(
            restricted_constant_cd(&d, false),
            Err(JeqError::DegenerateRestriction(_))
        ));
        assert!(
            SurfaceClassData::new(q, vec![r(0), r(1)], vec![r(1), r(0)], None, None, false)
                .is_err()
        );
        let asym = vec![vec![r(1), r(1)], vec![r(0), r(-1)]];
        assert!(
            SurfaceClassData::new(asym, vec![r(1), r(0)], vec![r(1), r(0)], None, None, false)
                .is_err()
        );
    }

    #[test]
    fn coefficient_b_examples() {
        assert_eq!(coefficient_b(&r(1), &r(1), &r(1)).unwrap(), r(1));
        assert_eq!(coefficient_b(&r(3), &rational(3, 2), &r(1)).unwrap(), r(9));
        assert!(matches!(
            coefficient_b(&r(1), &r(2), &r(1)),
            Err(JeqError::ConditionViolated { .. })
        ));
    }

    #[test]
    fn strict_flag() {
        let d = hyperbolic();
        assert_eq!(
            restricted_constant_cd(&d, true)
                .unwrap()
                .strict_subsolution_ok,
            Some(true)
        );
    }
}
