//! Standard normal distribution function and its inverse.

use crate::error::{Error, Result};
use crate::scalar::Real;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// `erf(z)` from the series `2/sqrt(pi) e^{-z^2} sum (2z^2)^n z / (2n+1)!!`.
///
/// All terms are positive, so there is no cancellation and the absolute error stays at
/// the level of a few ulps across the whole range used here.
fn erf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let a = z.abs();
    if a > 6.5 {
        return z.signum();
    }
    let two_z2 = 2.0 * a * a;
    let mut term = a;
    let mut sum = a;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= two_z2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    let r = (FRAC_2_SQRT_PI * (-a * a).exp() * sum).min(1.0);
    r.copysign(z)
}

/// Standard normal CDF in `f64`.
pub fn normal_cdf_f64(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal CDF.
pub fn normal_cdf<T: Real>(x: T) -> T {
    T::lit(normal_cdf_f64(x.as_f64()))
}

fn normal_pdf_f64(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Rational approximation with relative error around 1e-9, used as the starting point.
fn quantile_initial(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        q * (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5])
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse of the standard normal CDF in `f64`.
///
/// The rational starting point is polished with Halley steps against [`normal_cdf_f64`].
pub fn inv_normal_cdf_f64(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = quantile_initial(p);
    for _ in 0..3 {
        let e = normal_cdf_f64(x) - p;
        let pdf = normal_pdf_f64(x);
        if pdf == 0.0 {
            break;
        }
        let u = e / pdf;
        let dx = u / (1.0 + 0.5 * x * u);
        x -= dx;
        if dx.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Inverse of the standard normal CDF, `Phi^{-1}(p)` for `p` in `(0, 1)`.
pub fn inv_normal_cdf<T: Real>(p: T) -> Result<T> {
    inv_normal_cdf_f64(p.as_f64()).map(T::lit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_point() {
        assert_eq!(inv_normal_cdf_f64(0.5).unwrap(), 0.0);
    }

    #[test]
    fn quantile_975() {
        let x = inv_normal_cdf_f64(0.975).unwrap();
        assert!((x - 1.959_963_984_540_054).abs() < 1e-9, "{x}");
    }

    #[test]
    fn one_sigma() {
        let x = inv_normal_cdf_f64(0.841_344_746).unwrap();
        assert!((x - 1.0).abs() < 1e-6, "{x}");
    }

    #[test]
    fn rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(inv_normal_cdf_f64(p).is_err());
        }
    }

    #[test]
    fn erf_reference_values() {
        // Abramowitz & Stegun table 7.1.
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-15);
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-15);
        assert!((erf(-1.0) + 0.842_700_792_949_714_9).abs() < 1e-15);
    }

    #[test]
    fn f32_path() {
        let x: f32 = inv_normal_cdf(0.95f32).unwrap();
        assert!((x - 1.644_853_6).abs() < 1e-5);
    }

    proptest::proptest! {
        #[test]
        fn inverse_round_trip(p in 1e-9f64..(1.0 - 1e-9)) {
            let x = inv_normal_cdf_f64(p).unwrap();
            proptest::prop_assert!((normal_cdf_f64(x) - p).abs() < 1e-12);
        }
    }
}
