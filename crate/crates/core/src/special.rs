//! Error-function family, implemented locally so the law evaluations carry
//! no special-function dependency and stay generic over the scalar type.
//!
//! `erf`/`erfc` go through the regularized incomplete gamma functions
//! P(1/2, x^2) and Q(1/2, x^2) (power series below x^2 = 1.5, modified Lentz
//! continued fraction above), which are accurate to close to machine
//! precision in f64. `erfc_inv` polishes a rational first guess with Newton
//! steps using the exact derivative.

use crate::real::Real;

const MAX_ITER: usize = 400;

fn ln_sqrt_pi<F: Real>() -> F {
    // ln Gamma(1/2)
    F::of(0.572_364_942_924_700_1)
}

/// Regularized lower incomplete gamma P(1/2, x) by power series.
fn gamma_p_half_series<F: Real>(x: F) -> F {
    let a = F::half();
    let mut ap = a;
    let mut sum = a.recip();
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap = ap + F::one();
        del = del * x / ap;
        sum = sum + del;
        if del.abs() < sum.abs() * F::epsilon() {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_sqrt_pi()).exp()
}

/// Regularized upper incomplete gamma Q(1/2, x) by continued fraction.
fn gamma_q_half_cf<F: Real>(x: F) -> F {
    let a = F::half();
    let tiny = F::of(1e-300).max(F::min_positive_value());
    let mut b = x + F::one() - a;
    let mut c = tiny.recip();
    let mut d = b.recip();
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -F::of_u64(i as u64) * (F::of_u64(i as u64) - a);
        b = b + F::two();
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let delta = d * c;
        h = h * delta;
        if (delta - F::one()).abs() < F::epsilon() {
            break;
        }
    }
    (-x + a * x.ln() - ln_sqrt_pi()).exp() * h
}

/// Complementary error function.
pub fn erfc<F: Real>(x: F) -> F {
    if x < F::zero() {
        return F::two() - erfc(-x);
    }
    if x.is_zero() {
        return F::one();
    }
    let x2 = x * x;
    if x2 < F::of(1.5) {
        F::one() - gamma_p_half_series(x2)
    } else {
        gamma_q_half_cf(x2)
    }
}

/// Error function.
pub fn erf<F: Real>(x: F) -> F {
    if x < F::zero() {
        return -erf(-x);
    }
    let x2 = x * x;
    if x2 < F::of(1.5) {
        gamma_p_half_series(x2)
    } else {
        F::one() - gamma_q_half_cf(x2)
    }
}

/// Standard normal CDF.
pub fn normal_cdf<F: Real>(x: F) -> F {
    F::half() * erfc(-x / F::two().sqrt())
}

/// Acklam's rational approximation of the standard normal quantile,
/// used only as a Newton starting point.
fn probit_estimate(p: f64) -> f64 {
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
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -probit_estimate(1.0 - p)
    }
}

/// Inverse complementary error function on (0, 2).
pub fn erfc_inv<F: Real>(u: F) -> F {
    assert!(
        u > F::zero() && u < F::two(),
        "erfc_inv domain is (0, 2), got {u}"
    );
    // erfc(z) = u  <=>  z = -probit(u/2)/sqrt(2)
    let u64v = u.to_f64().unwrap();
    let mut z = F::of(-probit_estimate(u64v / 2.0) / std::f64::consts::SQRT_2);
    let two_over_sqrt_pi = F::of(1.128_379_167_095_512_6);
    for _ in 0..4 {
        let f = erfc(z) - u;
        let df = -two_over_sqrt_pi * (-z * z).exp();
        let step = f / df;
        z = z - step;
        if step.abs() <= z.abs() * F::of(1e-15) {
            break;
        }
    }
    z
}
