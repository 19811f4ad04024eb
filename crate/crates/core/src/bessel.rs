//! Bessel functions of the first kind at order `nu = (d-2)/2` and their
//! smallest positive roots, which fix the Wiener small-ball constants.
//!
//! Orders occurring here are integers or half-integers. Half-integer orders
//! use the closed spherical forms plus the three-term recurrence; integer
//! orders use the ascending series (adequate for the root region of every
//! moderate dimension). No external special-function dependency.

use crate::error::{Error, Result};
use crate::paths::WeightFunction;

/// J_nu(x) for `2 nu = twice_nu` (integer), x > 0.
pub fn bessel_j_half_orders(twice_nu: i32, x: f64) -> f64 {
    assert!(x > 0.0, "evaluation requires x > 0");
    if twice_nu % 2 != 0 {
        // Half-integer: J_{-1/2}, J_{1/2}, then upward recurrence
        // J_{nu+1}(x) = (2 nu / x) J_nu(x) - J_{nu-1}(x).
        let pref = (2.0 / (std::f64::consts::PI * x)).sqrt();
        let mut jm = pref * x.cos(); // J_{-1/2}
        if twice_nu == -1 {
            return jm;
        }
        let mut j = pref * x.sin(); // J_{1/2}
        let mut two_nu = 1i32; // 2*nu for the current j
        while two_nu < twice_nu {
            let jn = (two_nu as f64 / x) * j - jm;
            jm = j;
            j = jn;
            two_nu += 2;
        }
        j
    } else {
        let nu = (twice_nu / 2) as u32;
        bessel_j_int_series(nu, x)
    }
}

/// Ascending series for integer order; accurate to ~1e-12 for x <= 12 and
/// degrades gracefully beyond (cancellation); the first root of every order
/// used here lies well inside the reliable range.
fn bessel_j_int_series(nu: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    // leading factor (x/2)^nu / nu!
    let mut term = 1.0;
    for k in 1..=nu {
        term *= half / k as f64;
    }
    let mut sum = term;
    let mut m = 1u32;
    loop {
        term *= -q / (m as f64 * (m + nu) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) || m > 400 {
            break;
        }
        m += 1;
    }
    sum
}

/// Smallest positive root of `J_{(d-2)/2}` by bracketing plus bisection to a
/// 1e-12 bracket. `d = 3` gives pi, `d = 1` gives pi/2.
pub fn bessel_root(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be >= 1".into()));
    }
    let twice_nu = d as i32 - 2;
    let f = |x: f64| bessel_j_half_orders(twice_nu, x);
    // J_nu > 0 just right of 0; march until the first sign change. Roots of
    // consecutive orders are separated by more than the 0.05 step.
    let mut a = 0.05f64;
    let mut fa = f(a);
    let mut b = a;
    loop {
        b += 0.05;
        let fb = f(b);
        if fa > 0.0 && fb <= 0.0 {
            break;
        }
        a = b;
        fa = fb;
        if b > 1000.0 {
            return Err(Error::InvalidArgument(format!("no sign change found for d={d}")));
        }
    }
    let mut lo = a;
    let mut hi = b;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Wiener small-ball constant `(j^2/2) * int_0^H g^{-2}`, the decay rate of
/// `-eps^2 log P_0(|w| < eps)`. `horizon = None` is the full weighted norm;
/// a finite horizon gives the truncated-norm constant (e.g. the classical
/// sup-norm values pi^2/8 in d=1 and pi^2/2 in d=3 at horizon one).
pub fn smallball_constant(g: &WeightFunction, d: usize, horizon: Option<f64>) -> Result<f64> {
    let j = bessel_root(d)?;
    let ig = g.integral_inv_sq(horizon)?;
    Ok(0.5 * j * j * ig)
}
