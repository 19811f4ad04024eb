//! Spatial mollifier: smooth, non-negative, radially symmetric, compactly
//! supported, normalized to integrate to one.
//!
//! The working object is a piecewise-linear radial table of the chosen
//! profile. Normalization and the self-overlap `(phi*phi)(0) = int phi^2` are
//! integrated segment-exactly (polynomial antiderivatives), so the declared
//! invariants hold to machine precision rather than to quadrature tolerance.
//! The full self-convolution `phi*phi` is tabulated on `[0, 2 rho]` once per
//! build and interpolated afterwards.

use serde::Serialize;

use crate::error::{Error, Result};

/// Radial profile shapes on `u = r/rho in [0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Profile {
    /// `exp(-1/(1-u^2))`, the standard smooth bump.
    StandardBump,
    /// Flat top on `[0, flat]` with a smooth decay to zero on `[flat, 1]`.
    Plateau { flat: f64 },
}

impl Profile {
    fn eval(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return 0.0;
        }
        match *self {
            Profile::StandardBump => (-1.0 / (1.0 - u * u)).exp(),
            Profile::Plateau { flat } => {
                if u <= flat {
                    1.0
                } else {
                    let s = (u - flat) / (1.0 - flat);
                    let psi = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
                    psi(1.0 - s) / (psi(s) + psi(1.0 - s))
                }
            }
        }
    }
}

/// Surface area of the unit (d-1)-sphere, `2 pi^{d/2} / Gamma(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    let gamma_half = |twice: usize| -> f64 {
        // Gamma(twice/2) for twice >= 1.
        let mut x = if twice % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
        let mut k = if twice % 2 == 0 { 2 } else { 1 };
        while k + 2 <= twice {
            x *= k as f64 / 2.0;
            k += 2;
        }
        x
    };
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d)
}

#[derive(Debug, Clone, Serialize)]
pub struct Mollifier {
    pub d: usize,
    pub rho: f64,
    pub profile: Profile,
    /// Normalized profile values at radii `i * rho / (n-1)`.
    #[serde(skip)]
    table: Vec<f64>,
    inv_dr: f64,
    /// `(phi*phi)(s_i)` at `s_i = i * 2 rho / (m-1)`.
    #[serde(skip)]
    self_conv_table: Vec<f64>,
    inv_ds: f64,
    /// `(phi*phi)(0) = int phi^2`.
    pub self_conv0: f64,
    /// `int phi` of the tabulated object; 1 up to rounding.
    pub integral: f64,
}

/// Exact `int_{r0}^{r1} (a + b r) r^{d-1} dr` for one linear segment.
fn segment_linear(d: usize, r0: f64, r1: f64, a: f64, b: f64) -> f64 {
    let pw = |r: f64, k: i32| r.powi(k);
    let dd = d as i32;
    a * (pw(r1, dd) - pw(r0, dd)) / dd as f64
        + b * (pw(r1, dd + 1) - pw(r0, dd + 1)) / (dd + 1) as f64
}

/// Exact `int_{r0}^{r1} (a + b r)^2 r^{d-1} dr` for one linear segment.
fn segment_linear_sq(d: usize, r0: f64, r1: f64, a: f64, b: f64) -> f64 {
    let pw = |r: f64, k: i32| r.powi(k);
    let dd = d as i32;
    let t1 = a * a * (pw(r1, dd) - pw(r0, dd)) / dd as f64;
    let t2 = 2.0 * a * b * (pw(r1, dd + 1) - pw(r0, dd + 1)) / (dd + 1) as f64;
    let t3 = b * b * (pw(r1, dd + 2) - pw(r0, dd + 2)) / (dd + 2) as f64;
    t1 + t2 + t3
}

fn radial_integral(d: usize, rho: f64, table: &[f64]) -> f64 {
    let n = table.len();
    let dr = rho / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n - 1 {
        let (r0, r1) = (i as f64 * dr, (i + 1) as f64 * dr);
        let m = (table[i + 1] - table[i]) / dr;
        acc += segment_linear(d, r0, r1, table[i] - m * r0, m);
    }
    sphere_area(d) * acc
}

fn radial_integral_sq(d: usize, rho: f64, table: &[f64]) -> f64 {
    let n = table.len();
    let dr = rho / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n - 1 {
        let (r0, r1) = (i as f64 * dr, (i + 1) as f64 * dr);
        let m = (table[i + 1] - table[i]) / dr;
        acc += segment_linear_sq(d, r0, r1, table[i] - m * r0, m);
    }
    sphere_area(d) * acc
}

#[inline(always)]
fn lerp(table: &[f64], inv_step: f64, x: f64) -> f64 {
    let u = x * inv_step;
    let i = u as usize;
    if i + 1 >= table.len() {
        return 0.0;
    }
    let frac = u - i as f64;
    table[i] + frac * (table[i + 1] - table[i])
}

impl Mollifier {
    /// phi at radius `r` (0 beyond the support).
    #[inline(always)]
    pub fn eval_radial(&self, r: f64) -> f64 {
        if r >= self.rho {
            0.0
        } else {
            lerp(&self.table, self.inv_dr, r)
        }
    }

    /// phi at squared radius; the hot path of field evaluation.
    #[inline(always)]
    pub fn eval_sq_radius(&self, r2: f64) -> f64 {
        if r2 >= self.rho * self.rho {
            0.0
        } else {
            lerp(&self.table, self.inv_dr, r2.sqrt())
        }
    }

    /// `(phi*phi)(s)` by interpolation of the tabulated self-convolution.
    pub fn self_conv(&self, s: f64) -> f64 {
        if s >= 2.0 * self.rho {
            0.0
        } else {
            lerp(&self.self_conv_table, self.inv_ds, s)
        }
    }

    pub fn self_conv_table(&self) -> &[f64] {
        &self.self_conv_table
    }
}

/// Self-convolution of a normalized radial table at separation `s`.
///
/// d = 1 integrates the overlap directly; d >= 2 uses the spherical angle
/// representation with Simpson quadrature in `r` and `theta`.
fn self_conv_at(
    d: usize,
    rho: f64,
    eval: &dyn Fn(f64) -> f64,
    s: f64,
    r_nodes: usize,
    theta_nodes: usize,
) -> f64 {
    if s >= 2.0 * rho {
        return 0.0;
    }
    if d == 1 {
        // int phi(y) phi(s - y) dy over y in (s - rho, rho), phi even.
        let (lo, hi) = (s - rho, rho);
        let n = r_nodes | 1;
        let h = (hi - lo) / (n - 1) as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let y = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * eval(y.abs()) * eval((s - y).abs());
        }
        return acc * h / 3.0;
    }
    let nr = r_nodes | 1;
    let nt = theta_nodes | 1;
    let hr = rho / (nr - 1) as f64;
    let ht = std::f64::consts::PI / (nt - 1) as f64;
    let mut acc = 0.0;
    for i in 0..nr {
        let r = i as f64 * hr;
        let fr = eval(r);
        if fr == 0.0 {
            continue;
        }
        let wr = if i == 0 || i == nr - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let mut inner = 0.0;
        for j in 0..nt {
            let theta = j as f64 * ht;
            let wt = if j == 0 || j == nt - 1 {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let dist2 = (s * s + r * r - 2.0 * s * r * theta.cos()).max(0.0);
            let g = eval(dist2.sqrt());
            if g != 0.0 {
                inner += wt * theta.sin().powi(d as i32 - 2) * g;
            }
        }
        acc += wr * fr * r.powi(d as i32 - 1) * inner * ht / 3.0;
    }
    sphere_area(d - 1) * acc * hr / 3.0
}

/// Build a normalized mollifier of radius `rho` in dimension `d`.
///
/// `resolution` sets the radial table size (clamped below at 512); the
/// self-convolution is tabulated on 513 separations in `[0, 2 rho]`.
pub fn build_mollifier(d: usize, rho: f64, profile: Profile, resolution: usize) -> Result<Mollifier> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be >= 1".into()));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if let Profile::Plateau { flat } = profile {
        if !(0.0..1.0).contains(&flat) {
            return Err(Error::InvalidArgument(format!("plateau fraction {flat} outside [0,1)")));
        }
    }
    let n = resolution.max(512) + 1;
    let mut table: Vec<f64> = (0..n)
        .map(|i| profile.eval(i as f64 / (n - 1) as f64))
        .collect();
    if table.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NotNormalizable("profile takes negative or non-finite values".into()));
    }
    let raw_integral = radial_integral(d, rho, &table);
    if !(raw_integral > 0.0) || !raw_integral.is_finite() {
        return Err(Error::NotNormalizable(format!(
            "profile integral is {raw_integral}; cannot scale to mass one"
        )));
    }
    let c = 1.0 / raw_integral;
    for v in &mut table {
        *v *= c;
    }
    let integral = radial_integral(d, rho, &table);
    let self_conv0 = radial_integral_sq(d, rho, &table);

    let inv_dr = (n - 1) as f64 / rho;
    let eval = |r: f64| -> f64 {
        if r >= rho {
            0.0
        } else {
            lerp(&table, inv_dr, r)
        }
    };

    let m = 513;
    let ds = 2.0 * rho / (m - 1) as f64;
    let mut self_conv_table: Vec<f64> = (0..m)
        .map(|i| self_conv_at(d, rho, &eval, i as f64 * ds, 1025, 129))
        .collect();
    // Pin the tabulated peak to the exact int phi^2 and check the
    // Cauchy-Schwarz bound (phi*phi)(x) <= (phi*phi)(0).
    self_conv_table[0] = self_conv0;
    for (i, v) in self_conv_table.iter().enumerate() {
        if *v > self_conv0 * (1.0 + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "self-convolution exceeds its value at 0 at node {i}: {v} > {self_conv0}"
            )));
        }
    }
    *self_conv_table.last_mut().unwrap() = 0.0;

    Ok(Mollifier {
        d,
        rho,
        profile,
        table,
        inv_dr,
        self_conv_table,
        inv_ds: (m - 1) as f64 / (2.0 * rho),
        self_conv0,
        integral,
    })
}

/// `int phi_a phi_b` together with a flag telling whether the two mollifiers
/// generate distinguishable polymer measures, i.e. whether
/// `|phi_a - phi_b|_2^2 = int phi_a^2 + int phi_b^2 - 2 int phi_a phi_b`
/// exceeds tolerance (the quadratic variation rate of the Hamiltonian
/// difference is `2T` times that quantity).
pub fn mollifier_overlap(a: &Mollifier, b: &Mollifier) -> Result<(f64, bool)> {
    if a.d != b.d {
        return Err(Error::DimensionMismatch { expected: a.d, got: b.d });
    }
    let hi = a.rho.min(b.rho);
    let n = 8193;
    let h = hi / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let r = i as f64 * h;
        let w = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * a.eval_radial(r) * b.eval_radial(r) * r.powi(a.d as i32 - 1);
    }
    let overlap = sphere_area(a.d) * acc * h / 3.0;
    let dist_sq = a.self_conv0 + b.self_conv0 - 2.0 * overlap;
    let tol = 1e-6 * a.self_conv0.max(b.self_conv0);
    Ok((overlap, dist_sq > tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_exact_for_plateau_bump_d1() {
        let m = build_mollifier(1, 1.0, Profile::Plateau { flat: 0.5 }, 4096).unwrap();
        assert!((m.integral - 1.0).abs() < 1e-12, "integral {}", m.integral);
        assert!(m.self_conv0 > 0.0);
    }

    #[test]
    fn normalization_is_exact_for_default_bump_d3() {
        let m = build_mollifier(3, 1.0, Profile::StandardBump, 8192).unwrap();
        assert!((m.integral - 1.0).abs() < 1e-12, "integral {}", m.integral);
    }

    /// Oracle: int phi^2 re-derived by brute-force Simpson quadrature of the
    /// analytic profile at 4x the build resolution.
    #[test]
    fn self_conv0_matches_independent_quadrature_d3() {
        let res = 8192usize;
        let m = build_mollifier(3, 1.0, Profile::StandardBump, res).unwrap();

        let n = 4 * res + 1;
        let h = 1.0 / (n - 1) as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..n {
                let r = i as f64 * h;
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * f(r);
            }
            acc * h / 3.0
        };
        let raw = |r: f64| Profile::StandardBump.eval(r);
        let z = sphere_area(3) * simpson(&|r| raw(r) * r * r);
        let v0 = sphere_area(3) * simpson(&|r| (raw(r) / z) * (raw(r) / z) * r * r);
        let rel = (m.self_conv0 - v0).abs() / v0;
        assert!(rel < 1e-6, "self_conv0 {} vs oracle {v0}, rel {rel}", m.self_conv0);
    }

    #[test]
    fn self_convolution_vanishes_at_twice_the_radius() {
        for d in [1usize, 2, 3] {
            let m = build_mollifier(d, 1.0, Profile::StandardBump, 2048).unwrap();
            assert_eq!(m.self_conv(2.0), 0.0);
            assert_eq!(m.self_conv(2.5), 0.0);
            assert!(m.self_conv(1.999) < 1e-6);
        }
    }

    #[test]
    fn self_convolution_has_unit_mass_d1() {
        // int (phi*phi) = (int phi)^2 = 1; trapezoid over the table.
        let m = build_mollifier(1, 1.0, Profile::StandardBump, 4096).unwrap();
        let t = m.self_conv_table();
        let ds = 2.0 / (t.len() - 1) as f64;
        // (phi*phi) is even, so the full-line integral doubles s > 0.
        let mut acc = t[0];
        for v in &t[1..t.len() - 1] {
            acc += 2.0 * v;
        }
        acc *= ds;
        assert!((acc - 1.0).abs() < 1e-4, "mass of phi*phi = {acc}");
    }

    #[test]
    fn self_conv_dominated_by_value_at_zero() {
        let m = build_mollifier(3, 1.0, Profile::StandardBump, 2048).unwrap();
        for i in 0..64 {
            let s = 2.0 * i as f64 / 63.0;
            assert!(m.self_conv(s) <= m.self_conv0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn overlap_of_identical_mollifiers_is_not_distinguishable() {
        let m = build_mollifier(1, 1.0, Profile::StandardBump, 2048).unwrap();
        let (ov, distinct) = mollifier_overlap(&m, &m).unwrap();
        assert!((ov - m.self_conv0).abs() < 1e-9 * m.self_conv0);
        assert!(!distinct);
    }

    #[test]
    fn overlap_obeys_strict_cauchy_schwarz_for_different_radii() {
        let a = build_mollifier(1, 1.0, Profile::StandardBump, 2048).unwrap();
        let b = build_mollifier(1, 2.0, Profile::StandardBump, 2048).unwrap();
        let (ov, distinct) = mollifier_overlap(&a, &b).unwrap();
        assert!(distinct);
        // Strict Cauchy-Schwarz for non-proportional functions.
        let gm = (a.self_conv0 * b.self_conv0).sqrt();
        assert!(ov < gm * (1.0 - 1e-3), "ov {ov} vs geometric mean {gm}");
        assert!(ov > 0.0);
    }

    /// Oracle: the d=1 overlap for rho=1 vs rho=2 against a 65537-node
    /// Simpson quadrature of the analytic normalized profiles.
    #[test]
    fn overlap_matches_fine_grid_quadrature_d1() {
        let a = build_mollifier(1, 1.0, Profile::StandardBump, 8192).unwrap();
        let b = build_mollifier(1, 2.0, Profile::StandardBump, 8192).unwrap();
        let (ov, _) = mollifier_overlap(&a, &b).unwrap();

        let n = 65537usize;
        let simpson = |hi: f64, f: &dyn Fn(f64) -> f64| -> f64 {
            let h = hi / (n - 1) as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * f(i as f64 * h);
            }
            acc * h / 3.0
        };
        let raw = |r: f64, rho: f64| Profile::StandardBump.eval(r / rho);
        let za = 2.0 * simpson(1.0, &|r| raw(r, 1.0));
        let zb = 2.0 * simpson(2.0, &|r| raw(r, 2.0));
        let oracle = 2.0 * simpson(1.0, &|r| raw(r, 1.0) / za * raw(r, 2.0) / zb);
        let rel = (ov - oracle).abs() / oracle;
        assert!(rel < 1e-6, "overlap {ov} vs oracle {oracle}, rel {rel}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = build_mollifier(1, 1.0, Profile::StandardBump, 512).unwrap();
        let b = build_mollifier(2, 1.0, Profile::StandardBump, 512).unwrap();
        assert!(mollifier_overlap(&a, &b).is_err());
    }

    #[test]
    fn invalid_inputs_are_refused() {
        assert!(build_mollifier(1, f64::NAN, Profile::StandardBump, 512).is_err());
        assert!(build_mollifier(1, -1.0, Profile::StandardBump, 512).is_err());
        assert!(build_mollifier(0, 1.0, Profile::StandardBump, 512).is_err());
        assert!(build_mollifier(1, 1.0, Profile::Plateau { flat: 1.5 }, 512).is_err());
    }
}
