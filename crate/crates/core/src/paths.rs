//! Brownian path sampling on the lattice time grid, weighted norms and the
//! uniform-continuity modulus used as a tightness diagnostic.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

/// A d-dimensional path on the grid `0, dt, ..., steps * dt`, stored flat as
/// `positions[step * d + coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub d: usize,
    pub dt: f64,
    pub seed: u64,
    positions: Vec<f64>,
}

impl PathSample {
    pub fn from_positions(d: usize, dt: f64, seed: u64, positions: Vec<f64>) -> Self {
        debug_assert_eq!(positions.len() % d, 0);
        PathSample { d, dt, seed, positions }
    }

    /// Number of grid steps (positions minus one).
    pub fn steps(&self) -> usize {
        self.positions.len() / self.d - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    #[inline(always)]
    pub fn position(&self, step: usize) -> &[f64] {
        &self.positions[step * self.d..(step + 1) * self.d]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    #[inline(always)]
    pub fn sq_radius(&self, step: usize) -> f64 {
        self.position(step).iter().map(|x| x * x).sum()
    }

    /// Euclidean distance between this path and another at a grid step.
    #[inline(always)]
    pub fn sq_distance(&self, other: &PathSample, step: usize) -> f64 {
        self.position(step)
            .iter()
            .zip(other.position(step))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Largest coordinate magnitude over the whole path.
    pub fn max_abs_coord(&self) -> f64 {
        self.positions.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

}

/// Sample a Brownian path with `steps` increments of variance `dt I_d`,
/// started at `start` (the origin for the standard Wiener measure).
pub fn sample_brownian(d: usize, dt: f64, steps: usize, seed: u64, start: &[f64]) -> PathSample {
    assert_eq!(start.len(), d, "start point has wrong dimension");
    let mut rng = rng::chacha(seed);
    let sqrt_dt = dt.sqrt();
    let mut positions = Vec::with_capacity((steps + 1) * d);
    positions.extend_from_slice(start);
    let mut cur = start.to_vec();
    for _ in 0..steps {
        for item in cur.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *item += sqrt_dt * z;
        }
        positions.extend_from_slice(&cur);
    }
    PathSample { d, dt, seed, positions }
}

/// Weight functions `g` for the path norm `sup_t |w_t| / g(t)`; the class
/// requires `inf g > 0` and `inf g(t)/t > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WeightFunction {
    /// `g(t) = a * max(1, t)`; the default, with `int g^-2 = 2/a^2`.
    ScaledMaxOne { a: f64 },
    /// `g == 1`; only admissible with a finite horizon (the sup-norm case).
    One,
}

impl WeightFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            WeightFunction::ScaledMaxOne { a } => a * t.max(1.0),
            WeightFunction::One => 1.0,
        }
    }

    /// `int_0^H g^{-2}(t) dt`, with `H = None` meaning the full half-line.
    /// Errors when the integral diverges (constant weight, infinite horizon).
    pub fn integral_inv_sq(&self, horizon: Option<f64>) -> Result<f64> {
        match *self {
            WeightFunction::ScaledMaxOne { a } => {
                if !(a > 0.0) {
                    return Err(Error::InvalidArgument(format!("weight scale a={a} must be > 0")));
                }
                let full = match horizon {
                    None => 2.0,
                    Some(h) if h <= 1.0 => h,
                    Some(h) => 1.0 + (1.0 - 1.0 / h),
                };
                Ok(full / (a * a))
            }
            WeightFunction::One => match horizon {
                Some(h) if h.is_finite() => Ok(h),
                _ => Err(Error::DivergentWeight),
            },
        }
    }
}

/// `max over grid times t in (0, horizon] of |w_t| / g(t)`; grid-only, no
/// interpolation between grid points.
pub fn weighted_norm(path: &PathSample, g: &WeightFunction, horizon: f64) -> f64 {
    let steps = ((horizon / path.dt) + 1e-9).floor() as usize;
    let steps = steps.min(path.steps());
    let mut best = 0.0f64;
    for k in 1..=steps {
        let t = k as f64 * path.dt;
        let v = path.sq_radius(k).sqrt() / g.eval(t);
        if v > best {
            best = v;
        }
    }
    best
}

/// Uniform-continuity modulus `sup_{|t-s|<delta, t,s <= t_max} |w_t - w_s|`
/// over grid pairs.
pub fn modulus(path: &PathSample, t_max: f64, delta: f64) -> f64 {
    assert!(delta > 0.0, "delta must be positive");
    let n = (((t_max / path.dt) + 1e-9).floor() as usize).min(path.steps());
    // |i - j| dt < delta  <=>  |i - j| <= w
    let w = ((delta / path.dt) - 1e-9).ceil() as usize - 1;
    let mut best = 0.0f64;
    for offset in 1..=w.min(n) {
        for i in 0..=(n - offset) {
            let d2: f64 = path
                .position(i)
                .iter()
                .zip(path.position(i + offset))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 > best {
                best = d2;
            }
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_path(d: usize, dt: f64, steps: usize, value: f64) -> PathSample {
        let positions = vec![value; (steps + 1) * d];
        PathSample::from_positions(d, dt, 0, positions)
    }

    #[test]
    fn start_point_is_respected() {
        let p = sample_brownian(3, 0.01, 10, 7, &[1.0, -2.0, 0.5]);
        assert_eq!(p.position(0), &[1.0, -2.0, 0.5]);
        let q = sample_brownian(3, 0.01, 10, 7, &[1.0, -2.0, 0.5]);
        assert_eq!(p.positions(), q.positions(), "determinism in (seed, start)");
    }

    #[test]
    fn terminal_variance_matches_horizon() {
        let n = 100_000;
        let d = 2;
        let t = 2.0;
        let mut sums = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        let stream = rng::substream(11, "bm-var");
        for i in 0..n {
            let p = sample_brownian(d, 0.05, 40, rng::indexed(stream, i), &[0.0, 0.0]);
            let x = p.position(p.steps());
            for (j, &v) in x.iter().enumerate() {
                sums[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..d {
            let mean = sums[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!((var - t).abs() / t < 0.02, "coordinate {j}: var {var}");
        }
    }

    #[test]
    fn disjoint_increments_are_uncorrelated() {
        let n = 50_000;
        let stream = rng::substream(12, "bm-indep");
        let mut cross = 0.0;
        for i in 0..n {
            let p = sample_brownian(1, 0.5, 4, rng::indexed(stream, i), &[0.0]);
            let inc1 = p.position(1)[0] - p.position(0)[0];
            let inc2 = p.position(3)[0] - p.position(2)[0];
            cross += inc1 * inc2;
        }
        // Each increment has variance 0.5; 4 SE bound on the empirical cov.
        let se = 0.5 / (n as f64).sqrt();
        assert!((cross / n as f64).abs() < 4.0 * se);
    }

    #[test]
    fn weighted_norm_of_zero_path_is_zero() {
        let p = constant_path(3, 0.1, 50, 0.0);
        assert_eq!(weighted_norm(&p, &WeightFunction::ScaledMaxOne { a: 1.0 }, 5.0), 0.0);
    }

    #[test]
    fn weighted_norm_touching_the_weight_is_one() {
        // Path |w_t| = g(t) at exactly one grid point, below elsewhere.
        let g = WeightFunction::ScaledMaxOne { a: 2.0 };
        let dt = 0.5;
        let steps = 8;
        let mut positions = vec![0.0; steps + 1];
        positions[4] = g.eval(4.0 * dt); // = 2 * max(1, 2) = 4
        let p = PathSample::from_positions(1, dt, 0, positions);
        assert!((weighted_norm(&p, &g, 4.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_norm_equals_exhaustive_scan() {
        let g = WeightFunction::ScaledMaxOne { a: 0.7 };
        let p = sample_brownian(2, 0.25, 64, 99, &[0.0, 0.0]);
        let horizon = 12.0;
        let brute = (1..=48)
            .map(|k| p.sq_radius(k).sqrt() / g.eval(k as f64 * 0.25))
            .fold(0.0f64, f64::max);
        assert_eq!(weighted_norm(&p, &g, horizon), brute);
    }

    #[test]
    fn norm_is_monotone_in_horizon() {
        let g = WeightFunction::ScaledMaxOne { a: 1.0 };
        let p = sample_brownian(3, 0.125, 80, 3, &[0.0; 3]);
        let mut last = 0.0;
        for h in [1.0, 2.0, 5.0, 10.0] {
            let v = weighted_norm(&p, &g, h);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn integral_inv_sq_closed_forms() {
        let g = WeightFunction::ScaledMaxOne { a: 1.0 };
        assert!((g.integral_inv_sq(None).unwrap() - 2.0).abs() < 1e-15);
        assert!((g.integral_inv_sq(Some(0.5)).unwrap() - 0.5).abs() < 1e-15);
        assert!((g.integral_inv_sq(Some(4.0)).unwrap() - 1.75).abs() < 1e-15);
        let c = WeightFunction::ScaledMaxOne { a: 2.0 };
        assert!((c.integral_inv_sq(None).unwrap() - 0.5).abs() < 1e-15);
        assert!(WeightFunction::One.integral_inv_sq(None).is_err());
        assert!((WeightFunction::One.integral_inv_sq(Some(1.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn modulus_of_constant_path_is_zero() {
        let p = constant_path(2, 0.1, 30, 1.5);
        assert_eq!(modulus(&p, 3.0, 0.5), 0.0);
    }

    #[test]
    fn modulus_of_linear_path_matches_formula() {
        // Slope v, grid dt: max over offsets <= ceil(delta/dt)-1 of v*offset*dt
        // = v * delta * (1 - dt/delta) when delta/dt is an integer.
        let v = 2.0;
        let dt = 0.1;
        let steps = 50;
        let positions: Vec<f64> = (0..=steps).map(|i| v * i as f64 * dt).collect();
        let p = PathSample::from_positions(1, dt, 0, positions);
        let delta = 0.5;
        let expect = v * delta * (1.0 - dt / delta);
        assert!((modulus(&p, 5.0, delta) - expect).abs() < 1e-12);
    }

    #[test]
    fn modulus_equals_brute_force_pair_scan() {
        let p = sample_brownian(2, 0.2, 40, 21, &[0.0, 0.0]);
        let t_max = 8.0;
        let delta = 1.1;
        let n = 40;
        let mut brute = 0.0f64;
        for i in 0..=n {
            for j in 0..=n {
                if i != j && ((i as f64 - j as f64) * 0.2).abs() < delta - 1e-12 {
                    let d2: f64 = p
                        .position(i)
                        .iter()
                        .zip(p.position(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    brute = brute.max(d2.sqrt());
                }
            }
        }
        assert!((modulus(&p, t_max, delta) - brute).abs() < 1e-12);
    }

    #[test]
    fn brownian_scaling_in_distribution() {
        // sup-norm law on [0,1] at resolution dt vs the rescaled law
        // c^{-1} sup on [0, c^2] at resolution dt c^2 (same grid count).
        let n = 10_000usize;
        let c = 2.0f64;
        let stream = rng::substream(5150, "bm-scaling");
        let mut a: Vec<f64> = Vec::with_capacity(n);
        let mut b: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            let p = sample_brownian(1, 0.01, 100, rng::indexed(stream, i as u64), &[0.0]);
            a.push(weighted_norm(&p, &WeightFunction::One, 1.0));
            let q = sample_brownian(
                1,
                0.01 * c * c,
                100,
                rng::indexed(stream, (n + i) as u64),
                &[0.0],
            );
            b.push(weighted_norm(&q, &WeightFunction::One, c * c) / c);
        }
        let ks = crate::stats::ks_two_sample(&mut a, &mut b);
        let crit = crate::stats::ks_critical_1pct(n, n);
        assert!(ks < crit, "KS statistic {ks} >= critical {crit}");
    }
}
