//! Partition functions and the finite-volume polymer (GMC) measure.
//!
//! A partition estimate averages `exp(gamma H - gamma^2/2 var)` over M paths
//! at one fixed noise realization; replication happens over noise. The two
//! levels must not be mixed: the measure is a path average at frozen
//! environment. Because the normalizer is the exact discrete variance of each
//! path, `E_noise[weight] = 1` per path, and the estimated total mass is an
//! exactly mean-one martingale in the horizon.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mollifier::{sphere_area, Mollifier};
use crate::noise::{discrete_overlap, hamiltonian_prefixes, sample_noise, WhiteNoiseRealization};
use crate::paths::{sample_brownian, PathSample};
use crate::rng;
use crate::stats;

/// Monte Carlo estimate of `mu_{gamma,T}(A)` with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionEstimate {
    pub value: f64,
    pub se: f64,
    pub paths: usize,
    pub noise_seed: u64,
    pub gamma: f64,
    pub t: f64,
    /// Event descriptor: "omega" for the total mass, a predicate id otherwise.
    pub event: String,
}

/// Shared experiment geometry: lattice, disorder strength, replication.
#[derive(Debug, Clone, Serialize)]
pub struct PolymerConfig {
    pub spec: LatticeSpec,
    pub gamma: f64,
    pub replicas: usize,
    pub paths_per_replica: usize,
    pub master_seed: u64,
}

impl PolymerConfig {
    pub fn noise_seed(&self, replica: usize) -> u64 {
        rng::indexed(rng::substream(self.master_seed, "noise"), replica as u64)
    }

    pub fn path_stream(&self, replica: usize) -> u64 {
        rng::indexed(rng::substream(self.master_seed, "paths"), replica as u64)
    }

    /// Map horizon times to slab counts, validating the grid.
    pub fn checkpoints(&self, t_grid: &[f64]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let k = (t / self.spec.dt).round();
            if (k * self.spec.dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "horizon {t} is not a multiple of dt {}",
                    self.spec.dt
                )));
            }
            if t > self.spec.t * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "horizon {t} beyond lattice horizon {}",
                    self.spec.t
                )));
            }
            out.push(k as usize);
        }
        if out.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("t_grid must be ascending".into()));
        }
        Ok(out)
    }
}

/// The polymer weight `exp(gamma h - gamma^2/2 var)`.
#[inline]
pub fn weight(gamma: f64, h: f64, var: f64) -> f64 {
    (gamma * h - 0.5 * gamma * gamma * var).exp()
}

/// Weights of `m` fresh paths at every checkpoint (one prefix pass per path).
fn path_weights(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    gamma: f64,
    m: usize,
    path_stream: u64,
    checkpoints: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let spec = &noise.spec;
    let origin = vec![0.0; spec.d];
    let last = *checkpoints.last().expect("at least one checkpoint");
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let path =
            sample_brownian(spec.d, spec.dt, last, rng::indexed(path_stream, i as u64), &origin);
        let prefixes = hamiltonian_prefixes(noise, moll, &path, checkpoints)?;
        out.push(prefixes.iter().map(|hv| weight(gamma, hv.h, hv.var)).collect());
    }
    Ok(out)
}

/// Total mass `mu_{gamma,T}(Omega)` at one noise realization, averaging M
/// fresh paths drawn from `path_stream`.
pub fn partition_function(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    gamma: f64,
    m: usize,
    path_stream: u64,
) -> Result<PartitionEstimate> {
    measure_of_event(noise, moll, gamma, &|_| true, m, path_stream, "omega")
}

/// `mu_{gamma,T}(A)` for a path predicate `A`.
pub fn measure_of_event(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    gamma: f64,
    pred: &(dyn Fn(&PathSample) -> bool + Sync),
    m: usize,
    path_stream: u64,
    label: &str,
) -> Result<PartitionEstimate> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let spec = &noise.spec;
    let slabs = spec.slabs();
    let origin = vec![0.0; spec.d];
    let mut contributions = Vec::with_capacity(m);
    for i in 0..m {
        let path =
            sample_brownian(spec.d, spec.dt, slabs, rng::indexed(path_stream, i as u64), &origin);
        let w = if pred(&path) {
            let hv = hamiltonian_prefixes(noise, moll, &path, &[slabs])?[0];
            weight(gamma, hv.h, hv.var)
        } else {
            0.0
        };
        contributions.push(w);
    }
    let (value, se) = stats::mean_se(&contributions);
    Ok(PartitionEstimate {
        value,
        se,
        paths: m,
        noise_seed: noise.seed,
        gamma,
        t: spec.t,
        event: label.to_string(),
    })
}

/// K paths approximately distributed as the normalized measure, by
/// multinomial resampling of M weighted proposals, with diagnostics.
#[derive(Debug, Clone)]
pub struct ResampleOutput {
    pub paths: Vec<PathSample>,
    pub ess: f64,
    pub max_weight_share: f64,
    /// One proposal carries more than half the total weight.
    pub degenerate: bool,
}

pub fn normalized_sample(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    gamma: f64,
    m: usize,
    k: usize,
    path_stream: u64,
) -> Result<ResampleOutput> {
    use rand::Rng;
    let spec = &noise.spec;
    let slabs = spec.slabs();
    let origin = vec![0.0; spec.d];
    let mut proposals = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for i in 0..m {
        let path =
            sample_brownian(spec.d, spec.dt, slabs, rng::indexed(path_stream, i as u64), &origin);
        let hv = hamiltonian_prefixes(noise, moll, &path, &[slabs])?[0];
        weights.push(weight(gamma, hv.h, hv.var));
        proposals.push(path);
    }
    let total: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let ess = total * total / sum_sq;
    let max_share = weights.iter().fold(0.0f64, |a, &b| a.max(b)) / total;
    let mut cumulative = Vec::with_capacity(m);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let mut resampler = rng::chacha(rng::indexed(path_stream, 0x6e5a_317e));
    let mut picks = Vec::with_capacity(k);
    for _ in 0..k {
        let u: f64 = resampler.random::<f64>() * total;
        let idx = cumulative.partition_point(|c| *c < u).min(m - 1);
        picks.push(proposals[idx].clone());
    }
    Ok(ResampleOutput { paths: picks, ess, max_weight_share: max_share, degenerate: max_share > 0.5 })
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingalePoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub points: Vec<MartingalePoint>,
    /// True when every horizon sits within 3 SE of one.
    pub all_within_3se: bool,
}

/// Mean over noise replicas of the total mass at each horizon of `t_grid`,
/// with nested (prefix-coupled) evaluation.
pub fn martingale_check(
    cfg: &PolymerConfig,
    moll: &Mollifier,
    t_grid: &[f64],
) -> Result<MartingaleReport> {
    let checkpoints = cfg.checkpoints(t_grid)?;
    let per_replica: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let noise = sample_noise(&cfg.spec, cfg.noise_seed(r))?;
            let weights = path_weights(
                &noise,
                moll,
                cfg.gamma,
                cfg.paths_per_replica,
                cfg.path_stream(r),
                &checkpoints,
            )?;
            let m = weights.len() as f64;
            Ok((0..checkpoints.len())
                .map(|c| weights.iter().map(|w| w[c]).sum::<f64>() / m)
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(t_grid.len());
    for (c, &t) in t_grid.iter().enumerate() {
        let vals: Vec<f64> = per_replica.iter().map(|v| v[c]).collect();
        let (mean, se) = stats::mean_se(&vals);
        let z = if se > 0.0 {
            (mean - 1.0) / se
        } else if (mean - 1.0).abs() < 1e-14 {
            0.0
        } else {
            f64::INFINITY
        };
        points.push(MartingalePoint { t, mean, se, z });
    }
    let all = points.iter().all(|p| p.z.abs() <= 3.0);
    Ok(MartingaleReport { points, all_within_3se: all })
}

#[derive(Debug, Clone, Serialize)]
pub struct L2Report {
    /// Noise-replica estimate of `E[mu^2]` (unbiased U-statistic per replica).
    pub lhs: f64,
    pub lhs_se: f64,
    /// Path-pair estimate of `E^{x2}[exp(gamma^2 overlap)]`.
    pub rhs: f64,
    pub rhs_se: f64,
    pub z: f64,
}

/// Second-moment identity: `E[mu_{gamma,T}(Omega)^2]` equals the two-path
/// overlap exponential. Both routes estimate the same discrete quantity, so
/// the z-score is purely statistical.
pub fn l2_identity_check(cfg: &PolymerConfig, moll: &Mollifier, pairs: usize) -> Result<L2Report> {
    let slabs = cfg.spec.slabs();
    let lhs_vals: Vec<f64> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let noise = sample_noise(&cfg.spec, cfg.noise_seed(r))?;
            let weights = path_weights(
                &noise,
                moll,
                cfg.gamma,
                cfg.paths_per_replica,
                cfg.path_stream(r),
                &[slabs],
            )?;
            let m = weights.len() as f64;
            let s1: f64 = weights.iter().map(|w| w[0]).sum();
            let s2: f64 = weights.iter().map(|w| w[0] * w[0]).sum();
            Ok((s1 * s1 - s2) / (m * (m - 1.0)))
        })
        .collect::<Result<_>>()?;
    let (lhs, lhs_se) = stats::mean_se(&lhs_vals);

    let pair_stream = rng::substream(cfg.master_seed, "l2-pairs");
    let probe = sample_noise(&cfg.spec, 0)?;
    let origin = vec![0.0; cfg.spec.d];
    let rhs_vals: Vec<f64> = (0..pairs)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let a = sample_brownian(
                cfg.spec.d,
                cfg.spec.dt,
                slabs,
                rng::indexed(pair_stream, 2 * i as u64),
                &origin,
            );
            let b = sample_brownian(
                cfg.spec.d,
                cfg.spec.dt,
                slabs,
                rng::indexed(pair_stream, 2 * i as u64 + 1),
                &origin,
            );
            let ov = discrete_overlap(&probe, moll, &a, &b)?;
            Ok((cfg.gamma * cfg.gamma * ov).exp())
        })
        .collect::<Result<_>>()?;
    let (rhs, rhs_se) = stats::mean_se(&rhs_vals);
    let denom = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    let z = if denom > 0.0 { (lhs - rhs) / denom } else { 0.0 };
    Ok(L2Report { lhs, lhs_se, rhs, rhs_se, z })
}

#[derive(Debug, Clone, Serialize)]
pub struct KhasminskiiCertificate {
    /// Occupation integral `sup_x E_x int_0^cutoff (phi*phi)(sqrt2 w_s) ds`.
    pub i_hat: f64,
    pub i_se: f64,
    /// Analytic bound on the mass beyond the cutoff, uniform in the start.
    pub tail_bound: f64,
    pub t_cutoff: f64,
    pub gamma: f64,
    /// `gamma^2 (i_hat + tail) < 1` certifies the L^2 phase.
    pub certified: bool,
    /// `(start radius, estimate, se)` per starting point.
    pub per_start: Vec<(f64, f64, f64)>,
}

/// L^2-phase certificate: Monte Carlo occupation integral started from a
/// radial grid of points spanning the support of `phi*phi`, plus a rigorous
/// transience tail bound. Only transient dimensions qualify.
pub fn khasminskii_certificate(
    moll: &Mollifier,
    gamma: f64,
    t_cutoff: f64,
    n_paths: usize,
    dt: f64,
    stream: u64,
) -> Result<KhasminskiiCertificate> {
    let d = moll.d;
    if d <= 2 {
        return Err(Error::DivergentOccupation { d });
    }
    let steps = (t_cutoff / dt).round() as usize;
    let starts: Vec<f64> = (0..=6).map(|i| 2.0 * moll.rho * i as f64 / 6.0).collect();
    let per_start: Vec<(f64, f64, f64)> = starts
        .par_iter()
        .map(|&r0| {
            let mut start = vec![0.0; d];
            start[0] = r0;
            let start_stream = rng::indexed(stream, (r0 * 1e6).round() as u64);
            let vals: Vec<f64> = (0..n_paths)
                .map(|i| {
                    let path =
                        sample_brownian(d, dt, steps, rng::indexed(start_stream, i as u64), &start);
                    let mut occ = 0.0;
                    for k in 0..steps {
                        let scaled_r = (2.0 * path.sq_radius(k)).sqrt();
                        occ += dt * moll.self_conv(scaled_r);
                    }
                    occ
                })
                .collect();
            let (m, se) = stats::mean_se(&vals);
            (r0, m, se)
        })
        .collect();
    let (_, i_hat, i_se) = per_start
        .iter()
        .cloned()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("nonempty starts");
    // Tail: the density of w_s is bounded by (2 pi s)^{-d/2}, so
    // E int_cutoff^inf V(sqrt2 w_s) ds <= V(0) vol(B_{sqrt2 rho}) (2pi)^{-d/2}
    //   cutoff^{1-d/2} / (d/2 - 1), uniformly in the start.
    let vol_ball = sphere_area(d) * (std::f64::consts::SQRT_2 * moll.rho).powi(d as i32) / d as f64;
    let tail_bound = moll.self_conv0
        * vol_ball
        * (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0)
        * t_cutoff.powf(1.0 - d as f64 / 2.0)
        / (d as f64 / 2.0 - 1.0);
    let certified = gamma * gamma * (i_hat + tail_bound) < 1.0;
    Ok(KhasminskiiCertificate { i_hat, i_se, tail_bound, t_cutoff, gamma, certified, per_start })
}

#[derive(Debug, Clone, Serialize)]
pub struct FreeEnergyPoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
}

/// Per-horizon `(1/T) log mu_{gamma,T}(Omega)` averaged over replicas. In the
/// certified L^2 phase the estimates must approach zero; any drift away from
/// zero is reported with its sign, not asserted.
pub fn free_energy(
    cfg: &PolymerConfig,
    moll: &Mollifier,
    t_grid: &[f64],
) -> Result<Vec<FreeEnergyPoint>> {
    let checkpoints = cfg.checkpoints(t_grid)?;
    let per_replica: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let noise = sample_noise(&cfg.spec, cfg.noise_seed(r))?;
            let weights = path_weights(
                &noise,
                moll,
                cfg.gamma,
                cfg.paths_per_replica,
                cfg.path_stream(r),
                &checkpoints,
            )?;
            let m = weights.len() as f64;
            Ok((0..checkpoints.len())
                .map(|c| {
                    let mu = weights.iter().map(|w| w[c]).sum::<f64>() / m;
                    mu.ln() / t_grid[c]
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let boot_stream = rng::substream(cfg.master_seed, "fe-bootstrap");
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let vals: Vec<f64> = per_replica.iter().map(|v| v[c]).collect();
            let (mean, se) = stats::mean_se(&vals);
            let ci95 =
                stats::bootstrap_ci_mean(&vals, 1000, 0.95, rng::indexed(boot_stream, c as u64));
            FreeEnergyPoint { t, mean, se, ci95 }
        })
        .collect())
}

/// A finitely supported sub-probability measure: atoms `(location, mass)`.
#[derive(Debug, Clone)]
pub struct AtomicMeasure {
    pub atoms: Vec<(Vec<f64>, f64)>,
}

impl AtomicMeasure {
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }
}

/// Energy functional of a finite collection of atomic sub-probability
/// measures: `(gamma^2/2) sum_alpha intint (phi*phi)(x1-x2) dalpha dalpha`.
/// Translation-invariant and bounded by `(gamma^2/2)(phi*phi)(0)`.
pub fn f_gamma_energy(gamma: f64, moll: &Mollifier, collection: &[AtomicMeasure]) -> Result<f64> {
    let mut total_mass = 0.0;
    for alpha in collection {
        for (x, mass) in &alpha.atoms {
            if x.len() != moll.d {
                return Err(Error::DimensionMismatch { expected: moll.d, got: x.len() });
            }
            if *mass < 0.0 {
                return Err(Error::InvalidArgument("negative atom mass".into()));
            }
            total_mass += *mass;
        }
    }
    if total_mass > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument(format!("total mass {total_mass} exceeds one")));
    }
    let mut acc = 0.0;
    for alpha in collection {
        for (x1, m1) in &alpha.atoms {
            for (x2, m2) in &alpha.atoms {
                let dist2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                acc += m1 * m2 * moll.self_conv(dist2.sqrt());
            }
        }
    }
    Ok(0.5 * gamma * gamma * acc)
}
