//! Exact sampling from the size-biased polymer law and its identities.
//!
//! Conditioning the joint tilted law on the path turns the noise into the
//! same white noise with a mean shift `gamma phi(w_s - y)`. Because the
//! per-path normalizer is the exact discrete variance, the path marginal of
//! the tilted pair is exactly the Wiener measure; sampling is therefore
//! direct: draw an independent (path, noise) pair and overlay the drift. No
//! rejection, no reweighting. Reweighted estimation under independent
//! sampling is kept as a cross-check oracle.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::lattice::LatticeSpec;
use crate::mollifier::Mollifier;
use crate::noise::{hamiltonian_prefixes, sample_noise, shifted_noise, WhiteNoiseRealization};
use crate::paths::{sample_brownian, PathSample};
use crate::polymer::PolymerConfig;
use crate::rng;
use crate::stats;

/// A sample of the size-biased joint law: a Wiener path and a noise whose
/// drift points along it.
#[derive(Debug, Clone)]
pub struct SizeBiasedPair {
    pub path: PathSample,
    pub noise: WhiteNoiseRealization,
    pub gamma: f64,
}

/// Options for the tilt; the extra early tilt reproduces the perturbed
/// measure that shares the thick-point property without being the polymer
/// measure (an additional drift over slabs before `extra_early_horizon`).
#[derive(Debug, Clone, Copy, Default)]
pub struct TiltOptions {
    pub extra_early_horizon: Option<f64>,
}

pub fn size_biased_pair(
    spec: &LatticeSpec,
    moll: &Mollifier,
    gamma: f64,
    seed: u64,
) -> Result<SizeBiasedPair> {
    size_biased_pair_with(spec, moll, gamma, seed, TiltOptions::default())
}

pub fn size_biased_pair_with(
    spec: &LatticeSpec,
    moll: &Mollifier,
    gamma: f64,
    seed: u64,
    opts: TiltOptions,
) -> Result<SizeBiasedPair> {
    let path_seed = rng::indexed(seed, 1);
    let noise_seed = rng::indexed(seed, 2);
    let path = sample_brownian(spec.d, spec.dt, spec.slabs(), path_seed, &vec![0.0; spec.d]);
    let base = sample_noise(spec, noise_seed)?;
    let mut tilted = shifted_noise(&base, moll, &path, gamma)?;
    if let Some(h) = opts.extra_early_horizon {
        let early_slabs = ((h / spec.dt).round() as usize).min(path.steps());
        let early = PathSample::from_positions(
            spec.d,
            spec.dt,
            path_seed,
            path.positions()[..(early_slabs + 1) * spec.d].to_vec(),
        );
        tilted = shifted_noise(&tilted, moll, &early, gamma)?;
    }
    Ok(SizeBiasedPair { path, noise: tilted, gamma })
}

#[derive(Debug, Clone, Serialize)]
pub struct ThickPoint {
    pub t: f64,
    /// Mean of `H_T / var_T` over replicas; gamma in the size-biased law.
    pub mean: f64,
    pub se: f64,
    pub sd: f64,
    pub histogram: Vec<(f64, u64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThickPointReport {
    pub gamma: f64,
    pub points: Vec<ThickPoint>,
}

/// Distribution of the field-per-variance ratio along size-biased samples at
/// each horizon: the thickness statistic whose mean identifies the support.
pub fn thick_point_stat(
    cfg: &PolymerConfig,
    moll: &Mollifier,
    t_grid: &[f64],
    opts: TiltOptions,
) -> Result<ThickPointReport> {
    let checkpoints = cfg.checkpoints(t_grid)?;
    let stream = rng::substream(cfg.master_seed, "size-biased");
    let per_replica: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let pair = size_biased_pair_with(
                &cfg.spec,
                moll,
                cfg.gamma,
                rng::indexed(stream, r as u64),
                opts,
            )?;
            let prefixes = hamiltonian_prefixes(&pair.noise, moll, &pair.path, &checkpoints)?;
            Ok(prefixes.iter().map(|hv| hv.h / hv.var).collect())
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(t_grid.len());
    for (c, &t) in t_grid.iter().enumerate() {
        let vals: Vec<f64> = per_replica.iter().map(|v| v[c]).collect();
        let (mean, se) = stats::mean_se(&vals);
        let sd = se * (vals.len() as f64).sqrt();
        points.push(ThickPoint { t, mean, se, sd, histogram: histogram(&vals, 41) });
    }
    Ok(ThickPointReport { gamma: cfg.gamma, points })
}

fn histogram(vals: &[f64], bins: usize) -> Vec<(f64, u64)> {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(lo, vals.len() as u64)];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in vals {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c))
        .collect()
}

/// Bounded test functions on the lattice `(slab time, cell coordinates)`.
#[derive(Debug, Clone, Serialize)]
pub enum LatticeTestFunction {
    /// One on `[t_lo, t_hi) x {|y - center|_inf <= half}`, zero elsewhere.
    BoxIndicator { t_lo: f64, t_hi: f64, center: Vec<f64>, half: f64 },
    /// `sin(pi t / t_hi) prod_a cos(pi (y_a - center_a) / (2 half))` on the
    /// same support shape.
    Oscillatory { t_lo: f64, t_hi: f64, center: Vec<f64>, half: f64 },
    /// Pointwise sum, for tilt-linearity checks.
    Sum(Box<LatticeTestFunction>, Box<LatticeTestFunction>),
}

impl LatticeTestFunction {
    pub fn label(&self) -> String {
        match self {
            LatticeTestFunction::BoxIndicator { center, .. } => format!("box@{center:?}"),
            LatticeTestFunction::Oscillatory { .. } => "oscillatory".into(),
            LatticeTestFunction::Sum(a, b) => format!("{}+{}", a.label(), b.label()),
        }
    }

    /// Bounding support `(t_lo, t_hi, center, half)`.
    fn support(&self) -> (f64, f64, Vec<f64>, f64) {
        match self {
            LatticeTestFunction::BoxIndicator { t_lo, t_hi, center, half }
            | LatticeTestFunction::Oscillatory { t_lo, t_hi, center, half } => {
                (*t_lo, *t_hi, center.clone(), *half)
            }
            LatticeTestFunction::Sum(a, b) => {
                let (la, ha, ca, ra) = a.support();
                let (lb, hb, cb, rb) = b.support();
                let d = ca.len();
                let mut center = vec![0.0; d];
                let mut half_out: f64 = 0.0;
                for i in 0..d {
                    let min_c = (ca[i] - ra).min(cb[i] - rb);
                    let max_c = (ca[i] + ra).max(cb[i] + rb);
                    center[i] = 0.5 * (min_c + max_c);
                    half_out = half_out.max(0.5 * (max_c - min_c));
                }
                (la.min(lb), ha.max(hb), center, half_out)
            }
        }
    }

    pub fn eval(&self, t: f64, y: &[f64]) -> f64 {
        match self {
            LatticeTestFunction::BoxIndicator { t_lo, t_hi, center, half } => {
                if t < *t_lo || t >= *t_hi {
                    return 0.0;
                }
                for (ya, ca) in y.iter().zip(center) {
                    if (ya - ca).abs() > *half {
                        return 0.0;
                    }
                }
                1.0
            }
            LatticeTestFunction::Oscillatory { t_lo, t_hi, center, half } => {
                if t < *t_lo || t >= *t_hi {
                    return 0.0;
                }
                let mut v = (std::f64::consts::PI * t / t_hi).sin();
                for (ya, ca) in y.iter().zip(center) {
                    let u = (ya - ca) / half;
                    if u.abs() > 1.0 {
                        return 0.0;
                    }
                    v *= (0.5 * std::f64::consts::PI * u).cos();
                }
                v
            }
            LatticeTestFunction::Sum(a, b) => a.eval(t, y) + b.eval(t, y),
        }
    }
}

/// `B(f) = sum_{k < max_slab, j in supp f} f(t_k, y_j) dB[k][j]`.
pub fn noise_functional(
    noise: &WhiteNoiseRealization,
    f: &LatticeTestFunction,
    max_slab: usize,
) -> f64 {
    let spec = &noise.spec;
    let (t_lo, t_hi, center, half) = f.support();
    let k_lo = ((t_lo / spec.dt).floor().max(0.0)) as usize;
    let k_hi = (((t_hi / spec.dt).ceil()) as usize).min(max_slab);
    let n = spec.points_per_axis();
    let mut lo_idx = vec![0usize; spec.d];
    let mut hi_idx = vec![0usize; spec.d];
    for a in 0..spec.d {
        lo_idx[a] = (((center[a] - half + spec.half_width) / spec.dx).floor().max(0.0)) as usize;
        hi_idx[a] = ((((center[a] + half + spec.half_width) / spec.dx).ceil()) as usize).min(n - 1);
    }
    let mut acc = 0.0;
    let mut y = vec![0.0f64; spec.d];
    for k in k_lo..k_hi {
        let t = k as f64 * spec.dt;
        let mut ix = lo_idx.clone();
        'cells: loop {
            let mut cell = 0u64;
            let mut stride = 1u64;
            for a in 0..spec.d {
                y[a] = spec.axis_coord(ix[a]);
                cell += ix[a] as u64 * stride;
                stride *= n as u64;
            }
            let fv = f.eval(t, &y);
            if fv != 0.0 {
                acc += fv * noise.increment(k, cell);
            }
            let mut a = 0;
            loop {
                if a >= spec.d {
                    break 'cells;
                }
                ix[a] += 1;
                if ix[a] <= hi_idx[a] {
                    break;
                }
                ix[a] = lo_idx[a];
                a += 1;
            }
        }
    }
    acc
}

/// Deterministic path functional on the right side of the linear
/// perturbation identity:
/// `sum_k sum_j f(t_k, y_j) phi(w_{t_k} - y_j) dt dx^d`.
pub fn path_tilt_functional(
    spec: &LatticeSpec,
    moll: &Mollifier,
    f: &LatticeTestFunction,
    path: &PathSample,
    max_slab: usize,
) -> f64 {
    let n = spec.points_per_axis();
    let cell_var = spec.cell_variance();
    let mut acc = 0.0;
    let mut y = vec![0.0f64; spec.d];
    for k in 0..max_slab.min(path.steps()) {
        let t = k as f64 * spec.dt;
        let x = path.position(k);
        let mut lo_idx = vec![0usize; spec.d];
        let mut hi_idx = vec![0usize; spec.d];
        for a in 0..spec.d {
            lo_idx[a] = (((x[a] - moll.rho + spec.half_width) / spec.dx).ceil().max(0.0)) as usize;
            hi_idx[a] =
                ((((x[a] + moll.rho + spec.half_width) / spec.dx).floor()) as usize).min(n - 1);
        }
        let mut ix = lo_idx.clone();
        'cells: loop {
            let mut r2 = 0.0;
            for a in 0..spec.d {
                y[a] = spec.axis_coord(ix[a]);
                r2 += (x[a] - y[a]) * (x[a] - y[a]);
            }
            let phi = moll.eval_sq_radius(r2);
            if phi != 0.0 {
                let fv = f.eval(t, &y);
                if fv != 0.0 {
                    acc += fv * phi * cell_var;
                }
            }
            let mut a = 0;
            loop {
                if a >= spec.d {
                    break 'cells;
                }
                ix[a] += 1;
                if ix[a] <= hi_idx[a] {
                    break;
                }
                ix[a] = lo_idx[a];
                a += 1;
            }
        }
    }
    acc
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessCheck {
    pub label: String,
    /// `E_Q[B(f)]` via the exact size-biased sampler.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `gamma E_0[sum f phi dt dx^d]` via plain Wiener sampling.
    pub rhs: f64,
    pub rhs_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub t: f64,
    pub gamma: f64,
    pub checks: Vec<UniquenessCheck>,
    pub all_within_3se: bool,
}

/// Two-estimator check of the linear perturbation identity for each test
/// function: the mean of `B(f)` under the size-biased law must match the
/// gamma-scaled deterministic tilt under the Wiener measure.
pub fn uniqueness_identity_check(
    cfg: &PolymerConfig,
    moll: &Mollifier,
    t: f64,
    fns: &[LatticeTestFunction],
    replicas: usize,
) -> Result<UniquenessReport> {
    let max_slab = cfg.checkpoints(&[t])?[0];
    let q_stream = rng::substream(cfg.master_seed, "uniq-q");
    let p_stream = rng::substream(cfg.master_seed, "uniq-p0");

    // LHS: shared size-biased pairs across all test functions, tilted up to
    // horizon t only.
    let lhs_samples: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let seed = rng::indexed(q_stream, r as u64);
            let path_seed = rng::indexed(seed, 1);
            let noise_seed = rng::indexed(seed, 2);
            let path = sample_brownian(
                cfg.spec.d,
                cfg.spec.dt,
                max_slab,
                path_seed,
                &vec![0.0; cfg.spec.d],
            );
            let base = sample_noise(&cfg.spec, noise_seed)?;
            let tilted = shifted_noise(&base, moll, &path, cfg.gamma)?;
            Ok(fns.iter().map(|f| noise_functional(&tilted, f, max_slab)).collect())
        })
        .collect::<Result<_>>()?;

    // RHS: shared plain Wiener paths across all test functions.
    let rhs_samples: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let path = sample_brownian(
                cfg.spec.d,
                cfg.spec.dt,
                max_slab,
                rng::indexed(p_stream, r as u64),
                &vec![0.0; cfg.spec.d],
            );
            Ok(fns
                .iter()
                .map(|f| cfg.gamma * path_tilt_functional(&cfg.spec, moll, f, &path, max_slab))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut checks = Vec::with_capacity(fns.len());
    for (i, f) in fns.iter().enumerate() {
        let lhs_vals: Vec<f64> = lhs_samples.iter().map(|v| v[i]).collect();
        let rhs_vals: Vec<f64> = rhs_samples.iter().map(|v| v[i]).collect();
        let (lhs, lhs_se) = stats::mean_se(&lhs_vals);
        let (rhs, rhs_se) = stats::mean_se(&rhs_vals);
        let denom = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
        let z = if denom > 0.0 { (lhs - rhs) / denom } else { 0.0 };
        checks.push(UniquenessCheck { label: f.label(), lhs, lhs_se, rhs, rhs_se, z });
    }
    let all = checks.iter().all(|c| c.z.abs() <= 3.0);
    Ok(UniquenessReport { t, gamma: cfg.gamma, checks, all_within_3se: all })
}
