//! Moments of the total mass, the running maximum of the partition
//! martingale, and the stopping-time tail inequality.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mollifier::Mollifier;
use crate::noise::{hamiltonian_scan, sample_noise};
use crate::paths::sample_brownian;
use crate::polymer::{weight, PolymerConfig};
use crate::rng;
use crate::stats;

/// Moment-estimation knobs on top of the shared polymer geometry.
#[derive(Debug, Clone, Serialize)]
pub struct MomentConfig {
    pub base: PolymerConfig,
    /// Per-replica relative standard error target for the partition value;
    /// the path count doubles until it is met (power estimators amplify MC
    /// noise, so the plug-in bias must be controlled at the replica level).
    pub rel_se_target: f64,
    pub m_max: usize,
    pub bootstrap_resamples: usize,
    /// Values below this floor in the negative-moment path are counted and
    /// flagged, never clamped.
    pub floor: f64,
}

impl MomentConfig {
    pub fn new(base: PolymerConfig) -> Self {
        MomentConfig {
            base,
            rel_se_target: 0.05,
            m_max: 8192,
            bootstrap_resamples: 1000,
            floor: 1e-12,
        }
    }
}

/// Per-replica partition values at each checkpoint with the adaptive path
/// count; also returns per-slab running means when `scan` is set.
struct ReplicaMass {
    mu_at_checkpoint: Vec<f64>,
    running_max_at_checkpoint: Vec<f64>,
    paths_used: usize,
}

fn replica_masses(
    cfg: &MomentConfig,
    moll: &Mollifier,
    replica: usize,
    checkpoints: &[usize],
) -> Result<ReplicaMass> {
    let base = &cfg.base;
    let spec = &base.spec;
    let noise = sample_noise(spec, base.noise_seed(replica))?;
    let path_stream = base.path_stream(replica);
    let origin = vec![0.0; spec.d];
    let last = *checkpoints.last().expect("checkpoints");

    // Per-slab weight sums over all paths drawn so far.
    let mut slab_sums = vec![0.0f64; last + 1];
    slab_sums[0] = 0.0;
    let mut m = 0usize;
    let mut sum_w = 0.0f64;
    let mut sum_w2 = 0.0f64;
    let mut batch = base.paths_per_replica.max(2);
    loop {
        for i in m..m + batch {
            let path =
                sample_brownian(spec.d, spec.dt, last, rng::indexed(path_stream, i as u64), &origin);
            let scan = hamiltonian_scan(&noise, moll, &path)?;
            for (k, hv) in scan.iter().enumerate() {
                slab_sums[k + 1] += weight(base.gamma, hv.h, hv.var);
            }
            let wt = weight(base.gamma, scan[last - 1].h, scan[last - 1].var);
            sum_w += wt;
            sum_w2 += wt * wt;
        }
        m += batch;
        let mean = sum_w / m as f64;
        let var = (sum_w2 / m as f64 - mean * mean).max(0.0);
        let rel_se = (var / m as f64).sqrt() / mean;
        if rel_se <= cfg.rel_se_target || m >= cfg.m_max {
            break;
        }
        batch = m; // double
    }

    let mf = m as f64;
    let mu_at = |slab: usize| -> f64 {
        if slab == 0 {
            1.0
        } else {
            slab_sums[slab] / mf
        }
    };
    let mu_at_checkpoint: Vec<f64> = checkpoints.iter().map(|&c| mu_at(c)).collect();
    let mut running = Vec::with_capacity(checkpoints.len());
    let mut best = 1.0f64; // slab 0: empty Hamiltonian, mass exactly one
    let mut k = 0usize;
    for &cp in checkpoints {
        while k < cp {
            k += 1;
            best = best.max(mu_at(k));
        }
        running.push(best);
    }
    Ok(ReplicaMass { mu_at_checkpoint, running_max_at_checkpoint: running, paths_used: m })
}

fn collect_masses(
    cfg: &MomentConfig,
    moll: &Mollifier,
    t_grid: &[f64],
) -> Result<(Vec<ReplicaMass>, Vec<usize>)> {
    let checkpoints = cfg.base.checkpoints(t_grid)?;
    if checkpoints.first() == Some(&0) {
        return Err(Error::InvalidArgument("t_grid must start after 0".into()));
    }
    let masses: Vec<ReplicaMass> = (0..cfg.base.replicas)
        .into_par_iter()
        .map(|r| replica_masses(cfg, moll, r, &checkpoints))
        .collect::<Result<_>>()?;
    Ok((masses, checkpoints))
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentPoint {
    pub t: f64,
    pub power: f64,
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub floor_hits: usize,
    /// Set when any replica hit the floor (negative powers only): the
    /// estimate signals strong disorder or insufficient paths.
    pub flagged: bool,
    pub mean_paths_used: f64,
}

/// `E[mu_{gamma,T}(Omega)^p]` per power and horizon with bootstrap CIs,
/// sharing one replica pass across all powers. Powers are `> 1`, `< 0`, or
/// the martingale sanity point 1.
pub fn moment_estimate_many(
    cfg: &MomentConfig,
    moll: &Mollifier,
    powers: &[f64],
    t_grid: &[f64],
) -> Result<Vec<Vec<MomentPoint>>> {
    if powers.iter().any(|p| *p == 0.0) {
        return Err(Error::InvalidArgument("powers must be nonzero".into()));
    }
    let (masses, _) = collect_masses(cfg, moll, t_grid)?;
    let boot = rng::substream(cfg.base.master_seed, "moment-bootstrap");
    let mean_paths =
        masses.iter().map(|m| m.paths_used as f64).sum::<f64>() / masses.len() as f64;
    Ok(powers
        .iter()
        .map(|&power| {
            t_grid
                .iter()
                .enumerate()
                .map(|(c, &t)| {
                    let mut floor_hits = 0usize;
                    let vals: Vec<f64> = masses
                        .iter()
                        .map(|m| {
                            let v = m.mu_at_checkpoint[c];
                            if power < 0.0 && v < cfg.floor {
                                floor_hits += 1;
                            }
                            v.powf(power)
                        })
                        .collect();
                    let (mean, se) = stats::mean_se(&vals);
                    let ci95 = stats::bootstrap_ci_mean(
                        &vals,
                        cfg.bootstrap_resamples,
                        0.95,
                        rng::indexed(boot, c as u64),
                    );
                    MomentPoint {
                        t,
                        power,
                        mean,
                        se,
                        ci95,
                        floor_hits,
                        flagged: floor_hits > 0,
                        mean_paths_used: mean_paths,
                    }
                })
                .collect()
        })
        .collect())
}

/// Single-power convenience wrapper around [`moment_estimate_many`].
pub fn moment_estimate(
    cfg: &MomentConfig,
    moll: &Mollifier,
    power: f64,
    t_grid: &[f64],
) -> Result<Vec<MomentPoint>> {
    Ok(moment_estimate_many(cfg, moll, &[power], t_grid)?.remove(0))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunningMaxPoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunningMaxReport {
    pub points: Vec<RunningMaxPoint>,
    /// Per-replica monotonicity in T holds exactly by construction; this
    /// records the verified fact.
    pub monotone_per_replica: bool,
}

/// `E[M_T]`, `M_T = max over grid horizons s <= T` of the partition value,
/// on prefix-coupled horizons.
pub fn running_max(
    cfg: &MomentConfig,
    moll: &Mollifier,
    t_grid: &[f64],
) -> Result<RunningMaxReport> {
    let (masses, _) = collect_masses(cfg, moll, t_grid)?;
    let boot = rng::substream(cfg.base.master_seed, "runmax-bootstrap");
    let monotone = masses.iter().all(|m| {
        m.running_max_at_checkpoint.windows(2).all(|w| w[1] >= w[0])
    });
    let points = t_grid
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let vals: Vec<f64> =
                masses.iter().map(|m| m.running_max_at_checkpoint[c]).collect();
            let (mean, se) = stats::mean_se(&vals);
            let ci95 = stats::bootstrap_ci_mean(
                &vals,
                cfg.bootstrap_resamples,
                0.95,
                rng::indexed(boot, c as u64),
            );
            RunningMaxPoint { t, mean, se, ci95 }
        })
        .collect();
    Ok(RunningMaxReport { points, monotone_per_replica: monotone })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailProbeReport {
    pub u: f64,
    pub eps: f64,
    pub t: f64,
    pub p_running_max: f64,
    pub p_running_max_se: f64,
    pub p_mass: f64,
    pub p_mass_se: f64,
    /// `P(M_T > u) <= 2 P(mu_T > u eps)` within 3 SE of the coupled
    /// difference estimator.
    pub inequality_ok: bool,
    pub diff_mean: f64,
    pub diff_se: f64,
}

/// Coupled probe of the maximal-vs-terminal tail inequality at level `u`
/// with the reported epsilon.
pub fn tail_probe(
    cfg: &MomentConfig,
    moll: &Mollifier,
    u: f64,
    eps: f64,
    t: f64,
) -> Result<TailProbeReport> {
    if u <= 1.0 {
        return Err(Error::InvalidArgument(format!("u must exceed 1, got {u}")));
    }
    let (masses, _) = collect_masses(cfg, moll, &[t])?;
    let n = masses.len() as u64;
    let mut hits_max = 0u64;
    let mut hits_mass = 0u64;
    let mut diffs = Vec::with_capacity(masses.len());
    for m in &masses {
        let max_hit = m.running_max_at_checkpoint[0] > u;
        let mass_hit = m.mu_at_checkpoint[0] > u * eps;
        if max_hit {
            hits_max += 1;
        }
        if mass_hit {
            hits_mass += 1;
        }
        diffs.push((max_hit as u8 as f64) - 2.0 * (mass_hit as u8 as f64));
    }
    let (p_max, se_max) = stats::proportion_se(hits_max, n);
    let (p_mass, se_mass) = stats::proportion_se(hits_mass, n);
    let (diff_mean, diff_se) = stats::mean_se(&diffs);
    Ok(TailProbeReport {
        u,
        eps,
        t,
        p_running_max: p_max,
        p_running_max_se: se_max,
        p_mass,
        p_mass_se: se_mass,
        inequality_ok: diff_mean <= 3.0 * diff_se,
        diff_mean,
        diff_se,
    })
}

/// Stability scan over moment orders: which positive powers and negative
/// orders stay within a 20% relative band across the horizon grid.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityScan {
    pub stable_p: Vec<f64>,
    pub stable_q: Vec<f64>,
    /// Largest stable positive power and negative order (defaults 2 and 1
    /// when everything is stable).
    pub recommended: (f64, f64),
    pub details: Vec<(f64, Vec<f64>)>,
}

pub fn moment_stability_scan(
    cfg: &MomentConfig,
    moll: &Mollifier,
    ps: &[f64],
    qs: &[f64],
    t_grid: &[f64],
) -> Result<StabilityScan> {
    let (masses, _) = collect_masses(cfg, moll, t_grid)?;
    let band = 0.20;
    let mut stable_p = Vec::new();
    let mut stable_q = Vec::new();
    let mut details = Vec::new();
    let eval = |power: f64| -> Vec<f64> {
        t_grid
            .iter()
            .enumerate()
            .map(|(c, _)| {
                let vals: Vec<f64> =
                    masses.iter().map(|m| m.mu_at_checkpoint[c].powf(power)).collect();
                stats::mean_se(&vals).0
            })
            .collect()
    };
    for &p in ps {
        let means = eval(p);
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if (hi - lo) / lo.max(1e-300) < band {
            stable_p.push(p);
        }
        details.push((p, means));
    }
    for &q in qs {
        let means = eval(-q);
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if (hi - lo) / lo.max(1e-300) < band {
            stable_q.push(q);
        }
        details.push((-q, means));
    }
    let rec_p = stable_p.iter().cloned().fold(f64::NAN, f64::max);
    let rec_q = stable_q.iter().cloned().fold(f64::NAN, f64::max);
    let recommended = (
        if rec_p.is_nan() { 2.0 } else { rec_p },
        if rec_q.is_nan() { 1.0 } else { rec_q },
    );
    Ok(StabilityScan { stable_p, stable_q, recommended, details })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;
    use crate::mollifier::{build_mollifier, Profile};

    fn cfg(gamma: f64, replicas: usize, m: usize) -> MomentConfig {
        MomentConfig {
            base: PolymerConfig {
                spec: LatticeSpec::new(1, 0.05, 0.25, 2.0, 8.0).unwrap(),
                gamma,
                replicas,
                paths_per_replica: m,
                master_seed: 3_141_592,
            },
            rel_se_target: 0.05,
            m_max: 1024,
            bootstrap_resamples: 400,
            floor: 1e-12,
        }
    }

    fn bump() -> Mollifier {
        build_mollifier(1, 1.0, Profile::StandardBump, 2048).unwrap()
    }

    #[test]
    fn gamma_zero_all_moments_are_one() {
        let cfg = cfg(0.0, 6, 8);
        let moll = bump();
        for power in [1.0, 2.0, -0.5] {
            let pts = moment_estimate(&cfg, &moll, power, &[1.0, 2.0]).unwrap();
            for p in pts {
                assert_eq!(p.mean, 1.0);
                assert_eq!(p.se, 0.0);
                assert_eq!(p.floor_hits, 0);
            }
        }
    }

    #[test]
    fn mean_mass_is_one_within_3se() {
        let cfg = cfg(0.4, 150, 64);
        let moll = bump();
        let pts = moment_estimate(&cfg, &moll, 1.0, &[1.0, 2.0]).unwrap();
        for p in pts {
            assert!((p.mean - 1.0).abs() <= 3.0 * p.se, "{p:?}");
        }
    }

    #[test]
    fn jensen_ordering_for_powers() {
        let cfg = cfg(0.5, 120, 128);
        let moll = bump();
        let p2 = moment_estimate(&cfg, &moll, 2.0, &[2.0]).unwrap()[0].clone();
        assert!(p2.mean + 3.0 * p2.se >= 1.0, "E[mu^2] >= 1: {p2:?}");
        let neg = moment_estimate(&cfg, &moll, -0.5, &[2.0]).unwrap()[0].clone();
        assert!(neg.mean + 3.0 * neg.se >= 1.0, "E[mu^-1/2] >= 1: {neg:?}");
        assert_eq!(neg.floor_hits, 0, "no floor hits in the L^2 phase");
    }

    #[test]
    fn second_moment_nondecreasing_in_t() {
        let cfg = cfg(0.45, 150, 128);
        let moll = bump();
        let pts = moment_estimate(&cfg, &moll, 2.0, &[0.5, 1.0, 2.0]).unwrap();
        // Submartingale of squares: allow SE slack.
        for w in pts.windows(2) {
            assert!(
                w[1].mean + 2.0 * w[1].se >= w[0].mean - 2.0 * w[0].se,
                "{:?} then {:?}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn running_max_is_monotone_and_bounded() {
        let cfg = cfg(0.4, 80, 64);
        let moll = bump();
        let report = running_max(&cfg, &moll, &[0.5, 1.0, 2.0]).unwrap();
        assert!(report.monotone_per_replica);
        for w in report.points.windows(2) {
            assert!(w[1].mean >= w[0].mean);
        }
        // All values start at the slab-0 mass 1.
        assert!(report.points[0].mean >= 1.0);
        // Doob-flavored sanity plus the explicit tail-derived bound 1 + 2/eps
        // at eps = 0.2.
        let last = report.points.last().unwrap();
        assert!(last.mean <= 1.0 + 2.0 / 0.2, "E[M_T] = {} out of bound", last.mean);
    }

    #[test]
    fn gamma_zero_running_max_is_exactly_one() {
        let cfg = cfg(0.0, 4, 8);
        let moll = bump();
        let report = running_max(&cfg, &moll, &[1.0, 2.0]).unwrap();
        for p in report.points {
            assert_eq!(p.mean, 1.0);
            assert_eq!(p.se, 0.0);
        }
    }

    #[test]
    fn tail_probe_validates_inequality() {
        let cfg = cfg(0.5, 300, 64);
        let moll = bump();
        let report = tail_probe(&cfg, &moll, 1.2, 0.2, 2.0).unwrap();
        assert!(report.inequality_ok, "{report:?}");
        assert!(report.p_mass >= report.p_running_max / 2.0 - 3.0 * report.diff_se);
    }

    #[test]
    fn tail_probe_rejects_u_below_one() {
        let cfg = cfg(0.3, 4, 8);
        let moll = bump();
        assert!(tail_probe(&cfg, &moll, 0.9, 0.2, 1.0).is_err());
    }

    #[test]
    fn tail_probe_gamma_zero_probabilities_vanish() {
        let cfg = cfg(0.0, 20, 8);
        let moll = bump();
        let report = tail_probe(&cfg, &moll, 1.5, 0.2, 1.0).unwrap();
        assert_eq!(report.p_running_max, 0.0);
        // mu = 1 > u*eps = 0.3 always, so the mass tail is full.
        assert_eq!(report.p_mass, 1.0);
        assert!(report.inequality_ok);
    }

    #[test]
    fn stability_scan_reports_stable_orders_in_l2_phase() {
        let cfg = cfg(0.35, 100, 128);
        let moll = bump();
        let scan = moment_stability_scan(
            &cfg,
            &moll,
            &[1.25, 1.5, 2.0],
            &[0.25, 0.5, 1.0],
            &[0.5, 1.0, 2.0],
        )
        .unwrap();
        assert!(!scan.stable_p.is_empty(), "{scan:?}");
        assert!(!scan.stable_q.is_empty(), "{scan:?}");
        assert!(scan.recommended.0 >= 1.25);
    }

    #[test]
    fn adaptive_paths_grow_until_target() {
        // A tight target forces doubling beyond the initial batch.
        let mut c = cfg(0.6, 3, 8);
        c.rel_se_target = 0.02;
        let moll = bump();
        let pts = moment_estimate(&c, &moll, 1.0, &[2.0]).unwrap();
        assert!(pts[0].mean_paths_used > 8.0, "adaptive growth: {:?}", pts[0]);
    }
}
