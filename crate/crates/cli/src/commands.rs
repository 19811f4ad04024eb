//! One function per subcommand: assemble core configs, run, emit a record.

use serde_json::{json, Value};

use gmc_core::bessel::{bessel_root, smallball_constant};
use gmc_core::error::Error as CoreError;
use gmc_core::girsanov::{thick_point_stat, uniqueness_identity_check, LatticeTestFunction, TiltOptions};
use gmc_core::moments::{moment_estimate_many, running_max, tail_probe, MomentConfig};
use gmc_core::noise::{field_increment, sample_noise};
use gmc_core::polymer::{free_energy, khasminskii_certificate, l2_identity_check, martingale_check};
use gmc_core::rng;
use gmc_core::smallball::{
    bounds_c1_c2, bounds_c1_c2_optimized, exponent_fit, gamma_delta, gmc_smallball, zero_lambda,
    GmcSmallBallConfig,
};
use gmc_core::wiener_ball::{
    anderson_check, wiener_smallball_rejection, wiener_smallball_splitting, BallProblem,
    BallStatus, SplittingConfig,
};

use crate::config::{Config, ConfigError};
use crate::report::{lineage, Cell, RunRecord};

pub enum Failure {
    /// Exit 2: configuration or model-geometry error.
    Config(String),
    /// Exit 3: resource-budget refusal.
    Resource(String),
    /// Exit 4: small-ball resolution exhausted.
    Exhausted(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::BudgetExceeded { .. } => Failure::Resource(e.to_string()),
            CoreError::ResolutionExhausted(_) => Failure::Exhausted(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

type CmdResult = Result<(RunRecord, Value), Failure>;

pub fn run_command(name: &str, cfg: &Config) -> CmdResult {
    match name {
        "calibrate-noise" => calibrate_noise(cfg),
        "martingale" => martingale(cfg),
        "l2-check" => l2_check(cfg),
        "khasminskii" => khasminskii(cfg),
        "free-energy" => free_energy_cmd(cfg),
        "thick-points" => thick_points(cfg),
        "uniqueness" => uniqueness(cfg),
        "moments" => moments_cmd(cfg),
        "running-max" => running_max_cmd(cfg),
        "tail-probe" => tail_probe_cmd(cfg),
        "smallball" => smallball_cmd(cfg),
        "wiener-smallball" => wiener_smallball_cmd(cfg),
        "bounds" => bounds_cmd(cfg),
        "gamma-delta" => gamma_delta_cmd(cfg),
        "anderson" => anderson_cmd(cfg),
        other => Err(Failure::Config(format!("unknown subcommand `{other}`"))),
    }
}

pub fn known_commands() -> &'static [&'static str] {
    &[
        "calibrate-noise",
        "martingale",
        "l2-check",
        "khasminskii",
        "free-energy",
        "thick-points",
        "uniqueness",
        "moments",
        "running-max",
        "tail-probe",
        "smallball",
        "wiener-smallball",
        "bounds",
        "gamma-delta",
        "anderson",
    ]
}

fn moment_config(cfg: &Config) -> Result<MomentConfig, Failure> {
    Ok(MomentConfig {
        base: cfg.polymer()?,
        rel_se_target: cfg.f64_or("moments.rel_se_target", 0.05)?,
        m_max: cfg.usize_or("moments.m_max", 8192)?,
        bootstrap_resamples: cfg.usize_or("moments.bootstrap", 1000)?,
        floor: cfg.f64_or("moments.floor", 1e-12)?,
    })
}

fn calibrate_noise(cfg: &Config) -> CmdResult {
    let spec = cfg.lattice()?;
    let moll = cfg.mollifier()?;
    let master = cfg.master_seed()?;
    let seed = rng::substream(master, "noise");
    let noise = sample_noise(&spec, seed)?;

    // Optional dense materialization against an explicit byte budget; the
    // refusal propagates as a resource error (exit 3).
    if let Some(mb) = cfg.get("calibrate.materialize_budget_mb") {
        let mb: u128 = mb
            .parse()
            .map_err(|_| Failure::Config("calibrate.materialize_budget_mb: not an integer".into()))?;
        let _dense = noise.materialize(mb * 1024 * 1024)?;
    }

    let want = cfg.u64_or("calibrate.cells", 1_000_000)?;
    let cells = spec.cells_per_slab() as u64;
    let target = spec.cell_variance();
    let mut n = 0u64;
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    let mut rows = Vec::new();
    let mut batch_start = 0u64;
    'outer: for k in 0..spec.slabs() {
        for j in 0..cells {
            let v = noise.increment(k, j);
            s1 += v;
            s2 += v * v;
            n += 1;
            if n % 100_000 == 0 || n == want {
                let nf = n as f64;
                rows.push(vec![
                    Cell::Int(batch_start as i64),
                    Cell::Int(n as i64),
                    Cell::Float(s1 / nf),
                    Cell::Float(s2 / nf - (s1 / nf) * (s1 / nf)),
                ]);
                batch_start = n;
            }
            if n >= want {
                break 'outer;
            }
        }
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let var = s2 / nf - mean * mean;
    let mean_se = (target / nf).sqrt();
    let mean_ok = mean.abs() <= 4.0 * mean_se;
    let var_ok = (var - target).abs() / target <= 0.01;

    // Field-increment variance spot check at the origin against the exact
    // phi^2 cell sum, over fresh realizations.
    let resamples = cfg.u64_or("calibrate.field_resamples", 20_000)?;
    let x = vec![0.0; spec.d];
    // Exact variance: dt dx^d sum_j phi(x - y_j)^2 via a one-slab probe path
    // pinned at the origin against the zero field.
    let exact = {
        let zero = gmc_core::noise::WhiteNoiseRealization::zeroed(&spec)?;
        let path = gmc_core::paths::PathSample::from_positions(
            spec.d,
            spec.dt,
            0,
            vec![0.0; 2 * spec.d],
        );
        gmc_core::noise::hamiltonian(&zero, &moll, &path)?.var
    };
    let fstream = rng::substream(master, "calibrate-field");
    let (mut f1, mut f2) = (0.0f64, 0.0f64);
    for i in 0..resamples {
        let nn = sample_noise(&spec, rng::indexed(fstream, i))?;
        let v = field_increment(&nn, &moll, 0, &x)?;
        f1 += v;
        f2 += v * v;
    }
    let fvar = f2 / resamples as f64 - (f1 / resamples as f64).powi(2);
    let field_ok = (fvar - exact).abs() / exact <= 0.02;

    let summary = json!({
        "cells_sampled": n,
        "cell_mean": mean,
        "cell_mean_4se": 4.0 * mean_se,
        "cell_variance": var,
        "cell_variance_target": target,
        "mean_ok": mean_ok,
        "variance_ok": var_ok,
        "field_variance": fvar,
        "field_variance_exact": exact,
        "field_ok": field_ok,
        "self_conv0": moll.self_conv0,
        "mollifier_integral": moll.integral,
    });
    let record = RunRecord {
        command: "calibrate-noise".into(),
        summary,
        header: vec!["batch_start".into(), "batch_end".into(), "mean".into(), "variance".into()],
        rows,
    };
    Ok((record, lineage(master, &["noise", "calibrate-field"])))
}

fn martingale(cfg: &Config) -> CmdResult {
    let pc = cfg.polymer()?;
    let moll = cfg.mollifier()?;
    let t_grid = cfg.f64_list_or("martingale.t_grid", &[pc.spec.t])?;
    let report = martingale_check(&pc, &moll, &t_grid)?;
    let rows = report
        .points
        .iter()
        .map(|p| {
            vec![Cell::Float(p.t), Cell::Float(p.mean), Cell::Float(p.se), Cell::Float(p.z)]
        })
        .collect();
    let record = RunRecord {
        command: "martingale".into(),
        summary: serde_json::to_value(&report).unwrap(),
        header: vec!["t".into(), "mean".into(), "se".into(), "z".into()],
        rows,
    };
    Ok((record, lineage(pc.master_seed, &["noise", "paths"])))
}

fn l2_check(cfg: &Config) -> CmdResult {
    let pc = cfg.polymer()?;
    let moll = cfg.mollifier()?;
    let pairs = cfg.usize_or("l2.pairs", 1000)?;
    let report = l2_identity_check(&pc, &moll, pairs)?;
    let record = RunRecord {
        command: "l2-check".into(),
        summary: serde_json::to_value(&report).unwrap(),
        header: vec![
            "lhs".into(),
            "lhs_se".into(),
            "rhs".into(),
            "rhs_se".into(),
            "z".into(),
        ],
        rows: vec![vec![
            Cell::Float(report.lhs),
            Cell::Float(report.lhs_se),
            Cell::Float(report.rhs),
            Cell::Float(report.rhs_se),
            Cell::Float(report.z),
        ]],
    };
    Ok((record, lineage(pc.master_seed, &["noise", "paths", "l2-pairs"])))
}

fn khasminskii(cfg: &Config) -> CmdResult {
    let moll = cfg.mollifier()?;
    let master = cfg.master_seed()?;
    let gamma = cfg.f64_or("run.gamma", 0.3)?;
    let cutoff = cfg.f64_or("khasminskii.cutoff", 50.0)?;
    let paths = cfg.usize_or("khasminskii.paths", 2000)?;
    let dt = cfg.f64_or("khasminskii.dt", 0.05)?;
    let a = khasminskii_certificate(&moll, gamma, cutoff, paths, dt, rng::substream(master, "kh-a"))?;
    let b = khasminskii_certificate(
        &moll,
        gamma,
        2.0 * cutoff,
        paths,
        dt,
        rng::substream(master, "kh-b"),
    )?;
    let drift = (b.i_hat - a.i_hat).abs() / a.i_hat;
    let rows = a
        .per_start
        .iter()
        .map(|(r0, m, se)| vec![Cell::Float(*r0), Cell::Float(*m), Cell::Float(*se)])
        .collect();
    let record = RunRecord {
        command: "khasminskii".into(),
        summary: json!({
            "at_cutoff": serde_json::to_value(&a).unwrap(),
            "at_doubled_cutoff": serde_json::to_value(&b).unwrap(),
            "cutoff_doubling_drift": drift,
            "stable_within_5pct": drift <= 0.05,
        }),
        header: vec!["start_radius".into(), "occupation".into(), "se".into()],
        rows,
    };
    Ok((record, lineage(master, &["kh-a", "kh-b"])))
}

fn free_energy_cmd(cfg: &Config) -> CmdResult {
    let pc = cfg.polymer()?;
    let moll = cfg.mollifier()?;
    let t_grid = cfg.f64_list_or("free-energy.t_grid", &[pc.spec.t])?;
    let points = free_energy(&pc, &moll, &t_grid)?;
    let rows = points
        .iter()
        .map(|p| {
            vec![
                Cell::Float(p.t),
                Cell::Float(p.mean),
                Cell::Float(p.se),
                Cell::Float(p.ci95.0),
                Cell::Float(p.ci95.1),
            ]
        })
        .collect();
    let record = RunRecord {
        command: "free-energy".into(),
        summary: serde_json::to_value(&points).unwrap(),
        header: vec!["t".into(), "mean".into(), "se".into(), "ci_lo".into(), "ci_hi".into()],
        rows,
    };
    Ok((record, lineage(pc.master_seed, &["noise", "paths", "fe-bootstrap"])))
}

fn thick_points(cfg: &Config) -> CmdResult {
    let pc = cfg.polymer()?;
    let moll = cfg.mollifier()?;
    let t_grid = cfg.f64_list_or("thick-points.t_grid", &[pc.spec.t])?;
    let opts = TiltOptions {
        extra_early_horizon: cfg.get("thick-points.extra_early_horizon").map(|v| {
            v.parse().unwrap_or(0.0)
        }),
    };
    let report = thick_point_stat(&pc, &moll, &t_grid, opts)?;
    let rows = report
        .points
        .iter()
        .map(|p| {
            vec![Cell::Float(p.t), Cell::Float(p.mean), Cell::Float(p.se), Cell::Float(p.sd)]
        })
        .collect();
    let record = RunRecord {
        command: "thick-points".into(),
        summary: serde_json::to_value(&report).unwrap(),
        header: vec!["t".into(), "mean".into(), "se".into(), "sd".into()],
        rows,
    };
    Ok((record, lineage(pc.master_seed, &["size-biased"])))
}

fn default_test_functions(d: usize, t: f64) -> Vec<LatticeTestFunction> {
    vec![
        LatticeTestFunction::BoxIndicator { t_lo: 0.0, t_hi: t, center: vec![0.0; d], half: 1.0 },
        LatticeTestFunction::Oscillatory { t_lo: 0.0, t_hi: t, center: vec![0.0; d], half: 1.25 },
        LatticeTestFunction::BoxIndicator {
            t_lo: 0.25 * t,
            t_hi: 0.75 * t,
            center: {
                let mut c = vec![0.0; d];
                c[0] = 2.5;
                c
            },
            half: 0.75,
        },
    ]
}

fn uniqueness(cfg: &Config) -> CmdResult {
    let pc = cfg.polymer()?;
    let moll = cfg.mollifier()?;
    let t = cfg.f64_or("uniqueness.t", pc.spec.t)?;
    let fns = default_test_functions(pc.spec.d, t);
    let report = uniqueness_identity_check(&pc, &moll, t, &fns, pc.replicas)?;
    let rows = report
        .checks
        .iter()
        .map(|c| {
            vec![
                Cell::Text(c.label.clone()),
                Cell::Float(c.lhs),
                Cell::Float(c.lhs_se),
                Cell::Float(c.rhs),
                Cell::Float(c.rhs_se),
                Cell::Float(c.z),
            ]
        })
        .collect();
    let record = RunRecord {
        command: "uniqueness".into(),
        summary: serde_json::to_value(&report).unwrap(),
        header: vec![
            "test_function".into(),
            "lhs".into(),
            "lhs_se".into(),
            "rhs".into(),
            "rhs_se".into(),
            "z".into(),
        ],
        rows,
    };
    Ok((record, lineage(pc.master_seed, &["uniq-q", "uniq-p0"])))
}

fn moments_cmd(cfg: &Config) -> CmdResult {
    let mc = moment_config(cfg)?;
    let moll = cfg.mollifier()?;
    let t_grid = cfg.f64_list_or("moments.t_grid", &[mc.base.spec.t])?;
    let powers = cfg.f64_list_or("moments.powers", &[1.0, 1.25, 1.5, 2.0, -0.25, -0.5, -1.0])?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for pts in moment_estimate_many(&mc, &moll, &powers, &t_grid)? {
        for pt in &pts {
            rows.push(vec![
                Cell::Float(pt.power),
                Cell::Float(pt.t),
                Cell::Float(pt.mean),
                Cell::Float(pt.se),
                Cell::Float(pt.ci95.0),
                Cell::Float(pt.ci95.1),
                Cell::Int(pt.floor_hits as i64),
                Cell::Bool(pt.flagged),
                Cell::Float(pt.mean_paths_used),
            ]);
        }
        all.push(serde_json::to_value(&pts).unwrap());
    }
    let record = RunRecord {
        command: "moments".into(),
        summary: json!({ "powers": powers, "t_grid": t_grid, "estimates": all }),
        header: vec![
            "power".into(),
            "t".into(),
            "mean".into(),
            "se".into(),
            "ci_lo".into(),
            "ci_hi".into(),
            "floor_hits".into(),
            "flagged".into(),
            "mean_paths".into(),
        ],
        rows,
    };
    Ok((record, lineage(mc.base.master_seed, &["noise", "paths", "moment-bootstrap"])))
}

fn running_max_cmd(cfg: &Config) -> CmdResult {
    let mc = moment_config(cfg)?;
    let moll = cfg.mollifier()?;
    let t_grid = cfg.f64_list_or("running-max.t_grid", &[mc.base.spec.t])?;
    let report = running_max(&mc, &moll, &t_grid)?;
    let rows = report
        .points
        .iter()
        .map(|p| {
            vec![
                Cell::Float(p.t),
                Cell::Float(p.mean),
                Cell::Float(p.se),
                Cell::Float(p.ci95.0),
                Cell::Float(p.ci95.1),
            ]
        })
        .collect();
    let record = RunRecord {
        command: "running-max".into(),
        summary: serde_json::to_value(&report).unwrap(),
        header: vec!["t".into(), "mean".into(), "se".into(), "ci_lo".into(), "ci_hi".into()],
        rows,
    };
    Ok((record, lineage(mc.base.master_seed, &["noise", "paths", "runmax-bootstrap"])))
}

fn tail_probe_cmd(cfg: &Config) -> CmdResult {
    let mc = moment_config(cfg)?;
    let moll = cfg.mollifier()?;
    let u = cfg.f64_or("tail-probe.u", 1.5)?;
    let eps = cfg.f64_or("tail-probe.eps", 0.2)?;
    let t = cfg.f64_or("tail-probe.t", mc.base.spec.t)?;
    let report = tail_probe(&mc, &moll, u, eps, t)?;
    let record = RunRecord {
        command: "tail-probe".into(),
        summary: serde_json::to_value(&report).unwrap(),
        header: vec![
            "u".into(),
            "eps".into(),
            "t".into(),
            "p_running_max".into(),
            "p_mass".into(),
            "diff_mean".into(),
            "diff_se".into(),
            "inequality_ok".into(),
        ],
        rows: vec![vec![
            Cell::Float(report.u),
            Cell::Float(report.eps),
            Cell::Float(report.t),
            Cell::Float(report.p_running_max),
            Cell::Float(report.p_mass),
            Cell::Float(report.diff_mean),
            Cell::Float(report.diff_se),
            Cell::Bool(report.inequality_ok),
        ]],
    };
    Ok((record, lineage(mc.base.master_seed, &["noise", "paths"])))
}

fn smallball_cmd(cfg: &Config) -> CmdResult {
    let moll = cfg.mollifier()?;
    let g = cfg.weight()?;
    let master = cfg.master_seed()?;
    let gamma = cfg.f64_or("run.gamma", 0.3)?;
    let sb = GmcSmallBallConfig {
        d: cfg.usize_or("lattice.d", 3)?,
        dt: cfg.f64_or("smallball.dt", 0.004)?,
        dx: cfg.f64_or("smallball.dx", 0.5)?,
        gamma,
        r: cfg.f64_or("smallball.r", 1.0)?,
        g,
        particles: cfg.usize_or("smallball.particles", 10_000)?,
        smc_replicates: cfg.usize_or("smallball.smc_replicates", 6)?,
        noise_replicas: cfg.usize_or("smallball.noise_replicas", 48)?,
        conditioned_paths: cfg.usize_or("smallball.conditioned_paths", 96)?,
        partition_paths: cfg.usize_or("smallball.partition_paths", 96)?,
        master_seed: master,
    };
    let eps_list = cfg.f64_list_or("smallball.eps", &[0.25, 0.3, 0.35, 0.4])?;
    let c_list = cfg.f64_list_or("smallball.c", &[1.0, 2.0])?;
    let p = cfg.f64_or("smallball.p", 2.0)?;
    let q = cfg.f64_or("smallball.q", 1.0)?;
    let bounds = bounds_c1_c2(gamma, sb.r, &sb.g, sb.d, p, q, &zero_lambda, moll.self_conv0)
        .map_err(Failure::from)?;

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut exhausted = false;
    for &c in &c_list {
        let c = c as usize;
        let mut pts = Vec::new();
        for &eps in &eps_list {
            let est = gmc_smallball(&sb, &moll, eps, c)?;
            if est.status != BallStatus::Ok {
                exhausted = true;
            }
            rows.push(vec![
                Cell::Float(eps),
                Cell::Int(c as i64),
                Cell::Float(est.estimate),
                Cell::Float(est.log_estimate),
                Cell::Float(est.se_log),
                Cell::Float(est.log_p0),
                Cell::Float(est.mean_ratio),
                Cell::Text(format!("{:?}", est.status)),
            ]);
            pts.push((eps, est.estimate));
        }
        if !exhausted {
            let fit = exponent_fit(&pts)?;
            let slope_ok = fit.slope >= 0.5 * bounds.c1 && fit.slope <= 1.5 * bounds.c2;
            fits.push(json!({
                "c": c,
                "slope": fit.slope,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "within_sandwich": slope_ok,
            }));
        }
    }
    if exhausted {
        return Err(Failure::Exhausted(
            "small-ball resolution exhausted for at least one epsilon".into(),
        ));
    }
    let record = RunRecord {
        command: "smallball".into(),
        summary: json!({
            "bounds": serde_json::to_value(&bounds).unwrap(),
            "window": [0.5 * bounds.c1, 1.5 * bounds.c2],
            "fits": fits,
        }),
        header: vec![
            "eps".into(),
            "c".into(),
            "estimate".into(),
            "log_estimate".into(),
            "se_log".into(),
            "log_p0".into(),
            "mean_ratio".into(),
            "status".into(),
        ],
        rows,
    };
    Ok((record, lineage(master, &["gmc-ball-cond", "gmc-ball-noise", "gmc-ball-part"])))
}

fn wiener_smallball_cmd(cfg: &Config) -> CmdResult {
    let master = cfg.master_seed()?;
    let d = cfg.usize_or("lattice.d", 3)?;
    let g = cfg.weight()?;
    let dt = cfg.f64_or("wiener-smallball.dt", 5e-4)?;
    let r = cfg.f64_or("wiener-smallball.r", 1.0)?;
    let eps_list = cfg.f64_list_or("wiener-smallball.eps", &[0.25, 0.3, 0.35, 0.4])?;
    let fixed_horizon = cfg.f64_or("wiener-smallball.horizon", 0.0)?;
    let method = cfg.string_or("wiener-smallball.method", "splitting");
    let n = cfg.u64_or("wiener-smallball.n", 200_000)?;
    let particles = cfg.usize_or("wiener-smallball.particles", 20_000)?;
    let replicates = cfg.usize_or("wiener-smallball.replicates", 6)?;
    let jj = bessel_root(d).map_err(Failure::from)?.powi(2);

    let mut rows = Vec::new();
    let mut pts = Vec::new();
    let mut exhausted = false;
    for (i, &eps) in eps_list.iter().enumerate() {
        let horizon = if fixed_horizon > 0.0 { fixed_horizon } else { 1.0 / (eps * eps) };
        let prob = BallProblem { d, dt, g, radius: r * eps, horizon };
        let stream = rng::indexed(rng::substream(master, "wiener-ball"), i as u64);
        let est = match method.as_str() {
            "rejection" => wiener_smallball_rejection(&prob, n, stream, 16),
            "splitting" => {
                let nat_steps =
                    ((2.0 * (r * eps) * (r * eps) / jj) / dt).floor().max(1.0) as usize;
                let smc = SplittingConfig {
                    particles,
                    replicates,
                    steps_per_level: nat_steps,
                    extend_to: horizon,
                    keep_per_replicate: 0,
                };
                wiener_smallball_splitting(&prob, &smc, stream)
            }
            other => {
                return Err(Failure::Config(format!(
                    "wiener-smallball.method: unknown `{other}`"
                )))
            }
        };
        if est.status != BallStatus::Ok {
            exhausted = true;
        } else {
            pts.push((eps, est.p));
        }
        rows.push(vec![
            Cell::Float(eps),
            Cell::Float(est.p),
            Cell::Float(est.log_p),
            Cell::Float(est.se_log),
            Cell::Text(format!("{:?}", est.status)),
        ]);
    }
    if exhausted {
        return Err(Failure::Exhausted("zero survivors at some epsilon".into()));
    }
    let fit = exponent_fit(&pts)?;
    let horizon_for_constant =
        if fixed_horizon > 0.0 { Some(fixed_horizon) } else { None };
    let constant = smallball_constant(&g, d, horizon_for_constant)
        .map(|c| c / (r * r))
        .ok();
    let record = RunRecord {
        command: "wiener-smallball".into(),
        summary: json!({
            "method": method,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "asymptotic_constant": constant,
            "note": "finite-eps slope is pre-asymptotic; compare with stated slack only",
        }),
        header: vec!["eps".into(), "p".into(), "log_p".into(), "se_log".into(), "status".into()],
        rows,
    };
    Ok((record, lineage(master, &["wiener-ball"])))
}

fn bounds_cmd(cfg: &Config) -> CmdResult {
    let moll = cfg.mollifier()?;
    let g = cfg.weight()?;
    let gamma = cfg.f64_or("run.gamma", 0.3)?;
    let d = cfg.usize_or("lattice.d", 3)?;
    let r = cfg.f64_or("bounds.r", 1.0)?;
    let p = cfg.f64_or("bounds.p", 2.0)?;
    let q = cfg.f64_or("bounds.q", 1.0)?;
    let optimize = cfg.bool_or("bounds.optimize", false)?;
    let b = if optimize {
        bounds_c1_c2_optimized(
            gamma,
            r,
            &g,
            d,
            cfg.f64_or("bounds.p_max", 64.0)?,
            cfg.f64_or("bounds.q_min", 0.05)?,
            &zero_lambda,
            moll.self_conv0,
        )
    } else {
        bounds_c1_c2(gamma, r, &g, d, p, q, &zero_lambda, moll.self_conv0)
    }
    .map_err(Failure::from)?;
    let record = RunRecord {
        command: "bounds".into(),
        summary: serde_json::to_value(&b).unwrap(),
        header: vec!["c1".into(), "c2".into(), "p".into(), "q".into(), "bessel_root".into()],
        rows: vec![vec![
            Cell::Float(b.c1),
            Cell::Float(b.c2),
            Cell::Float(b.p),
            Cell::Float(b.q),
            Cell::Float(b.bessel_root),
        ]],
    };
    Ok((record, lineage(cfg.master_seed()?, &[])))
}

fn gamma_delta_cmd(cfg: &Config) -> CmdResult {
    let moll = cfg.mollifier()?;
    let g = cfg.weight()?;
    let d = cfg.usize_or("lattice.d", 3)?;
    let r = cfg.f64_or("gamma-delta.r", 1.0)?;
    let deltas = cfg.f64_list_or("gamma-delta.deltas", &[1.0, 0.5, 0.1])?;
    let mut rows = Vec::new();
    let mut witnesses = Vec::new();
    for &delta in &deltas {
        let w = gamma_delta(delta, r, &g, d, moll.self_conv0).map_err(Failure::from)?;
        rows.push(vec![
            Cell::Float(w.delta),
            Cell::Float(w.gamma_delta),
            Cell::Float(w.p),
            Cell::Float(w.q),
            Cell::Float(w.c1_uniform),
            Cell::Float(w.c2),
            Cell::Float(w.gap),
        ]);
        witnesses.push(serde_json::to_value(&w).unwrap());
    }
    let record = RunRecord {
        command: "gamma-delta".into(),
        summary: json!({ "witnesses": witnesses }),
        header: vec![
            "delta".into(),
            "gamma_delta".into(),
            "p".into(),
            "q".into(),
            "c1_uniform".into(),
            "c2".into(),
            "gap".into(),
        ],
        rows,
    };
    Ok((record, lineage(cfg.master_seed()?, &[])))
}

fn anderson_cmd(cfg: &Config) -> CmdResult {
    let master = cfg.master_seed()?;
    let d = cfg.usize_or("lattice.d", 3)?;
    let g = cfg.weight()?;
    let dt = cfg.f64_or("anderson.dt", 0.01)?;
    let radius = cfg.f64_or("anderson.radius", 1.2)?;
    let horizon = cfg.f64_or("anderson.horizon", 2.0)?;
    let n = cfg.u64_or("anderson.n", 30_000)?;
    let ramp_height = cfg.f64_or("anderson.ramp_height", 0.4)?;
    let steps = ((horizon / dt) + 1e-9).floor() as usize;

    let zero = gmc_core::paths::PathSample::from_positions(d, dt, 0, vec![0.0; (steps + 1) * d]);
    let mut ramp_pos = Vec::with_capacity((steps + 1) * d);
    for k in 0..=steps {
        let v = ramp_height * (k as f64 * dt).min(1.0);
        ramp_pos.push(v);
        ramp_pos.extend(std::iter::repeat(0.0).take(d - 1));
    }
    let ramp = gmc_core::paths::PathSample::from_positions(d, dt, 0, ramp_pos);
    let mut far_pos = Vec::with_capacity((steps + 1) * d);
    for k in 0..=steps {
        let v = 100.0 * (k as f64 * dt).min(1.0);
        far_pos.push(v);
        far_pos.extend(std::iter::repeat(0.0).take(d - 1));
    }
    let far = gmc_core::paths::PathSample::from_positions(d, dt, 0, far_pos);

    let prob = BallProblem { d, dt, g, radius, horizon };
    let shifts = vec![
        ("zero".to_string(), zero),
        ("ramp".to_string(), ramp),
        ("far".to_string(), far),
    ];
    let report = anderson_check(&prob, &shifts, n, rng::substream(master, "anderson"))?;
    let rows = report
        .shifts
        .iter()
        .map(|s| {
            vec![
                Cell::Text(s.label.clone()),
                Cell::Float(s.p_shifted),
                Cell::Float(s.h1_sq),
                Cell::Bool(s.anderson_ok),
                Cell::Bool(s.cameron_martin_ok),
            ]
        })
        .collect();
    let record = RunRecord {
        command: "anderson".into(),
        summary: serde_json::to_value(&report).unwrap(),
        header: vec![
            "shift".into(),
            "p_shifted".into(),
            "h1_sq".into(),
            "anderson_ok".into(),
            "cameron_martin_ok".into(),
        ],
        rows,
    };
    Ok((record, lineage(master, &["anderson"])))
}
