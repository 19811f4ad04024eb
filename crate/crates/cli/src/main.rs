//! `gmclab`: experiment runner for the polymer / Gaussian chaos laboratory.
//!
//! Usage: `gmclab <subcommand> [config.cfg] [flags]`. Every run writes
//! `<out-dir>/<subcommand>_summary.json` and `<subcommand>_rows.csv`; the
//! summary carries the full config echo and the seed lineage, and reruns with
//! identical config and seed are byte-identical at any `--threads` value.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use commands::{known_commands, run_command, Failure};
use config::Config;

const USAGE: &str = "\
gmclab - Monte Carlo laboratory for the continuous directed polymer / GMC

USAGE:
  gmclab <subcommand> [config.cfg] [flags]

SUBCOMMANDS:
  calibrate-noise   cell moments and field-variance checks of the noise
  martingale        mean-one check of the partition value across horizons
  l2-check          two-estimator second-moment identity
  khasminskii       L2-phase certificate with cutoff doubling
  free-energy       (1/T) log mass across horizons
  thick-points      field-per-variance statistics under the size-biased law
  uniqueness        linear perturbation identity for three test functions
  moments           positive/negative moments of the total mass
  running-max       running maximum of the partition martingale
  tail-probe        maximal-vs-terminal tail inequality
  smallball         polymer small-ball decay and the C1/C2 sandwich
  wiener-smallball  Wiener small-ball probabilities and slope fit
  bounds            decay-exponent constants C1, C2
  gamma-delta       vanishing-disorder matching witnesses
  anderson          Gaussian shift inequalities (Anderson / Cameron-Martin)

FLAGS:
  --seed N            override experiment.master_seed
  --replicas N        override run.replicas
  --paths N           override run.paths
  --threads N         worker threads (0 = auto); results do not depend on it
  --out-dir DIR       output directory (default: runs/<experiment id>)
  --override K=V      set any config key (section.key=value); repeatable
  --help              this text

EXIT CODES:
  0 success; 2 config error; 3 resource refusal; 4 resolution exhausted
";

struct Args {
    command: String,
    config_path: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

fn parse_args() -> Result<Args, String> {
    let mut it = std::env::args().skip(1);
    let Some(command) = it.next() else {
        return Err("missing subcommand".into());
    };
    if command == "--help" || command == "-h" {
        println!("{USAGE}");
        std::process::exit(0);
    }
    let mut args = Args {
        command,
        config_path: None,
        out_dir: None,
        overrides: Vec::new(),
    };
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--help" | "-h" => {
                println!("{USAGE}");
                std::process::exit(0);
            }
            "--seed" => {
                let v = it.next().ok_or("missing value for --seed")?;
                args.overrides.push(("experiment.master_seed".into(), v));
            }
            "--replicas" => {
                let v = it.next().ok_or("missing value for --replicas")?;
                args.overrides.push(("run.replicas".into(), v));
            }
            "--paths" => {
                let v = it.next().ok_or("missing value for --paths")?;
                args.overrides.push(("run.paths".into(), v));
            }
            "--threads" => {
                let v = it.next().ok_or("missing value for --threads")?;
                args.overrides.push(("experiment.threads".into(), v));
            }
            "--out-dir" => {
                let v = it.next().ok_or("missing value for --out-dir")?;
                args.out_dir = Some(PathBuf::from(v));
            }
            "--override" => {
                let v = it.next().ok_or("missing value for --override")?;
                let Some((k, val)) = v.split_once('=') else {
                    return Err(format!("--override expects key=value, got `{v}`"));
                };
                args.overrides.push((k.to_string(), val.to_string()));
            }
            other if !other.starts_with('-') && args.config_path.is_none() => {
                args.config_path = Some(PathBuf::from(other));
            }
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(args)
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    if !known_commands().contains(&args.command.as_str()) {
        eprintln!("error: unknown subcommand `{}`\n\n{USAGE}", args.command);
        return ExitCode::from(2);
    }

    let mut cfg = match &args.config_path {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => Config::default(),
    };
    for (k, v) in &args.overrides {
        cfg.set(k, v);
    }

    match cfg.threads() {
        Ok(n) if n > 0 => {
            // Thread count affects wall time only; reductions are
            // index-ordered, so results are identical for any pool size.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(_) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let out_dir = args
        .out_dir
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment_id()));
    let started = Instant::now();
    match run_command(&args.command, &cfg) {
        Ok((record, lineage)) => {
            match report::write_record(&out_dir, &cfg, lineage, &record) {
                Ok((json_path, csv_path)) => {
                    eprintln!(
                        "{}: done in {:.2}s",
                        args.command,
                        started.elapsed().as_secs_f64()
                    );
                    println!("{}", json_path.display());
                    println!("{}", csv_path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error writing outputs: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Resource(msg)) => {
            eprintln!("resource refusal: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Exhausted(msg)) => {
            eprintln!("resolution exhausted: {msg}");
            ExitCode::from(4)
        }
    }
}
