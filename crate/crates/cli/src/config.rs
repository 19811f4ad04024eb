//! Flat key=value configuration with `[section]` headers. Every resolved key
//! is `section.key`; overrides use the same addressing. The echoed form is a
//! sorted map, so summary files are byte-stable.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use gmc_core::lattice::LatticeSpec;
use gmc_core::mollifier::{build_mollifier, Mollifier, Profile};
use gmc_core::paths::WeightFunction;
use gmc_core::polymer::PolymerConfig;

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.field, self.message)
    }
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.to_string(), message: message.into() }
}

/// Parsed configuration: a sorted `section.key -> value` map.
#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(err(
                        &format!("line {}", lineno + 1),
                        format!("malformed section header `{line}`"),
                    ));
                }
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(err(
                    &format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{}.{}", section, k.trim())
            };
            map.insert(key, v.trim().to_string());
        }
        Ok(Config { map })
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("config", format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| err(key, format!("expected a number, got `{v}`"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| err(key, format!("expected an integer, got `{v}`"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| err(key, format!("expected an integer, got `{v}`"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(err(key, format!("expected a boolean, got `{v}`"))),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| err(key, format!("expected numbers, got `{s}`")))
                })
                .collect(),
        }
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    // -- Typed views ------------------------------------------------------

    pub fn experiment_id(&self) -> String {
        self.string_or("experiment.id", "experiment")
    }

    pub fn master_seed(&self) -> Result<u64, ConfigError> {
        self.u64_or("experiment.master_seed", 1)
    }

    pub fn threads(&self) -> Result<usize, ConfigError> {
        self.usize_or("experiment.threads", 0)
    }

    pub fn rho(&self) -> Result<f64, ConfigError> {
        self.f64_or("mollifier.rho", 1.0)
    }

    pub fn mollifier(&self) -> Result<Mollifier, ConfigError> {
        let d = self.usize_or("lattice.d", 3)?;
        let rho = self.rho()?;
        let resolution = self.usize_or("mollifier.resolution", 8192)?;
        let profile = match self.string_or("mollifier.profile", "bump").as_str() {
            "bump" => Profile::StandardBump,
            other => {
                if let Some(flat) = other.strip_prefix("plateau:") {
                    let flat: f64 = flat.parse().map_err(|_| {
                        err("mollifier.profile", format!("bad plateau fraction in `{other}`"))
                    })?;
                    Profile::Plateau { flat }
                } else {
                    return Err(err(
                        "mollifier.profile",
                        format!("unknown profile `{other}` (expected `bump` or `plateau:<flat>`)"),
                    ));
                }
            }
        };
        build_mollifier(d, rho, profile, resolution)
            .map_err(|e| err("mollifier", e.to_string()))
    }

    pub fn lattice(&self) -> Result<LatticeSpec, ConfigError> {
        let d = self.usize_or("lattice.d", 3)?;
        let dt = self.f64_or("lattice.dt", 0.02)?;
        let dx = self.f64_or("lattice.dx", 0.25)?;
        let t = self.f64_or("lattice.t", 1.0)?;
        let rho = self.rho()?;
        let mut l = self.f64_or("lattice.l", 0.0)?;
        if l <= 0.0 {
            let margin = self.f64_or("lattice.margin", 6.0 * (d as f64 * t).sqrt())?;
            l = LatticeSpec::auto_half_width(d, dx, t, rho, margin);
        }
        LatticeSpec::new(d, dt, dx, t, l).map_err(|e| err("lattice", e.to_string()))
    }

    pub fn weight(&self) -> Result<WeightFunction, ConfigError> {
        match self.string_or("weight.kind", "max-one").as_str() {
            "one" => Ok(WeightFunction::One),
            "max-one" => Ok(WeightFunction::ScaledMaxOne { a: self.f64_or("weight.a", 1.0)? }),
            other => Err(err("weight.kind", format!("unknown weight `{other}`"))),
        }
    }

    pub fn polymer(&self) -> Result<PolymerConfig, ConfigError> {
        Ok(PolymerConfig {
            spec: self.lattice()?,
            gamma: self.f64_or("run.gamma", 0.3)?,
            replicas: self.usize_or("run.replicas", 100)?,
            paths_per_replica: self.usize_or("run.paths", 200)?,
            master_seed: self.master_seed()?,
        })
    }
}
