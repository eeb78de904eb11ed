//! Plain-text `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Lists are comma separated. Keys are the field names of
//! [`SystemConfig`](crate::SystemConfig) and
//! [`ExperimentConfig`], plus a few per-command settings; see [`KEYS`].

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("lambda", "carrier wavelength [m]"),
    ("n_y", "RIS elements along y"),
    ("n_z", "RIS elements along z"),
    ("d_y", "RIS spacing along y [m]"),
    ("d_z", "RIS spacing along z [m]"),
    ("k_ue", "UE antennas"),
    ("d_u", "UE antenna spacing [m]"),
    ("ris_origin", "RIS reference element position x, y, z [m]"),
    ("p_t", "transmit power [W]"),
    ("l_slots", "pilot slots (>= k_ue)"),
    ("snr_db_list", "SNR values P_T/sigma^2 [dB], 'inf' for noiseless"),
    ("n_list", "RIS sizes to sweep (perfect squares)"),
    ("k_list", "UE antenna counts to sweep"),
    ("epsilon_list", "dictionary grid spacings to sweep [m]"),
    ("trials", "Monte Carlo trials per sweep point"),
    ("master_seed", "master RNG seed"),
    ("channel_model", "observation channel: exact | fresnel"),
    ("dictionary_model", "dictionary channel: exact | fresnel"),
    ("gamma", "Newton damping factor in (0, 1]"),
    ("tau", "Newton stopping tolerance"),
    ("max_iter", "Newton iteration cap"),
    ("curvature", "Newton curvature: gauss-newton-floor | exact"),
    ("start", "refinement start: coarse | truth"),
    ("normalization", "NMSE normalization: energy | relative"),
    ("theta_max", "UE azimuth sector half-width [rad]"),
    ("workers", "worker threads (0 = all cores)"),
    ("cache_dir", "dictionary cache directory (empty = no cache)"),
    ("ue_r", "UE range for localize [m]"),
    ("ue_theta", "UE azimuth for localize [rad]"),
    ("snr_db", "SNR for localize [dB]"),
    ("verify_trials", "random competitors for verify-phase"),
];

/// Everything a configuration file can set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// UE used by `localize`; `None` draws one from the seed.
    pub ue_r: Option<f64>,
    pub ue_theta: Option<f64>,
    /// SNR used by `localize`.
    pub snr_db: f64,
    pub verify_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            ue_r: None,
            ue_theta: None,
            snr_db: 10.0,
            verify_trials: 10_000,
        }
    }
}

impl RunConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = split_assignment(line)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", no + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {}", no + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`), then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::InvalidConfig(format!("cannot read config file {}: {e}", p.display()))
                })?;
                Self::parse(&text).map_err(|e| {
                    Error::InvalidConfig(format!("{}: {}", p.display(), strip(e)))
                })?
            }
            None => Self::default(),
        };
        for o in overrides {
            let (key, value) = split_assignment(o)
                .map_err(|e| Error::InvalidConfig(format!("override '{o}': {e}")))?;
            cfg.set(key, value)?;
        }
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let exp = &mut self.experiment;
        let base = &mut exp.base;
        let v = value.trim();
        match key.trim() {
            "lambda" => base.lambda = scalar(key, v)?,
            "n_y" => base.n_y = scalar(key, v)?,
            "n_z" => base.n_z = scalar(key, v)?,
            "d_y" => base.d_y = scalar(key, v)?,
            "d_z" => base.d_z = scalar(key, v)?,
            "k_ue" => base.k_ue = scalar(key, v)?,
            "d_u" => base.d_u = scalar(key, v)?,
            "ris_origin" => {
                let xyz: Vec<f64> = list(key, v)?;
                if xyz.len() != 3 {
                    return Err(Error::InvalidConfig(format!(
                        "ris_origin needs 3 components, got {}",
                        xyz.len()
                    )));
                }
                base.ris_origin = Vector3::new(xyz[0], xyz[1], xyz[2]);
            }
            "p_t" => base.p_t = scalar(key, v)?,
            "l_slots" => base.l_slots = scalar(key, v)?,
            "snr_db_list" => exp.snr_db_list = list(key, v)?,
            "n_list" => exp.n_list = list(key, v)?,
            "k_list" => exp.k_list = list(key, v)?,
            "epsilon_list" => exp.epsilon_list = list(key, v)?,
            "trials" => exp.trials = scalar(key, v)?,
            "master_seed" => exp.master_seed = scalar(key, v)?,
            "channel_model" => exp.channel_model = scalar(key, v)?,
            "dictionary_model" => exp.dictionary_model = scalar(key, v)?,
            "gamma" => exp.settings.gamma = scalar(key, v)?,
            "tau" => exp.settings.tau = scalar(key, v)?,
            "max_iter" => exp.settings.max_iter = scalar(key, v)?,
            "curvature" => exp.settings.curvature = scalar(key, v)?,
            "start" => exp.start = scalar(key, v)?,
            "normalization" => exp.normalization = scalar(key, v)?,
            "theta_max" => exp.theta_max = scalar(key, v)?,
            "workers" => exp.workers = scalar(key, v)?,
            "cache_dir" => exp.cache_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "ue_r" => self.ue_r = Some(scalar(key, v)?),
            "ue_theta" => self.ue_theta = Some(scalar(key, v)?),
            "snr_db" => self.snr_db = scalar(key, v)?,
            "verify_trials" => self.verify_trials = scalar(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

/// Help text listing every key, for `--help`.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (file lines or --set key=value):\n");
    for (k, d) in KEYS {
        out.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    out
}

fn split_assignment(line: &str) -> std::result::Result<(&str, &str), String> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| format!("expected 'key = value', got '{line}'"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("missing key in '{line}'"));
    }
    Ok((k, v.trim()))
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidConfig(m) => m,
        other => other.to_string(),
    }
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::InvalidConfig(format!("bad value '{v}' for {key}: {e}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}
