//! Seeded Monte Carlo sweeps of localization error and convergence.
//!
//! Each sweep point is a `(snr_db, N, K, epsilon)` combination. Trial `t`
//! draws its UE location from a stream keyed by `(master_seed, t)` and its
//! noise from a stream keyed by `(master_seed, point, t)`, so every point
//! sees the same UE locations and results do not depend on the number of
//! worker threads.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::ChannelModel;
use crate::dictionary::{coarse_estimate, load_or_build, Dictionary};
use crate::error::{Error, Result};
use crate::geometry::{near_field_bounds, SystemConfig, UePosition};
use crate::refinement::{refine_with, PairModel, RefinementSettings, SearchBox};
use crate::rng::substream;
use crate::signaling::{observe, sigma2_from_snr_db};

/// Where the Newton refinement starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// The best-matching dictionary point.
    Coarse,
    /// The true UE location (isolates the refinement stage).
    Truth,
}

impl fmt::Display for StartMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StartMode::Coarse => "coarse",
            StartMode::Truth => "truth",
        })
    }
}

impl FromStr for StartMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coarse" => Ok(StartMode::Coarse),
            "truth" => Ok(StartMode::Truth),
            other => Err(Error::InvalidConfig(format!(
                "unknown start mode `{other}` (expected `coarse` or `truth`)"
            ))),
        }
    }
}

/// How squared errors are normalized into an NMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmseNormalization {
    /// `sum (k^ - k)^2 / sum k^2`.
    Energy,
    /// `mean ((k^ - k) / k)^2`.
    Relative,
}

impl fmt::Display for NmseNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NmseNormalization::Energy => "energy",
            NmseNormalization::Relative => "relative",
        })
    }
}

impl FromStr for NmseNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "energy" => Ok(NmseNormalization::Energy),
            "relative" => Ok(NmseNormalization::Relative),
            other => Err(Error::InvalidConfig(format!(
                "unknown NMSE normalization `{other}` (expected `energy` or `relative`)"
            ))),
        }
    }
}

/// Sweep axes and Monte Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Template configuration; `N` and `K` are overridden per sweep point.
    pub base: SystemConfig,
    /// `P_T / sigma^2` values in dB.
    pub snr_db_list: Vec<f64>,
    /// RIS sizes; each must be a perfect square (`N_y = N_z = sqrt N`).
    pub n_list: Vec<usize>,
    pub k_list: Vec<usize>,
    /// Grid resolutions, meters.
    pub epsilon_list: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    /// Model that generates the simulated observations.
    pub channel_model: ChannelModel,
    /// Model used for the dictionary columns.
    pub dictionary_model: ChannelModel,
    pub settings: RefinementSettings,
    pub start: StartMode,
    pub normalization: NmseNormalization,
    /// UE azimuths are drawn from `(-theta_max, theta_max)`.
    pub theta_max: f64,
    /// Worker threads; `0` uses every available core.
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base: SystemConfig::default(),
            snr_db_list: vec![10.0],
            n_list: vec![64],
            k_list: vec![8],
            epsilon_list: vec![0.55],
            trials: 500,
            master_seed: 1,
            channel_model: ChannelModel::Exact,
            dictionary_model: ChannelModel::Exact,
            settings: RefinementSettings::default(),
            start: StartMode::Coarse,
            normalization: NmseNormalization::Energy,
            theta_max: PI / 2.0,
            workers: 0,
            cache_dir: None,
        }
    }
}

/// One combination of the sweep axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        for (name, empty) in [
            ("snr_db_list", self.snr_db_list.is_empty()),
            ("n_list", self.n_list.is_empty()),
            ("k_list", self.k_list.is_empty()),
            ("epsilon_list", self.epsilon_list.is_empty()),
        ] {
            if empty {
                return Err(Error::InvalidConfig(format!("{name} must not be empty")));
            }
        }
        for &n in &self.n_list {
            ris_side(n)?;
        }
        if self.k_list.contains(&0) {
            return Err(Error::InvalidConfig("k_list entries must be at least 1".into()));
        }
        if let Some(e) = self.epsilon_list.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::InvalidConfig(format!("epsilon_list entries must be positive, got {e}")));
        }
        if let Some(s) = self.snr_db_list.iter().find(|s| s.is_nan()) {
            return Err(Error::InvalidConfig(format!("invalid snr_db_list entry {s}")));
        }
        if !(self.theta_max > 0.0 && self.theta_max <= PI / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "theta_max must lie in (0, pi/2], got {}",
                self.theta_max
            )));
        }
        self.settings.validate()?;
        self.base.validate()
    }

    /// Sweep points in output order: `N`, then `K`, then `epsilon`, then SNR.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &n in &self.n_list {
            for &k in &self.k_list {
                for &epsilon in &self.epsilon_list {
                    for &snr_db in &self.snr_db_list {
                        out.push(SweepPoint { snr_db, n, k, epsilon });
                    }
                }
            }
        }
        out
    }

    /// System configuration for a sweep point (`L = K`).
    pub fn system_for(&self, point: &SweepPoint) -> Result<SystemConfig> {
        let cfg = self.base.with_square_ris(ris_side(point.n)?).with_ue_antennas(point.k);
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
    }
}

fn ris_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side == 0 || side * side != n {
        return Err(Error::InvalidConfig(format!(
            "RIS size {n} is not a nonzero perfect square"
        )));
    }
    Ok(side)
}

/// Draws `r` uniformly on `[fresnel, rayleigh]` and `theta` uniformly on
/// `(-theta_max, theta_max)`.
pub fn sample_ue_in_sector<R: Rng + ?Sized>(cfg: &SystemConfig, theta_max: f64, rng: &mut R) -> UePosition {
    let b = near_field_bounds(cfg);
    let r = b.fresnel + rng.random::<f64>() * (b.rayleigh - b.fresnel);
    let theta = loop {
        let t = theta_max * (2.0 * rng.random::<f64>() - 1.0);
        if t.abs() < theta_max && t.abs() < PI / 2.0 {
            break t;
        }
    };
    UePosition { r, theta }
}

/// UE location uniform over the near-field annulus and the full front sector.
pub fn sample_ue<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> UePosition {
    sample_ue_in_sector(cfg, PI / 2.0, rng)
}

/// Outcome of a single Monte Carlo trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub r: f64,
    pub theta: f64,
    pub coarse_index: usize,
    pub r_hat: f64,
    pub theta_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TrialRecord {
    pub fn sq_err_r(&self) -> f64 {
        (self.r_hat - self.r).powi(2)
    }

    pub fn sq_err_theta(&self) -> f64 {
        (self.theta_hat - self.theta).powi(2)
    }

    pub fn sq_rel_err_r(&self) -> f64 {
        self.sq_err_r() / (self.r * self.r)
    }

    pub fn sq_rel_err_theta(&self) -> f64 {
        self.sq_err_theta() / (self.theta * self.theta)
    }
}

/// Aggregated statistics for one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub seed: u64,
    pub nmse_r: f64,
    pub nmse_theta: f64,
    pub mean_iters: f64,
    pub conv_rate: f64,
}

/// NMSE of `r` and `theta` over a set of trials, summed in index order.
pub fn nmse(records: &[TrialRecord], normalization: NmseNormalization) -> (f64, f64) {
    let t = records.len() as f64;
    match normalization {
        NmseNormalization::Relative => (
            records.iter().map(TrialRecord::sq_rel_err_r).sum::<f64>() / t,
            records.iter().map(TrialRecord::sq_rel_err_theta).sum::<f64>() / t,
        ),
        NmseNormalization::Energy => (
            records.iter().map(TrialRecord::sq_err_r).sum::<f64>()
                / records.iter().map(|x| x.r * x.r).sum::<f64>(),
            records.iter().map(TrialRecord::sq_err_theta).sum::<f64>()
                / records.iter().map(|x| x.theta * x.theta).sum::<f64>(),
        ),
    }
}

fn run_trial(
    exp: &ExperimentConfig,
    cfg: &SystemConfig,
    dict: &Dictionary,
    model: &PairModel,
    search: &SearchBox,
    point_index: usize,
    sigma2: f64,
    trial: usize,
) -> Result<TrialRecord> {
    let mut ue_rng = ChaCha8Rng::seed_from_u64(substream(exp.master_seed, &[0, trial as u64]));
    let pos = sample_ue_in_sector(cfg, exp.theta_max, &mut ue_rng);
    let noise_seed = substream(exp.master_seed, &[1, point_index as u64, trial as u64]);
    let obs = observe(cfg, &pos, exp.channel_model, sigma2, noise_seed)?;
    let coarse = coarse_estimate(&obs, dict)?;
    let start = match exp.start {
        StartMode::Coarse => (coarse.r, coarse.theta),
        StartMode::Truth => (pos.r, pos.theta),
    };
    let mut record = TrialRecord {
        trial,
        r: pos.r,
        theta: pos.theta,
        coarse_index: coarse.index,
        r_hat: start.0,
        theta_hat: start.1,
        iterations: exp.settings.max_iter,
        converged: false,
    };
    match refine_with(model, search, &obs, start, &exp.settings) {
        Ok(res) => {
            record.r_hat = res.r_hat;
            record.theta_hat = res.theta_hat;
            record.iterations = res.iterations;
            record.converged = res.converged;
        }
        // a numerically failed refinement keeps the coarse estimate and
        // counts as not converged
        Err(Error::Numeric(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(record)
}

/// Runs every trial of one sweep point.
pub fn run_point(exp: &ExperimentConfig, point_index: usize, point: &SweepPoint) -> Result<Vec<TrialRecord>> {
    exp.validate()?;
    let pool = exp.pool()?;
    run_point_in(exp, &pool, point_index, point)
}

fn run_point_in(
    exp: &ExperimentConfig,
    pool: &rayon::ThreadPool,
    point_index: usize,
    point: &SweepPoint,
) -> Result<Vec<TrialRecord>> {
    let cfg = exp.system_for(point)?;
    let sigma2 = sigma2_from_snr_db(cfg.p_t, point.snr_db);
    let model = PairModel::new(&cfg);
    let search = SearchBox::for_config(&cfg);
    pool.install(|| {
        let dict = load_or_build(&cfg, point.epsilon, exp.dictionary_model, exp.cache_dir.as_deref())?;
        (0..exp.trials)
            .into_par_iter()
            .map(|t| run_trial(exp, &cfg, &dict, &model, &search, point_index, sigma2, t))
            .collect()
    })
}

/// Aggregates the trials of one point into a table row.
pub fn summarize(exp: &ExperimentConfig, point: &SweepPoint, records: &[TrialRecord]) -> SweepRow {
    let (nmse_r, nmse_theta) = nmse(records, exp.normalization);
    let t = records.len() as f64;
    SweepRow {
        snr_db: point.snr_db,
        n: point.n,
        k: point.k,
        epsilon: point.epsilon,
        trials: records.len(),
        seed: exp.master_seed,
        nmse_r,
        nmse_theta,
        mean_iters: records.iter().map(|r| r.iterations as f64).sum::<f64>() / t,
        conv_rate: records.iter().filter(|r| r.converged).count() as f64 / t,
    }
}

/// Runs the full sweep and returns one row per sweep point.
pub fn run_nmse(exp: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    Ok(run_sweep(exp)?.into_iter().map(|(row, _)| row).collect())
}

/// Like [`run_nmse`] but also returns the per-trial records of every point.
pub fn run_sweep(exp: &ExperimentConfig) -> Result<Vec<(SweepRow, Vec<TrialRecord>)>> {
    exp.validate()?;
    let pool = exp.pool()?;
    exp.points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let records = run_point_in(exp, &pool, i, p)?;
            Ok((summarize(exp, p, &records), records))
        })
        .collect()
}

/// Column order of the sweep CSV.
pub const CSV_HEADER: [&str; 10] = [
    "snr_db",
    "n",
    "k",
    "epsilon",
    "trials",
    "seed",
    "nmse_r",
    "nmse_theta",
    "mean_iters",
    "conv_rate",
];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the sweep table. Floats use the shortest representation that
/// parses back to the same value.
pub fn export_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.snr_db.to_string(),
            r.n.to_string(),
            r.k.to_string(),
            r.epsilon.to_string(),
            r.trials.to_string(),
            r.seed.to_string(),
            r.nmse_r.to_string(),
            r.nmse_theta.to_string(),
            r.mean_iters.to_string(),
            r.conv_rate.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a table written by [`export_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("{}: short row", path.display())))
        };
        fn parse<T: FromStr>(s: &str, path: &Path) -> Result<T> {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("{}: cannot parse `{s}`", path.display())))
        }
        rows.push(SweepRow {
            snr_db: parse(field(0)?, path)?,
            n: parse(field(1)?, path)?,
            k: parse(field(2)?, path)?,
            epsilon: parse(field(3)?, path)?,
            trials: parse(field(4)?, path)?,
            seed: parse(field(5)?, path)?,
            nmse_r: parse(field(6)?, path)?,
            nmse_theta: parse(field(7)?, path)?,
            mean_iters: parse(field(8)?, path)?,
            conv_rate: parse(field(9)?, path)?,
        });
    }
    Ok(rows)
}

/// Writes per-trial records, one row per trial, tagged with the sweep point.
pub fn export_trials_csv(sweep: &[(SweepRow, Vec<TrialRecord>)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([
        "snr_db", "n", "k", "epsilon", "trial", "r", "theta", "coarse_index", "r_hat", "theta_hat", "iterations",
        "converged",
    ])
    .map_err(csv_err(path))?;
    for (row, records) in sweep {
        for t in records {
            w.write_record([
                row.snr_db.to_string(),
                row.n.to_string(),
                row.k.to_string(),
                row.epsilon.to_string(),
                t.trial.to_string(),
                t.r.to_string(),
                t.theta.to_string(),
                t.coarse_index.to_string(),
                t.r_hat.to_string(),
                t.theta_hat.to_string(),
                t.iterations.to_string(),
                t.converged.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes an objective trace as `(iteration, r, theta, beta)` rows.
pub fn export_trace_csv(iterates: &[(f64, f64)], trace: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["iteration", "r", "theta", "beta"]).map_err(csv_err(path))?;
    for (i, ((r, t), b)) in iterates.iter().zip(trace).enumerate() {
        w.write_record([i.to_string(), r.to_string(), t.to_string(), b.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
