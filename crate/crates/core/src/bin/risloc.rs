//! Command-line front end for the localization library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use risloc::channel::channel;
use risloc::config::{keys_help, RunConfig};
use risloc::dictionary::{coarse_estimate, load_or_build};
use risloc::experiments::{
    export_csv, export_trace_csv, export_trials_csv, run_sweep, sample_ue_in_sector, SweepRow,
};
use risloc::refinement::refine;
use risloc::ris_phase::verify_optimality;
use risloc::rng::substream;
use risloc::signaling::{observe, sigma2_from_snr_db};
use risloc::{Error, Result, UePosition};

#[derive(Parser)]
#[command(name = "risloc", version, about = "RIS-assisted anchor-free near-field localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that the identity RIS phase maximizes the SNR channel term
    /// against random competitors; writes one CSV row.
    #[command(after_help = keys_help())]
    VerifyPhase(Common),
    /// Build dictionaries for every (n, k, epsilon) in the lists and store
    /// them in the output directory.
    #[command(after_help = keys_help())]
    BuildDict(Common),
    /// Localize one synthetic UE and print coarse and refined estimates.
    #[command(after_help = keys_help())]
    Localize(Common),
    /// Monte Carlo NMSE sweep; writes one CSV row per sweep point.
    #[command(after_help = keys_help())]
    NmseSweep(Common),
    /// Sweep reporting Newton iteration counts; writes the sweep CSV and
    /// optionally per-trial records.
    #[command(after_help = keys_help())]
    ConvergenceSweep(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file (directory for build-dict).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Master seed; overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Secondary output: objective trace (localize) or per-trial records
    /// (convergence-sweep).
    #[arg(long)]
    trace_output: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("master_seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }

    fn output(&self, default: &str) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::VerifyPhase(c) => verify_phase(c),
        Command::BuildDict(c) => build_dict(c),
        Command::Localize(c) => localize(c),
        Command::NmseSweep(c) => sweep(c, false),
        Command::ConvergenceSweep(c) => sweep(c, true),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::EmptyGrid { .. } => 2,
        Error::Io { .. } | Error::Csv { .. } | Error::Cache { .. } => 3,
        Error::Numeric(_) | Error::IndexOutOfRange { .. } | Error::DimensionMismatch { .. } => 4,
    }
}

/// UE from `ue_r`/`ue_theta`, with missing coordinates drawn from the seed.
fn ue(cfg: &RunConfig, sys: &risloc::SystemConfig) -> Result<UePosition> {
    let exp = &cfg.experiment;
    let mut rng = ChaCha8Rng::seed_from_u64(substream(exp.master_seed, &[2]));
    let drawn = sample_ue_in_sector(sys, exp.theta_max, &mut rng);
    UePosition::new(cfg.ue_r.unwrap_or(drawn.r), cfg.ue_theta.unwrap_or(drawn.theta))
}

fn verify_phase(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let exp = &cfg.experiment;
    let sys = &exp.base;
    let pos = ue(&cfg, sys)?;
    let a = channel(sys, &pos, exp.channel_model);
    let report = verify_optimality(&a, cfg.verify_trials, substream(exp.master_seed, &[3]))?;
    let path = c.output("verify_phase.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "n", "k", "r", "theta", "trials", "optimum", "max_competitor", "margin", "relative_margin", "holds",
    ])
    .map_err(csv_err(&path))?;
    w.write_record([
        sys.n_elements().to_string(),
        sys.k_ue.to_string(),
        pos.r.to_string(),
        pos.theta.to_string(),
        report.trials.to_string(),
        report.optimum.to_string(),
        report.max_competitor.to_string(),
        report.margin.to_string(),
        report.relative_margin().to_string(),
        report.holds().to_string(),
    ])
    .map_err(csv_err(&path))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "N={} K={} UE=({:.4}, {:.4}) optimum={:.6e} max_competitor={:.6e} relative_margin={:.3e} holds={}",
        sys.n_elements(),
        sys.k_ue,
        pos.r,
        pos.theta,
        report.optimum,
        report.max_competitor,
        report.relative_margin(),
        report.holds()
    );
    if report.holds() {
        Ok(())
    } else {
        Err(Error::Numeric("a random phase beat the identity phase".into()))
    }
}

fn build_dict(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let exp = &cfg.experiment;
    let dir = c.output("dictionaries");
    for p in exp.points().iter().filter(|p| p.snr_db == exp.snr_db_list[0]) {
        let sys = exp.system_for(p)?;
        let dict = load_or_build(&sys, p.epsilon, exp.dictionary_model, Some(&dir))?;
        println!("N={} K={} epsilon={} columns={}", p.n, p.k, p.epsilon, dict.len());
    }
    println!("stored in {}", dir.display());
    Ok(())
}

fn localize(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let exp = &cfg.experiment;
    let sys = &exp.base;
    sys.validate()?;
    let pos = ue(&cfg, sys)?;
    let sigma2 = sigma2_from_snr_db(sys.p_t, cfg.snr_db);
    let obs = observe(sys, &pos, exp.channel_model, sigma2, substream(exp.master_seed, &[4]))?;
    let dict = load_or_build(sys, exp.epsilon_list[0], exp.dictionary_model, exp.cache_dir.as_deref())?;
    let coarse = coarse_estimate(&obs, &dict)?;
    let res = refine(&obs, sys, (coarse.r, coarse.theta), &exp.settings)?;
    let trace = &res.objective_trace;
    println!("true     r = {:.6} m  theta = {:.6} rad", pos.r, pos.theta);
    println!(
        "coarse   r = {:.6} m  theta = {:.6} rad  (column {} of {})",
        coarse.r,
        coarse.theta,
        coarse.index,
        dict.len()
    );
    println!("refined  r = {:.6} m  theta = {:.6} rad", res.r_hat, res.theta_hat);
    println!("iterations = {}  converged = {}", res.iterations, res.converged);
    println!(
        "beta: start {:.6e}  final {:.6e}  min {:.6e}  evaluations {}",
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN),
        trace.iter().copied().fold(f64::INFINITY, f64::min),
        trace.len()
    );
    if let Some(path) = &c.trace_output {
        export_trace_csv(&res.iterates, trace, path)?;
    }
    Ok(())
}

fn sweep(c: &Common, convergence: bool) -> Result<()> {
    let cfg = c.load()?;
    let results = run_sweep(&cfg.experiment)?;
    let rows: Vec<SweepRow> = results.iter().map(|(row, _)| row.clone()).collect();
    let path = c.output(if convergence { "convergence.csv" } else { "nmse.csv" });
    export_csv(&rows, &path)?;
    for r in &rows {
        println!(
            "snr={} N={} K={} epsilon={} nmse_r={:.3e} nmse_theta={:.3e} mean_iters={:.2} conv_rate={:.3}",
            r.snr_db, r.n, r.k, r.epsilon, r.nmse_r, r.nmse_theta, r.mean_iters, r.conv_rate
        );
    }
    if let Some(trials) = &c.trace_output {
        export_trials_csv(&results, trials)?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}
