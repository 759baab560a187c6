//! `nvmux` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::par::{with_threads, Execution};
use crate::scanner::{
    ac_projection_profiles, fit_probe_geometry, fmt_sig, mc_covariance_prediction,
    multiplexing_gain, run_scan, synthesize_edge_scans, write_counts_csv, EdgeAxis, EdgeScan,
    FitOptions, ScanSettings, SensitivitySettings, SensorGuess,
};
use crate::selftest::run_selftest;
use crate::spinmodel::odmr_spectrum;
use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "nvmux",
    version,
    about = "Multiplexed two-sensor NV magnetometry simulator"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (overrides [output] directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Write one count matrix CSV per pixel.
    #[arg(long, global = true)]
    pub dump_counts: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a line scan and write scan_result.csv.
    Scan { config: PathBuf },
    /// Fit probe geometry to x and y edge scans.
    Calibrate {
        config: PathBuf,
        #[arg(long)]
        x_scan: PathBuf,
        #[arg(long)]
        y_scan: PathBuf,
        /// Bootstrap resamples (overrides [calibration] bootstrap).
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Write synthetic edge scans for the configured probe.
    SynthEdges { config: PathBuf },
    /// Write the ODMR spectrum of both sensors.
    Odmr { config: PathBuf },
    /// Compare sequential and multiplexed sensitivity.
    Sensitivity {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0.3)]
        phase1: f64,
        #[arg(long, default_value_t = 0.3)]
        phase2: f64,
    },
    /// Run the fast invariant suite.
    Selftest,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = cli.global.threads;
    match with_threads(threads, || dispatch(&cli)) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("nvmux: {}", f.message());
            f.code()
        }
    }
}

fn load(path: &Path, global: &GlobalArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path).map_err(usage)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(global: &GlobalArgs, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = global
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| runtime(Error::io(&dir, e)))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| runtime(Error::io(path, e)))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Scan { config } => cmd_scan(config, g),
        Command::Calibrate {
            config,
            x_scan,
            y_scan,
            bootstrap,
        } => cmd_calibrate(config, x_scan, y_scan, *bootstrap, g),
        Command::SynthEdges { config } => cmd_synth_edges(config, g),
        Command::Odmr { config } => cmd_odmr(config, g),
        Command::Sensitivity {
            config,
            trials,
            phase1,
            phase2,
        } => cmd_sensitivity(config, *trials, [*phase1, *phase2], g),
        Command::Selftest => cmd_selftest(g),
    }
}

fn cmd_scan(config: &Path, g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = load(config, g)?;
    let seq = cfg.require_sequence().map_err(usage)?;
    let scan = cfg.require_scan().map_err(usage)?;
    if cfg.fields.is_empty() {
        return Err(usage(format!("{}: no [field] sections", cfg.path)));
    }
    let mut settings = ScanSettings::new(seq.ramsey, scan.mode, cfg.seed);
    settings.schedule = seq.schedule;
    settings.uncorrelated_sigma = seq.uncorrelated_sigma;
    settings.keep_counts = g.dump_counts;
    let result = run_scan(&scan.path, &cfg.probe, &cfg.fields, &settings).map_err(|e| match e {
        Error::InvalidArgument(_) => usage(e),
        other => runtime(other),
    })?;

    let dir = out_dir(g, &cfg)?;
    let target = dir.join("scan_result.csv");
    result.write_csv(create(&target)?).map_err(runtime)?;
    println!("wrote {}", target.display());

    if scan.mode.wants_covariance() {
        let profiles =
            ac_projection_profiles(&scan.path, &cfg.probe, &cfg.fields).map_err(runtime)?;
        let pred = mc_covariance_prediction(
            &profiles,
            1.0,
            &seq.ramsey,
            100_000,
            cfg.seed,
            Execution::Parallel,
        )
        .map_err(runtime)?;
        let target = dir.join("cov_prediction.csv");
        let mut w = csv::Writer::from_writer(create(&target)?);
        w.write_record(["x_nm", "y_nm", "cov_yy_predicted"])
            .map_err(runtime)?;
        for (p, v) in scan.path.pixels().iter().zip(&pred) {
            w.write_record([fmt_sig(p.x), fmt_sig(p.y), fmt_sig(*v)])
                .map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
        println!("wrote {}", target.display());
    }

    if g.dump_counts {
        for (i, p) in result.pixels.iter().enumerate() {
            if let Some(counts) = &p.counts {
                let target = dir.join(format!("counts_matrix_{i:04}.csv"));
                write_counts_csv(counts, p.moments.as_ref(), create(&target)?).map_err(runtime)?;
            }
        }
        println!("wrote {} count matrices", result.pixels.len());
    }
    Ok(())
}

fn cmd_calibrate(
    config: &Path,
    x_scan: &Path,
    y_scan: &Path,
    bootstrap: Option<usize>,
    g: &GlobalArgs,
) -> Result<(), Failure> {
    let cfg = load(config, g)?;
    let cal = cfg.require_calibration().map_err(usage)?;
    let scans = [
        EdgeScan::read_path(EdgeAxis::X, x_scan).map_err(usage)?,
        EdgeScan::read_path(EdgeAxis::Y, y_scan).map_err(usage)?,
    ];
    let guess = cfg.probe.sensors.each_ref().map(SensorGuess::from_sensor);
    let opts = FitOptions {
        bootstrap: bootstrap.unwrap_or(cal.bootstrap),
        seed: cfg.seed,
        ..FitOptions::default()
    };
    let fit = fit_probe_geometry(&scans, &cal.sample, &guess, &opts).map_err(|e| match &e {
        Error::FitFailed { best, .. } => runtime(format!("{e}; best parameters so far {best:?}")),
        _ => runtime(e),
    })?;
    let dir = out_dir(g, &cfg)?;
    let report = fit.report();
    let target = dir.join("calibration_report.txt");
    create(&target)?
        .write_all(report.as_bytes())
        .map_err(|e| runtime(Error::io(&target, e)))?;
    let residuals = dir.join("calibration_residuals.csv");
    fit.write_residuals_csv(create(&residuals)?)
        .map_err(runtime)?;
    print!("{report}");
    println!("wrote {} and {}", target.display(), residuals.display());
    Ok(())
}

fn cmd_synth_edges(config: &Path, g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = load(config, g)?;
    let cal = cfg.require_calibration().map_err(usage)?;
    let scans = synthesize_edge_scans(
        &cfg.probe,
        &cal.sample,
        &cal.positions,
        cal.noise_mhz,
        cfg.seed,
    )
    .map_err(runtime)?;
    let dir = out_dir(g, &cfg)?;
    for scan in &scans {
        let target = dir.join(format!("edge_scan_{}.csv", scan.axis.label()));
        scan.write_csv(create(&target)?).map_err(runtime)?;
        println!("wrote {}", target.display());
    }
    Ok(())
}

fn cmd_odmr(config: &Path, g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = load(config, g)?;
    let od = cfg.require_odmr().map_err(usage)?;
    let spec = odmr_spectrum(&cfg.probe.sensors, od.bias, &od.grid, &od.params).map_err(runtime)?;
    let dir = out_dir(g, &cfg)?;
    let target = dir.join("odmr_spectrum.csv");
    let mut w = csv::Writer::from_writer(create(&target)?);
    w.write_record(["freq_mhz", "pl"]).map_err(runtime)?;
    for (f, p) in spec.freq_mhz.iter().zip(&spec.pl) {
        w.write_record([fmt_sig(*f), fmt_sig(*p)])
            .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    let minima: Vec<String> = spec
        .minima()
        .iter()
        .map(|&i| format!("{:.3}", spec.freq_mhz[i]))
        .collect();
    println!("minima (MHz): {}", minima.join(", "));
    if spec.degenerate {
        println!("note: some transitions overlap within one linewidth");
    }
    println!("wrote {}", target.display());
    Ok(())
}

fn cmd_sensitivity(
    config: &Path,
    trials: usize,
    phases: [f64; 2],
    g: &GlobalArgs,
) -> Result<(), Failure> {
    let cfg = load(config, g)?;
    let seq = cfg.require_sequence().map_err(usage)?;
    let mut settings = SensitivitySettings::new(seq.ramsey, trials, cfg.seed);
    settings.overhead = seq.overhead;
    let gain = multiplexing_gain(&cfg.probe, phases, &settings).map_err(|e| match e {
        Error::InvalidArgument(_) => usage(e),
        other => runtime(other),
    })?;
    for r in [&gain.sequential, &gain.multiplexed] {
        println!(
            "{:?}: eta1 = {:.4e} T/rtHz, eta2 = {:.4e} T/rtHz, combined = {:.4e} T/rtHz",
            r.mode, r.per_sensor[0], r.per_sensor[1], r.combined
        );
    }
    println!("sequential / multiplexed = {:.4}", gain.combined_ratio);
    Ok(())
}

fn cmd_selftest(g: &GlobalArgs) -> Result<(), Failure> {
    let start = std::time::Instant::now();
    let report = run_selftest(g.seed.unwrap_or(1));
    for c in &report.checks {
        println!(
            "[{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!(
        "selftest finished in {:.2} s",
        start.elapsed().as_secs_f64()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(runtime("selftest failed"))
    }
}
