//! FatBeacon command line: bundle and corpus tools, the loopback
//! advertiser and scanner, and the benchmark harness.
//!
//! Exit codes: 0 success, 2 usage error, 3 scan timeout, 4 transfer
//! failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fatbeacon::bench::{
    self, aggregate, correlation_report, coverage_diff, emit_report, read_trials_csv,
    run_experiment, write_trials_csv, ExperimentConfig, RasterMask, ReportFormat,
    REPORTED_DISTANCE_CORRELATION, REPORTED_SIZE_CORRELATION,
};
use fatbeacon::bundler::{
    generate_corpus, inline_bundle, validate_atomic, ContentBundle, DirResolver,
};
use fatbeacon::loopback::{scan_and_fetch, Advertiser, LoopbackEndpoint, LoopbackError, Throttle};
use fatbeacon::sim::{AdvertiserConfig, LinkProfile};
use fatbeacon::transfer::ChunkParams;

#[derive(Parser)]
#[command(
    name = "fatbeacon",
    version,
    about = "Beacons that serve their web content themselves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inline external CSS, scripts and images into one atomic document.
    Bundle {
        /// Input HTML file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory external references resolve against (default: the
        /// input's directory).
        #[arg(long)]
        root: Option<PathBuf>,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate atomic filler documents at the given sizes.
    Corpus {
        /// Comma-separated sizes in kilobytes.
        #[arg(long, value_delimiter = ',', default_value = "10,20,40,100,200")]
        sizes: Vec<u32>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Broadcast a FatBeacon advertisement and serve the bundle until
    /// terminated.
    Advertise {
        /// Atomic HTML file to serve.
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        endpoint: EndpointArgs,
        #[arg(long = "interval-ms", default_value_t = 100)]
        interval_ms: u32,
        /// Calibrated TX power in dBm.
        #[arg(long = "tx-power", default_value_t = -7)]
        tx_power: i8,
    },
    /// Listen for a FatBeacon, fetch its content, report the timing.
    Scan {
        #[command(flatten)]
        endpoint: EndpointArgs,
        /// Give up after this many seconds without a FatBeacon frame.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        /// Link profile for simulated delays: "ble4" or a profile file.
        #[arg(long)]
        profile: Option<String>,
        /// Simulated distance in meters (with --profile).
        #[arg(long, default_value_t = 1.0)]
        distance: f64,
        /// RNG seed for the simulated link (with --profile).
        #[arg(long)]
        seed: Option<u64>,
        /// Write the fetched content here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark harness over the simulator.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Args)]
struct EndpointArgs {
    #[arg(long = "adv-port", default_value_t = 40100)]
    adv_port: u16,
    #[arg(long = "conn-port", default_value_t = 40101)]
    conn_port: u16,
}

impl EndpointArgs {
    fn endpoint(&self) -> Result<LoopbackEndpoint, LoopbackError> {
        LoopbackEndpoint::localhost(self.adv_port, self.conn_port)
    }
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a measurement campaign and write the trial records as CSV.
    Run {
        /// key=value campaign file (protocols, sizes_kb, distances_m,
        /// trials_per_cell); defaults reproduce the reference shape.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Link profile: "ble4" (default) or a profile file.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a trial CSV into tables and correlation numbers.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        /// Print the aggregate table.
        #[arg(long)]
        tables: bool,
        /// Print size/distance vs time correlations.
        #[arg(long)]
        correlations: bool,
        #[arg(long, value_enum, default_value_t = OutputFormat::Markdown)]
        format: OutputFormat,
    },
    /// Layer difference between a trails mask and a signal mask (P1 PBM).
    Coverage {
        #[arg(long)]
        trails: PathBuf,
        #[arg(long)]
        signal: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Markdown,
}

impl From<OutputFormat> for ReportFormat {
    fn from(value: OutputFormat) -> Self {
        match value {
            OutputFormat::Csv => ReportFormat::Csv,
            OutputFormat::Markdown => ReportFormat::Markdown,
        }
    }
}

fn load_profile(name_or_path: &str, seed: Option<u64>) -> Result<LinkProfile> {
    let profile = if name_or_path == "ble4" {
        LinkProfile::ble4()
    } else {
        let text = std::fs::read_to_string(name_or_path)
            .with_context(|| format!("reading profile {name_or_path:?}"))?;
        LinkProfile::from_key_value(&text)
            .with_context(|| format!("parsing profile {name_or_path:?}"))?
    };
    Ok(match seed {
        Some(seed) => profile.with_seed(seed),
        None => profile,
    })
}

fn load_bundle(path: &Path) -> Result<ContentBundle> {
    let html = std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
    Ok(ContentBundle::new(html))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<LoopbackError>()
                .map(|e| match e {
                    LoopbackError::ScanTimeout => 3,
                    LoopbackError::Transfer(_) => 4,
                    _ => 1,
                })
                .unwrap_or(1);
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Bundle { input, root, out } => cmd_bundle(&input, root.as_deref(), &out),
        Command::Corpus { sizes, out_dir } => cmd_corpus(&sizes, &out_dir),
        Command::Advertise {
            bundle,
            endpoint,
            interval_ms,
            tx_power,
        } => cmd_advertise(&bundle, &endpoint, interval_ms, tx_power),
        Command::Scan {
            endpoint,
            timeout,
            profile,
            distance,
            seed,
            out,
        } => cmd_scan(
            &endpoint,
            timeout,
            profile.as_deref(),
            distance,
            seed,
            out.as_deref(),
        ),
        Command::Bench { command } => match command {
            BenchCommand::Run {
                config,
                seed,
                profile,
                out,
            } => cmd_bench_run(config.as_deref(), seed, profile.as_deref(), &out),
            BenchCommand::Analyze {
                input,
                tables,
                correlations,
                format,
            } => cmd_bench_analyze(&input, tables, correlations, format.into()),
            BenchCommand::Coverage { trails, signal } => cmd_bench_coverage(&trails, &signal),
        },
    }
}

fn cmd_bundle(input: &Path, root: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let html = std::fs::read_to_string(input).with_context(|| format!("reading {input:?}"))?;
    let root = root
        .map(Path::to_path_buf)
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let resolver = DirResolver::new(root);
    let bundle = inline_bundle(&html, &resolver)?;
    std::fs::write(out, &bundle.html).with_context(|| format!("writing {out:?}"))?;
    println!(
        "wrote {out:?}: {} bytes, title {:?}, sha256 {}",
        bundle.size_bytes,
        bundle.title,
        &bundle.hash_hex()[..16]
    );
    let violations = validate_atomic(&bundle);
    if !violations.is_empty() {
        for violation in &violations {
            eprintln!("not atomic: {violation}");
        }
        bail!(
            "{} external reference(s) cannot be inlined",
            violations.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_corpus(sizes: &[u32], out_dir: &Path) -> Result<ExitCode> {
    if sizes.iter().any(|&kb| kb < 1) {
        bail!("corpus sizes must be at least 1 kb");
    }
    std::fs::create_dir_all(out_dir)?;
    for bundle in generate_corpus(sizes) {
        let name = format!("{}.html", bundle.title.replace(' ', "_").to_lowercase());
        let path = out_dir.join(name);
        std::fs::write(&path, &bundle.html)?;
        println!("wrote {path:?}: {} bytes", bundle.size_bytes);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_advertise(
    bundle_path: &Path,
    endpoint: &EndpointArgs,
    interval_ms: u32,
    tx_power: i8,
) -> Result<ExitCode> {
    let bundle = load_bundle(bundle_path)?;
    let config = AdvertiserConfig::new(interval_ms, tx_power)?;
    let endpoint = endpoint.endpoint()?;
    let advertiser = Advertiser::start(bundle.clone(), config, &endpoint, ChunkParams::default())?;
    println!(
        "advertising {:?} ({} bytes, sha256 {}) on {} every {} ms, tx {} dBm",
        bundle.title,
        bundle.size_bytes,
        &bundle.hash_hex()[..16],
        advertiser.adv_addr(),
        interval_ms,
        tx_power
    );
    println!("serving connections on {}", advertiser.conn_addr());
    // Runs until the process is terminated.
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn cmd_scan(
    endpoint: &EndpointArgs,
    timeout: f64,
    profile: Option<&str>,
    distance: f64,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let endpoint = endpoint.endpoint()?;
    let throttle = profile
        .map(|name_or_path| -> Result<Throttle> {
            Ok(Throttle {
                profile: load_profile(name_or_path, seed)?,
                distance_m: distance,
            })
        })
        .transpose()?;
    // Info lines share stdout only when the content goes to a file.
    let to_file = out.is_some();
    let notify = |line: String| {
        if to_file {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    };
    let outcome = scan_and_fetch(
        &endpoint,
        Duration::from_secs_f64(timeout),
        throttle,
        |frame| notify(format!("notification: {}", frame.title)),
    )?;
    match out {
        Some(path) => std::fs::write(path, &outcome.bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&outcome.bytes)?;
        }
    }
    let mut summary = format!(
        "fetched {} bytes in {:.3} s ({:?})",
        outcome.bytes.len(),
        outcome.elapsed_s(),
        outcome.title
    );
    if let Some(rssi) = outcome.adv_rssi_dbm {
        summary.push_str(&format!(", rssi {rssi:.1} dBm at {distance} m"));
    }
    notify(summary);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench_run(
    config: Option<&Path>,
    seed: u64,
    profile: Option<&str>,
    out: &Path,
) -> Result<ExitCode> {
    let mut experiment = match config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
            ExperimentConfig::from_key_value(&text)?
        }
        None => ExperimentConfig::default(),
    };
    experiment.base_seed = seed;
    if let Some(name_or_path) = profile {
        experiment.profile = load_profile(name_or_path, None)?;
    }
    let records = run_experiment(&experiment)?;
    let file = std::fs::File::create(out).with_context(|| format!("creating {out:?}"))?;
    write_trials_csv(&records, file)?;
    println!(
        "wrote {out:?}: {} trial records (seed {seed})",
        records.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench_analyze(
    input: &Path,
    tables: bool,
    correlations: bool,
    format: ReportFormat,
) -> Result<ExitCode> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {input:?}"))?;
    let records = read_trials_csv(&text)?;
    if records.is_empty() {
        bail!("{input:?} holds no trial records");
    }
    let show_all = !tables && !correlations;
    if tables || show_all {
        let rows = aggregate(&records)?;
        print!("{}", emit_report(&rows, format));
    }
    if correlations || show_all {
        let report = correlation_report(&records)?;
        let fmt = |r: Option<f64>| match r {
            Some(r) => format!("{r:+.4}"),
            None => "n/a (needs variation)".to_owned(),
        };
        println!();
        println!(
            "size vs time:               r = {} over {} samples (source dataset reported {:.4})",
            fmt(report.size_vs_time),
            records.len(),
            REPORTED_SIZE_CORRELATION
        );
        println!(
            "size vs time (medians):     r = {}",
            fmt(report.size_vs_time_medians)
        );
        println!(
            "distance vs time:           r = {} (source dataset reported {:.4})",
            fmt(report.distance_vs_time),
            REPORTED_DISTANCE_CORRELATION
        );
        println!(
            "distance vs time (medians): r = {}",
            fmt(report.distance_vs_time_medians)
        );
        println!("which samples produced the reported coefficients is unstated; both are shown.");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench_coverage(trails: &Path, signal: &Path) -> Result<ExitCode> {
    let load = |path: &Path| -> Result<RasterMask> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
        Ok(RasterMask::from_pbm(&text).map_err(bench::BenchError::from)?)
    };
    let trails_mask = load(trails)?;
    let signal_mask = load(signal)?;
    let diff = coverage_diff(&trails_mask, &signal_mask).map_err(bench::BenchError::from)?;
    println!(
        "trail pixels under signal: {:.4} ({:.1}%)",
        diff.covered_fraction,
        diff.covered_fraction * 100.0
    );
    println!(
        "trail pixels without signal: {:.4} ({:.1}%)",
        diff.uncovered_fraction,
        diff.uncovered_fraction * 100.0
    );
    Ok(ExitCode::SUCCESS)
}
