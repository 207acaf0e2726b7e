//! Benchmark harness: runs measurement campaigns over the simulator,
//! aggregates trials, and emits machine-readable reports.
//!
//! Aggregation reports both the median and the discard-best-and-worst
//! trimmed mean, because the reference dataset quotes one while
//! describing the other. Trial seeds are derived with a stable hash of
//! the base seed and the cell coordinates, so a campaign is bitwise
//! reproducible anywhere.

pub mod raster;
pub mod stats;

use std::io::Write;

use thiserror::Error;

pub use raster::{coverage_diff, CoverageDiff, RasterError, RasterMask};
pub use stats::{median, pearson, trimmed_mean, StatsError};

use crate::sim::{self, BaselineModel, LinkProfile, Protocol, SimError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("trials_per_cell must be at least 1")]
    NoTrials,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("simulation failed for {protocol} {size_kb} kb at {distance_m} m: {source}")]
    Simulation {
        protocol: Protocol,
        size_kb: u32,
        distance_m: f64,
        source: SimError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub protocol: Protocol,
    pub size_kb: u32,
    pub distance_m: f64,
    pub trial_index: u32,
    pub elapsed_s: f64,
}

/// Per-(protocol, size, distance) aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub protocol: Protocol,
    pub size_kb: u32,
    pub distance_m: f64,
    pub n: usize,
    pub median_s: f64,
    pub trimmed_mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

/// A measurement campaign: the cross product of protocols, sizes and
/// distances, with `trials_per_cell` seeded trials each.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocols: Vec<Protocol>,
    pub sizes_kb: Vec<u32>,
    pub distances_m: Vec<f64>,
    pub trials_per_cell: u32,
    pub base_seed: u64,
    pub profile: LinkProfile,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::Ble4],
            sizes_kb: vec![10, 20, 40, 100, 200],
            distances_m: vec![1.0],
            trials_per_cell: 5,
            base_seed: 0,
            profile: LinkProfile::ble4(),
        }
    }
}

impl ExperimentConfig {
    /// Parses the `key=value` experiment file accepted by the CLI.
    /// Recognized keys: `protocols`, `sizes_kb`, `distances_m`,
    /// `trials_per_cell` (comma-separated where plural). Seed and
    /// profile come from the command line.
    pub fn from_key_value(text: &str) -> Result<Self, BenchError> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad =
                |reason: String| BenchError::InvalidConfig(format!("line {}: {reason}", idx + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "protocols" => {
                    config.protocols = value
                        .split(',')
                        .map(|t| t.trim().parse::<Protocol>())
                        .collect::<Result<_, _>>()
                        .map_err(bad)?;
                }
                "sizes_kb" => {
                    config.sizes_kb = value
                        .split(',')
                        .map(|t| t.trim().parse::<u32>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<_, _>>()?;
                }
                "distances_m" => {
                    config.distances_m = value
                        .split(',')
                        .map(|t| t.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<_, _>>()?;
                }
                "trials_per_cell" => {
                    config.trials_per_cell =
                        value.parse::<u32>().map_err(|e| bad(e.to_string()))?;
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(config)
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.trials_per_cell < 1 {
            return Err(BenchError::NoTrials);
        }
        if self.protocols.is_empty() || self.sizes_kb.is_empty() || self.distances_m.is_empty() {
            return Err(BenchError::InvalidConfig(
                "protocols, sizes and distances must be non-empty".into(),
            ));
        }
        if let Some(d) = self.distances_m.iter().find(|d| **d <= 0.0 || d.is_nan()) {
            return Err(BenchError::InvalidConfig(format!(
                "non-positive distance {d}"
            )));
        }
        if let Some(s) = self.sizes_kb.iter().find(|s| **s < 1) {
            return Err(BenchError::InvalidConfig(format!("size {s} kb below 1")));
        }
        Ok(())
    }
}

/// FNV-1a over the cell coordinates: stable across platforms and runs.
pub fn trial_seed(
    base_seed: u64,
    protocol: Protocol,
    size_kb: u32,
    distance_m: f64,
    trial_index: u32,
) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(PRIME);
        }
    };
    eat(b"fatbeacon.trial");
    eat(&base_seed.to_le_bytes());
    eat(protocol.as_str().as_bytes());
    eat(&size_kb.to_le_bytes());
    eat(&distance_m.to_bits().to_le_bytes());
    eat(&trial_index.to_le_bytes());
    hash
}

/// Runs the campaign. BLE4 cells go through the simulator with a
/// per-trial seed; baseline protocols use their closed-form reference
/// times (distance-independent by construction).
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialRecord>, BenchError> {
    config.validate()?;
    let mut records = Vec::with_capacity(
        config.protocols.len()
            * config.sizes_kb.len()
            * config.distances_m.len()
            * config.trials_per_cell as usize,
    );
    for &protocol in &config.protocols {
        for &size_kb in &config.sizes_kb {
            for &distance_m in &config.distances_m {
                for trial_index in 1..=config.trials_per_cell {
                    let elapsed_s = match protocol {
                        Protocol::Ble4 => {
                            let seed = trial_seed(
                                config.base_seed,
                                protocol,
                                size_kb,
                                distance_m,
                                trial_index,
                            );
                            sim::simulate_transfer(
                                &config.profile.with_seed(seed),
                                size_kb as u64 * 1024,
                                distance_m,
                            )
                        }
                        other => {
                            let model = BaselineModel::from_reference(other);
                            sim::baseline_time(&model, size_kb)
                        }
                    }
                    .map_err(|source| BenchError::Simulation {
                        protocol,
                        size_kb,
                        distance_m,
                        source,
                    })?;
                    records.push(TrialRecord {
                        protocol,
                        size_kb,
                        distance_m,
                        trial_index,
                        elapsed_s,
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Groups records by (protocol, size, distance) and aggregates each
/// group. Rows come out sorted by the group key.
pub fn aggregate(records: &[TrialRecord]) -> Result<Vec<AggregateRow>, BenchError> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        (a.protocol, a.size_kb)
            .cmp(&(b.protocol, b.size_kb))
            .then(a.distance_m.total_cmp(&b.distance_m))
    });
    let mut rows = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let key = (sorted[i].protocol, sorted[i].size_kb, sorted[i].distance_m);
        let mut samples = Vec::new();
        while i < sorted.len()
            && (sorted[i].protocol, sorted[i].size_kb, sorted[i].distance_m) == key
        {
            samples.push(sorted[i].elapsed_s);
            i += 1;
        }
        let median_s = median(&samples)?;
        // Small groups fall back to the plain mean rather than failing
        // the whole report.
        let trimmed_mean_s = if samples.len() >= 3 {
            trimmed_mean(&samples)?
        } else {
            samples.iter().sum::<f64>() / samples.len() as f64
        };
        let min_s = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_s = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rows.push(AggregateRow {
            protocol: key.0,
            size_kb: key.1,
            distance_m: key.2,
            n: samples.len(),
            median_s,
            // The mean of near-constant samples can round a hair outside
            // the sample range; the row invariant wants it inside.
            trimmed_mean_s: trimmed_mean_s.clamp(min_s, max_s),
            min_s,
            max_s,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

const REPORT_COLUMNS: [&str; 8] = [
    "protocol",
    "size_kb",
    "distance_m",
    "n",
    "median_s",
    "trimmed_mean_s",
    "min_s",
    "max_s",
];

/// Renders aggregate rows with a fixed column order and 4-decimal reals.
pub fn emit_report(rows: &[AggregateRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = REPORT_COLUMNS.join(",");
            out.push('\n');
            for row in rows {
                out.push_str(&format!(
                    "{},{},{:.4},{},{:.4},{:.4},{:.4},{:.4}\n",
                    row.protocol,
                    row.size_kb,
                    row.distance_m,
                    row.n,
                    row.median_s,
                    row.trimmed_mean_s,
                    row.min_s,
                    row.max_s
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n", REPORT_COLUMNS.join(" | "));
            out.push_str(&format!("|{}\n", " --- |".repeat(REPORT_COLUMNS.len())));
            for row in rows {
                out.push_str(&format!(
                    "| {} | {} | {:.4} | {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                    row.protocol,
                    row.size_kb,
                    row.distance_m,
                    row.n,
                    row.median_s,
                    row.trimmed_mean_s,
                    row.min_s,
                    row.max_s
                ));
            }
            out
        }
    }
}

/// CSV schema for trial records: `protocol,size_kb,distance_m,trial_index,elapsed_s`.
pub fn write_trials_csv<W: Write>(records: &[TrialRecord], writer: W) -> Result<(), BenchError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    csv_writer.write_record([
        "protocol",
        "size_kb",
        "distance_m",
        "trial_index",
        "elapsed_s",
    ])?;
    for r in records {
        csv_writer.write_record([
            r.protocol.to_string(),
            r.size_kb.to_string(),
            r.distance_m.to_string(),
            r.trial_index.to_string(),
            r.elapsed_s.to_string(),
        ])?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Reads the trial schema back; `#` lines are comments.
pub fn read_trials_csv(text: &str) -> Result<Vec<TrialRecord>, BenchError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").to_owned();
        let protocol = field(0)
            .parse::<Protocol>()
            .map_err(BenchError::InvalidConfig)?;
        let parse = |i: usize, name: &str| -> Result<f64, BenchError> {
            field(i)
                .parse::<f64>()
                .map_err(|e| BenchError::InvalidConfig(format!("{name}: {e}")))
        };
        records.push(TrialRecord {
            protocol,
            size_kb: parse(1, "size_kb")? as u32,
            distance_m: parse(2, "distance_m")?,
            trial_index: parse(3, "trial_index")? as u32,
            elapsed_s: parse(4, "elapsed_s")?,
        });
    }
    Ok(records)
}

/// Correlations a record set supports, next to the reference values the
/// source experiment reported. Disagreement is expected: which samples
/// fed the reported coefficients was never stated.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub size_vs_time: Option<f64>,
    pub size_vs_time_medians: Option<f64>,
    pub distance_vs_time: Option<f64>,
    pub distance_vs_time_medians: Option<f64>,
}

/// Reference coefficients quoted with the original dataset.
pub const REPORTED_SIZE_CORRELATION: f64 = 0.9468;
pub const REPORTED_DISTANCE_CORRELATION: f64 = 0.6851;

pub fn correlation_report(records: &[TrialRecord]) -> Result<CorrelationReport, BenchError> {
    let xs: Vec<f64> = records.iter().map(|r| r.size_kb as f64).collect();
    let ds: Vec<f64> = records.iter().map(|r| r.distance_m).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.elapsed_s).collect();
    let rows = aggregate(records)?;
    let med_sizes: Vec<f64> = rows.iter().map(|r| r.size_kb as f64).collect();
    let med_dists: Vec<f64> = rows.iter().map(|r| r.distance_m).collect();
    let med_times: Vec<f64> = rows.iter().map(|r| r.median_s).collect();
    Ok(CorrelationReport {
        size_vs_time: pearson(&xs, &ys).ok(),
        size_vs_time_medians: pearson(&med_sizes, &med_times).ok(),
        distance_vs_time: pearson(&ds, &ys).ok(),
        distance_vs_time_medians: pearson(&med_dists, &med_times).ok(),
    })
}
