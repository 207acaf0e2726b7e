//! Deterministic radio link simulation.
//!
//! The channel model is intentionally small: a log-distance path-loss
//! law gives RSSI, a logistic curve in SNR gives the packet error rate,
//! and a transfer costs a fixed setup latency plus one geometric
//! retransmission draw per chunk. Everything is seeded, so a run is a
//! pure function of its profile and inputs.
//!
//! The BLE4 profile ships calibrated against the reference measurements
//! (see `testdata/`): the per-size slope comes from a least-squares fit
//! of the download medians, the fixed cost is anchored so a 40 kb
//! transfer at 1 m reproduces the measured median, and the noise floor
//! is solved so the loss rate at 15 m stretches the expected time to the
//! 15 m median.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::transfer::DEFAULT_CHUNK_PAYLOAD;

/// Logistic PER slope per dB of SNR.
pub const PER_SLOPE_PER_DB: f64 = 0.8;
/// SNR at which half the chunks are lost.
pub const PER_SNR_MIDPOINT_DB: f64 = 8.0;

/// Measured BLE4 download medians at 1 m, size in kb.
pub const BLE4_REFERENCE_MEDIANS: [(f64, f64); 5] = [
    (10.0, 5.21),
    (20.0, 8.82),
    (40.0, 7.43),
    (100.0, 15.18),
    (200.0, 28.14),
];

/// Measured 40 kb medians by distance in meters.
pub const DISTANCE_REFERENCE_MEDIANS_40KB: [(f64, f64); 4] =
    [(1.0, 7.439), (5.0, 6.718), (10.0, 7.117), (15.0, 8.075)];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("cannot fit an affine model: {0}")]
    DegenerateFit(String),
    #[error("advertising interval {0} ms outside [20, 10240]")]
    InvalidInterval(u32),
    #[error("size {0} kb outside the reference range [10, 200]")]
    OutOfRange(u32),
    #[error("bad profile file at line {line}: {reason}")]
    ProfileParse { line: usize, reason: String },
}

/// Simulated channel parameters for one link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkProfile {
    pub phy_rate_kbps: f64,
    pub setup_latency_s: f64,
    pub per_chunk_overhead_s: f64,
    pub path_loss_exponent: f64,
    pub tx_power_dbm: i8,
    pub noise_floor_dbm: f64,
    pub rng_seed: u64,
}

impl Default for LinkProfile {
    fn default() -> Self {
        Self {
            phy_rate_kbps: 1000.0,
            setup_latency_s: 0.5,
            per_chunk_overhead_s: 0.002,
            path_loss_exponent: 2.0,
            tx_power_dbm: -7,
            noise_floor_dbm: -90.0,
            rng_seed: 0,
        }
    }
}

impl LinkProfile {
    /// The calibrated BLE4 profile described in the module docs.
    pub fn ble4() -> Self {
        let fit = calibrate_ble4(&BLE4_REFERENCE_MEDIANS).expect("reference medians fit");
        let anchor_1m = DISTANCE_REFERENCE_MEDIANS_40KB[0].1;
        let anchor_15m = DISTANCE_REFERENCE_MEDIANS_40KB[3].1;
        let fixed_40kb = 40.0 * fit.slope_s_per_kb;
        let setup_latency_s = anchor_1m - fixed_40kb;
        let chunks = (40.0 * 1024.0 / DEFAULT_CHUNK_PAYLOAD as f64).ceil();
        let chunk_time_s = fixed_40kb / chunks;
        let phy_rate_kbps = 1000.0;
        let air_s = (DEFAULT_CHUNK_PAYLOAD * 8) as f64 / (phy_rate_kbps * 1000.0);
        let tx_power_dbm = -7i8;
        let path_loss_exponent = 2.0;
        // Loss rate the 15 m anchor implies, then the SNR and noise
        // floor that produce it under the logistic curve.
        let per_15m = 1.0 - fixed_40kb / (anchor_15m - setup_latency_s);
        let snr_15m = PER_SNR_MIDPOINT_DB + ((1.0 - per_15m) / per_15m).ln() / PER_SLOPE_PER_DB;
        let noise_floor_dbm =
            tx_power_dbm as f64 - 10.0 * path_loss_exponent * 15f64.log10() - snr_15m;
        Self {
            phy_rate_kbps,
            setup_latency_s,
            per_chunk_overhead_s: chunk_time_s - air_s,
            path_loss_exponent,
            tx_power_dbm,
            noise_floor_dbm,
            rng_seed: 0,
        }
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }

    /// Flat `key=value` serialization for profile files.
    pub fn to_key_value(&self) -> String {
        format!(
            "phy_rate_kbps={}\nsetup_latency_s={}\nper_chunk_overhead_s={}\n\
             path_loss_exponent={}\ntx_power_dbm={}\nnoise_floor_dbm={}\nrng_seed={}\n",
            self.phy_rate_kbps,
            self.setup_latency_s,
            self.per_chunk_overhead_s,
            self.path_loss_exponent,
            self.tx_power_dbm,
            self.noise_floor_dbm,
            self.rng_seed,
        )
    }

    /// Parses a profile file. Keys not present keep their defaults;
    /// unknown keys are errors so typos cannot silently change a run.
    pub fn from_key_value(text: &str) -> Result<Self, SimError> {
        let mut profile = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| SimError::ProfileParse {
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "phy_rate_kbps" => profile.phy_rate_kbps = parse_f64(value)?,
                "setup_latency_s" => profile.setup_latency_s = parse_f64(value)?,
                "per_chunk_overhead_s" => profile.per_chunk_overhead_s = parse_f64(value)?,
                "path_loss_exponent" => profile.path_loss_exponent = parse_f64(value)?,
                "tx_power_dbm" => {
                    profile.tx_power_dbm = value
                        .parse::<i8>()
                        .map_err(|e| bad(format!("{key}: {e}")))?;
                }
                "noise_floor_dbm" => profile.noise_floor_dbm = parse_f64(value)?,
                "rng_seed" => {
                    profile.rng_seed = value
                        .parse::<u64>()
                        .map_err(|e| bad(format!("{key}: {e}")))?;
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(profile)
    }
}

/// Periodic advertisement settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdvertiserConfig {
    pub interval_ms: u32,
    pub tx_power_dbm: i8,
}

impl AdvertiserConfig {
    pub fn new(interval_ms: u32, tx_power_dbm: i8) -> Result<Self, SimError> {
        if !(20..=10_240).contains(&interval_ms) {
            return Err(SimError::InvalidInterval(interval_ms));
        }
        Ok(Self {
            interval_ms,
            tx_power_dbm,
        })
    }
}

impl Default for AdvertiserConfig {
    fn default() -> Self {
        Self {
            interval_ms: 100,
            tx_power_dbm: -7,
        }
    }
}

/// Log-distance received signal strength.
pub fn rssi_at(profile: &LinkProfile, distance_m: f64) -> Result<f64, SimError> {
    if distance_m <= 0.0 || distance_m.is_nan() {
        return Err(SimError::NonPositiveDistance(distance_m));
    }
    Ok(profile.tx_power_dbm as f64 - 10.0 * profile.path_loss_exponent * distance_m.log10())
}

/// Logistic chunk loss probability in the signal-to-noise ratio.
pub fn packet_error_rate(rssi_dbm: f64, noise_floor_dbm: f64) -> f64 {
    let snr = rssi_dbm - noise_floor_dbm;
    1.0 / (1.0 + (PER_SLOPE_PER_DB * (snr - PER_SNR_MIDPOINT_DB)).exp())
}

/// Per-chunk delay sampler: one geometric retransmission draw per chunk.
/// Drives both [`simulate_transfer`] and the live pacing injected into a
/// loopback fetch, so the two agree for the same seed.
#[derive(Debug)]
pub struct ChunkPacer {
    rng: ChaCha8Rng,
    per: f64,
    chunk_time_s: f64,
    setup_s: f64,
}

impl ChunkPacer {
    pub fn new(
        profile: &LinkProfile,
        distance_m: f64,
        chunk_payload_bytes: usize,
    ) -> Result<Self, SimError> {
        let rssi = rssi_at(profile, distance_m)?;
        let per = packet_error_rate(rssi, profile.noise_floor_dbm);
        let air_s = (chunk_payload_bytes * 8) as f64 / (profile.phy_rate_kbps * 1000.0);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(profile.rng_seed),
            per,
            chunk_time_s: air_s + profile.per_chunk_overhead_s,
            setup_s: profile.setup_latency_s,
        })
    }

    pub fn setup_s(&self) -> f64 {
        self.setup_s
    }

    pub fn packet_error_rate(&self) -> f64 {
        self.per
    }

    /// Time for the next chunk including retries: attempts are geometric
    /// with success probability `1 - per`, sampled by inverse CDF.
    pub fn next_chunk_s(&mut self) -> f64 {
        let attempts = if self.per <= 0.0 {
            1
        } else {
            let per = self.per.min(0.999_999);
            let u: f64 = self.rng.gen();
            let failures = ((1.0 - u).ln() / per.ln()).floor().min(1e6);
            1 + failures as u64
        };
        attempts as f64 * self.chunk_time_s
    }
}

/// Wall time for one transfer of `size_bytes` at `distance_m`:
/// setup latency plus every chunk's (re)transmissions. Deterministic for
/// a fixed profile seed.
pub fn simulate_transfer(
    profile: &LinkProfile,
    size_bytes: u64,
    distance_m: f64,
) -> Result<f64, SimError> {
    let mut pacer = ChunkPacer::new(profile, distance_m, DEFAULT_CHUNK_PAYLOAD)?;
    let chunks = size_bytes.div_ceil(DEFAULT_CHUNK_PAYLOAD as u64);
    let mut total = pacer.setup_s();
    for _ in 0..chunks {
        total += pacer.next_chunk_s();
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// One point of a fit's residual report.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResidual {
    pub size_kb: f64,
    pub observed_s: f64,
    pub predicted_s: f64,
    pub relative_error: f64,
}

/// Affine fit `time = setup + size / rate` plus the profile it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub setup_latency_s: f64,
    pub slope_s_per_kb: f64,
    pub rate_kb_per_s: f64,
    pub residuals: Vec<FitResidual>,
    pub profile: LinkProfile,
}

/// Least-squares affine fit over (size kb, median s) points.
pub fn calibrate_ble4(medians: &[(f64, f64)]) -> Result<CalibrationFit, SimError> {
    if medians.len() < 2 {
        return Err(SimError::DegenerateFit(format!(
            "need at least 2 points, got {}",
            medians.len()
        )));
    }
    let n = medians.len() as f64;
    let mean_x = medians.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = medians.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = medians
        .iter()
        .map(|(x, _)| (x - mean_x) * (x - mean_x))
        .sum();
    let sxy: f64 = medians
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    if sxx == 0.0 {
        return Err(SimError::DegenerateFit("all sizes equal".into()));
    }
    let slope = sxy / sxx;
    let setup = mean_y - slope * mean_x;
    let residuals = medians
        .iter()
        .map(|&(x, y)| {
            let predicted = setup + slope * x;
            FitResidual {
                size_kb: x,
                observed_s: y,
                predicted_s: predicted,
                relative_error: (predicted - y) / y,
            }
        })
        .collect();
    // The implied profile: the slope spread over 20-byte chunks, with a
    // quiet default channel (the fit carries no distance information).
    let chunk_time_s = slope * DEFAULT_CHUNK_PAYLOAD as f64 / 1024.0;
    let phy_rate_kbps = 1000.0;
    let air_s = (DEFAULT_CHUNK_PAYLOAD * 8) as f64 / (phy_rate_kbps * 1000.0);
    let profile = LinkProfile {
        phy_rate_kbps,
        setup_latency_s: setup,
        per_chunk_overhead_s: chunk_time_s - air_s,
        ..LinkProfile::default()
    };
    Ok(CalibrationFit {
        setup_latency_s: setup,
        slope_s_per_kb: slope,
        rate_kb_per_s: 1.0 / slope,
        residuals,
        profile,
    })
}

// ---------------------------------------------------------------------------
// Closed-form baselines
// ---------------------------------------------------------------------------

/// Protocols compared by the benchmark harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Ble4,
    Ble5,
    G2,
    G3,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Ble4, Protocol::Ble5, Protocol::G2, Protocol::G3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Ble4 => "BLE4",
            Protocol::Ble5 => "BLE5",
            Protocol::G2 => "2G",
            Protocol::G3 => "3G",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BLE4" => Ok(Protocol::Ble4),
            "BLE5" => Ok(Protocol::Ble5),
            "2G" => Ok(Protocol::G2),
            "3G" => Ok(Protocol::G3),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// Reference download times in seconds per size. BLE4 is measured; BLE5
/// follows its specification (one quarter of the BLE4 time across the
/// board); 2G/3G follow cellular nominal rates. The 3G zeros are
/// sub-half-second times rounded down in the source data and are
/// returned literally.
pub const BASELINE_DOWNLOAD_TIMES: [(Protocol, [(u32, f64); 5]); 4] = [
    (
        Protocol::Ble4,
        [
            (10, 5.21),
            (20, 8.82),
            (40, 7.43),
            (100, 15.18),
            (200, 28.14),
        ],
    ),
    (
        Protocol::Ble5,
        [(10, 1.30), (20, 2.20), (40, 1.85), (100, 3.79), (200, 7.03)],
    ),
    (
        Protocol::G2,
        [(10, 5.0), (20, 11.0), (40, 23.0), (100, 58.0), (200, 107.0)],
    ),
    (
        Protocol::G3,
        [(10, 0.0), (20, 0.0), (40, 0.0), (100, 2.0), (200, 4.0)],
    ),
];

/// A protocol's reference time table.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub protocol: Protocol,
    pub reference_times: Vec<(u32, f64)>,
}

impl BaselineModel {
    pub fn from_reference(protocol: Protocol) -> Self {
        let (_, table) = BASELINE_DOWNLOAD_TIMES
            .iter()
            .find(|(p, _)| *p == protocol)
            .expect("every protocol has a reference table");
        Self {
            protocol,
            reference_times: table.to_vec(),
        }
    }
}

/// Exact table value at a reference size, linear interpolation between
/// reference sizes, and an error outside the covered range.
pub fn baseline_time(model: &BaselineModel, size_kb: u32) -> Result<f64, SimError> {
    let table = &model.reference_times;
    if let Some((_, t)) = table.iter().find(|(s, _)| *s == size_kb) {
        return Ok(*t);
    }
    let (lo, hi) = (
        table.first().expect("non-empty").0,
        table.last().expect("non-empty").0,
    );
    if size_kb < lo || size_kb > hi {
        return Err(SimError::OutOfRange(size_kb));
    }
    let right = table
        .iter()
        .position(|(s, _)| *s > size_kb)
        .expect("in range");
    let (x0, y0) = table[right - 1];
    let (x1, y1) = table[right];
    let frac = (size_kb - x0) as f64 / (x1 - x0) as f64;
    Ok(y0 + frac * (y1 - y0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rssi_examples() {
        let profile = LinkProfile::default();
        assert_eq!(rssi_at(&profile, 1.0).unwrap(), -7.0);
        assert!((rssi_at(&profile, 10.0).unwrap() - -27.0).abs() < 1e-12);
        assert_eq!(
            rssi_at(&profile, 0.0),
            Err(SimError::NonPositiveDistance(0.0))
        );
        assert_eq!(
            rssi_at(&profile, -2.0),
            Err(SimError::NonPositiveDistance(-2.0))
        );
    }

    #[test]
    fn per_midpoint_and_tails() {
        let noise = -90.0;
        let mid = packet_error_rate(noise + PER_SNR_MIDPOINT_DB, noise);
        assert!((mid - 0.5).abs() < 1e-12);
        assert!(packet_error_rate(noise + 100.0, noise) < 1e-12);
        assert!(packet_error_rate(noise - 100.0, noise) > 1.0 - 1e-12);
        // farther is worse for the default profile
        let profile = LinkProfile::default();
        let per_1 = packet_error_rate(rssi_at(&profile, 1.0).unwrap(), profile.noise_floor_dbm);
        let per_15 = packet_error_rate(rssi_at(&profile, 15.0).unwrap(), profile.noise_floor_dbm);
        assert!(per_15 > per_1);
    }

    #[test]
    fn zero_size_costs_exactly_setup() {
        let profile = LinkProfile::ble4();
        assert_eq!(
            simulate_transfer(&profile, 0, 1.0).unwrap(),
            profile.setup_latency_s
        );
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let profile = LinkProfile::ble4().with_seed(1234);
        let a = simulate_transfer(&profile, 120_000, 9.0).unwrap();
        let b = simulate_transfer(&profile, 120_000, 9.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibrated_profile_hits_the_1m_anchor() {
        let profile = LinkProfile::ble4();
        let mut mean = 0.0;
        let seeds = 300;
        for seed in 0..seeds {
            mean += simulate_transfer(&profile.with_seed(seed), 40 * 1024, 1.0).unwrap();
        }
        mean /= seeds as f64;
        let anchor = DISTANCE_REFERENCE_MEDIANS_40KB[0].1;
        assert!(
            (mean - anchor).abs() / anchor < 0.15,
            "mean {mean} vs {anchor}"
        );
    }

    #[test]
    fn distance_stretches_the_mean() {
        let profile = LinkProfile::ble4();
        let mean_at = |d: f64| {
            (0..300)
                .map(|s| simulate_transfer(&profile.with_seed(s), 40 * 1024, d).unwrap())
                .sum::<f64>()
                / 300.0
        };
        let near = mean_at(1.0);
        let far = mean_at(15.0);
        assert!(far > near, "15 m mean {far} should exceed 1 m mean {near}");
        // close to the measured stretch, not forced onto it
        assert!((far / near - 8.075 / 7.439).abs() < 0.05);
    }

    #[test]
    fn mean_time_monotone_in_size_and_distance() {
        let profile = LinkProfile::ble4();
        let mean = |size: u64, distance: f64| {
            (0..1000)
                .map(|s| simulate_transfer(&profile.with_seed(s), size, distance).unwrap())
                .sum::<f64>()
                / 1000.0
        };
        let by_size: Vec<f64> = [10, 40, 100]
            .iter()
            .map(|kb| mean(kb * 1024, 1.0))
            .collect();
        assert!(by_size.windows(2).all(|w| w[0] <= w[1]), "{by_size:?}");
        let by_distance: Vec<f64> = [1.0, 5.0, 10.0, 15.0]
            .iter()
            .map(|d| mean(40 * 1024, *d))
            .collect();
        assert!(
            by_distance.windows(2).all(|w| w[0] <= w[1]),
            "{by_distance:?}"
        );
    }

    #[test]
    fn clean_channel_matches_closed_form() {
        let profile = LinkProfile::ble4();
        let size: u64 = 40 * 1024;
        let sim = simulate_transfer(&profile, size, 0.5).unwrap();
        let fit = calibrate_ble4(&BLE4_REFERENCE_MEDIANS).unwrap();
        let closed = profile.setup_latency_s + (size as f64 / 1024.0) * fit.slope_s_per_kb;
        assert!(
            (sim - closed).abs() / closed < 0.01,
            "sim {sim} vs closed {closed}"
        );
    }

    #[test]
    fn two_point_fit_solves_the_linear_system() {
        let fit = calibrate_ble4(&[(10.0, 5.21), (200.0, 28.14)]).unwrap();
        assert!((fit.rate_kb_per_s - 190.0 / 22.93).abs() < 1e-9);
        assert!((fit.setup_latency_s - (5.21 - 10.0 * 22.93 / 190.0)).abs() < 1e-9);
    }

    #[test]
    fn reference_fit_residuals_stay_in_band() {
        let fit = calibrate_ble4(&BLE4_REFERENCE_MEDIANS).unwrap();
        for r in &fit.residuals {
            assert!(r.relative_error.abs() <= 0.25, "{r:?}");
        }
        // the 20 kb anomaly dominates
        let worst = fit
            .residuals
            .iter()
            .cloned()
            .max_by(|a, b| a.relative_error.abs().total_cmp(&b.relative_error.abs()));
        assert_eq!(worst.unwrap().size_kb, 20.0);
    }

    #[test]
    fn duplicated_points_leave_the_fit_alone() {
        let mut doubled = BLE4_REFERENCE_MEDIANS.to_vec();
        doubled.extend_from_slice(&BLE4_REFERENCE_MEDIANS);
        let base = calibrate_ble4(&BLE4_REFERENCE_MEDIANS).unwrap();
        let dup = calibrate_ble4(&doubled).unwrap();
        assert!((base.slope_s_per_kb - dup.slope_s_per_kb).abs() < 1e-12);
        assert!((base.setup_latency_s - dup.setup_latency_s).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits_are_rejected() {
        assert!(matches!(
            calibrate_ble4(&[(10.0, 5.0)]),
            Err(SimError::DegenerateFit(_))
        ));
        assert!(matches!(
            calibrate_ble4(&[(10.0, 5.0), (10.0, 6.0)]),
            Err(SimError::DegenerateFit(_))
        ));
    }

    #[test]
    fn baseline_examples() {
        let ble5 = BaselineModel::from_reference(Protocol::Ble5);
        assert_eq!(baseline_time(&ble5, 200).unwrap(), 7.03);
        let g2 = BaselineModel::from_reference(Protocol::G2);
        assert_eq!(baseline_time(&g2, 100).unwrap(), 58.0);
        let g3 = BaselineModel::from_reference(Protocol::G3);
        assert_eq!(baseline_time(&g3, 10).unwrap(), 0.0);
        let ble4 = BaselineModel::from_reference(Protocol::Ble4);
        assert!((baseline_time(&ble4, 30).unwrap() - (8.82 + 7.43) / 2.0).abs() < 1e-12);
        assert_eq!(baseline_time(&ble4, 5), Err(SimError::OutOfRange(5)));
        assert_eq!(baseline_time(&ble4, 201), Err(SimError::OutOfRange(201)));
    }

    #[test]
    fn profile_files_round_trip() {
        let profile = LinkProfile::ble4().with_seed(42);
        let text = profile.to_key_value();
        assert_eq!(LinkProfile::from_key_value(&text).unwrap(), profile);
        let with_comments = format!("# calibrated profile\n\n{text}# trailing note\n");
        assert_eq!(
            LinkProfile::from_key_value(&with_comments).unwrap(),
            profile
        );
        assert!(matches!(
            LinkProfile::from_key_value("bogus_key=1"),
            Err(SimError::ProfileParse { line: 1, .. })
        ));
        assert!(matches!(
            LinkProfile::from_key_value("tx_power_dbm=not-a-number"),
            Err(SimError::ProfileParse { .. })
        ));
    }

    #[test]
    fn advertiser_config_bounds() {
        assert!(AdvertiserConfig::new(100, -7).is_ok());
        assert_eq!(
            AdvertiserConfig::new(19, -7),
            Err(SimError::InvalidInterval(19))
        );
        assert_eq!(
            AdvertiserConfig::new(10_241, -7),
            Err(SimError::InvalidInterval(10_241))
        );
    }

    proptest! {
        #[test]
        fn rssi_decreases_with_distance(d1 in 0.01f64..100.0, d2 in 0.01f64..100.0) {
            prop_assume!(d2 >= d1);
            let profile = LinkProfile::default();
            prop_assert!(rssi_at(&profile, d2).unwrap() <= rssi_at(&profile, d1).unwrap());
        }

        #[test]
        fn per_decreases_with_rssi(r1 in -120.0f64..0.0, delta in 0.0f64..60.0) {
            let noise = -90.0;
            prop_assert!(packet_error_rate(r1 + delta, noise) <= packet_error_rate(r1, noise));
            let per = packet_error_rate(r1, noise);
            prop_assert!(per > 0.0 && per < 1.0);
        }
    }
}
