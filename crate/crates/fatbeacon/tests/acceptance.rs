//! Acceptance suite: one test per exit criterion, each printing a
//! `criterion NN PASS/FAIL` line (run with `--nocapture` to see them
//! all). Expected values marked "frozen" were computed with independent
//! reference tooling before the implementation existed.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fatbeacon::bench::{
    coverage_diff, median, pearson, read_trials_csv, trimmed_mean, RasterMask,
    REPORTED_DISTANCE_CORRELATION, REPORTED_SIZE_CORRELATION,
};
use fatbeacon::bundler::{
    encode_data_uri, generate_corpus, inline_bundle, validate_atomic, ContentBundle,
};
use fatbeacon::frames::{
    classify_frame, encode_eddystone_url, encode_fatbeacon, parse_hex_dump, EddystoneUrlFrame,
    FatBeaconFrame, FrameKind, RawAdvPacket, MAX_ADV_PACKET_BYTES,
};
use fatbeacon::loopback::{scan_and_fetch, Advertiser, LoopbackEndpoint, Throttle};
use fatbeacon::sim::{
    baseline_time, calibrate_ble4, simulate_transfer, AdvertiserConfig, BaselineModel, LinkProfile,
    Protocol, BLE4_REFERENCE_MEDIANS, DISTANCE_REFERENCE_MEDIANS_40KB,
};
use fatbeacon::transfer::ChunkParams;

fn fixture(name: &str) -> String {
    let path = format!("{}/testdata/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {path}: {e}"))
}

fn check(criterion: u32, what: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion:02} {verdict}: {what} ({detail})");
    assert!(pass, "criterion {criterion} failed: {what} ({detail})");
}

#[test]
fn criterion_01_median_reproduces_the_download_table() {
    let records = read_trials_csv(&fixture("reference_times_1m.csv")).unwrap();
    assert_eq!(records.len(), 25);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for &(size_kb, published) in &BLE4_REFERENCE_MEDIANS {
        let samples: Vec<f64> = records
            .iter()
            .filter(|r| r.size_kb as f64 == size_kb)
            .map(|r| r.elapsed_s)
            .collect();
        assert_eq!(samples.len(), 5);
        let med = median(&samples).unwrap();
        worst = worst.max((med - published).abs());
    }
    let elapsed = started.elapsed();
    check(
        1,
        "raw-fixture medians agree with the published per-size column to 2 decimals",
        worst < 0.01 && elapsed < Duration::from_secs(1),
        &format!("worst |diff| {worst:.4} s, aggregated in {elapsed:?}"),
    );
}

#[test]
fn criterion_02_ble5_is_a_quarter_of_ble4() {
    let ble4 = BaselineModel::from_reference(Protocol::Ble4);
    let ble5 = BaselineModel::from_reference(Protocol::Ble5);
    let mut worst = 0.0f64;
    for size in [10, 20, 40, 100, 200] {
        let quarter = baseline_time(&ble4, size).unwrap() / 4.0;
        let listed = baseline_time(&ble5, size).unwrap();
        worst = worst.max((quarter - listed).abs());
    }
    // The shipped CSV and the embedded table must agree.
    let table_csv = fixture("reference_download_times.csv");
    for line in table_csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("protocol"))
    {
        let mut parts = line.split(',');
        let protocol: Protocol = parts.next().unwrap().parse().unwrap();
        let size: u32 = parts.next().unwrap().parse().unwrap();
        let seconds: f64 = parts.next().unwrap().parse().unwrap();
        let model = BaselineModel::from_reference(protocol);
        assert_eq!(
            baseline_time(&model, size).unwrap(),
            seconds,
            "{protocol} {size} kb"
        );
    }
    check(
        2,
        "BLE5 baseline equals BLE4/4 at every reference size",
        worst <= 0.01,
        &format!("worst |BLE4/4 - BLE5| = {worst:.4} s"),
    );
}

#[test]
fn criterion_03_calibration_fit_stays_in_band() {
    let fit_a = calibrate_ble4(&BLE4_REFERENCE_MEDIANS).unwrap();
    let fit_b = calibrate_ble4(&BLE4_REFERENCE_MEDIANS).unwrap();
    let stable = fit_a.slope_s_per_kb == fit_b.slope_s_per_kb
        && fit_a.setup_latency_s == fit_b.setup_latency_s;
    // Frozen from solving the normal equations with reference tooling.
    let slope_ok = (fit_a.slope_s_per_kb - 0.116423139158576).abs() < 1e-12;
    let setup_ok = (fit_a.setup_latency_s - 4.340687702265368).abs() < 1e-12;
    let worst = fit_a
        .residuals
        .iter()
        .map(|r| r.relative_error.abs())
        .fold(0.0f64, f64::max);
    println!(
        "  fit: setup {:.4} s, rate {:.4} kB/s, slope {:.6} s/kb",
        fit_a.setup_latency_s, fit_a.rate_kb_per_s, fit_a.slope_s_per_kb
    );
    for r in &fit_a.residuals {
        println!(
            "  {:>3} kb: observed {:>6.2} s, predicted {:>6.2} s, rel {:+.1}%",
            r.size_kb,
            r.observed_s,
            r.predicted_s,
            r.relative_error * 100.0
        );
    }
    check(
        3,
        "affine fit predicts every reference median within 25%",
        stable && slope_ok && setup_ok && worst <= 0.25,
        &format!(
            "max |relative error| {:.1}% (at the 20 kb anomaly)",
            worst * 100.0
        ),
    );
}

#[test]
fn criterion_04_simulated_distance_behavior() {
    let profile = LinkProfile::ble4();
    let mean_over_seeds = |distance: f64| {
        let mut total = 0.0;
        for seed in 0..1000u64 {
            total += simulate_transfer(&profile.with_seed(seed), 40 * 1024, distance).unwrap();
        }
        total / 1000.0
    };
    let near = mean_over_seeds(1.0);
    let far = mean_over_seeds(15.0);
    let anchor = DISTANCE_REFERENCE_MEDIANS_40KB[0].1;
    let rel = (near - anchor).abs() / anchor;
    check(
        4,
        "40 kb over 1000 seeds: 1 m mean within 15% of the measured median, 15 m mean above it",
        rel <= 0.15 && far > near,
        &format!(
            "1 m mean {near:.3} s (ref {anchor:.3}, off {:.1}%), 15 m mean {far:.3} s",
            rel * 100.0
        ),
    );
}

/// Sorts, slices off the extremes, sums ascending.
fn sort_and_slice_oracle(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let kept = &sorted[1..sorted.len() - 1];
    kept.iter().sum::<f64>() / kept.len() as f64
}

#[test]
fn criterion_05_trimmed_mean_against_its_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_ulp_diff: u64 = 0;
    for _ in 0..10_000 {
        let len = rng.gen_range(3..=50);
        let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..100.0)).collect();
        let ours = trimmed_mean(&samples).unwrap();
        let oracle = sort_and_slice_oracle(&samples);
        let ulp_diff = (ours.to_bits() as i64 - oracle.to_bits() as i64).unsigned_abs();
        max_ulp_diff = max_ulp_diff.max(ulp_diff);
    }
    let ten_kb = [4.0498, 4.4163, 5.2194, 6.8424, 7.3336];
    let tm = trimmed_mean(&ten_kb).unwrap();
    println!(
        "  10 kb trimmed mean {tm:.4} s; the source printed 5.5219 as that column's aggregate, \
         which matches neither the trimmed mean nor the raw median (5.2194)"
    );
    check(
        5,
        "trimmed mean equals the sort-and-slice oracle on 10000 random lists",
        max_ulp_diff <= 1 && (tm - 5.4927).abs() < 1e-12,
        &format!("max ulp diff {max_ulp_diff}, 10 kb column gives {tm:.4}"),
    );
}

/// Raw-moment form, a different algebraic route than the implementation.
fn pearson_raw_moments(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn criterion_06_pearson_against_oracle_and_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut runs = 0;
    while runs < 1000 {
        let len = rng.gen_range(3..=60);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let Ok(ours) = pearson(&x, &y) else { continue };
        worst = worst.max((ours - pearson_raw_moments(&x, &y)).abs());
        runs += 1;
    }

    let size_records = read_trials_csv(&fixture("reference_times_1m.csv")).unwrap();
    let sizes: Vec<f64> = size_records.iter().map(|r| r.size_kb as f64).collect();
    let times: Vec<f64> = size_records.iter().map(|r| r.elapsed_s).collect();
    let r_size = pearson(&sizes, &times).unwrap();

    let dist_records = read_trials_csv(&fixture("reference_distance_40kb.csv")).unwrap();
    let distances: Vec<f64> = dist_records.iter().map(|r| r.distance_m).collect();
    let dist_times: Vec<f64> = dist_records.iter().map(|r| r.elapsed_s).collect();
    let r_dist = pearson(&distances, &dist_times).unwrap();

    // Frozen with independent statistics tooling over the same fixtures.
    let frozen_ok =
        (r_size - 0.605216906894).abs() < 1e-9 && (r_dist - 0.197836783606).abs() < 1e-9;
    println!(
        "  size vs time over 25 raw samples: r = {r_size:+.4} \
         (source reported {REPORTED_SIZE_CORRELATION}; its input selection is unstated)"
    );
    println!(
        "  distance vs time over 20 raw samples: r = {r_dist:+.4} \
         (source reported {REPORTED_DISTANCE_CORRELATION})"
    );
    check(
        6,
        "pearson matches the raw-moment oracle within 1e-12 and fixture values are reported",
        worst <= 1e-12 && frozen_ok,
        &format!("worst |diff| {worst:.2e}; r_size {r_size:+.4}, r_dist {r_dist:+.4}"),
    );
}

#[test]
fn criterion_07_codec_round_trips_and_golden_vectors() {
    const URL_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789./_-";
    const SCHEMES: [&str; 4] = ["http://www.", "https://www.", "http://", "https://"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0usize;
    for _ in 0..10_000 {
        let scheme = SCHEMES[rng.gen_range(0..4)];
        let body_len = rng.gen_range(1..=12);
        let body: String = (0..body_len)
            .map(|_| URL_CHARS[rng.gen_range(0..URL_CHARS.len())] as char)
            .collect();
        let frame = EddystoneUrlFrame {
            tx_power_dbm: rng.gen_range(-100..=20),
            url: format!("{scheme}{body}"),
        };
        let packet = encode_eddystone_url(&frame).unwrap();
        assert!(packet.bytes.len() <= MAX_ADV_PACKET_BYTES);
        assert_eq!(classify_frame(&packet), FrameKind::UrlBeacon(frame));

        let title_len = rng.gen_range(1..=26);
        let title: String = (0..title_len)
            .map(|_| rng.gen_range(b' '..=b'~') as char)
            .collect();
        let fat = FatBeaconFrame {
            tx_power_dbm: rng.gen_range(-100..=20),
            title,
        };
        let packet = encode_fatbeacon(&fat).unwrap();
        assert!(packet.bytes.len() <= MAX_ADV_PACKET_BYTES);
        assert_eq!(classify_frame(&packet), FrameKind::FatBeacon(fat));
        checked += 2;
    }

    let golden = parse_hex_dump(&fixture("frames.hex")).unwrap();
    assert_eq!(golden.len(), 6);
    let expected: [(&str, RawAdvPacket); 5] = [
        (
            "url",
            encode_eddystone_url(&EddystoneUrlFrame {
                tx_power_dbm: -7,
                url: "https://www.example.com".into(),
            })
            .unwrap(),
        ),
        (
            "url",
            encode_eddystone_url(&EddystoneUrlFrame {
                tx_power_dbm: 0,
                url: "http://example.org/".into(),
            })
            .unwrap(),
        ),
        (
            "url",
            encode_eddystone_url(&EddystoneUrlFrame {
                tx_power_dbm: 20,
                url: "http://www.a.com/b".into(),
            })
            .unwrap(),
        ),
        (
            "fat",
            encode_fatbeacon(&FatBeaconFrame {
                tx_power_dbm: -7,
                title: "Trail".into(),
            })
            .unwrap(),
        ),
        (
            "fat",
            encode_fatbeacon(&FatBeaconFrame {
                tx_power_dbm: -16,
                title: "Sendero de los Sentidos".into(),
            })
            .unwrap(),
        ),
    ];
    for (i, (_, packet)) in expected.iter().enumerate() {
        assert_eq!(packet.bytes, golden[i], "golden vector {i}");
    }
    assert_eq!(
        classify_frame(&RawAdvPacket::from_bytes(golden[5].clone())),
        FrameKind::Unknown
    );
    check(
        7,
        "random frames survive encode->classify; golden vectors match the hand encoding",
        true,
        &format!(
            "{checked} random round-trips, {} golden packets",
            golden.len()
        ),
    );
}

/// A document with external stylesheets, scripts and images, plus the
/// resolver that answers them. Structure varies with `i`.
fn external_document(i: usize) -> (String, HashMap<String, (Vec<u8>, String)>) {
    let mut resolver = HashMap::new();
    let mut head = String::new();
    let mut body =
        format!("<h1>Point of interest {i}</h1>\n<p>Opening hours and route notes.</p>\n");
    for c in 0..i % 3 {
        let url = format!("styles/poi{i}_{c}.css");
        let css = format!("h1 {{ color: #0{c}{i:x}; }} p {{ line-height: 1.{c} }}");
        resolver.insert(url.clone(), (css.into_bytes(), "text/css".to_owned()));
        head.push_str(&format!("<link rel=\"stylesheet\" href=\"{url}\">\n"));
    }
    for s in 0..i % 2 {
        let url = format!("js/widget{i}_{s}.js");
        let js = format!("document.title = 'poi {i}.{s}';");
        resolver.insert(url.clone(), (js.into_bytes(), "text/javascript".to_owned()));
        body.push_str(&format!("<script src=\"{url}\"></script>\n"));
    }
    for m in 0..i % 4 {
        let url = format!("img/photo{i}_{m}.png");
        let bytes: Vec<u8> = (0..48).map(|b| (b * 7 + i * 13 + m) as u8).collect();
        resolver.insert(url.clone(), (bytes, "image/png".to_owned()));
        body.push_str(&format!("<img src=\"{url}\" alt=\"photo {m}\">\n"));
    }
    body.push_str(
        "<a href=\"#top\">back up</a> <a href=\"mailto:office@poi.example\">write us</a>\n",
    );
    let html = if i.is_multiple_of(5) {
        format!("<!DOCTYPE html>\n<body>\n{body}</body>\n")
    } else {
        format!(
            "<!DOCTYPE html>\n<html>\n<head>\n<title>POI {i}</title>\n{head}</head>\n<body>\n{body}</body>\n</html>\n"
        )
    };
    (html, resolver)
}

#[test]
fn criterion_08_atomicity_suite() {
    let mut inlined_images = 0usize;
    for i in 0..20 {
        let (html, resolver) = external_document(i);
        let bundle = inline_bundle(&html, &resolver).unwrap();
        let violations = validate_atomic(&bundle);
        assert!(violations.is_empty(), "doc {i}: {violations:?}");
        let twice = inline_bundle(&bundle.html, &resolver).unwrap();
        assert_eq!(bundle.html, twice.html, "doc {i} not idempotent");
        // every data: URI payload must decode back to the source bytes
        let originals: Vec<&(Vec<u8>, String)> = resolver
            .iter()
            .filter(|(url, _)| url.starts_with("img/"))
            .map(|(_, entry)| entry)
            .collect();
        for (bytes, mime) in &originals {
            let uri = encode_data_uri(bytes, mime);
            assert!(bundle.html.contains(&uri), "doc {i} lost an image");
            let payload = uri.rsplit(',').next().unwrap();
            use base64::Engine;
            let decoded = base64::engine::general_purpose::STANDARD
                .decode(payload)
                .unwrap();
            assert_eq!(&decoded, bytes, "doc {i} image corrupted");
            inlined_images += 1;
        }
    }
    check(
        8,
        "20-document corpus: inline output is atomic, idempotent, and image-exact",
        true,
        &format!("{inlined_images} images round-tripped byte-exact"),
    );
}

#[test]
fn criterion_09_end_to_end_loopback() {
    let started = Instant::now();
    let endpoint = LoopbackEndpoint::localhost(0, 0).unwrap();

    // All five corpus sizes transfer hash-equal on a raw loopback link.
    for bundle in generate_corpus(&[10, 20, 40, 100, 200]) {
        let expected_hash = bundle.content_hash;
        let advertiser = Advertiser::start(
            bundle,
            AdvertiserConfig::default(),
            &endpoint,
            ChunkParams::default(),
        )
        .unwrap();
        let outcome = scan_and_fetch(
            &advertiser.endpoint(),
            Duration::from_secs(10),
            None,
            |_| {},
        )
        .unwrap();
        let got = ContentBundle::new(String::from_utf8(outcome.bytes).unwrap());
        assert_eq!(got.content_hash, expected_hash, "content hash mismatch");
        advertiser.stop();
    }

    // The 40 kb fetch through the calibrated profile at 1 m lands in the
    // simulated-time band.
    let bundle = generate_corpus(&[40]).remove(0);
    let expected_hash = bundle.content_hash;
    let advertiser = Advertiser::start(
        bundle,
        AdvertiserConfig::default(),
        &endpoint,
        ChunkParams::default(),
    )
    .unwrap();
    let throttle = Throttle {
        profile: LinkProfile::ble4().with_seed(9),
        distance_m: 1.0,
    };
    let outcome = scan_and_fetch(
        &advertiser.endpoint(),
        Duration::from_secs(30),
        Some(throttle),
        |_| {},
    )
    .unwrap();
    let elapsed_s = outcome.elapsed_s();
    let got = ContentBundle::new(String::from_utf8(outcome.bytes).unwrap());
    assert_eq!(got.content_hash, expected_hash);
    let anchor = DISTANCE_REFERENCE_MEDIANS_40KB[0].1;
    let rel = (elapsed_s - anchor).abs() / anchor;

    // Notification precedes the connection in the session log.
    let connect_ts = outcome
        .events
        .iter()
        .find(|e| e.event.starts_with("connect_initiated"))
        .map(|e| e.ts_ns)
        .unwrap();
    let ordered = outcome.notified_ts_ns <= connect_ts;
    advertiser.stop();

    let wall = started.elapsed();
    check(
        9,
        "loopback end-to-end: five sizes hash-equal; simulated 40 kb fetch in band; notify-before-connect",
        rel <= 0.15 && ordered && wall < Duration::from_secs(300),
        &format!("throttled fetch {elapsed_s:.3} s (ref {anchor:.3} s, off {:.1}%), criterion ran {wall:.1?}", rel * 100.0),
    );
}

#[test]
fn criterion_10_coverage_diff_fractions() {
    // Constructed masks: 50 trail pixels, 20 under signal.
    let mut trails = RasterMask::new(10, 10);
    let mut signal = RasterMask::new(10, 10);
    for y in 0..10 {
        for x in 0..10 {
            if y < 5 {
                trails.set(x, y, true);
            }
            if y < 2 {
                signal.set(x, y, true);
            }
        }
    }
    let diff = coverage_diff(&trails, &signal).unwrap();

    // The shipped fixtures encode the same scenario.
    let trails_file = RasterMask::from_pbm(&fixture("trails.pbm")).unwrap();
    let signal_file = RasterMask::from_pbm(&fixture("signal2g.pbm")).unwrap();
    let file_diff = coverage_diff(&trails_file, &signal_file).unwrap();

    check(
        10,
        "synthetic 40%/60% masks reproduce the covered/uncovered split exactly",
        diff.covered_fraction == 0.40
            && diff.uncovered_fraction == 0.60
            && file_diff.covered_fraction == 0.40
            && file_diff.uncovered_fraction == 0.60,
        &format!(
            "constructed {:.2}/{:.2}, fixtures {:.2}/{:.2}",
            diff.covered_fraction,
            diff.uncovered_fraction,
            file_diff.covered_fraction,
            file_diff.uncovered_fraction
        ),
    );
}
