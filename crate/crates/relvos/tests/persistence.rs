use std::path::PathBuf;

use proptest::prelude::*;
use relvos::config::RunConfig;
use relvos::report::{write_metrics_csv, CSV_HEADER};
use relvos::rle::RleMask;
use relvos::simulate::simulate;
use relvos::snapshot::{SessionSnapshot, VideoSource};
use relvos_core::synthetic::SyntheticConfig;
use relvos_core::LabelImage;

fn small_run() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.simulation.rounds = 3;
    cfg.simulation.robot.seed = 4;
    cfg
}

fn small_source() -> VideoSource {
    VideoSource::Synthetic {
        config: SyntheticConfig {
            width: 48,
            height: 40,
            num_frames: 6,
            seed: 11,
            ..SyntheticConfig::default()
        },
    }
}

proptest! {
    #[test]
    fn rle_round_trips(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut rng = relvos_core::rng::SplitMix64::new(seed);
        // Runs of random length so both long and short runs occur.
        let mut data = Vec::with_capacity(w * h);
        while data.len() < w * h {
            let v = rng.below(4) as u8;
            let n = 1 + rng.below(6);
            data.extend(std::iter::repeat_n(v, n.min(w * h - data.len())));
        }
        let m = LabelImage::new(w, h, data).unwrap();
        let r = RleMask::encode(&m);
        prop_assert!(r.runs.windows(2).all(|p| p[0].0 != p[1].0));
        prop_assert_eq!(r.decode().unwrap(), m);
        let json = serde_json::to_string(&r).unwrap();
        prop_assert_eq!(serde_json::from_str::<RleMask>(&json).unwrap(), r);
    }
}

#[test]
fn snapshot_round_trip_is_exact() {
    let out = simulate(&small_source(), &small_run(), None).unwrap();
    let json = out.snapshot.to_json();
    let back = SessionSnapshot::from_json(&json).unwrap();
    assert_eq!(back, out.snapshot);
    let restored = back.restore(None).unwrap();
    for t in 0..restored.num_frames() {
        assert_eq!(restored.mask(t).unwrap(), out.session.mask(t).unwrap());
    }
    for (a, b) in restored.r_scores().iter().zip(out.session.r_scores()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(restored.log(), out.session.log());
}

#[test]
fn tampered_snapshot_fails_verification() {
    let out = simulate(&small_source(), &small_run(), None).unwrap();
    let mut snap = out.snapshot.clone();
    let mut m = snap.masks[2].decode().unwrap();
    m.data[0] = if m.data[0] == 0 { 1 } else { 0 };
    snap.masks[2] = RleMask::encode(&m);
    assert!(snap.restore(None).is_err());

    let mut wrong = out.snapshot.clone();
    wrong.version = 99;
    assert!(SessionSnapshot::from_json(&wrong.to_json()).is_err());
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/metrics_small.csv")
}

/// Set `RELVOS_UPDATE_GOLDEN=1` to rewrite the golden file after an intended change.
#[test]
fn metrics_csv_matches_golden_file() {
    let out = simulate(&small_source(), &small_run(), None).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&out.report, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(text.lines().count(), 1 + 3 * 6 * 2);
    if std::env::var_os("RELVOS_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file present");
    assert_eq!(text, golden);
}

#[test]
fn csv_rows_have_six_decimals() {
    let out = simulate(&small_source(), &small_run(), None).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&out.report, &mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(&buf[..]);
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for field in [&rec[3], &rec[4]] {
            let (_, frac) = field.split_once('.').unwrap();
            assert_eq!(frac.len(), 6);
            let v: f64 = field.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
