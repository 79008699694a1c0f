mod common;

use std::path::{Path, PathBuf};

use common::rng;
use fricvae::ground_truth::{
    build_dataset, compute_mu, compute_mu_max, label_frames, list_frames, read_signals,
    synchronize, FrameRecord, IngestOptions, MuMode, SignalRecord, GRAVITY,
};
use fricvae::manifest::{read_manifest, render_manifest, write_manifest, MuSource};
use fricvae::Error;
use proptest::prelude::*;
use rand::Rng;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clip")
}

fn signal(t: f64, a: f64) -> SignalRecord {
    SignalRecord {
        timestamp_s: t,
        ax_mps2: a,
        speed_mps: 5.0,
        normal_force_n: None,
        mass_kg: None,
        slip_ratio: None,
    }
}

fn frame(i: usize, t: f64) -> FrameRecord {
    FrameRecord {
        frame_id: format!("f{i}"),
        timestamp_s: t,
        image: PathBuf::from(format!("f{i}_{t}.png")),
    }
}

#[test]
fn mu_oracle_values() {
    assert_eq!(compute_mu(4.905, 9.81).unwrap(), 0.5);
    assert_eq!(compute_mu(0.0, GRAVITY).unwrap(), 0.0);
    assert_eq!(compute_mu(-9.81, GRAVITY).unwrap(), 1.0);
    assert_eq!(compute_mu(-15.0, GRAVITY).unwrap(), 1.0);
    assert_eq!(compute_mu_max(2500.0, 5000.0).unwrap(), 0.5);
    assert_eq!(compute_mu_max(5000.0, 5000.0).unwrap(), 1.0);
    assert_eq!(compute_mu_max(0.0, 5000.0).unwrap(), 0.0);
}

#[test]
fn mu_errors() {
    assert!(matches!(compute_mu(f64::NAN, GRAVITY), Err(Error::Data(_))));
    assert!(matches!(
        compute_mu(f64::INFINITY, GRAVITY),
        Err(Error::Data(_))
    ));
    assert!(compute_mu(1.0, 0.0).is_err());
    assert!(matches!(compute_mu_max(1.0, 0.0), Err(Error::Data(_))));
    assert!(matches!(compute_mu_max(1.0, -3.0), Err(Error::Data(_))));
}

proptest! {
    #[test]
    fn mu_is_monotone_and_bounded(a in -30.0..30.0f64, b in -30.0..30.0f64) {
        let (ma, mb) = (compute_mu(a, GRAVITY).unwrap(), compute_mu(b, GRAVITY).unwrap());
        prop_assert!((0.0..=1.0).contains(&ma));
        if a.abs() <= b.abs() {
            prop_assert!(ma <= mb);
        }
        prop_assert_eq!(ma, compute_mu(-a, GRAVITY).unwrap());
    }
}

/// Nearest signal by linear scan; ties go to the earliest index.
fn brute_force(
    frames: &[FrameRecord],
    signals: &[SignalRecord],
    tol: f64,
) -> (Vec<(String, f64)>, usize) {
    let mut out = Vec::new();
    let mut dropped = 0;
    for f in frames {
        let mut best = 0;
        for (i, s) in signals.iter().enumerate() {
            if (s.timestamp_s - f.timestamp_s).abs()
                < (signals[best].timestamp_s - f.timestamp_s).abs()
            {
                best = i;
            }
        }
        if (signals[best].timestamp_s - f.timestamp_s).abs() <= tol {
            out.push((f.frame_id.clone(), signals[best].ax_mps2));
        } else {
            dropped += 1;
        }
    }
    (out, dropped)
}

fn random_case(r: &mut impl Rng) -> (Vec<FrameRecord>, Vec<SignalRecord>, f64) {
    let ns = r.random_range(1..40);
    // Coarse grid so exact ties and duplicate signal stamps occur.
    let mut st: Vec<f64> = (0..ns)
        .map(|_| r.random_range(0..200) as f64 * 0.05)
        .collect();
    st.sort_by(f64::total_cmp);
    let signals = st
        .iter()
        .enumerate()
        .map(|(i, &t)| signal(t, i as f64))
        .collect();
    let nf = r.random_range(0..30);
    let mut ft: Vec<f64> = (0..nf)
        .map(|_| r.random_range(-40..440) as f64 * 0.025)
        .collect();
    ft.sort_by(f64::total_cmp);
    ft.dedup();
    let frames = ft.iter().enumerate().map(|(i, &t)| frame(i, t)).collect();
    let tol = [0.0, 0.02, 0.05, 0.3, 5.0][r.random_range(0..5)];
    (frames, signals, tol)
}

#[test]
fn synchronize_matches_brute_force_on_random_sets() {
    let mut r = rng(2024);
    for case in 0..1000 {
        let (frames, signals, tol) = random_case(&mut r);
        let (pairs, report) = synchronize(&frames, &signals, tol).unwrap();
        let got: Vec<(String, f64)> = pairs
            .iter()
            .map(|(id, s)| (id.clone(), s.ax_mps2))
            .collect();
        let (want, dropped) = brute_force(&frames, &signals, tol);
        assert_eq!(got, want, "case {case}");
        assert_eq!(report.dropped, dropped, "case {case}");
        assert_eq!(report.matched + report.dropped, frames.len());
        assert_eq!(report.dropped_ids.len(), dropped);
        for (id, s) in &pairs {
            let f = frames.iter().find(|f| &f.frame_id == id).unwrap();
            assert!((s.timestamp_s - f.timestamp_s).abs() <= tol);
        }
    }
}

#[test]
fn synchronize_is_idempotent() {
    let mut r = rng(7);
    for _ in 0..100 {
        let (frames, signals, tol) = random_case(&mut r);
        let (pairs, _) = synchronize(&frames, &signals, tol).unwrap();
        let kept: Vec<FrameRecord> = frames
            .iter()
            .filter(|f| pairs.iter().any(|(id, _)| id == &f.frame_id))
            .cloned()
            .collect();
        let (again, report) = synchronize(&kept, &signals, tol).unwrap();
        assert_eq!(again, pairs);
        assert_eq!(report.dropped, 0);
    }
}

#[test]
fn synchronize_examples() {
    let signals = vec![signal(0.90, 1.0), signal(1.02, 2.0)];
    let (pairs, _) = synchronize(&[frame(0, 1.0)], &signals, 0.05).unwrap();
    assert_eq!(pairs[0].1.ax_mps2, 2.0);

    let (pairs, report) = synchronize(&[frame(0, 5.0)], &[signal(4.0, 0.0)], 0.1).unwrap();
    assert!(pairs.is_empty());
    assert_eq!(report.dropped, 1);
    assert_eq!(report.dropped_ids, vec!["f0".to_string()]);

    let ts = [0.0, 0.1, 0.2, 0.3];
    let frames: Vec<FrameRecord> = ts.iter().enumerate().map(|(i, &t)| frame(i, t)).collect();
    let signals: Vec<SignalRecord> = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| signal(t, i as f64))
        .collect();
    let (pairs, _) = synchronize(&frames, &signals, 0.0).unwrap();
    let idx: Vec<f64> = pairs.iter().map(|(_, s)| s.ax_mps2).collect();
    assert_eq!(idx, vec![0.0, 1.0, 2.0, 3.0]);
}

#[test]
fn synchronize_errors() {
    let s = [signal(0.0, 0.0)];
    assert!(matches!(
        synchronize(&[frame(0, 0.0)], &[], 0.1),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        synchronize(&[frame(0, 1.0), frame(1, 0.5)], &s, 0.1),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        synchronize(&[frame(0, 1.0)], &[signal(1.0, 0.0), signal(0.5, 0.0)], 0.1),
        Err(Error::Data(_))
    ));
}

const FIXTURE_AX: [f64; 10] = [
    -4.9050, -6.3985, -7.5946, -8.2551, -8.2487, -7.5765, -6.3724, -4.8761, -3.3856, -2.1976,
];

#[test]
fn fixture_clip_yields_ten_records() {
    let root = fixture();
    let out = tempfile::tempdir().unwrap();
    let (records, summary) = build_dataset(
        &root.join("frames"),
        &root.join("signals.csv"),
        out.path(),
        &IngestOptions::default(),
    )
    .unwrap();
    assert_eq!(records.len(), 10);
    assert_eq!(summary.frames, 10);
    assert_eq!(summary.labelled, 10);
    assert_eq!(summary.dropped, 0);
    assert_eq!(summary.mu_histogram.iter().sum::<usize>(), 10);
    for (k, r) in records.iter().enumerate() {
        assert_eq!(r.source, MuSource::Measured);
        assert_eq!(r.mu, FIXTURE_AX[k].abs() / 9.81);
        assert!((r.timestamp_s - (0.5 * k as f64 + 0.01)).abs() < 1e-12);
        assert!((r.signal_timestamp_s.unwrap() - 0.5 * k as f64).abs() < 1e-12);
        let resolved = r.frame_path(out.path());
        assert_eq!(
            resolved.canonicalize().unwrap(),
            root.join("frames")
                .join(format!("{}.png", r.frame_id))
                .canonicalize()
                .unwrap()
        );
    }
    // Same bins as counting by hand.
    let mut hist = [0usize; 10];
    for a in FIXTURE_AX {
        hist[((a.abs() / 9.81) * 10.0) as usize] += 1;
    }
    assert_eq!(summary.mu_histogram, hist);
}

#[test]
fn fixture_manifest_is_byte_identical_across_runs() {
    let root = fixture();
    let out = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for name in ["a.jsonl", "b.jsonl"] {
        let (records, _) = build_dataset(
            &root.join("frames"),
            &root.join("signals.csv"),
            out.path(),
            &IngestOptions::default(),
        )
        .unwrap();
        let path = out.path().join(name);
        write_manifest(&path, &records).unwrap();
        texts.push(std::fs::read(&path).unwrap());
        assert_eq!(read_manifest(&path).unwrap(), records);
        assert_eq!(
            render_manifest(&records).into_bytes(),
            texts.last().unwrap().clone()
        );
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn empty_frames_dir_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("frames")).unwrap();
    let (records, summary) = build_dataset(
        &dir.path().join("frames"),
        &fixture().join("signals.csv"),
        dir.path(),
        &IngestOptions::default(),
    )
    .unwrap();
    assert!(records.is_empty());
    assert_eq!(summary.frames, 0);
}

#[test]
fn missing_files_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    match read_signals(&missing, 20.0) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("nope.csv")),
        other => panic!("expected an I/O error, got {other:?}"),
    }
    match list_frames(&dir.path().join("no_frames")) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("no_frames")),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}

fn with_mass(mass: &str) -> String {
    let text = std::fs::read_to_string(fixture().join("signals.csv")).unwrap();
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut cols: Vec<&str> = l.split(',').collect();
            cols[4] = mass;
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn mass_column_never_changes_mu() {
    let dir = tempfile::tempdir().unwrap();
    let frames = list_frames(&fixture().join("frames")).unwrap();
    let mut results = Vec::new();
    for mass in ["1530.0", "800", "42000.5", ""] {
        let path = dir.path().join("signals.csv");
        std::fs::write(&path, with_mass(mass)).unwrap();
        let signals = read_signals(&path, 20.0).unwrap();
        let (labels, _) = label_frames(&frames, &signals, &IngestOptions::default()).unwrap();
        results.push(labels.iter().map(|l| l.mu).collect::<Vec<_>>());
    }
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn implausible_acceleration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("signals.csv");
    std::fs::write(
        &path,
        "timestamp_s,ax_mps2,speed_mps\n0.0,1.0,3.0\n0.1,25.0,3.0\n",
    )
    .unwrap();
    assert!(matches!(read_signals(&path, 20.0), Err(Error::Data(_))));
    assert_eq!(read_signals(&path, 30.0).unwrap().len(), 2);
}

#[test]
fn windowed_mode_takes_the_peak() {
    let frames = list_frames(&fixture().join("frames")).unwrap();
    let signals = read_signals(&fixture().join("signals.csv"), 20.0).unwrap();
    let windowed = IngestOptions {
        mode: MuMode::WindowedMax { window_s: 0.5 },
        ..IngestOptions::default()
    };
    let (inst, _) = label_frames(&frames, &signals, &IngestOptions::default()).unwrap();
    let (peak, _) = label_frames(&frames, &signals, &windowed).unwrap();
    for (a, b) in inst.iter().zip(&peak) {
        assert!(b.mu >= a.mu);
        assert!((0.0..=1.0).contains(&b.mu));
    }
    assert!(inst.iter().zip(&peak).any(|(a, b)| b.mu > a.mu));
}
