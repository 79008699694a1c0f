//! Friction labels from vehicle dynamics: μ = |a| / g on a flat surface,
//! matched to dashcam frames by timestamp.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{relative_path, ManifestRecord, MuSource};

pub const GRAVITY: f64 = 9.81;
pub const DEFAULT_TOLERANCE_S: f64 = 0.05;
pub const DEFAULT_ACCEL_LIMIT: f64 = 20.0;

/// Normalized frictional force from longitudinal acceleration.
pub fn compute_mu(a: f64, g: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::Data(format!("non-finite acceleration {a}")));
    }
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::Argument(format!(
            "gravity must be positive, got {g}"
        )));
    }
    Ok((a.abs() / g).clamp(0.0, 1.0))
}

/// Maximum utilised friction coefficient F_max / N.
pub fn compute_mu_max(f_max: f64, normal_force: f64) -> Result<f64> {
    if !(normal_force > 0.0) || !normal_force.is_finite() {
        return Err(Error::Data(format!(
            "normal force must be positive, got {normal_force}"
        )));
    }
    if !f_max.is_finite() {
        return Err(Error::Data(format!("non-finite force {f_max}")));
    }
    Ok((f_max / normal_force).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub timestamp_s: f64,
    pub ax_mps2: f64,
    pub speed_mps: f64,
    #[serde(default)]
    pub normal_force_n: Option<f64>,
    #[serde(default)]
    pub mass_kg: Option<f64>,
    #[serde(default)]
    pub slip_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub timestamp_s: f64,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionRecord {
    pub frame_id: String,
    pub mu: f64,
    pub source: MuSource,
    pub signal_timestamp_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SyncReport {
    pub matched: usize,
    pub dropped: usize,
    pub dropped_ids: Vec<String>,
}

fn check_sorted<T>(items: &[T], time: impl Fn(&T) -> f64, strict: bool, what: &str) -> Result<()> {
    for (i, item) in items.iter().enumerate() {
        let t = time(item);
        if !t.is_finite() {
            return Err(Error::Data(format!("{what} {i}: non-finite timestamp")));
        }
        if i > 0 {
            let prev = time(&items[i - 1]);
            if t < prev || (strict && t == prev) {
                return Err(Error::Data(format!(
                    "{what} timestamps not sorted at index {i} ({prev} then {t})"
                )));
            }
        }
    }
    Ok(())
}

/// Index of the signal closest in time to `t`; ties go to the earlier signal.
fn nearest(signals: &[SignalRecord], t: f64) -> usize {
    // Several signals may share a timestamp; step back to the first of them.
    let first_of = |mut i: usize| {
        while i > 0 && signals[i - 1].timestamp_s == signals[i].timestamp_s {
            i -= 1;
        }
        i
    };
    let right = signals.partition_point(|s| s.timestamp_s < t);
    if right == 0 {
        return 0;
    }
    if right == signals.len() {
        return first_of(right - 1);
    }
    let left = right - 1;
    if t - signals[left].timestamp_s <= signals[right].timestamp_s - t {
        first_of(left)
    } else {
        right
    }
}

/// Pairs every frame with its nearest signal; frames farther than
/// `tolerance` seconds from any signal are dropped and reported.
pub fn synchronize(
    frames: &[FrameRecord],
    signals: &[SignalRecord],
    tolerance: f64,
) -> Result<(Vec<(String, SignalRecord)>, SyncReport)> {
    if signals.is_empty() {
        return Err(Error::Data("empty signal log".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Argument(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }
    check_sorted(frames, |f| f.timestamp_s, true, "frame")?;
    check_sorted(signals, |s| s.timestamp_s, false, "signal")?;
    let mut pairs = Vec::with_capacity(frames.len());
    let mut report = SyncReport::default();
    for f in frames {
        let s = &signals[nearest(signals, f.timestamp_s)];
        if (s.timestamp_s - f.timestamp_s).abs() <= tolerance {
            pairs.push((f.frame_id.clone(), s.clone()));
        } else {
            report.dropped_ids.push(f.frame_id.clone());
        }
    }
    report.matched = pairs.len();
    report.dropped = report.dropped_ids.len();
    Ok((pairs, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuMode {
    /// μ from the matched sample alone.
    Instantaneous,
    /// Largest μ among signals within ±window/2 of the matched sample.
    WindowedMax { window_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub tolerance_s: f64,
    pub gravity: f64,
    pub accel_limit: f64,
    pub mode: MuMode,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            tolerance_s: DEFAULT_TOLERANCE_S,
            gravity: GRAVITY,
            accel_limit: DEFAULT_ACCEL_LIMIT,
            mode: MuMode::Instantaneous,
        }
    }
}

pub fn read_signals(path: &Path, accel_limit: f64) -> Result<Vec<SignalRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
    let mut out = Vec::new();
    for (row, rec) in reader.deserialize::<SignalRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))?;
        if !rec.ax_mps2.is_finite() || rec.ax_mps2.abs() >= accel_limit {
            return Err(Error::Data(format!(
                "{}: row {}: implausible acceleration {} m/s²",
                path.display(),
                row + 1,
                rec.ax_mps2
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Frame timestamp from a file stem ending in `_<seconds>`, e.g.
/// `frame_0003_1.250.png`.
fn frame_from_path(path: &Path) -> Result<FrameRecord> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "file name is not valid UTF-8"))?;
    let ts = stem
        .rsplit('_')
        .next()
        .and_then(|t| t.parse::<f64>().ok())
        .filter(|t| t.is_finite())
        .ok_or_else(|| Error::format(path, "file name must end in _<timestamp seconds>"))?;
    Ok(FrameRecord {
        frame_id: stem.to_string(),
        timestamp_s: ts,
        image: path.to_path_buf(),
    })
}

/// All PNG frames in a directory, ordered by timestamp.
pub fn list_frames(frames_dir: &Path) -> Result<Vec<FrameRecord>> {
    let entries = std::fs::read_dir(frames_dir).map_err(|e| Error::io(frames_dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(frames_dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            frames.push(frame_from_path(&path)?);
        }
    }
    frames.sort_by(|a, b| {
        a.timestamp_s
            .total_cmp(&b.timestamp_s)
            .then_with(|| a.frame_id.cmp(&b.frame_id))
    });
    Ok(frames)
}

pub fn label_frames(
    frames: &[FrameRecord],
    signals: &[SignalRecord],
    options: &IngestOptions,
) -> Result<(Vec<FrictionRecord>, SyncReport)> {
    let (pairs, report) = synchronize(frames, signals, options.tolerance_s)?;
    let mut records = Vec::with_capacity(pairs.len());
    for (frame_id, sig) in pairs {
        let mu = match options.mode {
            MuMode::Instantaneous => compute_mu(sig.ax_mps2, options.gravity)?,
            MuMode::WindowedMax { window_s } => {
                let half = window_s / 2.0;
                let lo = signals.partition_point(|s| s.timestamp_s < sig.timestamp_s - half);
                let hi = signals.partition_point(|s| s.timestamp_s <= sig.timestamp_s + half);
                let mut best = 0.0f64;
                for s in &signals[lo..hi] {
                    best = best.max(compute_mu(s.ax_mps2, options.gravity)?);
                }
                best
            }
        };
        records.push(FrictionRecord {
            frame_id,
            mu,
            source: MuSource::Measured,
            signal_timestamp_s: sig.timestamp_s,
        });
    }
    Ok((records, report))
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipSummary {
    pub frames: usize,
    pub labelled: usize,
    pub dropped: usize,
    /// Counts of μ over ten equal-width bins of [0, 1].
    pub mu_histogram: [usize; HISTOGRAM_BINS],
}

pub fn mu_histogram(values: impl IntoIterator<Item = f64>) -> [usize; HISTOGRAM_BINS] {
    let mut hist = [0; HISTOGRAM_BINS];
    for mu in values {
        let bin = ((mu * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        hist[bin] += 1;
    }
    hist
}

/// Labels one clip of frames from its signal log. Frame paths in the
/// returned records are relative to `manifest_dir`.
pub fn build_dataset(
    frames_dir: &Path,
    signals_file: &Path,
    manifest_dir: &Path,
    options: &IngestOptions,
) -> Result<(Vec<ManifestRecord>, ClipSummary)> {
    let signals = read_signals(signals_file, options.accel_limit)?;
    let frames = list_frames(frames_dir)?;
    if frames.is_empty() {
        log::warn!("no frames found in {}", frames_dir.display());
        return Ok((
            Vec::new(),
            ClipSummary {
                frames: 0,
                labelled: 0,
                dropped: 0,
                mu_histogram: [0; HISTOGRAM_BINS],
            },
        ));
    }
    let (labels, report) = label_frames(&frames, &signals, options)?;
    let mut records = Vec::with_capacity(labels.len());
    let mut frame_iter = frames.iter();
    for label in labels {
        let frame = frame_iter
            .find(|f| f.frame_id == label.frame_id)
            .expect("labels follow frame order");
        records.push(ManifestRecord {
            frame_id: label.frame_id,
            frame: relative_path(&frame.image, manifest_dir)?,
            timestamp_s: frame.timestamp_s,
            mu: label.mu,
            source: label.source,
            signal_timestamp_s: Some(label.signal_timestamp_s),
            mask: None,
            mode_id: None,
        });
    }
    let summary = ClipSummary {
        frames: frames.len(),
        labelled: records.len(),
        dropped: report.dropped,
        mu_histogram: mu_histogram(records.iter().map(|r| r.mu)),
    };
    Ok((records, summary))
}
