//! Per-epoch HR/HRV feature vectors and feature scaling.
//!
//! Each scored epoch yields 22 time-domain features, concatenated as
//! `[ibi (10), hr over 10 min (6), hr over 1.5 min (6)]`. All windows trail the
//! epoch's end time. Standard deviations are population (1/N) deviations and
//! percentiles interpolate linearly between closest ranks (inclusive method).
//!
//! | index | name              | unit  |
//! |-------|-------------------|-------|
//! | 0     | ibi_cv            | 1     |
//! | 1     | ibi_std           | ms    |
//! | 2     | ibi_diff_std      | ms    |
//! | 3     | ibi_rmssd         | ms    |
//! | 4     | ibi_nn50          | count |
//! | 5     | ibi_pnn50         | 1     |
//! | 6     | ibi_nn20          | count |
//! | 7     | ibi_pnn20         | 1     |
//! | 8     | ibi_mean          | ms    |
//! | 9     | ibi_diff_mean     | ms    |
//! | 10    | hr600_mean        | bpm   |
//! | 11    | hr600_std         | bpm   |
//! | 12    | hr600_min         | bpm   |
//! | 13    | hr600_max         | bpm   |
//! | 14    | hr600_p25         | bpm   |
//! | 15    | hr600_p75         | bpm   |
//! | 16    | hr90_mean         | bpm   |
//! | 17    | hr90_std          | bpm   |
//! | 18    | hr90_min          | bpm   |
//! | 19    | hr90_max          | bpm   |
//! | 20    | hr90_p25          | bpm   |
//! | 21    | hr90_p75          | bpm   |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{LabeledNight, EPOCH_LEN_MS};

pub const FEATURE_DIM: usize = 22;
pub const HRV_DIM: usize = 10;
pub const HR_DIM: usize = 6;

/// Bumped whenever the index map above changes.
pub const FEATURE_MAP_VERSION: u32 = 1;

/// `(name, unit)` per feature index.
pub const FEATURE_MAP: [(&str, &str); FEATURE_DIM] = [
    ("ibi_cv", "1"),
    ("ibi_std", "ms"),
    ("ibi_diff_std", "ms"),
    ("ibi_rmssd", "ms"),
    ("ibi_nn50", "count"),
    ("ibi_pnn50", "1"),
    ("ibi_nn20", "count"),
    ("ibi_pnn20", "1"),
    ("ibi_mean", "ms"),
    ("ibi_diff_mean", "ms"),
    ("hr600_mean", "bpm"),
    ("hr600_std", "bpm"),
    ("hr600_min", "bpm"),
    ("hr600_max", "bpm"),
    ("hr600_p25", "bpm"),
    ("hr600_p75", "bpm"),
    ("hr90_mean", "bpm"),
    ("hr90_std", "bpm"),
    ("hr90_min", "bpm"),
    ("hr90_max", "bpm"),
    ("hr90_p25", "bpm"),
    ("hr90_p75", "bpm"),
];

/// Trailing window for IBI statistics, seconds.
pub const IBI_WINDOW_S: f64 = 600.0;
pub const MIN_BEATS: usize = 3;

pub const NN50_MS: f64 = 50.0;
pub const NN20_MS: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decimation {
    /// Every sample at the recording rate.
    Native,
    /// One mean per whole second of signal.
    PerSecondMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrWindowSpec {
    pub duration_s: f64,
    pub decimation: Decimation,
}

impl HrWindowSpec {
    pub const fn short(decimation: Decimation) -> Self {
        Self {
            duration_s: 90.0,
            decimation,
        }
    }

    pub const fn long(decimation: Decimation) -> Self {
        Self {
            duration_s: 600.0,
            decimation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
    pub epoch_index: usize,
}

/// Mean that is exact for constant input.
fn mean_exact(xs: &[f64], lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

fn mean(xs: &[f64]) -> f64 {
    let (lo, hi) = min_max(xs);
    mean_exact(xs, lo, hi)
}

/// Population standard deviation around `m`.
fn std_pop(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Inclusive linear-interpolation percentile of sorted data, `p` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `[mean, std, min, max, p25, p75]` of an HR window.
pub fn hr_window_features(window: &[f64]) -> Result<[f64; HR_DIM]> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let m = mean_exact(window, lo, hi);
    let sd = if lo == hi { 0.0 } else { std_pop(window, m) };
    Ok([
        m,
        sd,
        lo,
        hi,
        percentile_sorted(&sorted, 25.0),
        percentile_sorted(&sorted, 75.0),
    ])
}

/// Ten IBI statistics, in index-map order.
pub fn hrv_features(intervals: &[f64]) -> Result<[f64; HRV_DIM]> {
    if intervals.len() < MIN_BEATS {
        return Err(Error::InsufficientBeats {
            needed: MIN_BEATS,
            got: intervals.len(),
        });
    }
    let diffs: Vec<f64> = intervals.windows(2).map(|w| w[1] - w[0]).collect();
    let n_diff = diffs.len() as f64;

    let mean_i = mean(intervals);
    let std_i = std_pop(intervals, mean_i);
    let mean_d = mean(&diffs);
    let std_d = std_pop(&diffs, mean_d);
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / n_diff).sqrt();
    let nn50 = diffs.iter().filter(|d| d.abs() > NN50_MS).count() as f64;
    let nn20 = diffs.iter().filter(|d| d.abs() > NN20_MS).count() as f64;

    Ok([
        std_i / mean_i,
        std_i,
        std_d,
        rmssd,
        nn50,
        nn50 / n_diff,
        nn20,
        nn20 / n_diff,
        mean_i,
        mean_d,
    ])
}

/// HR samples of the window `[start_s, end_s)` under the given decimation.
pub fn hr_window(night: &LabeledNight, start_s: f64, end_s: f64, decimation: Decimation) -> Vec<f64> {
    let hr = &night.hr;
    match decimation {
        Decimation::Native => hr.samples()[hr.index_at(start_s)..hr.index_at(end_s)].to_vec(),
        Decimation::PerSecondMean => {
            let first = start_s.floor() as i64;
            let last = end_s.ceil() as i64;
            (first..last)
                .filter_map(|sec| {
                    let a = hr.index_at((sec as f64).max(start_s));
                    let b = hr.index_at(((sec + 1) as f64).min(end_s));
                    (b > a).then(|| mean(&hr.samples()[a..b]))
                })
                .collect()
        }
    }
}

/// Feature vector of one epoch from its trailing windows.
pub fn extract_epoch(
    night: &LabeledNight,
    epoch_index: usize,
    spec90: HrWindowSpec,
    spec600: HrWindowSpec,
) -> Result<FeatureVector> {
    let end_ms = (epoch_index as i64 + 1) * EPOCH_LEN_MS;
    let end_s = end_ms as f64 / 1000.0;
    if end_s < spec90.duration_s || night.hr.duration_s() + 1e-9 < end_s {
        return Err(Error::InsufficientHistory {
            epoch: epoch_index,
            reason: "less than the short HR window of signal",
        });
    }
    let ibi_start_ms = end_ms - (IBI_WINDOW_S * 1000.0) as i64;
    let beats: Vec<f64> = night
        .ibi
        .window(ibi_start_ms, end_ms)
        .iter()
        .map(|b| b.interval_ms)
        .collect();
    if beats.len() < MIN_BEATS {
        return Err(Error::InsufficientHistory {
            epoch: epoch_index,
            reason: "fewer than 3 beats in the IBI window",
        });
    }

    let long = hr_window(
        night,
        (end_s - spec600.duration_s).max(0.0),
        end_s,
        spec600.decimation,
    );
    let short = hr_window(
        night,
        (end_s - spec90.duration_s).max(0.0),
        end_s,
        spec90.decimation,
    );

    let mut values = [0.0; FEATURE_DIM];
    values[..HRV_DIM].copy_from_slice(&hrv_features(&beats)?);
    values[HRV_DIM..HRV_DIM + HR_DIM].copy_from_slice(&hr_window_features(&long)?);
    values[HRV_DIM + HR_DIM..].copy_from_slice(&hr_window_features(&short)?);
    Ok(FeatureVector {
        values,
        epoch_index,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    Global,
    PerSubject,
}

impl std::str::FromStr for ScalingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "global" => Ok(ScalingMode::Global),
            "per-subject" => Ok(ScalingMode::PerSubject),
            other => Err(format!("unknown scaling mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    fn fit(rows: &[&[f64; FEATURE_DIM]], scope: &str) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        let mut std = vec![0.0; FEATURE_DIM];
        for c in 0..FEATURE_DIM {
            let m = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - m) * (r[c] - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd.is_nan() || sd <= 1e-12 * m.abs().max(1.0) {
                return Err(Error::DegenerateFeature {
                    column: c,
                    scope: scope.to_string(),
                });
            }
            mean[c] = m;
            std[c] = sd;
        }
        Ok(Self { mean, std })
    }

    fn apply(&self, x: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for c in 0..FEATURE_DIM {
            out[c] = (x[c] - self.mean[c]) / self.std[c];
        }
        out
    }
}

/// Z-score feature scaler.
///
/// Per-subject mode keeps one `(mean, std)` set per subject alongside the global
/// set. Subjects absent at fit time can be added later with [`Scaler::calibrate`],
/// which sees features only, never labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mode: ScalingMode,
    pub global: ColumnStats,
    pub subjects: BTreeMap<String, ColumnStats>,
}

impl Scaler {
    pub fn fit<S: AsRef<str>>(
        features: &[[f64; FEATURE_DIM]],
        subjects: &[S],
        mode: ScalingMode,
    ) -> Result<Self> {
        if features.len() != subjects.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: subjects.len(),
            });
        }
        let all: Vec<&[f64; FEATURE_DIM]> = features.iter().collect();
        let global = ColumnStats::fit(&all, "")?;
        let mut per: BTreeMap<String, ColumnStats> = BTreeMap::new();
        if mode == ScalingMode::PerSubject {
            let mut groups: BTreeMap<&str, Vec<&[f64; FEATURE_DIM]>> = BTreeMap::new();
            for (row, s) in features.iter().zip(subjects) {
                groups.entry(s.as_ref()).or_default().push(row);
            }
            for (s, rows) in groups {
                let stats = ColumnStats::fit(&rows, &format!(" for subject {s}"))?;
                per.insert(s.to_string(), stats);
            }
        }
        Ok(Self {
            mode,
            global,
            subjects: per,
        })
    }

    /// Adds (or replaces) a subject's statistics from its unlabeled feature rows.
    pub fn calibrate(&mut self, subject: &str, features: &[[f64; FEATURE_DIM]]) -> Result<()> {
        if self.mode != ScalingMode::PerSubject {
            return Ok(());
        }
        let rows: Vec<&[f64; FEATURE_DIM]> = features.iter().collect();
        let stats = ColumnStats::fit(&rows, &format!(" for subject {subject}"))?;
        self.subjects.insert(subject.to_string(), stats);
        Ok(())
    }

    pub fn knows(&self, subject: &str) -> bool {
        self.mode == ScalingMode::Global || self.subjects.contains_key(subject)
    }

    pub fn transform(&self, subject: &str, x: &[f64; FEATURE_DIM]) -> Result<[f64; FEATURE_DIM]> {
        match self.mode {
            ScalingMode::Global => Ok(self.global.apply(x)),
            ScalingMode::PerSubject => self
                .subjects
                .get(subject)
                .map(|s| s.apply(x))
                .ok_or_else(|| Error::UnknownSubject(subject.to_string())),
        }
    }

    /// Like [`Scaler::transform`], falling back to global statistics for unseen subjects.
    pub fn transform_or_global(&self, subject: &str, x: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        match self.subjects.get(subject) {
            Some(s) if self.mode == ScalingMode::PerSubject => s.apply(x),
            _ => self.global.apply(x),
        }
    }

    pub fn apply(&self, subject: &str, f: &FeatureVector) -> Result<FeatureVector> {
        Ok(FeatureVector {
            values: self.transform(subject, &f.values)?,
            epoch_index: f.epoch_index,
        })
    }

    /// CRC32 over the bit patterns of every statistic, in a fixed order.
    pub fn checksum(&self) -> u32 {
        fn feed(h: &mut crc32fast::Hasher, s: &ColumnStats) {
            for v in s.mean.iter().chain(&s.std) {
                h.update(&v.to_bits().to_le_bytes());
            }
        }
        let mut h = crc32fast::Hasher::new();
        h.update(&[self.mode as u8]);
        feed(&mut h, &self.global);
        for (name, s) in &self.subjects {
            h.update(name.as_bytes());
            h.update(&[0]);
            feed(&mut h, s);
        }
        h.finalize()
    }
}
