//! Physiological time series, sleep-phase labels and the on-disk night format.
//!
//! A night file keeps the uniformly sampled heart rate and the event-driven
//! inter-beat intervals in separate sections, because their time bases differ:
//!
//! ```text
//! #NIGHT v1
//! #SUBJECT <id>
//! #NIGHT_ID <id>
//! #CLASSMODE PHASE3|WRN3
//! #HR_RATE_HZ <real>
//! HR
//! <bpm>
//! IBI
//! <t_ms>,<ms>
//! LABELS
//! <label>
//! ```
//!
//! Reals are written in Rust's shortest round-trip form, so loading and saving a
//! canonical file reproduces it byte for byte.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one scoring epoch.
pub const EPOCH_LEN_S: u32 = 30;
pub const EPOCH_LEN_MS: i64 = EPOCH_LEN_S as i64 * 1000;

pub const DEFAULT_HR_RATE_HZ: f64 = 25.0;

/// Open interval of accepted heart-rate samples, bpm.
pub const HR_BOUNDS_BPM: (f64, f64) = (20.0, 300.0);
/// Open interval of accepted inter-beat intervals, ms.
pub const IBI_BOUNDS_MS: (f64, f64) = (200.0, 3000.0);

fn check_range(what: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if value.is_finite() && value > lo && value < hi {
        Ok(())
    } else {
        Err(Error::RangeViolation { what, value, lo, hi })
    }
}

/// Uniformly sampled instantaneous heart rate. Sample `i` sits at `i / sample_rate_hz` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct HeartRateSeries {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl HeartRateSeries {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        for &s in &samples {
            check_range("heart rate", s, HR_BOUNDS_BPM)?;
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Index of the first sample whose time is `>= t_s`.
    pub fn index_at(&self, t_s: f64) -> usize {
        let idx = (t_s * self.sample_rate_hz).ceil();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.samples.len())
        }
    }
}

/// One beat: the interval that ended at `timestamp_ms`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ibi {
    pub timestamp_ms: i64,
    pub interval_ms: f64,
}

/// Irregularly timed inter-beat intervals with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IbiSeries {
    beats: Vec<Ibi>,
}

impl IbiSeries {
    pub fn new(beats: Vec<Ibi>) -> Result<Self> {
        for (i, b) in beats.iter().enumerate() {
            check_range("inter-beat interval", b.interval_ms, IBI_BOUNDS_MS)?;
            if i > 0 && beats[i - 1].timestamp_ms >= b.timestamp_ms {
                return Err(Error::InvalidConfig(format!(
                    "ibi timestamps not strictly increasing at beat {i}"
                )));
            }
        }
        Ok(Self { beats })
    }

    pub fn beats(&self) -> &[Ibi] {
        &self.beats
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    /// Beats with `start_ms <= timestamp_ms < end_ms`.
    pub fn window(&self, start_ms: i64, end_ms: i64) -> &[Ibi] {
        let lo = self.beats.partition_point(|b| b.timestamp_ms < start_ms);
        let hi = self.beats.partition_point(|b| b.timestamp_ms < end_ms);
        &self.beats[lo..hi.max(lo)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SleepPhase {
    Wake,
    Rem,
    Light,
    Deep,
    Nrem,
}

impl SleepPhase {
    pub fn name(self) -> &'static str {
        match self {
            SleepPhase::Wake => "WAKE",
            SleepPhase::Rem => "REM",
            SleepPhase::Light => "LIGHT",
            SleepPhase::Deep => "DEEP",
            SleepPhase::Nrem => "NREM",
        }
    }

    /// One-character code used by the terminal hypnogram strip.
    pub fn code(self) -> char {
        match self {
            SleepPhase::Wake => 'W',
            SleepPhase::Rem => 'R',
            SleepPhase::Light => 'L',
            SleepPhase::Deep => 'D',
            SleepPhase::Nrem => 'N',
        }
    }
}

impl fmt::Display for SleepPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SleepPhase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "WAKE" => Ok(SleepPhase::Wake),
            "REM" => Ok(SleepPhase::Rem),
            "LIGHT" => Ok(SleepPhase::Light),
            "DEEP" => Ok(SleepPhase::Deep),
            "NREM" => Ok(SleepPhase::Nrem),
            other => Err(format!("unknown sleep phase {other:?}")),
        }
    }
}

/// The two 3-class problems.
///
/// `Phase3` classifies sleep epochs into REM / LIGHT / DEEP; its night files may
/// still carry WAKE epochs, which are dropped when a dataset is assembled.
/// `Wrn3` classifies WAKE / REM / NREM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassMode {
    Phase3,
    Wrn3,
}

pub const NUM_CLASSES: usize = 3;

impl ClassMode {
    /// Classes in index order. Ties in predictions resolve to the lowest index.
    pub fn classes(self) -> [SleepPhase; NUM_CLASSES] {
        match self {
            ClassMode::Phase3 => [SleepPhase::Rem, SleepPhase::Light, SleepPhase::Deep],
            ClassMode::Wrn3 => [SleepPhase::Wake, SleepPhase::Rem, SleepPhase::Nrem],
        }
    }

    pub fn class_index(self, phase: SleepPhase) -> Option<usize> {
        self.classes().iter().position(|&p| p == phase)
    }

    pub fn phase(self, class: usize) -> SleepPhase {
        self.classes()[class]
    }

    /// Whether a night file in this mode may contain `phase`.
    pub fn admits(self, phase: SleepPhase) -> bool {
        match self {
            ClassMode::Phase3 => phase != SleepPhase::Nrem,
            ClassMode::Wrn3 => matches!(
                phase,
                SleepPhase::Wake | SleepPhase::Rem | SleepPhase::Nrem
            ),
        }
    }

    /// Class index of a night label in this mode's dataset, or `None` when the
    /// epoch is excluded (WAKE under `Phase3`). LIGHT and DEEP map to NREM under `Wrn3`.
    pub fn assemble_label(self, phase: SleepPhase) -> Option<usize> {
        match (self, phase) {
            (ClassMode::Wrn3, SleepPhase::Light | SleepPhase::Deep) => Some(2),
            _ => self.class_index(phase),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassMode::Phase3 => "PHASE3",
            ClassMode::Wrn3 => "WRN3",
        }
    }
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PHASE3" => Ok(ClassMode::Phase3),
            "WRN3" => Ok(ClassMode::Wrn3),
            other => Err(format!("unknown class mode {other:?}")),
        }
    }
}

/// A scored night: per-epoch labels aligned with the night's HR and IBI streams.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledNight {
    pub subject_id: String,
    pub night_id: String,
    pub class_mode: ClassMode,
    pub labels: Vec<SleepPhase>,
    pub hr: HeartRateSeries,
    pub ibi: IbiSeries,
}

/// Number of complete epochs covered by `duration_s` seconds of signal.
pub fn epochs_in(duration_s: f64) -> usize {
    // Tolerates rounding in n / rate for non-integer rates.
    (duration_s / EPOCH_LEN_S as f64 + 1e-9).floor() as usize
}

impl LabeledNight {
    pub fn new(
        subject_id: impl Into<String>,
        night_id: impl Into<String>,
        class_mode: ClassMode,
        labels: Vec<SleepPhase>,
        hr: HeartRateSeries,
        ibi: IbiSeries,
    ) -> Result<Self> {
        let expected = epochs_in(hr.duration_s());
        if labels.len() != expected {
            return Err(Error::LabelMismatch {
                expected,
                found: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|p| !class_mode.admits(**p)) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} not allowed in class mode {class_mode}"
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            night_id: night_id.into(),
            class_mode,
            labels,
            hr,
            ibi,
        })
    }

    pub fn epoch_len_s(&self) -> u32 {
        EPOCH_LEN_S
    }

    pub fn num_epochs(&self) -> usize {
        self.labels.len()
    }

    /// Collapses LIGHT/DEEP into NREM, turning a `Phase3` night into a `Wrn3` one.
    pub fn to_wrn3(&self) -> Result<LabeledNight> {
        let labels = self
            .labels
            .iter()
            .map(|&p| match p {
                SleepPhase::Light | SleepPhase::Deep => SleepPhase::Nrem,
                other => other,
            })
            .collect();
        LabeledNight::new(
            self.subject_id.clone(),
            self.night_id.clone(),
            ClassMode::Wrn3,
            labels,
            self.hr.clone(),
            self.ibi.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochSlice {
    pub epoch_index: usize,
    /// End of the epoch, ms from night start.
    pub end_ms: i64,
    pub label: SleepPhase,
}

pub fn epoch_slices(night: &LabeledNight) -> Vec<EpochSlice> {
    night
        .labels
        .iter()
        .enumerate()
        .map(|(k, &label)| EpochSlice {
            epoch_index: k,
            end_ms: (k as i64 + 1) * EPOCH_LEN_MS,
            label,
        })
        .collect()
}

pub fn load_night(path: impl AsRef<Path>) -> Result<LabeledNight> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_night(&text)
}

pub fn save_night(night: &LabeledNight, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, night_to_string(night)).map_err(|e| Error::io(path, e))
}

/// Canonical text form of a night.
pub fn night_to_string(night: &LabeledNight) -> String {
    let mut out = String::with_capacity(night.hr.len() * 6 + night.ibi.len() * 14 + 256);
    let _ = writeln!(out, "#NIGHT v1");
    let _ = writeln!(out, "#SUBJECT {}", night.subject_id);
    let _ = writeln!(out, "#NIGHT_ID {}", night.night_id);
    let _ = writeln!(out, "#CLASSMODE {}", night.class_mode);
    let _ = writeln!(out, "#HR_RATE_HZ {}", night.hr.sample_rate_hz());
    out.push_str("HR\n");
    for s in night.hr.samples() {
        let _ = writeln!(out, "{s}");
    }
    out.push_str("IBI\n");
    for b in night.ibi.beats() {
        let _ = writeln!(out, "{},{}", b.timestamp_ms, b.interval_ms);
    }
    out.push_str("LABELS\n");
    for l in &night.labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

fn header_value<'a>(line: Option<(usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (no, line) = line.ok_or_else(|| Error::malformed(0, format!("missing {key} header")))?;
    let value = line
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::malformed(no, format!("expected `{key} <value>`")))?;
    if value.is_empty() || value.trim() != value {
        return Err(Error::malformed(no, format!("bad value for {key}")));
    }
    Ok((no, value))
}

fn parse_real(no: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::malformed(no, format!("not a number: {s:?}")))
}

pub fn parse_night(text: &str) -> Result<LabeledNight> {
    let body = text
        .strip_suffix('\n')
        .ok_or_else(|| Error::malformed(0, "file must end with a newline"))?;
    // Line numbers are 1-based.
    let mut lines = body.split('\n').enumerate().map(|(i, l)| (i + 1, l));

    match lines.next() {
        Some((_, "#NIGHT v1")) => {}
        Some((no, _)) => return Err(Error::malformed(no, "expected `#NIGHT v1`")),
        None => return Err(Error::malformed(1, "empty file")),
    }
    let (_, subject) = header_value(lines.next(), "#SUBJECT")?;
    let (_, night_id) = header_value(lines.next(), "#NIGHT_ID")?;
    let (no, mode) = header_value(lines.next(), "#CLASSMODE")?;
    let class_mode = match mode {
        "PHASE3" => ClassMode::Phase3,
        "WRN3" => ClassMode::Wrn3,
        _ => return Err(Error::malformed(no, format!("unknown class mode {mode:?}"))),
    };
    let (no, rate) = header_value(lines.next(), "#HR_RATE_HZ")?;
    let rate = parse_real(no, rate)?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::malformed(no, "sample rate must be positive"));
    }

    match lines.next() {
        Some((_, "HR")) => {}
        Some((no, _)) => return Err(Error::malformed(no, "expected `HR` section")),
        None => return Err(Error::malformed(0, "missing HR section")),
    }
    let mut hr = Vec::new();
    loop {
        match lines.next() {
            Some((_, "IBI")) => break,
            Some((no, l)) => {
                let v = parse_real(no, l)?;
                check_range("heart rate", v, HR_BOUNDS_BPM)?;
                hr.push(v);
            }
            None => return Err(Error::malformed(0, "missing IBI section")),
        }
    }

    let mut beats: Vec<Ibi> = Vec::new();
    loop {
        match lines.next() {
            Some((_, "LABELS")) => break,
            Some((no, l)) => {
                let (t, v) = l
                    .split_once(',')
                    .ok_or_else(|| Error::malformed(no, "expected `<t_ms>,<ms>`"))?;
                let timestamp_ms = t
                    .parse::<i64>()
                    .map_err(|_| Error::malformed(no, format!("bad timestamp {t:?}")))?;
                let interval_ms = parse_real(no, v)?;
                check_range("inter-beat interval", interval_ms, IBI_BOUNDS_MS)?;
                if beats.last().is_some_and(|b| b.timestamp_ms >= timestamp_ms) {
                    return Err(Error::malformed(no, "timestamps must strictly increase"));
                }
                beats.push(Ibi {
                    timestamp_ms,
                    interval_ms,
                });
            }
            None => return Err(Error::malformed(0, "missing LABELS section")),
        }
    }

    let mut labels = Vec::new();
    for (no, l) in lines {
        let phase: SleepPhase = l.parse().map_err(|e: String| Error::malformed(no, e))?;
        if !class_mode.admits(phase) {
            return Err(Error::malformed(
                no,
                format!("label {phase} not allowed in class mode {class_mode}"),
            ));
        }
        labels.push(phase);
    }

    let hr = HeartRateSeries::new(hr, rate)?;
    let ibi = IbiSeries::new(beats)?;
    LabeledNight::new(subject, night_id, class_mode, labels, hr, ibi)
}
