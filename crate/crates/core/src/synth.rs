//! Synthetic nights: a Markov-chain hypnogram with phase-conditioned heart
//! rate and inter-beat intervals.
//!
//! Phase durations follow a semi-cyclic chain (WAKE -> LIGHT -> DEEP/REM -> ...)
//! whose stationary mix matches the reference corpus averages: about 22 % WAKE,
//! 22 % REM, 41 % LIGHT and 16 % DEEP of a 388-minute recording. Heart rate is the
//! phase mean plus a per-subject offset plus AR(1) noise; beat intervals follow
//! the instantaneous heart rate with white jitter sized to the phase's RMSSD.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{
    night_to_string, ClassMode, HeartRateSeries, Ibi, IbiSeries, LabeledNight, SleepPhase,
    DEFAULT_HR_RATE_HZ, EPOCH_LEN_S,
};

/// Chain states, in index order.
pub const STATES: [SleepPhase; 4] = [
    SleepPhase::Wake,
    SleepPhase::Rem,
    SleepPhase::Light,
    SleepPhase::Deep,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    pub hr_mean: f64,
    /// Stationary standard deviation of the AR(1) HR noise, bpm.
    pub hr_std: f64,
    /// Target RMS of successive IBI differences, ms.
    pub rmssd_target: f64,
}

impl PhaseParams {
    /// Mean beat interval implied by the mean heart rate.
    pub fn ibi_mean(&self) -> f64 {
        60_000.0 / self.hr_mean
    }

    /// Approximate IBI standard deviation from HR noise and beat jitter.
    pub fn ibi_sdnn(&self) -> f64 {
        let from_hr = self.ibi_mean() * self.hr_std / self.hr_mean;
        let jitter = self.rmssd_target / std::f64::consts::SQRT_2;
        (from_hr * from_hr + jitter * jitter).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    /// Indexed like [`STATES`].
    pub phases: [PhaseParams; 4],
    /// Per-epoch transition probabilities, row-stochastic.
    pub transitions: [[f64; 4]; 4],
    pub initial: [f64; 4],
    /// AR(1) coefficient of the HR noise per second.
    pub hr_ar_coeff: f64,
    /// Time constant of the HR mean following a phase change, seconds.
    pub hr_lag_s: f64,
    /// Standard deviation of the per-subject baseline HR offset, bpm.
    pub subject_offset_std: f64,
    pub hr_rate_hz: f64,
}

/// Mean dwell per phase in epochs, indexed like [`STATES`].
pub const DEFAULT_DWELL_EPOCHS: [f64; 4] = [24.0, 23.7, 16.0, 15.3];

/// Jump probabilities on leaving a phase (zero diagonal).
pub const DEFAULT_JUMPS: [[f64; 4]; 4] = [
    [0.0, 0.0, 1.0, 0.0],
    [0.3, 0.0, 0.7, 0.0],
    [0.25, 0.35, 0.0, 0.4],
    [0.0, 0.0, 1.0, 0.0],
];

impl Default for PhaseModel {
    fn default() -> Self {
        let phases = [
            PhaseParams {
                hr_mean: 68.0,
                hr_std: 4.0,
                rmssd_target: 30.0,
            },
            // REM heart rate sits close to wake.
            PhaseParams {
                hr_mean: 64.0,
                hr_std: 3.0,
                rmssd_target: 24.0,
            },
            PhaseParams {
                hr_mean: 58.0,
                hr_std: 2.5,
                rmssd_target: 38.0,
            },
            PhaseParams {
                hr_mean: 55.0,
                hr_std: 1.5,
                rmssd_target: 52.0,
            },
        ];
        Self::from_dwell(phases, DEFAULT_DWELL_EPOCHS, DEFAULT_JUMPS)
    }
}

impl PhaseModel {
    /// Builds the per-epoch chain from mean dwell times and a jump matrix.
    pub fn from_dwell(phases: [PhaseParams; 4], dwell: [f64; 4], jumps: [[f64; 4]; 4]) -> Self {
        let mut transitions = [[0.0; 4]; 4];
        for i in 0..4 {
            let leave = 1.0 / dwell[i];
            for j in 0..4 {
                transitions[i][j] = if i == j { 1.0 - leave } else { leave * jumps[i][j] };
            }
        }
        Self {
            phases,
            transitions,
            initial: [1.0, 0.0, 0.0, 0.0],
            hr_ar_coeff: 0.95,
            hr_lag_s: 20.0,
            subject_offset_std: 6.0,
            hr_rate_hz: DEFAULT_HR_RATE_HZ,
        }
    }

    /// Expected run length of each phase, epochs.
    pub fn dwell_means(&self) -> [f64; 4] {
        std::array::from_fn(|i| 1.0 / (1.0 - self.transitions[i][i]))
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.transitions.iter().chain(std::iter::once(&self.initial));
        for (i, row) in rows.enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::BadModel(format!("row {i} has a probability outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::BadModel(format!("row {i} sums to {sum}")));
            }
        }
        if !(0.0..1.0).contains(&self.hr_ar_coeff) || self.hr_rate_hz <= 0.0 {
            return Err(Error::BadModel("bad AR coefficient or sample rate".into()));
        }
        Ok(())
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64; 4], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last state with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn gen_hypnogram<R: Rng + ?Sized>(model: &PhaseModel, epochs: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(epochs);
    if epochs == 0 {
        return out;
    }
    let mut s = sample_index(&model.initial, rng);
    out.push(s);
    for _ in 1..epochs {
        s = sample_index(&model.transitions[s], rng);
        out.push(s);
    }
    out
}

const HR_CLAMP: (f64, f64) = (30.0, 220.0);
const IBI_CLAMP: (f64, f64) = (260.0, 2500.0);

/// One night for a subject whose baseline HR is shifted by `hr_offset` bpm.
pub fn gen_subject_night(
    model: &PhaseModel,
    subject_id: &str,
    night_id: &str,
    duration_min: f64,
    hr_offset: f64,
    seed: u64,
) -> Result<LabeledNight> {
    model.validate()?;
    if duration_min.is_nan() || duration_min < 10.0 {
        return Err(Error::InvalidConfig(format!(
            "night must last at least 10 min, got {duration_min}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epochs = (duration_min * 60.0 / EPOCH_LEN_S as f64).floor() as usize;
    let states = gen_hypnogram(model, epochs, &mut rng);

    let rate = model.hr_rate_hz;
    let per_epoch = (EPOCH_LEN_S as f64 * rate).round() as usize;
    let n = epochs * per_epoch;
    let dt = 1.0 / rate;
    let phi = model.hr_ar_coeff.powf(dt);
    let lag = 1.0 - (-dt / model.hr_lag_s).exp();
    let unit = Normal::new(0.0, 1.0).unwrap();

    let mut hr = Vec::with_capacity(n);
    let first = &model.phases[states[0]];
    let mut level = first.hr_mean + hr_offset;
    let mut noise = first.hr_std * unit.sample(&mut rng);
    for i in 0..n {
        let p = &model.phases[states[i / per_epoch]];
        level += (p.hr_mean + hr_offset - level) * lag;
        noise = phi * noise + p.hr_std * (1.0 - phi * phi).sqrt() * unit.sample(&mut rng);
        let v = (level + noise).clamp(HR_CLAMP.0, HR_CLAMP.1);
        hr.push((v * 100.0).round() / 100.0);
    }

    let total_ms = epochs as f64 * EPOCH_LEN_S as f64 * 1000.0;
    let mut beats = Vec::new();
    let mut t = 0.0f64;
    loop {
        let idx = ((t / 1000.0 * rate) as usize).min(n.saturating_sub(1));
        if n == 0 {
            break;
        }
        let p = &model.phases[states[idx / per_epoch]];
        let jitter = p.rmssd_target / std::f64::consts::SQRT_2 * unit.sample(&mut rng);
        let ibi = (60_000.0 / hr[idx] + jitter).clamp(IBI_CLAMP.0, IBI_CLAMP.1);
        let ibi = (ibi * 10.0).round() / 10.0;
        t += ibi;
        if t >= total_ms {
            break;
        }
        beats.push(Ibi {
            timestamp_ms: t.round() as i64,
            interval_ms: ibi,
        });
    }

    let labels = states.iter().map(|&s| STATES[s]).collect();
    LabeledNight::new(
        subject_id,
        night_id,
        ClassMode::Phase3,
        labels,
        HeartRateSeries::new(hr, rate)?,
        IbiSeries::new(beats)?,
    )
}

/// A night with no subject offset.
pub fn gen_night(model: &PhaseModel, duration_min: f64, seed: u64) -> Result<LabeledNight> {
    gen_subject_night(model, "SYN", &format!("SYN-{seed}"), duration_min, 0.0, seed)
}

/// SplitMix64 step, used to derive independent seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub subjects: usize,
    pub nights: usize,
    pub seed: u64,
    /// Recording length distribution, minutes: N(mean, std) clamped to [min, max].
    pub duration_mean_min: f64,
    pub duration_std_min: f64,
    pub duration_min_min: f64,
    pub duration_max_min: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            subjects: 24,
            nights: 31,
            seed: 0,
            duration_mean_min: 388.1,
            duration_std_min: 114.13,
            duration_min_min: 180.0,
            duration_max_min: 600.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub night: String,
    pub file: String,
    pub seed: u64,
    pub duration_min: f64,
    pub hr_offset_bpm: f64,
    /// CRC32 of the night file, lowercase hex.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: CorpusSpec,
    pub entries: Vec<ManifestEntry>,
}

pub fn subject_id(k: usize) -> String {
    format!("S{:02}", k + 1)
}

/// Generates the corpus in memory. Night `k` belongs to subject `k % subjects`.
pub fn gen_corpus_nights(model: &PhaseModel, spec: &CorpusSpec) -> Result<Vec<(LabeledNight, ManifestEntry)>> {
    if spec.subjects == 0 || spec.nights == 0 {
        return Err(Error::InvalidConfig("need at least one subject and one night".into()));
    }
    model.validate()?;
    let offsets: Vec<f64> = (0..spec.subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 1_000_000 + s as u64));
            model.subject_offset_std * Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
        })
        .collect();
    (0..spec.nights)
        .into_par_iter()
        .map(|k| {
            let s = k % spec.subjects;
            let subject = subject_id(s);
            let night = format!("{subject}-N{}", k / spec.subjects + 1);
            let seed = mix_seed(spec.seed, k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 7));
            let duration = (spec.duration_mean_min
                + spec.duration_std_min * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
            .clamp(spec.duration_min_min, spec.duration_max_min)
            .round();
            let n = gen_subject_night(model, &subject, &night, duration, offsets[s], seed)?;
            let entry = ManifestEntry {
                subject,
                file: format!("{night}.night.csv"),
                night,
                seed,
                duration_min: duration,
                hr_offset_bpm: offsets[s],
                checksum: String::new(),
            };
            Ok((n, entry))
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes night files plus `manifest.json` into `out_dir`.
pub fn gen_corpus(model: &PhaseModel, spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let nights = gen_corpus_nights(model, spec)?;
    let entries = nights
        .into_par_iter()
        .map(|(night, mut entry)| {
            let text = night_to_string(&night);
            entry.checksum = format!("{:08x}", crc32fast::hash(text.as_bytes()));
            let path = out_dir.join(&entry.file);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format_version: 1,
        spec: spec.clone(),
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a manifest and checks every listed file's checksum.
pub fn verify_corpus(dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    for e in &manifest.entries {
        let p: PathBuf = dir.join(&e.file);
        let bytes = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
        if format!("{:08x}", crc32fast::hash(&bytes)) != e.checksum {
            return Err(Error::ChecksumMismatch);
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::parse_night;

    #[test]
    fn default_rows_are_stochastic() {
        let m = PhaseModel::default();
        m.validate().unwrap();
        for row in &m.transitions {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let d = m.dwell_means();
        for (a, b) in d.iter().zip(DEFAULT_DWELL_EPOCHS) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_rows_are_rejected() {
        let mut m = PhaseModel::default();
        m.transitions[1][1] += 0.01;
        assert!(matches!(gen_night(&m, 60.0, 1), Err(Error::BadModel(_))));
    }

    #[test]
    fn absorbing_light_state() {
        let mut m = PhaseModel {
            transitions: [[0.0; 4]; 4],
            ..PhaseModel::default()
        };
        for (i, row) in m.transitions.iter_mut().enumerate() {
            row[if i == 3 { 3 } else { 2 }] = 1.0;
        }
        m.transitions[3] = [0.0, 0.0, 1.0, 0.0];
        m.initial = [0.0, 0.0, 1.0, 0.0];
        let night = gen_night(&m, 30.0, 4).unwrap();
        assert_eq!(night.labels.len(), 60);
        assert!(night.labels.iter().all(|&p| p == SleepPhase::Light));
    }

    #[test]
    fn same_seed_same_bytes() {
        let m = PhaseModel::default();
        let a = night_to_string(&gen_night(&m, 45.0, 99).unwrap());
        let b = night_to_string(&gen_night(&m, 45.0, 99).unwrap());
        assert_eq!(a, b);
        let c = night_to_string(&gen_night(&m, 45.0, 100).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn generated_night_survives_the_file_format() {
        let night = gen_night(&PhaseModel::default(), 20.0, 5).unwrap();
        let text = night_to_string(&night);
        assert_eq!(parse_night(&text).unwrap(), night);
    }

    #[test]
    fn short_nights_are_rejected() {
        assert!(gen_night(&PhaseModel::default(), 9.5, 1).is_err());
    }

    #[test]
    fn corpus_shape() {
        let spec = CorpusSpec {
            subjects: 3,
            nights: 5,
            duration_mean_min: 30.0,
            duration_std_min: 0.0,
            duration_min_min: 20.0,
            ..CorpusSpec::default()
        };
        let nights = gen_corpus_nights(&PhaseModel::default(), &spec).unwrap();
        let subjects: Vec<&str> = nights.iter().map(|(n, _)| n.subject_id.as_str()).collect();
        assert_eq!(subjects, ["S01", "S02", "S03", "S01", "S02"]);
        assert_eq!(nights[0].1.hr_offset_bpm, nights[3].1.hr_offset_bpm);
        assert_ne!(nights[0].1.hr_offset_bpm, nights[1].1.hr_offset_bpm);
    }
}
