//! Feature matrices assembled from labelled nights, plus the feature CSV format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{extract_epoch, Decimation, HrWindowSpec, Scaler, FEATURE_DIM, FEATURE_MAP};
use crate::nn::Matrix;
use crate::signals::{ClassMode, LabeledNight};

/// One row per usable epoch. Rows of a night are contiguous and in epoch order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub class_mode: Option<ClassMode>,
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
    pub nights: Vec<String>,
    pub epochs: Vec<usize>,
}

impl Dataset {
    /// Extracts every epoch whose label the class mode keeps and whose windows
    /// have enough history. Nights are labelled in any mode; WAKE epochs are
    /// dropped under PHASE3 and LIGHT/DEEP fold into NREM under WRN3.
    pub fn from_nights(nights: &[LabeledNight], mode: ClassMode, decimation: Decimation) -> Result<Self> {
        let parts = nights
            .par_iter()
            .map(|n| night_rows(n, mode, decimation))
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset {
            class_mode: Some(mode),
            ..Dataset::default()
        };
        for (night, rows) in nights.iter().zip(parts) {
            for (epoch, label, f) in rows {
                ds.features.push(f);
                ds.labels.push(label);
                ds.subjects.push(night.subject_id.clone());
                ds.nights.push(night.night_id.clone());
                ds.epochs.push(epoch);
            }
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn mode(&self) -> ClassMode {
        self.class_mode.unwrap_or(ClassMode::Phase3)
    }

    /// Night ids in order of first appearance.
    pub fn night_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.nights
            .iter()
            .filter(|n| seen.insert(n.as_str()))
            .cloned()
            .collect()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .cloned()
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            class_mode: self.class_mode,
            features: idx.iter().map(|&i| self.features[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            nights: idx.iter().map(|&i| self.nights[i].clone()).collect(),
            epochs: idx.iter().map(|&i| self.epochs[i]).collect(),
        }
    }

    /// Row ranges of each night, in order of appearance.
    pub fn night_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.nights[i] != self.nights[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    pub fn matrix(&self) -> Matrix {
        let data = self.features.iter().flatten().copied().collect();
        Matrix::new(data, self.len(), FEATURE_DIM).expect("rows have FEATURE_DIM columns")
    }

    /// Scaled copy of the feature rows; unseen subjects use global statistics.
    pub fn scaled(&self, scaler: &Scaler) -> Matrix {
        let data = self
            .features
            .iter()
            .zip(&self.subjects)
            .flat_map(|(f, s)| scaler.transform_or_global(s, f))
            .collect();
        Matrix::new(data, self.len(), FEATURE_DIM).expect("rows have FEATURE_DIM columns")
    }
}

fn night_rows(
    night: &LabeledNight,
    mode: ClassMode,
    decimation: Decimation,
) -> Result<Vec<(usize, usize, [f64; FEATURE_DIM])>> {
    let mut rows = Vec::with_capacity(night.num_epochs());
    for (epoch, &phase) in night.labels.iter().enumerate() {
        let Some(label) = mode.assemble_label(phase) else {
            continue;
        };
        match extract_epoch(night, epoch, HrWindowSpec::short(decimation), HrWindowSpec::long(decimation)) {
            Ok(f) => rows.push((epoch, label, f.values)),
            Err(Error::InsufficientHistory { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

pub fn csv_header() -> String {
    let mut h = String::from("subject,night,epoch,label");
    for (name, _) in FEATURE_MAP {
        h.push(',');
        h.push_str(name);
    }
    h
}

/// Writes one row per epoch; `values` replaces the raw features when given.
pub fn to_csv(ds: &Dataset, values: Option<&Matrix>) -> String {
    let mode = ds.mode();
    let mut out = csv_header();
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(
            out,
            "{},{},{},{}",
            ds.subjects[i],
            ds.nights[i],
            ds.epochs[i],
            mode.phase(ds.labels[i])
        );
        let row: &[f64] = match values {
            Some(m) => m.row(i),
            None => &ds.features[i],
        };
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(ds: &Dataset, values: Option<&Matrix>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(ds, values)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, mode: ClassMode) -> Result<Dataset> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == csv_header() => {}
        _ => return Err(Error::malformed(1, "feature CSV header does not match")),
    }
    let mut ds = Dataset {
        class_mode: Some(mode),
        ..Dataset::default()
    };
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 + FEATURE_DIM {
            return Err(Error::malformed(lineno, "wrong number of columns"));
        }
        let epoch = cols[2]
            .parse()
            .map_err(|_| Error::malformed(lineno, "bad epoch index"))?;
        let phase = cols[3]
            .parse()
            .map_err(|_| Error::malformed(lineno, "bad label"))?;
        let label = mode
            .class_index(phase)
            .ok_or_else(|| Error::malformed(lineno, "label not in class mode"))?;
        let mut f = [0.0; FEATURE_DIM];
        for (slot, c) in f.iter_mut().zip(&cols[4..]) {
            *slot = c
                .parse()
                .map_err(|_| Error::malformed(lineno, "bad feature value"))?;
        }
        ds.subjects.push(cols[0].to_string());
        ds.nights.push(cols[1].to_string());
        ds.epochs.push(epoch);
        ds.labels.push(label);
        ds.features.push(f);
    }
    Ok(ds)
}

pub fn read_csv(path: impl AsRef<Path>, mode: ClassMode) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, mode)
}

/// Loads every night of a corpus directory. With a manifest, its checksums are
/// verified and its order kept; otherwise `*.night.csv` files load in name order.
pub fn load_nights_dir(dir: impl AsRef<Path>) -> Result<Vec<LabeledNight>> {
    let dir = dir.as_ref();
    let files: Vec<std::path::PathBuf> = if dir.join(crate::synth::MANIFEST_FILE).exists() {
        let m = crate::synth::verify_corpus(dir)?;
        m.entries.iter().map(|e| dir.join(&e.file)).collect()
    } else {
        let mut v: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".night.csv")))
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no nights in {}", dir.display())));
    }
    files.par_iter().map(crate::signals::load_night).collect()
}
