use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion, ClassMetrics, ConfusionMatrix, MetricReport};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{Scaler, ScalingMode, FEATURE_DIM};
use crate::model::{fit_model, ModelKind};
use crate::nn::TrainConfig;
use crate::stacking::StackConfig;
use crate::synth::mix_seed;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum Scheme {
    /// One fold per night.
    Lono,
    /// Subjects dealt into `k` folds after a seeded shuffle.
    KSubject { k: usize },
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Lono => f.write_str("lono"),
            Scheme::KSubject { k } => write!(f, "ksubject({k})"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lono" => Ok(Scheme::Lono),
            "ksubject" => Ok(Scheme::KSubject { k: 5 }),
            other => Err(Error::InvalidConfig(format!("unknown CV scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub scheme: Scheme,
    pub kind: ModelKind,
    pub scaling: ScalingMode,
    /// Under per-subject scaling, fit statistics for an unseen test subject
    /// from its own unlabelled test features. Otherwise it falls back to the
    /// global statistics.
    pub calibrate_unseen: bool,
    /// Fit the scaler on every row, test rows included. Exists so the leak
    /// audit can be exercised; never set it for real evaluations.
    pub leaky_scaler: bool,
    pub train: TrainConfig,
    pub stack: StackConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Lono,
            kind: ModelKind::Stacking,
            scaling: ScalingMode::PerSubject,
            calibrate_unseen: true,
            leaky_scaler: false,
            train: TrainConfig::default(),
            stack: StackConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_nights: Vec<String>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub report: MetricReport,
    /// Per-base metrics when the model is a stack.
    pub base_reports: Vec<MetricReport>,
    pub scaler_checksum: u32,
    /// Scaler statistics were not reproducible from the training rows alone.
    pub leak_detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub format_version: u32,
    pub config: CvConfig,
    /// Per-class metrics of the pooled test predictions.
    pub per_class: Vec<ClassMetrics>,
    /// Mean UD across folds.
    pub ud: f64,
    pub ud_std: f64,
    /// Mean UF1 across folds.
    pub uf1: f64,
    pub uf1_std: f64,
    pub folds: Vec<FoldResult>,
    /// Metrics of all test predictions pooled across folds.
    pub pooled: MetricReport,
    pub base_pooled: Vec<MetricReport>,
    /// Mean UF1 across folds of each stack base.
    pub base_uf1: Vec<f64>,
    pub leak_detected: bool,
}

/// Row indices of each fold's test set.
pub fn fold_assignment(ds: &Dataset, scheme: Scheme, seed: u64) -> Result<Vec<Vec<usize>>> {
    match scheme {
        Scheme::Lono => {
            let ranges = ds.night_ranges();
            if ranges.len() < 2 {
                return Err(Error::InsufficientData("leave-one-night-out needs at least 2 nights".into()));
            }
            Ok(ranges.into_iter().map(|r| r.collect()).collect())
        }
        Scheme::KSubject { k } => {
            let mut subjects = ds.subject_ids();
            if k < 2 || k > subjects.len() {
                return Err(Error::InvalidConfig(format!(
                    "k = {k} folds needs between 2 and {} subjects",
                    subjects.len()
                )));
            }
            subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5b)));
            let mut folds = vec![Vec::new(); k];
            for (i, s) in ds.subjects.iter().enumerate() {
                let f = subjects.iter().position(|x| x == s).expect("known subject") % k;
                folds[f].push(i);
            }
            Ok(folds)
        }
    }
}

fn rows_of(ds: &Dataset, idx: &[usize]) -> (Vec<[f64; FEATURE_DIM]>, Vec<String>) {
    (
        idx.iter().map(|&i| ds.features[i]).collect(),
        idx.iter().map(|&i| ds.subjects[i].clone()).collect(),
    )
}

/// Scaler for one fold plus the result of auditing it against a refit on the
/// training rows.
fn fold_scaler(ds: &Dataset, train: &[usize], test: &[usize], cfg: &CvConfig) -> Result<(Scaler, bool)> {
    let fit_rows: Vec<usize> = if cfg.leaky_scaler {
        (0..ds.len()).collect()
    } else {
        train.to_vec()
    };
    let (f, s) = rows_of(ds, &fit_rows);
    let mut scaler = Scaler::fit(&f, &s, cfg.scaling)?;
    let mut calibrated = BTreeSet::new();
    if cfg.scaling == ScalingMode::PerSubject && cfg.calibrate_unseen {
        let test_subjects: BTreeSet<&str> = test.iter().map(|&i| ds.subjects[i].as_str()).collect();
        for subj in test_subjects {
            if scaler.knows(subj) {
                continue;
            }
            let rows: Vec<[f64; FEATURE_DIM]> = test
                .iter()
                .filter(|&&i| ds.subjects[i] == subj)
                .map(|&i| ds.features[i])
                .collect();
            scaler.calibrate(subj, &rows)?;
            calibrated.insert(subj.to_string());
        }
    }

    let (tf, ts) = rows_of(ds, train);
    let reference = Scaler::fit(&tf, &ts, cfg.scaling)?;
    let leak = reference.global != scaler.global
        || reference
            .subjects
            .iter()
            .any(|(name, st)| scaler.subjects.get(name) != Some(st))
        || scaler
            .subjects
            .keys()
            .any(|name| !reference.subjects.contains_key(name) && !calibrated.contains(name));
    Ok((scaler, leak))
}

fn run_fold(ds: &Dataset, fold: usize, test: &[usize], cfg: &CvConfig) -> Result<(FoldResult, ConfusionMatrix, Vec<ConfusionMatrix>)> {
    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    let train: Vec<usize> = (0..ds.len()).filter(|i| !test_set.contains(i)).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientData(format!("fold {fold} has an empty side")));
    }
    let (scaler, leak) = fold_scaler(ds, &train, test, cfg)?;
    if leak {
        log::warn!("fold {fold}: scaler statistics include rows outside the training set");
    }
    let train_ds = ds.subset(&train);
    let test_ds = ds.subset(test);
    let mode = ds.mode();
    let tcfg = cfg.train.with_seed(mix_seed(cfg.train.seed, 1 + fold as u64));
    let model = fit_model(
        cfg.kind,
        &train_ds.scaled(&scaler),
        &train_ds.labels,
        &train_ds.night_ranges(),
        mode,
        &tcfg,
        &cfg.stack,
    )?;
    let xt = test_ds.scaled(&scaler);
    let pred = model.predict_rows(&xt, &test_ds.night_ranges())?;
    let cm = confusion(&test_ds.labels, &pred, mode)?;
    let base_cms = model
        .predict_bases(&xt)?
        .iter()
        .map(|p| confusion(&test_ds.labels, p, mode))
        .collect::<Result<Vec<_>>>()?;
    log::info!("fold {fold}: {} test epochs", test.len());
    let result = FoldResult {
        fold,
        test_nights: test_ds.night_ids(),
        train_rows: train.len(),
        test_rows: test.len(),
        report: MetricReport::from_confusion(cm.clone()),
        base_reports: base_cms.iter().cloned().map(MetricReport::from_confusion).collect(),
        scaler_checksum: scaler.checksum(),
        leak_detected: leak,
    };
    Ok((result, cm, base_cms))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Trains and scores one model per fold. Folds run in parallel; results are
/// independent of the thread count.
pub fn cross_validate(ds: &Dataset, cfg: &CvConfig) -> Result<CvReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.train.validate()?;
    let folds = fold_assignment(ds, cfg.scheme, cfg.train.seed)?;
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| run_fold(ds, f, test, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut pooled = ConfusionMatrix::new(ds.mode());
    let n_bases = results[0].2.len();
    let mut base_pooled = vec![ConfusionMatrix::new(ds.mode()); n_bases];
    let mut fold_results = Vec::with_capacity(results.len());
    for (r, cm, bases) in results {
        pooled.add(&cm);
        for (p, b) in base_pooled.iter_mut().zip(&bases) {
            p.add(b);
        }
        fold_results.push(r);
    }
    let uds: Vec<f64> = fold_results.iter().map(|r| r.report.ud).collect();
    let uf1s: Vec<f64> = fold_results.iter().map(|r| r.report.uf1).collect();
    let (ud, ud_std) = mean_std(&uds);
    let (uf1, uf1_std) = mean_std(&uf1s);
    let pooled = MetricReport::from_confusion(pooled);
    let base_uf1 = (0..n_bases)
        .map(|b| mean_std(&fold_results.iter().map(|r| r.base_reports[b].uf1).collect::<Vec<_>>()).0)
        .collect();
    Ok(CvReport {
        format_version: REPORT_FORMAT_VERSION,
        config: cfg.clone(),
        leak_detected: fold_results.iter().any(|r| r.leak_detected),
        per_class: pooled.per_class.clone(),
        ud,
        ud_std,
        uf1,
        uf1_std,
        folds: fold_results,
        pooled,
        base_pooled: base_pooled.into_iter().map(MetricReport::from_confusion).collect(),
        base_uf1,
    })
}
