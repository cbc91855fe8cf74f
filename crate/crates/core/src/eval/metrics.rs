use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{ClassMode, SleepPhase, NUM_CLASSES};

/// `counts[reference][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_mode: ClassMode,
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new(class_mode: ClassMode) -> Self {
        Self {
            class_mode,
            counts: [[0; NUM_CLASSES]; NUM_CLASSES],
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub phase: SleepPhase,
    pub support: u64,
    pub predicted: u64,
    /// Per-class accuracy `D_i = TP_i / (TP_i + FN_i)`.
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub class_mode: ClassMode,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean of per-class accuracy.
    pub ud: f64,
    /// Unweighted mean of per-class F1.
    pub uf1: f64,
    /// Fraction of all epochs classified correctly.
    pub overall_accuracy: f64,
    pub n: u64,
    pub absent_classes: Vec<SleepPhase>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricReport {
    /// Classes absent from the reference score 0 for accuracy and F1 and are
    /// listed in `absent_classes`.
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let mut per_class = Vec::with_capacity(NUM_CLASSES);
        let mut absent = Vec::new();
        for (c, phase) in cm.class_mode.classes().into_iter().enumerate() {
            let tp = cm.counts[c][c];
            let support: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = cm.counts.iter().map(|r| r[c]).sum();
            if support == 0 {
                log::warn!("class {phase} absent from the reference labels; its accuracy and F1 count as 0");
                absent.push(phase);
            }
            let accuracy = ratio(tp, support);
            let precision = ratio(tp, predicted);
            let f1 = if precision + accuracy == 0.0 {
                0.0
            } else {
                2.0 * precision * accuracy / (precision + accuracy)
            };
            per_class.push(ClassMetrics {
                phase,
                support,
                predicted,
                accuracy,
                precision,
                f1,
            });
        }
        let k = NUM_CLASSES as f64;
        let n = cm.total();
        Self {
            class_mode: cm.class_mode,
            ud: per_class.iter().map(|m| m.accuracy).sum::<f64>() / k,
            uf1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
            overall_accuracy: ratio((0..NUM_CLASSES).map(|c| cm.counts[c][c]).sum(), n),
            n,
            per_class,
            absent_classes: absent,
            confusion: cm,
        }
    }
}

pub fn confusion(reference: &[usize], predicted: &[usize], mode: ClassMode) -> Result<ConfusionMatrix> {
    if reference.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: predicted.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cm = ConfusionMatrix::new(mode);
    for (&r, &p) in reference.iter().zip(predicted) {
        if r >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::RangeViolation {
                what: "class index",
                value: r.max(p) as f64,
                lo: -1.0,
                hi: NUM_CLASSES as f64,
            });
        }
        cm.counts[r][p] += 1;
    }
    Ok(cm)
}

/// Per-class and unweighted metrics of `predicted` against `reference`.
pub fn score(reference: &[usize], predicted: &[usize], mode: ClassMode) -> Result<MetricReport> {
    Ok(MetricReport::from_confusion(confusion(reference, predicted, mode)?))
}
