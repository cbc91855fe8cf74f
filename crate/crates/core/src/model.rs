//! The trainable model kinds behind one interface.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::argmax;
use crate::baselines::{build_ann_big, train_lstm, LstmNet, Sequence, BPTT_LEN};
use crate::error::{Error, Result};
use crate::nn::{train, Activation, DenseNet, Matrix, TrainConfig};
use crate::signals::{ClassMode, NUM_CLASSES};
use crate::stacking::{predict_stack, train_stack, StackConfig, StackModel};
use crate::synth::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Stacking,
    AnnBig,
    /// A single base network of the stack (ReLU hidden layers).
    BaseAnn,
    Lstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Stacking => "stacking",
            ModelKind::AnnBig => "ann-big",
            ModelKind::BaseAnn => "base-ann",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ModelKind::Stacking, ModelKind::AnnBig, ModelKind::BaseAnn, ModelKind::Lstm]
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Stack(StackModel),
    Dense {
        kind: ModelKind,
        net: DenseNet,
        class_mode: ClassMode,
    },
    Lstm { net: LstmNet, class_mode: ClassMode },
}

/// Trains `kind` on scaled rows. `nights` gives the row range of each night,
/// which only the LSTM uses.
pub fn fit_model(
    kind: ModelKind,
    x: &Matrix,
    y: &[usize],
    nights: &[Range<usize>],
    class_mode: ClassMode,
    cfg: &TrainConfig,
    stack: &StackConfig,
) -> Result<TrainedModel> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let init_seed = mix_seed(cfg.seed, 0x1a1a);
    match kind {
        ModelKind::Stacking => Ok(TrainedModel::Stack(train_stack(x, y, class_mode, cfg, stack)?.model)),
        ModelKind::AnnBig | ModelKind::BaseAnn => {
            let init = if kind == ModelKind::AnnBig {
                build_ann_big(init_seed)?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
                DenseNet::glorot(&stack.base_specs(Activation::Relu), stack.base_dropout, &mut rng)?
            };
            Ok(TrainedModel::Dense {
                kind,
                net: train(&init, x, y, cfg)?.net,
                class_mode,
            })
        }
        ModelKind::Lstm => {
            let seqs = sequences(x, y, nights);
            let (net, _) = train_lstm(&LstmNet::reference(init_seed)?, &seqs, cfg, BPTT_LEN)?;
            Ok(TrainedModel::Lstm { net, class_mode })
        }
    }
}

fn sequences(x: &Matrix, y: &[usize], nights: &[Range<usize>]) -> Vec<Sequence> {
    nights
        .iter()
        .map(|r| {
            let idx: Vec<usize> = r.clone().collect();
            Sequence {
                x: x.select(&idx),
                y: y[r.clone()].to_vec(),
            }
        })
        .collect()
}

fn dense_probs(net: &DenseNet, row: &[f64]) -> Result<[f32; NUM_CLASSES]> {
    let xf: Vec<f32> = row.iter().map(|&v| v as f32).collect();
    let p = net.infer_f32(&xf)?;
    Ok(std::array::from_fn(|k| p[k]))
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Stack(_) => ModelKind::Stacking,
            TrainedModel::Dense { kind, .. } => *kind,
            TrainedModel::Lstm { .. } => ModelKind::Lstm,
        }
    }

    pub fn class_mode(&self) -> ClassMode {
        match self {
            TrainedModel::Stack(s) => s.class_mode,
            TrainedModel::Dense { class_mode, .. } | TrainedModel::Lstm { class_mode, .. } => *class_mode,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            TrainedModel::Stack(s) => s.param_count(),
            TrainedModel::Dense { net, .. } => net.param_count(),
            TrainedModel::Lstm { net, .. } => net.param_count(),
        }
    }

    pub fn scratch_values(&self) -> usize {
        match self {
            TrainedModel::Stack(s) => s.scratch_values(),
            TrainedModel::Dense { net, .. } => net.scratch_values(),
            TrainedModel::Lstm { net, .. } => net.scratch_values(),
        }
    }

    /// Class probabilities per row. Dense models run in `f32`; the LSTM walks
    /// each night from a zero state.
    pub fn predict_probs(&self, x: &Matrix, nights: &[Range<usize>]) -> Result<Vec<[f32; NUM_CLASSES]>> {
        match self {
            TrainedModel::Stack(s) => x.iter_rows().map(|r| Ok(predict_stack(s, r)?.probs)).collect(),
            TrainedModel::Dense { net, .. } => x.iter_rows().map(|r| dense_probs(net, r)).collect(),
            TrainedModel::Lstm { net, .. } => {
                let mut out = vec![[0.0; NUM_CLASSES]; x.rows()];
                for r in nights {
                    let idx: Vec<usize> = r.clone().collect();
                    for (i, p) in r.clone().zip(net.forward_sequence(&x.select(&idx))?) {
                        out[i] = std::array::from_fn(|k| p[k] as f32);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn predict_rows(&self, x: &Matrix, nights: &[Range<usize>]) -> Result<Vec<usize>> {
        Ok(self.predict_probs(x, nights)?.iter().map(|p| argmax(p)).collect())
    }

    /// Per-base predictions of a stack; empty for other kinds.
    pub fn predict_bases(&self, x: &Matrix) -> Result<Vec<Vec<usize>>> {
        match self {
            TrainedModel::Stack(s) => s
                .bases
                .iter()
                .map(|b| x.iter_rows().map(|r| Ok(argmax(&dense_probs(b, r)?))).collect())
                .collect(),
            _ => Ok(Vec::new()),
        }
    }
}
