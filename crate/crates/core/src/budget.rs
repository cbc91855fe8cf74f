//! Static RAM accounting for deployed models and an inference path that runs
//! inside one preallocated scratch region.
//!
//! Deployed precision is `f32`: every parameter and every activation value
//! costs 4 bytes. A dense net needs `max(in + out)` scratch values over its
//! layers, using both ends of one buffer alternately. A stack additionally
//! keeps the concatenated base outputs that feed its meta network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{IBI_WINDOW_S, HrWindowSpec, Decimation};
use crate::model::{ModelKind, TrainedModel};
use crate::nn::DenseNet;
use crate::signals::{IBI_BOUNDS_MS, NUM_CLASSES};
use crate::stacking::{Prediction, StackModel};

pub const BYTES_PER_VALUE: usize = 4;
/// RAM of the target microcontroller, 96 kB.
pub const TARGET_RAM_BYTES: usize = 96 * 1024;

/// Figures reported for the reference four-base stack, shown next to the
/// values derived from the implemented topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub param_count: usize,
    pub claimed_bytes: usize,
    /// `param_count * 4`, which the claimed size does not match.
    pub param_bytes_at_f32: usize,
    pub claimed_utilization_percent: f64,
}

pub const REFERENCE_STACK: ReferenceFigures = ReferenceFigures {
    param_count: 1720,
    claimed_bytes: 4200,
    param_bytes_at_f32: 1720 * 4,
    claimed_utilization_percent: 4.4,
};

/// Ring buffers a streaming device would hold to compute the features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBuffers {
    /// Per-second HR means over the long window; the short window is a suffix.
    pub hr_bytes: usize,
    /// Worst-case beats in the IBI window, each a timestamp and an interval.
    pub ibi_bytes: usize,
    pub total_bytes: usize,
}

pub fn feature_buffers() -> FeatureBuffers {
    let hr = HrWindowSpec::long(Decimation::PerSecondMean).duration_s as usize * BYTES_PER_VALUE;
    let max_beats = (IBI_WINDOW_S * 1000.0 / IBI_BOUNDS_MS.0).ceil() as usize;
    let ibi = max_beats * 2 * BYTES_PER_VALUE;
    FeatureBuffers {
        hr_bytes: hr,
        ibi_bytes: ibi,
        total_bytes: hr + ibi,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub format_version: u32,
    pub model: ModelKind,
    pub param_count: usize,
    pub bytes_per_value: usize,
    pub weight_bytes: usize,
    pub scratch_values: usize,
    pub scratch_bytes: usize,
    pub total_bytes: usize,
    pub target_ram_bytes: usize,
    /// `total_bytes` as a percentage of the target RAM.
    pub utilization_percent: f64,
    /// Not included in `total_bytes`.
    pub feature_buffers: FeatureBuffers,
    pub reference: Option<ReferenceFigures>,
}

pub fn budget_report(model: &TrainedModel, target_ram_bytes: usize) -> MemoryReport {
    let params = model.param_count();
    let scratch = model.scratch_values();
    let weight_bytes = params * BYTES_PER_VALUE;
    let scratch_bytes = scratch * BYTES_PER_VALUE;
    let total = weight_bytes + scratch_bytes;
    let reference = match model {
        TrainedModel::Stack(s) if s.bases.len() == 4 => Some(REFERENCE_STACK),
        _ => None,
    };
    MemoryReport {
        format_version: 1,
        model: model.kind(),
        param_count: params,
        bytes_per_value: BYTES_PER_VALUE,
        weight_bytes,
        scratch_values: scratch,
        scratch_bytes,
        total_bytes: total,
        target_ram_bytes,
        utilization_percent: 100.0 * total as f64 / target_ram_bytes as f64,
        feature_buffers: feature_buffers(),
        reference,
    }
}

/// Fixed scratch memory for [`arena_infer`].
#[derive(Debug)]
pub struct Arena {
    buf: Box<[f32]>,
}

impl Arena {
    /// An arena of `bytes` bytes, rounded down to whole values.
    pub fn new(bytes: usize) -> Self {
        Self {
            buf: vec![0.0; bytes / BYTES_PER_VALUE].into_boxed_slice(),
        }
    }

    /// The smallest arena `model` fits in.
    pub fn for_stack(model: &StackModel) -> Self {
        Self::new(model.scratch_values() * BYTES_PER_VALUE)
    }

    pub fn bytes(&self) -> usize {
        self.buf.len() * BYTES_PER_VALUE
    }
}

/// Runs `net` on the input already placed at the front of `pp`, alternating
/// layer outputs between the two ends. Returns where the output landed.
fn run_in(net: &DenseNet, pp: &mut [f32]) -> std::ops::Range<usize> {
    let s = pp.len();
    let mut at_front = true;
    for layer in &net.layers {
        let (i, o) = (layer.spec.in_dim, layer.spec.out_dim);
        if at_front {
            let (a, b) = pp.split_at_mut(s - o);
            layer.forward_into(&a[..i], b);
        } else {
            let (a, b) = pp.split_at_mut(o);
            let n = b.len();
            layer.forward_into(&b[n - i..], a);
        }
        at_front = !at_front;
    }
    let out = net.out_dim();
    if at_front {
        0..out
    } else {
        s - out..s
    }
}

/// Same result as [`crate::stacking::predict_stack`], bit for bit, using only
/// `arena` for intermediate values. Does not allocate.
pub fn arena_infer(model: &StackModel, x: &[f64], arena: &mut Arena) -> Result<Prediction> {
    let needed = model.scratch_values();
    if arena.buf.len() < needed {
        return Err(Error::ArenaTooSmall {
            needed: needed * BYTES_PER_VALUE,
            have: arena.bytes(),
        });
    }
    if x.len() != model.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.in_dim(),
            got: x.len(),
        });
    }
    let meta_in = model.meta.in_dim();
    let (meta_buf, rest) = arena.buf[..needed].split_at_mut(meta_in);
    for (b, base) in model.bases.iter().enumerate() {
        for (d, &v) in rest.iter_mut().zip(x) {
            *d = v as f32;
        }
        let r = run_in(base, rest);
        meta_buf[b * NUM_CLASSES..(b + 1) * NUM_CLASSES].copy_from_slice(&rest[r]);
    }
    rest[..meta_in].copy_from_slice(meta_buf);
    let r = run_in(&model.meta, rest);
    let mut probs = [0.0f32; NUM_CLASSES];
    probs.copy_from_slice(&rest[r]);
    Ok(Prediction::from_probs(probs, model.class_mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::signals::ClassMode;
    use crate::stacking::{predict_stack, StackConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(seed: u64) -> StackModel {
        let cfg = StackConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bases = cfg
            .base_activations
            .iter()
            .map(|&a| DenseNet::glorot(&cfg.base_specs(a), 0.0, &mut rng).unwrap())
            .collect();
        let meta = DenseNet::glorot(&cfg.meta_specs(), 0.0, &mut rng).unwrap();
        StackModel::new(bases, meta, ClassMode::Phase3).unwrap()
    }

    #[test]
    fn reference_stack_budget() {
        let r = budget_report(&TrainedModel::Stack(stack(0)), TARGET_RAM_BYTES);
        assert_eq!(r.param_count, 1287);
        assert_eq!(r.weight_bytes, 1287 * 4);
        assert_eq!(r.scratch_bytes, 43 * 4);
        assert_eq!(r.total_bytes, 5320);
        assert!((r.utilization_percent - 100.0 * 5320.0 / 98304.0).abs() < 1e-12);
        assert_eq!(r.reference.unwrap().param_bytes_at_f32, 6880);
        assert_eq!(r.feature_buffers.hr_bytes, 2400);
    }

    #[test]
    fn arena_matches_predict_stack() {
        let model = stack(7);
        let mut arena = Arena::for_stack(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let x: Vec<f64> = (0..22).map(|_| rng.random_range(-4.0..4.0)).collect();
            let a = arena_infer(&model, &x, &mut arena).unwrap();
            let b = predict_stack(&model, &x).unwrap();
            assert_eq!(a.class, b.class);
            for (p, q) in a.probs.iter().zip(&b.probs) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn arena_one_byte_short() {
        let model = stack(1);
        let mut arena = Arena::new(model.scratch_values() * 4 - 1);
        assert!(matches!(
            arena_infer(&model, &[0.0; 22], &mut arena),
            Err(Error::ArenaTooSmall { needed: 172, .. })
        ));
    }

    #[test]
    fn odd_layer_counts_use_both_ends() {
        // Two-layer bases finish at the front of the buffer, the default three-layer ones at the back.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let specs = [
            crate::nn::LayerSpec::new(22, 6, Activation::Tanh),
            crate::nn::LayerSpec::new(6, 3, Activation::Softmax),
        ];
        let meta_specs = StackConfig::default().meta_specs();
        let bases = (0..4).map(|_| DenseNet::glorot(&specs, 0.0, &mut rng).unwrap()).collect();
        let meta = DenseNet::glorot(&meta_specs, 0.0, &mut rng).unwrap();
        let model = StackModel::new(bases, meta, ClassMode::Wrn3).unwrap();
        let mut arena = Arena::for_stack(&model);
        let x = [0.3; 22];
        assert_eq!(
            arena_infer(&model, &x, &mut arena).unwrap(),
            predict_stack(&model, &x).unwrap()
        );
    }
}
