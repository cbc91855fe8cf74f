//! Stacked ensemble: several small dense classifiers whose class probabilities
//! feed a meta network.
//!
//! The meta network is fit on out-of-fold base predictions, so it never sees a
//! base's output on that base's own training rows. The bases are then refit on
//! all rows for deployment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::argmax;
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::nn::{train, Activation, DenseNet, LayerSpec, Matrix, TrainConfig, TrainHistory};
use crate::signals::{ClassMode, SleepPhase, NUM_CLASSES};
use crate::synth::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    /// One base per entry; the entry is the activation of both hidden layers.
    pub base_activations: Vec<Activation>,
    pub base_hidden: Vec<usize>,
    pub base_dropout: f64,
    pub meta_hidden: usize,
    pub meta_dropout: f64,
    pub folds: usize,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            base_activations: vec![
                Activation::Relu,
                Activation::Relu,
                Activation::Tanh,
                Activation::Tanh,
            ],
            base_hidden: vec![9, 7],
            base_dropout: 0.2,
            meta_hidden: 5,
            meta_dropout: 0.0,
            folds: 5,
        }
    }
}

impl StackConfig {
    pub fn base_specs(&self, act: Activation) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = FEATURE_DIM;
        for &h in &self.base_hidden {
            specs.push(LayerSpec::new(prev, h, act));
            prev = h;
        }
        specs.push(LayerSpec::new(prev, NUM_CLASSES, Activation::Softmax));
        specs
    }

    pub fn meta_specs(&self) -> Vec<LayerSpec> {
        let n = self.base_activations.len() * NUM_CLASSES;
        vec![
            LayerSpec::new(n, self.meta_hidden, Activation::Linear),
            LayerSpec::new(self.meta_hidden, NUM_CLASSES, Activation::Softmax),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_activations.is_empty() {
            return Err(Error::InvalidConfig("stack needs at least one base".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("out-of-fold training needs at least 2 folds".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackModel {
    pub bases: Vec<DenseNet>,
    pub meta: DenseNet,
    pub class_mode: ClassMode,
}

/// A classified epoch. Fixed-size so that inference can run without allocating.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub phase: SleepPhase,
    pub probs: [f32; NUM_CLASSES],
}

impl Prediction {
    pub fn from_probs(probs: [f32; NUM_CLASSES], mode: ClassMode) -> Self {
        let class = argmax(&probs);
        Self {
            class,
            phase: mode.phase(class),
            probs,
        }
    }
}

impl StackModel {
    pub fn new(bases: Vec<DenseNet>, meta: DenseNet, class_mode: ClassMode) -> Result<Self> {
        let Some(first) = bases.first() else {
            return Err(Error::BadModel("stack has no bases".into()));
        };
        let in_dim = first.in_dim();
        for b in &bases {
            if b.in_dim() != in_dim || b.out_dim() != NUM_CLASSES {
                return Err(Error::BadModel("bases disagree on input or class count".into()));
            }
        }
        if meta.in_dim() != bases.len() * NUM_CLASSES || meta.out_dim() != NUM_CLASSES {
            return Err(Error::BadModel(format!(
                "meta expects {} inputs, stack provides {}",
                meta.in_dim(),
                bases.len() * NUM_CLASSES
            )));
        }
        Ok(Self {
            bases,
            meta,
            class_mode,
        })
    }

    /// Randomly initialised stack of the configured topology.
    pub fn untrained(cfg: &StackConfig, class_mode: ClassMode, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let bases = cfg
            .base_activations
            .iter()
            .enumerate()
            .map(|(b, &act)| init_base(cfg, act, base_seed(seed, 0, b)))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xfeed));
        let meta = DenseNet::glorot(&cfg.meta_specs(), cfg.meta_dropout, &mut rng)?;
        Self::new(bases, meta, class_mode)
    }

    pub fn in_dim(&self) -> usize {
        self.bases[0].in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.bases.iter().map(DenseNet::param_count).sum::<usize>() + self.meta.param_count()
    }

    /// Meta input length plus the largest single-net scratch.
    pub fn scratch_values(&self) -> usize {
        let nets = self.bases.iter().chain(std::iter::once(&self.meta));
        self.meta.in_dim() + nets.map(DenseNet::scratch_values).max().unwrap_or(0)
    }

    /// Concatenated base probabilities in `f64`, the meta network's training input.
    pub fn meta_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.meta.in_dim());
        for b in &self.bases {
            out.extend(b.predict(x)?);
        }
        Ok(out)
    }

    /// Probabilities of each base on `x`, in `f32`.
    pub fn base_probs(&self, x: &[f64]) -> Result<Vec<[f32; NUM_CLASSES]>> {
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        self.bases
            .iter()
            .map(|b| {
                let p = b.infer_f32(&xf)?;
                Ok([p[0], p[1], p[2]])
            })
            .collect()
    }
}

/// Classifies one scaled feature vector, evaluated in `f32`.
pub fn predict_stack(model: &StackModel, x: &[f64]) -> Result<Prediction> {
    if x.len() != model.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.in_dim(),
            got: x.len(),
        });
    }
    let meta_in: Vec<f32> = model.base_probs(x)?.into_iter().flatten().collect();
    let p = model.meta.infer_f32(&meta_in)?;
    Ok(Prediction::from_probs([p[0], p[1], p[2]], model.class_mode))
}

#[derive(Clone, Debug)]
pub struct StackTrained {
    pub model: StackModel,
    /// Out-of-fold base probabilities the meta network was fit on.
    pub oof: Matrix,
    pub base_histories: Vec<TrainHistory>,
    pub meta_history: TrainHistory,
}

/// Stratified fold assignment: per class, a seeded shuffle dealt round-robin.
/// Fails when some fold would miss a class present in `y`.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    let classes = y.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::FoldTooSmall {
                fold: idx.len(),
                class: c,
            });
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = j % k;
        }
    }
    Ok(fold)
}

fn base_seed(seed: u64, fold: usize, base: usize) -> u64 {
    mix_seed(seed, ((fold as u64) << 16) | base as u64)
}

fn init_base(cfg: &StackConfig, act: Activation, seed: u64) -> Result<DenseNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseNet::glorot(&cfg.base_specs(act), cfg.base_dropout, &mut rng)
}

/// Fits the meta network on precomputed base probabilities.
pub fn train_meta(
    meta_x: &Matrix,
    y: &[usize],
    cfg: &TrainConfig,
    stack: &StackConfig,
) -> Result<(DenseNet, TrainHistory)> {
    let seed = mix_seed(cfg.seed, 0xfeed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = stack.meta_specs();
    if meta_x.cols() != specs[0].in_dim {
        return Err(Error::DimensionMismatch {
            expected: specs[0].in_dim,
            got: meta_x.cols(),
        });
    }
    let init = DenseNet::glorot(&specs, stack.meta_dropout, &mut rng)?;
    let t = train(&init, meta_x, y, &cfg.with_seed(seed))?;
    Ok((t.net, t.history))
}

/// Trains bases out-of-fold, fits the meta network on their held-out
/// probabilities, then refits the bases on every row.
pub fn train_stack(
    x: &Matrix,
    y: &[usize],
    class_mode: ClassMode,
    cfg: &TrainConfig,
    stack: &StackConfig,
) -> Result<StackTrained> {
    stack.validate()?;
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.rows(),
            right: y.len(),
        });
    }
    let k = stack.folds;
    let folds = stratified_folds(y, k, mix_seed(cfg.seed, 0xf01d))?;
    let nb = stack.base_activations.len();

    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|f| (0..nb).map(move |b| (f, b))).collect();
    let fold_nets = jobs
        .par_iter()
        .map(|&(f, b)| {
            let tr: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
            let seed = base_seed(cfg.seed, f + 1, b);
            let init = init_base(stack, stack.base_activations[b], seed)?;
            Ok(train(&init, &x.select(&tr), &ytr, &cfg.with_seed(seed))?.net)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut oof = Matrix::zeros(y.len(), nb * NUM_CLASSES);
    for (i, &f) in folds.iter().enumerate() {
        for b in 0..nb {
            let p = fold_nets[f * nb + b].predict(x.row(i))?;
            oof.row_mut(i)[b * NUM_CLASSES..(b + 1) * NUM_CLASSES].copy_from_slice(&p);
        }
    }

    let (meta, full) = rayon::join(
        || train_meta(&oof, y, cfg, stack),
        || {
            (0..nb)
                .into_par_iter()
                .map(|b| {
                    let seed = base_seed(cfg.seed, 0, b);
                    let init = init_base(stack, stack.base_activations[b], seed)?;
                    train(&init, x, y, &cfg.with_seed(seed))
                })
                .collect::<Result<Vec<_>>>()
        },
    );
    let (meta, meta_history) = meta?;
    let (bases, base_histories) = full?.into_iter().map(|t| (t.net, t.history)).unzip();
    Ok(StackTrained {
        model: StackModel::new(bases, meta, class_mode)?,
        oof,
        base_histories,
        meta_history,
    })
}
