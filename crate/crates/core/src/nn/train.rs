use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseNet};
use super::Matrix;
use crate::error::{Error, Result};

/// Optimizer and schedule settings. Defaults:
/// Adam at 0.001, batches of 32, 50 epochs, early-stopping patience 10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub validation_fraction: f64,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            validation_fraction: 0.15,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.validation_fraction > 0.0
            && self.validation_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad training config {self:?}")))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub net: DenseNet,
    pub history: TrainHistory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; asks to stop after `patience` epochs
/// without strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

/// Inverse-frequency weights `n / (C * n_c)`; absent classes get 1.
pub fn class_weights(y: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &c in y {
        counts[c] += 1;
    }
    counts
        .iter()
        .map(|&n_c| {
            if n_c == 0 {
                1.0
            } else {
                y.len() as f64 / (classes as f64 * n_c as f64)
            }
        })
        .collect()
}

/// Per-class seeded shuffle; the last `fraction` of each class goes to validation.
/// Returns sorted `(train, validation)` row indices.
pub fn stratified_split<R: Rng + ?Sized>(
    y: &[usize],
    fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let classes = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut largest: Option<Vec<usize>> = None;
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        idx.shuffle(rng);
        let n_val = (fraction * idx.len() as f64).round() as usize;
        let n_val = n_val.min(idx.len().saturating_sub(1));
        let cut = idx.len() - n_val;
        val.extend_from_slice(&idx[cut..]);
        train.extend_from_slice(&idx[..cut]);
        if largest.as_ref().is_none_or(|l| l.len() < idx.len()) {
            largest = Some(idx);
        }
    }
    if val.is_empty() && y.len() >= 2 {
        // Tiny datasets: move one row of the largest class to validation.
        if let Some(l) = largest.filter(|l| l.len() >= 2) {
            let moved = l[l.len() - 1];
            train.retain(|&i| i != moved);
            val.push(moved);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// `ln(p)` with underflow clamped; NaN stays NaN so divergence is reported.
pub(crate) fn safe_ln(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        p.max(1e-300).ln()
    }
}

/// Activation caches for one sample.
struct Workspace {
    /// `inputs[k]` feeds layer `k`; `inputs[L]` holds the output probabilities.
    inputs: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers applied to `inputs[k]`, hidden layers only.
    masks: Vec<Vec<f64>>,
    /// Activation outputs before dropout, used for derivatives.
    raw: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    dropped: bool,
}

impl Workspace {
    fn new(net: &DenseNet) -> Self {
        let mut dims = vec![net.in_dim()];
        dims.extend(net.layers.iter().map(|l| l.spec.out_dim));
        let width = dims.iter().copied().max().unwrap_or(0);
        Self {
            inputs: dims.iter().map(|&d| vec![0.0; d]).collect(),
            masks: dims.iter().map(|&d| vec![1.0; d]).collect(),
            raw: dims.iter().map(|&d| vec![0.0; d]).collect(),
            delta: vec![0.0; width],
            delta_prev: vec![0.0; width],
            dropped: false,
        }
    }

    fn forward<R: Rng + ?Sized>(&mut self, net: &DenseNet, x: &[f64], dropout: Option<&mut R>) {
        self.inputs[0].copy_from_slice(x);
        let last = net.layers.len() - 1;
        let rate = net.dropout_rate;
        self.dropped = dropout.is_some() && rate > 0.0;
        let mut rng = dropout;
        for (k, layer) in net.layers.iter().enumerate() {
            let (head, tail) = self.inputs.split_at_mut(k + 1);
            let out = &mut tail[0];
            layer.forward_into(&head[k], out);
            self.raw[k + 1].copy_from_slice(out);
            if k < last && self.dropped {
                let keep = 1.0 - rate;
                let rng = rng.as_deref_mut().expect("dropout rng");
                for (v, m) in out.iter_mut().zip(self.masks[k + 1].iter_mut()) {
                    *m = if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep };
                    *v *= *m;
                }
            }
        }
    }

    /// Accumulates `scale * d(weighted CE)/d(params)` into `grads`; returns the
    /// unscaled weighted loss of this sample.
    fn backward(&mut self, net: &DenseNet, y: usize, weight: f64, scale: f64, grads: &mut Gradients) -> f64 {
        let n_layers = net.layers.len();
        let probs = &self.inputs[n_layers];
        let loss = -weight * safe_ln(probs[y]);
        let n_out = probs.len();
        for (d, &p) in self.delta[..n_out].iter_mut().zip(probs) {
            *d = p * weight * scale;
        }
        self.delta[y] -= weight * scale;

        for k in (0..n_layers).rev() {
            let layer = &net.layers[k];
            let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
            let input = &self.inputs[k];
            let gw = &mut grads.weights[k];
            let gb = &mut grads.bias[k];
            for i in 0..n_out {
                let d = self.delta[i];
                gb[i] += d;
                if d != 0.0 {
                    for (g, &a) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let act = net.layers[k - 1].spec.activation;
            let prev = &mut self.delta_prev[..n_in];
            prev.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n_out {
                let d = self.delta[i];
                if d != 0.0 {
                    for (p, &w) in prev.iter_mut().zip(&layer.weights[i * n_in..(i + 1) * n_in]) {
                        *p += w * d;
                    }
                }
            }
            for (j, p) in prev.iter_mut().enumerate() {
                *p *= act.derivative_from_output(self.raw[k][j]);
                if self.dropped {
                    *p *= self.masks[k][j];
                }
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
        loss
    }
}

fn check_classifier(net: &DenseNet, x: &Matrix, y: &[usize]) -> Result<()> {
    if net.layers.is_empty() {
        return Err(Error::InvalidConfig("network has no layers".into()));
    }
    if net.layers.last().map(|l| l.spec.activation) != Some(Activation::Softmax) {
        return Err(Error::InvalidConfig("classifier must end in softmax".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.rows(),
            right: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    net.check_input(x.cols())?;
    if let Some(&bad) = y.iter().find(|&&c| c >= net.out_dim()) {
        return Err(Error::InvalidConfig(format!("label {bad} out of range")));
    }
    Ok(())
}

/// Mean weighted cross-entropy and its gradient over all rows, without dropout.
pub fn loss_and_gradient(net: &DenseNet, x: &Matrix, y: &[usize], class_weights: &[f64]) -> Result<(f64, Gradients)> {
    check_classifier(net, x, y)?;
    let mut ws = Workspace::new(net);
    let mut grads = Gradients::zeros_like(net);
    let scale = 1.0 / x.rows() as f64;
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        ws.forward::<dyn rand::RngCore>(net, x.row(i), None);
        loss += ws.backward(net, yi, class_weights[yi], scale, &mut grads);
    }
    Ok((loss * scale, grads))
}

/// Mean weighted cross-entropy in inference mode.
pub(crate) fn mean_loss(net: &DenseNet, x: &Matrix, y: &[usize], class_weights: &[f64]) -> f64 {
    let mut ws = Workspace::new(net);
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        ws.forward::<dyn rand::RngCore>(net, x.row(i), None);
        let p = ws.inputs[net.layers.len()][yi];
        total += -class_weights[yi] * safe_ln(p);
    }
    total / y.len() as f64
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub params_checked: usize,
}

/// Central finite differences of [`loss_and_gradient`] with step `h`.
///
/// Relative error per parameter is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// parameters with vanishing gradients from dominating through round-off.
pub fn gradient_check(
    net: &DenseNet,
    x: &Matrix,
    y: &[usize],
    class_weights: &[f64],
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradient(net, x, y, class_weights)?;
    let mut probe = net.clone();
    let mut report = GradCheckReport::default();
    for k in 0..net.layers.len() {
        for is_bias in [false, true] {
            let n = if is_bias {
                net.layers[k].bias.len()
            } else {
                net.layers[k].weights.len()
            };
            for i in 0..n {
                let orig = *param_mut(&mut probe, k, is_bias, i);
                *param_mut(&mut probe, k, is_bias, i) = orig + h;
                let plus = mean_loss(&probe, x, y, class_weights);
                *param_mut(&mut probe, k, is_bias, i) = orig - h;
                let minus = mean_loss(&probe, x, y, class_weights);
                *param_mut(&mut probe, k, is_bias, i) = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = if is_bias {
                    analytic.bias[k][i]
                } else {
                    analytic.weights[k][i]
                };
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(floor);
                report.max_abs_error = report.max_abs_error.max(abs);
                report.max_rel_error = report.max_rel_error.max(rel);
                report.params_checked += 1;
            }
        }
    }
    Ok(report)
}

fn param_mut(net: &mut DenseNet, layer: usize, is_bias: bool, i: usize) -> &mut f64 {
    let l = &mut net.layers[layer];
    if is_bias {
        &mut l.bias[i]
    } else {
        &mut l.weights[i]
    }
}

/// Adam with bias correction, over any list of parameter groups.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &DenseNet, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self::with_sizes(&sizes, cfg)
    }

    pub fn with_sizes(sizes: &[usize], cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        let mut params = Vec::with_capacity(2 * net.layers.len());
        let mut g = Vec::with_capacity(2 * net.layers.len());
        for (k, layer) in net.layers.iter_mut().enumerate() {
            params.push(&mut layer.weights[..]);
            params.push(&mut layer.bias[..]);
            g.push(&grads.weights[k][..]);
            g.push(&grads.bias[k][..]);
        }
        self.step_groups(&mut params, &g);
    }

    /// One update; `params[k]` and `grads[k]` must match the sizes given at construction.
    pub fn step_groups(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count changed");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let (g, m, v) = (grads[k], &mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

const LOOP_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Trains on `x`/`y`, holding out a stratified validation split for early stopping.
pub fn train(net: &DenseNet, x: &Matrix, y: &[usize], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    check_classifier(net, x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (tr, va) = stratified_split(y, cfg.validation_fraction, &mut rng);
    let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
    let yva: Vec<usize> = va.iter().map(|&i| y[i]).collect();
    train_with_validation(net, &x.select(&tr), &ytr, &x.select(&va), &yva, cfg)
}

/// Training loop with an explicit validation set. An empty validation set
/// disables early stopping and keeps the final weights.
pub fn train_with_validation(
    net: &DenseNet,
    x: &Matrix,
    y: &[usize],
    x_val: &Matrix,
    y_val: &[usize],
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    check_classifier(net, x, y)?;
    if !y_val.is_empty() {
        check_classifier(net, x_val, y_val)?;
    }
    let classes = net.out_dim();
    let weights = if cfg.class_weighting {
        class_weights(y, classes)
    } else {
        vec![1.0; classes]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ LOOP_SEED_SALT);
    let mut net = net.clone();
    let mut best = net.clone();
    let mut adam = Adam::new(&net, cfg);
    let mut grads = Gradients::zeros_like(&net);
    let mut ws = Workspace::new(&net);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..y.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                ws.forward(&net, x.row(i), Some(&mut rng));
                epoch_loss += ws.backward(&net, y[i], weights[y[i]], scale, &mut grads);
            }
            adam.step(&mut net, &grads);
        }
        epoch_loss /= y.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.train_loss.push(epoch_loss);
        history.epochs_run = epoch;

        if y_val.is_empty() {
            best.clone_from(&net);
            history.best_epoch = epoch;
            continue;
        }
        let val = mean_loss(&net, x_val, y_val, &weights);
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.val_loss.push(val);
        match stopper.update(epoch, val) {
            StopDecision::Improved => best.clone_from(&net),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
        history.best_epoch = stopper.best_epoch();
    }

    best.round_to_f32();
    Ok(Trained { net: best, history })
}
