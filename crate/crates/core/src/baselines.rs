//! Comparison models: a deeper single dense network ("ANN BIG") and a
//! two-layer LSTM over the epoch sequence of a night.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::nn::io::{LayerRecord, LSTM_TAG};
use crate::nn::{
    class_weights, Activation, Adam, DenseLayer, DenseNet, EarlyStopping, GradCheckReport, LayerSpec,
    Matrix, StopDecision, TrainConfig, TrainHistory,
};
use crate::nn::safe_ln;
use crate::signals::NUM_CLASSES;
use crate::synth::mix_seed;

pub const ANN_BIG_HIDDEN: [usize; 5] = [26, 22, 20, 16, 10];
pub const ANN_BIG_DROPOUT: f64 = 0.2;

pub fn ann_big_specs() -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = FEATURE_DIM;
    for h in ANN_BIG_HIDDEN {
        specs.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, NUM_CLASSES, Activation::Softmax));
    specs
}

pub fn build_ann_big(seed: u64) -> Result<DenseNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseNet::glorot(&ann_big_specs(), ANN_BIG_DROPOUT, &mut rng)
}

pub const LSTM_HIDDEN: [usize; 2] = [25, 25];
pub const BPTT_LEN: usize = 64;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Gate rows are ordered input, forget, cell, output; columns are `[x; h_prev]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub in_dim: usize,
    pub hidden: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmLayer {
    fn cols(&self) -> usize {
        self.in_dim + self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Gate activations for one step, written into `gates` as `[i, f, g, o]`.
    fn gates(&self, x: &[f64], h_prev: &[f64], gates: &mut [f64]) {
        let hdim = self.hidden;
        let cols = self.cols();
        for (r, out) in gates.iter_mut().enumerate().take(4 * hdim) {
            let row = &self.weights[r * cols..(r + 1) * cols];
            let mut z = self.bias[r];
            for (w, v) in row.iter().zip(x.iter().chain(h_prev)) {
                z += w * v;
            }
            *out = if r / hdim == 2 { z.tanh() } else { sigmoid(z) };
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmNet {
    pub layers: Vec<LstmLayer>,
    pub head: DenseLayer,
}

/// Recurrent state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmNet {
    /// Uniform init in `±1/sqrt(H)`, forget-gate bias 1, rounded to `f32`.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: &[usize], classes: usize, rng: &mut R) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || in_dim == 0 || classes == 0 {
            return Err(Error::InvalidConfig("LSTM dimensions must be positive".into()));
        }
        let mut layers = Vec::new();
        let mut prev = in_dim;
        for &h in hidden {
            let k = 1.0 / (h as f64).sqrt();
            let weights = (0..4 * h * (prev + h))
                .map(|_| rng.random_range(-k..k) as f32 as f64)
                .collect();
            let mut bias = vec![0.0; 4 * h];
            bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
            layers.push(LstmLayer {
                in_dim: prev,
                hidden: h,
                weights,
                bias,
            });
            prev = h;
        }
        let head_net = DenseNet::glorot(&[LayerSpec::new(prev, classes, Activation::Softmax)], 0.0, rng)?;
        Ok(Self {
            layers,
            head: head_net.layers.into_iter().next().expect("one layer"),
        })
    }

    pub fn reference(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(FEATURE_DIM, &LSTM_HIDDEN, NUM_CLASSES, &mut rng)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn classes(&self) -> usize {
        self.head.spec.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LstmLayer::param_count).sum::<usize>() + self.head.spec.param_count()
    }

    /// State per layer, one gate buffer, the input and the class outputs.
    pub fn scratch_values(&self) -> usize {
        let state: usize = self.layers.iter().map(|l| 2 * l.hidden).sum();
        let gates = self.layers.iter().map(|l| 4 * l.hidden).max().unwrap_or(0);
        state + gates + self.in_dim() + self.classes()
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: self.layers.iter().map(|l| vec![0.0; l.hidden]).collect(),
            c: self.layers.iter().map(|l| vec![0.0; l.hidden]).collect(),
        }
    }

    /// Advances `state` by one epoch and returns class probabilities.
    pub fn step(&self, state: &mut LstmState, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut input = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let hd = layer.hidden;
            let mut g = vec![0.0; 4 * hd];
            layer.gates(&input, &state.h[l], &mut g);
            for j in 0..hd {
                let c = g[hd + j] * state.c[l][j] + g[j] * g[2 * hd + j];
                state.c[l][j] = c;
                state.h[l][j] = g[3 * hd + j] * c.tanh();
            }
            input.clone_from(&state.h[l]);
        }
        let mut out = vec![0.0; self.classes()];
        self.head.forward_into(&input, &mut out);
        Ok(out)
    }

    /// Probabilities for every row of a night, from a zero state.
    pub fn forward_sequence(&self, seq: &Matrix) -> Result<Vec<Vec<f64>>> {
        let mut state = self.zero_state();
        seq.iter_rows().map(|x| self.step(&mut state, x)).collect()
    }

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut g: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            g.push(&mut l.weights);
            g.push(&mut l.bias);
        }
        g.push(&mut self.head.weights);
        g.push(&mut self.head.bias);
        g
    }

    fn group_sizes(&self) -> Vec<usize> {
        let mut s = Vec::new();
        for l in &self.layers {
            s.push(l.weights.len());
            s.push(l.bias.len());
        }
        s.push(self.head.weights.len());
        s.push(self.head.bias.len());
        s
    }

    fn round_to_f32(&mut self) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut out: Vec<LayerRecord> = self
            .layers
            .iter()
            .map(|l| LayerRecord {
                kind: LSTM_TAG,
                in_dim: l.in_dim,
                out_dim: l.hidden,
                weights: f32s(&l.weights),
                bias: f32s(&l.bias),
            })
            .collect();
        out.push(LayerRecord {
            kind: self.head.spec.activation.tag(),
            in_dim: self.head.spec.in_dim,
            out_dim: self.head.spec.out_dim,
            weights: f32s(&self.head.weights),
            bias: f32s(&self.head.bias),
        });
        out
    }

    /// Expects one or more recurrent records followed by a softmax head.
    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        let Some((head, rec)) = records.split_last() else {
            return Err(Error::TopologyMismatch("no layers".into()));
        };
        if rec.is_empty() || rec.iter().any(|r| r.kind != LSTM_TAG) {
            return Err(Error::TopologyMismatch("expected recurrent layers before the head".into()));
        }
        let mut prev = rec[0].in_dim;
        let mut layers = Vec::new();
        for r in rec {
            if r.in_dim != prev {
                return Err(Error::TopologyMismatch(format!(
                    "recurrent layer expects {} inputs, previous gives {prev}",
                    r.in_dim
                )));
            }
            layers.push(LstmLayer {
                in_dim: r.in_dim,
                hidden: r.out_dim,
                weights: r.weights.iter().map(|&v| v as f64).collect(),
                bias: r.bias.iter().map(|&v| v as f64).collect(),
            });
            prev = r.out_dim;
        }
        let head = DenseNet::from_records(std::slice::from_ref(head))?;
        if head.in_dim() != prev || head.layers[0].spec.activation != Activation::Softmax {
            return Err(Error::TopologyMismatch("head does not match the last recurrent layer".into()));
        }
        Ok(Self {
            layers,
            head: head.layers.into_iter().next().expect("one layer"),
        })
    }
}

/// Per-step, per-layer values kept for the backward pass.
#[derive(Clone, Default)]
struct StepCache {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

/// Gradient of the same shape as the parameters, grouped like the optimizer sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGradients {
    pub groups: Vec<Vec<f64>>,
}

/// Mean weighted cross-entropy over the chunk and its gradient, starting from
/// `init` (treated as a constant). Also returns the state after the last step.
pub fn lstm_loss_and_gradient(
    net: &LstmNet,
    seq: &Matrix,
    y: &[usize],
    weights: &[f64],
    init: &LstmState,
) -> Result<(f64, LstmGradients, LstmState)> {
    let t_len = seq.rows();
    if t_len == 0 || t_len != y.len() {
        return Err(Error::LengthMismatch {
            left: t_len,
            right: y.len(),
        });
    }
    if seq.cols() != net.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.in_dim(),
            got: seq.cols(),
        });
    }
    let nl = net.layers.len();
    let mut state = init.clone();
    let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(t_len);
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    for x in seq.iter_rows() {
        let mut step = Vec::with_capacity(nl);
        let mut input = x.to_vec();
        for (l, layer) in net.layers.iter().enumerate() {
            let hd = layer.hidden;
            let mut g = vec![0.0; 4 * hd];
            layer.gates(&input, &state.h[l], &mut g);
            let c_prev = state.c[l].clone();
            let h_prev = state.h[l].clone();
            for j in 0..hd {
                state.c[l][j] = g[hd + j] * c_prev[j] + g[j] * g[2 * hd + j];
                state.h[l][j] = g[3 * hd + j] * state.c[l][j].tanh();
            }
            step.push(StepCache {
                input,
                h_prev,
                c_prev,
                gates: g,
                c: state.c[l].clone(),
                h: state.h[l].clone(),
            });
            input = state.h[l].clone();
        }
        let mut p = vec![0.0; net.classes()];
        net.head.forward_into(&input, &mut p);
        probs.push(p);
        caches.push(step);
    }

    let scale = 1.0 / t_len as f64;
    let mut grads: Vec<Vec<f64>> = net.group_sizes().into_iter().map(|n| vec![0.0; n]).collect();
    let head_w = 2 * nl;
    let mut loss = 0.0;
    let mut dh_next: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.hidden]).collect();
    let mut dc_next = dh_next.clone();
    let h_top = net.head.spec.in_dim;
    for t in (0..t_len).rev() {
        let w = weights[y[t]];
        loss += -w * safe_ln(probs[t][y[t]]) * scale;
        let delta: Vec<f64> = probs[t]
            .iter()
            .enumerate()
            .map(|(k, &p)| (p - if k == y[t] { 1.0 } else { 0.0 }) * w * scale)
            .collect();
        let top = &caches[t][nl - 1].h;
        let mut dh = vec![0.0; h_top];
        for (k, &d) in delta.iter().enumerate() {
            grads[head_w + 1][k] += d;
            let row = &net.head.weights[k * h_top..(k + 1) * h_top];
            for j in 0..h_top {
                grads[head_w][k * h_top + j] += d * top[j];
                dh[j] += row[j] * d;
            }
        }
        for l in (0..nl).rev() {
            let layer = &net.layers[l];
            let cache = &caches[t][l];
            let hd = layer.hidden;
            let cols = layer.cols();
            let g = &cache.gates;
            let mut dz = vec![0.0; 4 * hd];
            for j in 0..hd {
                let dhj = dh[j] + dh_next[l][j];
                let tc = cache.c[j].tanh();
                let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let dc = dhj * o * (1.0 - tc * tc) + dc_next[l][j];
                dz[j] = dc * gg * i * (1.0 - i);
                dz[hd + j] = dc * cache.c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dc * i * (1.0 - gg * gg);
                dz[3 * hd + j] = dhj * tc * o * (1.0 - o);
                dc_next[l][j] = dc * f;
            }
            let mut dconcat = vec![0.0; cols];
            for (r, &d) in dz.iter().enumerate() {
                grads[2 * l + 1][r] += d;
                let row = &layer.weights[r * cols..(r + 1) * cols];
                let gw = &mut grads[2 * l][r * cols..(r + 1) * cols];
                for (k, v) in cache.input.iter().chain(&cache.h_prev).enumerate() {
                    gw[k] += d * v;
                    dconcat[k] += row[k] * d;
                }
            }
            dh_next[l].copy_from_slice(&dconcat[layer.in_dim..]);
            dh = dconcat[..layer.in_dim].to_vec();
        }
    }
    Ok((loss, LstmGradients { groups: grads }, state))
}

fn sequence_loss(net: &LstmNet, seq: &Matrix, y: &[usize], weights: &[f64]) -> f64 {
    let mut state = net.zero_state();
    let mut total = 0.0;
    for (x, &yi) in seq.iter_rows().zip(y) {
        let p = net.step(&mut state, x).expect("checked dimensions");
        total += -weights[yi] * safe_ln(p[yi]);
    }
    total / y.len() as f64
}

/// Central finite differences over every parameter, from a zero initial state.
pub fn lstm_gradient_check(
    net: &LstmNet,
    seq: &Matrix,
    y: &[usize],
    weights: &[f64],
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let (_, analytic, _) = lstm_loss_and_gradient(net, seq, y, weights, &net.zero_state())?;
    let mut probe = net.clone();
    let mut report = GradCheckReport::default();
    for (gi, group) in analytic.groups.iter().enumerate() {
        for (i, &a) in group.iter().enumerate() {
            let orig = probe.groups_mut()[gi][i];
            probe.groups_mut()[gi][i] = orig + h;
            let plus = sequence_loss(&probe, seq, y, weights);
            probe.groups_mut()[gi][i] = orig - h;
            let minus = sequence_loss(&probe, seq, y, weights);
            probe.groups_mut()[gi][i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let abs = (a - numeric).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report
                .max_rel_error
                .max(abs / a.abs().max(numeric.abs()).max(floor));
            report.params_checked += 1;
        }
    }
    Ok(report)
}

/// One labelled night as a sequence of scaled feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub x: Matrix,
    pub y: Vec<usize>,
}

/// Truncated BPTT over chunks of `bptt` epochs; the state is carried across
/// chunks of a night and reset between nights. The last ~15 % of nights (after
/// a seeded shuffle) drive early stopping.
pub fn train_lstm(net: &LstmNet, nights: &[Sequence], cfg: &TrainConfig, bptt: usize) -> Result<(LstmNet, TrainHistory)> {
    cfg.validate()?;
    if bptt == 0 {
        return Err(Error::InvalidConfig("BPTT length must be positive".into()));
    }
    let nights: Vec<&Sequence> = nights.iter().filter(|s| !s.y.is_empty()).collect();
    if nights.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = net.classes();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x157));
    let mut order: Vec<usize> = (0..nights.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if nights.len() >= 2 {
        ((nights.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, nights.len() - 1)
    } else {
        0
    };
    let (train_idx, val_idx) = order.split_at(nights.len() - n_val);
    let mut train_idx = train_idx.to_vec();
    let all_y: Vec<usize> = train_idx.iter().flat_map(|&i| nights[i].y.iter().copied()).collect();
    if all_y.iter().any(|&c| c >= classes) {
        return Err(Error::InvalidConfig("label outside the class range".into()));
    }
    let weights = if cfg.class_weighting {
        class_weights(&all_y, classes)
    } else {
        vec![1.0; classes]
    };

    let mut net = net.clone();
    let mut best = net.clone();
    let mut adam = Adam::with_sizes(&net.group_sizes(), cfg);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for &n in &train_idx {
            let s = nights[n];
            let mut state = net.zero_state();
            let mut start = 0;
            while start < s.y.len() {
                let end = (start + bptt).min(s.y.len());
                let idx: Vec<usize> = (start..end).collect();
                let (loss, g, next) = lstm_loss_and_gradient(&net, &s.x.select(&idx), &s.y[start..end], &weights, &state)?;
                total += loss * (end - start) as f64;
                count += end - start;
                let grads: Vec<&[f64]> = g.groups.iter().map(Vec::as_slice).collect();
                adam.step_groups(&mut net.groups_mut(), &grads);
                state = next;
                start = end;
            }
        }
        let train_loss = total / count as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.train_loss.push(train_loss);
        history.epochs_run = epoch;
        if val_idx.is_empty() {
            best.clone_from(&net);
            history.best_epoch = epoch;
            continue;
        }
        let (mut vt, mut vn) = (0.0, 0usize);
        for &n in val_idx {
            let s = nights[n];
            vt += sequence_loss(&net, &s.x, &s.y, &weights) * s.y.len() as f64;
            vn += s.y.len();
        }
        let val = vt / vn as f64;
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
    Ok((best, history))
}
