use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sleepstack::baselines::{build_ann_big, LstmNet};
use sleepstack::features::{
    extract_epoch, hr_window, hr_window_features, hrv_features, Decimation, HrWindowSpec, Scaler, ScalingMode, FEATURE_DIM,
};
use sleepstack::nn::{gradient_check, Activation, DenseNet, LayerSpec, Matrix, TrainConfig};
use sleepstack::signals::{ClassMode, SleepPhase};
use sleepstack::stacking::{predict_stack, train_meta, train_stack, StackConfig, StackModel};
use sleepstack::synth::{gen_subject_night, PhaseModel};

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) || (a - b).abs() < 1e-12
}

fn two_pass_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn sorted_percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * p / 100.0;
    let (i, frac) = (h as usize, h.fract());
    if i + 1 < s.len() {
        s[i] + frac * (s[i + 1] - s[i])
    } else {
        s[i]
    }
}

#[test]
fn hr_window_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let v: Vec<f64> = (0..2250).map(|_| rng.random_range(40.0..120.0)).collect();
        let got = hr_window_features(&v).unwrap();
        let want = [
            v.iter().sum::<f64>() / v.len() as f64,
            two_pass_std(&v),
            v.iter().cloned().fold(f64::MAX, f64::min),
            v.iter().cloned().fold(f64::MIN, f64::max),
            sorted_percentile(&v, 25.0),
            sorted_percentile(&v, 75.0),
        ];
        for (g, w) in got.iter().zip(&want) {
            assert!(rel_close(*g, *w), "{g} vs {w}");
        }
    }
}

#[test]
fn hrv_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let v: Vec<f64> = (0..100).map(|_| rng.random_range(600.0..1200.0)).collect();
        let got = hrv_features(&v).unwrap();
        let d: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let over = |t: f64| d.iter().filter(|x| x.abs() > t).count() as f64;
        let want = [
            two_pass_std(&v) / mean(&v),
            two_pass_std(&v),
            two_pass_std(&d),
            mean(&d.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt(),
            over(50.0),
            over(50.0) / 99.0,
            over(20.0),
            over(20.0) / 99.0,
            mean(&v),
            mean(&d),
        ];
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!(rel_close(*g, *w), "feature {i}: {g} vs {w}");
        }
    }
}

#[test]
fn epoch_features_compose_the_window_statistics() {
    let night = gen_subject_night(&PhaseModel::default(), "C", "C-1", 90.0, 2.0, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let e = rng.random_range(2..night.num_epochs());
        let dec = if rng.random_bool(0.5) { Decimation::Native } else { Decimation::PerSecondMean };
        let f = extract_epoch(&night, e, HrWindowSpec::short(dec), HrWindowSpec::long(dec)).unwrap();
        let end_s = (e + 1) as f64 * 30.0;
        let end_ms = (e as i64 + 1) * 30_000;
        let beats: Vec<f64> = night.ibi.window(end_ms - 600_000, end_ms).iter().map(|b| b.interval_ms).collect();
        let long = hr_window(&night, (end_s - 600.0).max(0.0), end_s, dec);
        let short = hr_window(&night, (end_s - 90.0).max(0.0), end_s, dec);
        let mut want = hrv_features(&beats).unwrap().to_vec();
        want.extend(hr_window_features(&long).unwrap());
        want.extend(hr_window_features(&short).unwrap());
        assert_eq!(f.values.to_vec(), want);
    }
}

#[test]
fn one_subject_scales_the_same_either_way() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<[f64; FEATURE_DIM]> = (0..30).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..9.0))).collect();
    let subjects = vec!["only"; rows.len()];
    let g = Scaler::fit(&rows, &subjects, ScalingMode::Global).unwrap();
    let p = Scaler::fit(&rows, &subjects, ScalingMode::PerSubject).unwrap();
    for r in &rows {
        assert_eq!(g.transform("only", r).unwrap(), p.transform("only", r).unwrap());
    }
}

#[test]
fn stack_prediction_is_the_composition_of_its_nets() {
    let model = StackModel::untrained(&StackConfig::default(), ClassMode::Phase3, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.random_range(-4.0..4.0)).collect();
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let mut meta_in = Vec::with_capacity(12);
        for base in &model.bases {
            meta_in.extend(base.infer_f32(&xf).unwrap());
        }
        let want = model.meta.infer_f32(&meta_in).unwrap();
        let got = predict_stack(&model, &x).unwrap();
        for (g, w) in got.probs.iter().zip(&want) {
            assert_eq!(g.to_bits(), w.to_bits());
        }
    }
}

#[test]
fn zero_meta_is_uniform_and_ties_pick_the_first_class() {
    let cfg = StackConfig::default();
    let base = StackModel::untrained(&cfg, ClassMode::Phase3, 1).unwrap();
    let meta = DenseNet::zeros(&cfg.meta_specs(), 0.0).unwrap();
    let model = StackModel::new(base.bases, meta, ClassMode::Phase3).unwrap();
    let p = predict_stack(&model, &[0.7; FEATURE_DIM]).unwrap();
    assert!(p.probs.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));
    assert_eq!((p.class, p.phase), (0, SleepPhase::Rem));
}

#[test]
fn identical_perfect_bases_leave_nothing_to_combine() {
    let y: Vec<usize> = (0..600).map(|i| i % 3).collect();
    let rows: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| (0..12).map(|j| if j % 3 == c { 0.9 } else { 0.05 }).collect())
        .collect();
    let (meta, _) = train_meta(&Matrix::from_rows(&rows).unwrap(), &y, &TrainConfig::default(), &StackConfig::default()).unwrap();
    let correct = rows
        .iter()
        .zip(&y)
        .filter(|(r, &c)| sleepstack::argmax(&meta.predict(r).unwrap()) == c)
        .count();
    assert_eq!(correct, y.len());
}

#[test]
fn meta_inputs_are_out_of_fold_base_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let y: Vec<usize> = (0..150).map(|i| i % 3).collect();
    let rows: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| (0..FEATURE_DIM).map(|j| if j == c { 2.0 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect())
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let t = train_stack(&x, &y, ClassMode::Wrn3, &cfg, &StackConfig::default()).unwrap();
    assert_eq!((t.oof.rows(), t.oof.cols()), (150, 12));
    for r in t.oof.iter_rows() {
        for b in r.chunks(3) {
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn ann_big_size_shape_and_gradients() {
    let net = build_ann_big(0).unwrap();
    assert_eq!(net.layers.len(), 6);
    assert!((2000..=2400).contains(&net.param_count()));
    let p = net.predict(&[0.2; FEATURE_DIM]).unwrap();
    assert_eq!(p.len(), 3);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    // Same depth and activations at reduced width.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let widths = [6, 5, 5, 4, 4, 3];
    let specs: Vec<LayerSpec> = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let act = l.spec.activation;
            LayerSpec::new(if i == 0 { 4 } else { widths[i - 1] }, widths[i], act)
        })
        .collect();
    assert_eq!(specs.last().unwrap().activation, Activation::Softmax);
    let mut small = DenseNet::glorot(&specs, 0.0, &mut rng).unwrap();
    for b in small.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let r = gradient_check(&small, &Matrix::from_rows(&rows).unwrap(), &y, &[1.0; 3], 1e-4, 1e-6).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn zero_lstm_is_uniform_at_every_step() {
    let mut net = LstmNet::reference(3).unwrap();
    for l in &mut net.layers {
        l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = 0.0);
    }
    net.head.weights.iter_mut().chain(net.head.bias.iter_mut()).for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..7).map(|_| (0..FEATURE_DIM).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    for p in net.forward_sequence(&Matrix::from_rows(&rows).unwrap()).unwrap() {
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
