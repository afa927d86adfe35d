//! Backpropagation against central finite differences.

use deepkriging::nn::{loss_value, LayerSpec, Loss, NetworkState, Target};
use deepkriging::rng::{self, Stream};
use ndarray::Array2;

const STEP: f64 = 1e-6;

fn stack(head: &[LayerSpec]) -> Vec<LayerSpec> {
    let mut s = vec![
        LayerSpec::Dense { width: 6 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.3 },
        LayerSpec::BatchNorm,
        LayerSpec::Dense { width: 5 },
        LayerSpec::Identity,
        LayerSpec::BatchNorm,
        LayerSpec::Dense { width: 4 },
        LayerSpec::Relu,
    ];
    s.extend_from_slice(head);
    s
}

fn inputs(seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, Stream::GaussianField);
    Array2::from_shape_simple_fn((8, 3), || rng::standard_normal(&mut r))
}

/// Largest relative error between analytic and numeric gradients, with
/// relative error `|a - n| / max(|a|, |n|, 1e-3)`. Exactly zero analytic
/// entries only need a numeric value below central-difference roundoff.
fn max_relative_error(specs: &[LayerSpec], loss: Loss, target: &Target, seed: u64) -> f64 {
    let x = inputs(seed);
    let mut net = NetworkState::init(3, specs, seed).unwrap();
    let mask_rng = rng::stream(seed, Stream::Dropout);
    let trace = net.forward_train(&x, &mut mask_rng.clone()).unwrap();
    let (_, grads) = net.backward(&trace, target, loss).unwrap();
    let eval = |net: &mut NetworkState| {
        let out = net.forward_train(&x, &mut mask_rng.clone()).unwrap().output;
        loss_value(loss, &out, target).unwrap()
    };
    let mut worst = 0.0f64;
    let sizes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
    assert_eq!(sizes.len(), grads.tensors.len());
    for (t, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let orig = net.parameters()[t][k];
            net.parameters_mut()[t][k] = orig + STEP;
            let up = eval(&mut net);
            net.parameters_mut()[t][k] = orig - STEP;
            let down = eval(&mut net);
            net.parameters_mut()[t][k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads.tensors[t][k];
            let err = if analytic.abs() < 1e-14 {
                if numeric.abs() < 1e-7 { 0.0 } else { f64::INFINITY }
            } else {
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
            };
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn regression_stack_matches_finite_differences() {
    for seed in 0..10 {
        let specs = stack(&[LayerSpec::Dense { width: 1 }, LayerSpec::Identity]);
        let y = inputs(seed + 100).column(0).to_owned().insert_axis(ndarray::Axis(1));
        let err = max_relative_error(&specs, Loss::Mse, &Target::Values(y), seed);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    for seed in 0..10 {
        let specs = stack(&[LayerSpec::Dense { width: 4 }, LayerSpec::Softmax]);
        let labels = (0..8).map(|i| (i * 7 + seed as usize) % 4).collect();
        let err = max_relative_error(&specs, Loss::CrossEntropy, &Target::Labels(labels), seed);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn joint_binary_cross_entropy_matches_finite_differences() {
    for seed in 0..10 {
        let specs = stack(&[LayerSpec::Dense { width: 5 }, LayerSpec::Softmax]);
        let labels = (0..8).map(|i| (i * 3 + seed as usize) % 5).collect();
        let err = max_relative_error(&specs, Loss::Jbce, &Target::Labels(labels), seed);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn zero_weight_linear_net_bias_gradient() {
    let mut net = NetworkState::init(2, &[LayerSpec::Dense { width: 1 }], 5).unwrap();
    net.parameters_mut()[0].fill(0.0);
    net.parameters_mut()[1][0] = 0.7;
    let x = inputs(1).slice(ndarray::s![.., 0..2]).to_owned();
    let y = inputs(2).slice(ndarray::s![.., 0..1]).to_owned();
    let trace = net.forward_train(&x, &mut rng::stream(0, Stream::Dropout)).unwrap();
    let (_, g) = net.backward(&trace, &Target::Values(y.clone()), Loss::Mse).unwrap();
    let want = 2.0 * (0.7 - y.mean().unwrap());
    assert!((g.tensors[1][0] - want).abs() < 1e-12);
}

#[test]
fn matched_target_gives_zero_gradients() {
    let specs = stack(&[LayerSpec::Dense { width: 1 }]);
    let mut net = NetworkState::init(3, &specs, 9).unwrap();
    let x = inputs(3);
    let mut r = rng::stream(1, Stream::Dropout);
    let trace = net.forward_train(&x, &mut r.clone()).unwrap();
    let (loss, g) = net.backward(&trace, &Target::Values(trace.output.clone()), Loss::Mse).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.tensors.iter().flatten().all(|&v| v == 0.0));
    let _ = net.forward_train(&x, &mut r).unwrap();
}
