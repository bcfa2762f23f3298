//! Analytic gradients vs central finite differences at f64, over
//! randomized small architectures covering both net kinds, both heads,
//! and every parameter slot; plus hand-computed kernel examples.

use gcl_core::nn::kernels;
use gcl_core::nn::{Head, NetConfig, NetKind, Network, Tensor};
use gcl_core::rng;
use rand::Rng;

const EPS: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;
const SUITE: u64 = 0x6772616463686b; // test family tag

fn random_case(case: u64) -> (NetConfig, Tensor<f64>, Vec<u32>) {
    let mut rng = rng::keyed(SUITE, &[case]);
    let kind = if rng.gen_bool(0.5) { NetKind::Conv } else { NetKind::FullyConnected };
    let (head, n_classes) = if rng.gen_bool(0.5) {
        (Head::Softmax, rng.gen_range(2..=4usize))
    } else {
        (Head::SingleSigmoid, 2)
    };
    let n_layers = rng.gen_range(1..=2usize);
    let input_hw = match kind {
        NetKind::Conv => rng.gen_range(4..=7usize),
        NetKind::FullyConnected => rng.gen_range(3..=5usize),
    };
    let config = NetConfig {
        kind,
        n_layers,
        n_classes,
        base_width: rng.gen_range(1..=3),
        width_step: rng.gen_range(0..=2),
        penultimate_width: rng.gen_range(2..=5),
        head,
        input_hw,
        input_channels: rng.gen_range(1..=2),
    };
    let n = rng.gen_range(1..=2usize);
    let data = (0..n * input_hw * input_hw * config.input_channels)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let batch = Tensor::new(vec![n, input_hw, input_hw, config.input_channels], data).unwrap();
    let arity = match head {
        Head::Softmax => n_classes as u32,
        Head::SingleSigmoid => 2,
    };
    let targets = (0..n).map(|_| rng.gen_range(0..arity)).collect();
    (config, batch, targets)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut checked_params = 0usize;
    let mut worst = 0.0f64;
    for case in 0..120u64 {
        let (config, batch, targets) = random_case(case);
        let loss = config.loss();
        let mut net: Network<f64> = Network::custom(&config, case ^ 0x9e37).unwrap();
        // fresh continuous draws for every slot (biases included) keep
        // ReLU pre-activations off their kinks, where the one-sided
        // finite difference would disagree with the subgradient
        let mut prng = rng::keyed(SUITE, &[case, 1]);
        for i in 0..net.param_count() {
            net.set_param(i, prng.gen_range(-0.6..0.6));
        }
        let (_, grads, _) = net.backward(&batch, &targets, loss).unwrap();
        let flat = grads.flat();
        assert_eq!(flat.len(), net.param_count());
        for i in 0..net.param_count() {
            let orig = net.get_param(i);
            net.set_param(i, orig + EPS);
            let up = net.loss_only(&batch, &targets, loss).unwrap();
            net.set_param(i, orig - EPS);
            let down = net.loss_only(&batch, &targets, loss).unwrap();
            net.set_param(i, orig);
            let numeric = (up - down) / (2.0 * EPS);
            // the 1e-6 floor absorbs the ~1e-11 finite-difference
            // cancellation noise on dead-path (true-zero) gradients
            let rel = (numeric - flat[i]).abs() / (numeric.abs() + flat[i].abs()).max(1e-6);
            assert!(
                rel < MAX_REL_ERR,
                "case {case} param {i}: analytic {} vs numeric {numeric} (rel {rel:.3e}, config {config:?})",
                flat[i]
            );
            worst = worst.max(rel);
            checked_params += 1;
        }
    }
    assert!(checked_params > 10_000, "only {checked_params} parameter slots exercised");
    println!("checked {checked_params} parameter slots, worst relative error {worst:.3e}");
}

#[test]
fn conv_forward_matches_hand_example() {
    // single 3x3 input, one in/out channel
    let inp: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    // kernel zero except top-left tap = 1: out(y,x) = in(y-1,x-1), zero padded
    let mut w = vec![0.0; 9];
    w[0] = 1.0;
    let b = vec![0.5];
    let mut out = vec![0.0; 9];
    kernels::conv3x3_forward(&inp, 1, 3, 3, 1, &w, &b, 1, false, &mut out);
    let expect = [0.5, 0.5, 0.5, 0.5, 1.5, 2.5, 0.5, 4.5, 5.5];
    for (o, e) in out.iter().zip(expect) {
        assert!((o - e).abs() < 1e-12, "{out:?}");
    }

    // center tap = identity plus bias
    let mut w_center = vec![0.0; 9];
    w_center[4] = 2.0;
    kernels::conv3x3_forward(&inp, 1, 3, 3, 1, &w_center, &[0.0], 1, false, &mut out);
    for (o, i) in out.iter().zip(&inp) {
        assert!((o - 2.0 * i).abs() < 1e-12);
    }
}

#[test]
fn conv_relu_clamps_negative_outputs() {
    let inp = vec![1.0f64, -1.0, 2.0, -2.0];
    let mut w = vec![0.0; 9];
    w[4] = 1.0;
    let mut out = vec![0.0; 4];
    kernels::conv3x3_forward(&inp, 1, 2, 2, 1, &w, &[0.0], 1, true, &mut out);
    assert_eq!(out, vec![1.0, 0.0, 2.0, 0.0]);
}

#[test]
fn maxpool_routes_gradient_to_argmax() {
    // 4x4 single channel; distinct values per 2x2 window
    #[rustfmt::skip]
    let inp = vec![
        1.0f64, 2.0,   5.0, 4.0,
        3.0,    0.5,   4.5, 6.0,
        9.0,    8.0,   1.0, 1.5,
        7.0,    6.5,   1.25, 0.75,
    ];
    let mut out = vec![0.0; 4];
    let mut idx = Vec::new();
    kernels::maxpool2_forward(&inp, 1, 4, 4, 1, &mut out, &mut idx);
    assert_eq!(out, vec![3.0, 6.0, 9.0, 1.5]);
    let dout = vec![10.0, 20.0, 30.0, 40.0];
    let mut din = vec![0.0; 16];
    kernels::maxpool2_backward(&dout, &idx, &mut din);
    let mut expect = vec![0.0; 16];
    expect[4] = 10.0; // 3.0 at (1,0)
    expect[7] = 20.0; // 6.0 at (1,3)
    expect[8] = 30.0; // 9.0 at (2,0)
    expect[11] = 40.0; // 1.5 at (2,3)
    assert_eq!(din, expect);
    // gradient mass is conserved
    assert_eq!(din.iter().sum::<f64>(), dout.iter().sum::<f64>());
}

#[test]
fn maxpool_tie_breaks_to_first_in_scan_order() {
    let inp = vec![5.0f64, 5.0, 5.0, 5.0];
    let mut out = vec![0.0; 1];
    let mut idx = Vec::new();
    kernels::maxpool2_forward(&inp, 1, 2, 2, 1, &mut out, &mut idx);
    assert_eq!(out, vec![5.0]);
    assert_eq!(idx, vec![0]);
}

#[test]
fn odd_extent_rows_are_dropped_by_pooling() {
    // 3x3 pools to 1x1 over the top-left 2x2 only
    let inp = vec![1.0f64, 2.0, 99.0, 4.0, 3.0, 99.0, 99.0, 99.0, 99.0];
    let mut out = vec![0.0; 1];
    let mut idx = Vec::new();
    kernels::maxpool2_forward(&inp, 1, 3, 3, 1, &mut out, &mut idx);
    assert_eq!(out, vec![4.0]);
}

#[test]
fn conv_layers_commute_with_pool_stride_translation() {
    let config = NetConfig {
        kind: NetKind::Conv,
        n_layers: 1,
        n_classes: 2,
        base_width: 3,
        width_step: 0,
        penultimate_width: 4,
        head: Head::Softmax,
        input_hw: 12,
        input_channels: 1,
    };
    let net: Network<f64> = Network::custom(&config, 3).unwrap();
    let mut rng = rng::keyed(SUITE, &[1000]);
    let base: Vec<f64> = (0..12 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // shift content by the pool stride (2 px down and right)
    let mut shifted = vec![0.0; 12 * 12];
    for y in 2..12 {
        for x in 2..12 {
            shifted[y * 12 + x] = base[(y - 2) * 12 + (x - 2)];
        }
    }
    let b0 = Tensor::new(vec![1, 12, 12, 1], base).unwrap();
    let b1 = Tensor::new(vec![1, 12, 12, 1], shifted).unwrap();
    let (_, rec0) = net.forward(&b0, &["conv2d_1"]).unwrap();
    let (_, rec1) = net.forward(&b1, &["conv2d_1"]).unwrap();
    let m0 = rec0[0].1.data();
    let m1 = rec1[0].1.data();
    let c = 3usize;
    // interior: both source and target pixels away from zero padding
    for y in 3..9 {
        for x in 3..9 {
            for ch in 0..c {
                let a = m0[(y * 12 + x) * c + ch];
                let b = m1[((y + 2) * 12 + (x + 2)) * c + ch];
                assert!((a - b).abs() < 1e-12, "({y},{x},{ch}): {a} vs {b}");
            }
        }
    }
}

#[test]
fn backward_is_deterministic() {
    let (config, batch, targets) = random_case(5);
    let loss = config.loss();
    let net: Network<f64> = Network::custom(&config, 11).unwrap();
    let (l1, g1, _) = net.backward(&batch, &targets, loss).unwrap();
    let (l2, g2, _) = net.backward(&batch, &targets, loss).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    for (a, b) in g1.flat().iter().zip(g2.flat()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn cross_entropy_matches_hand_example() {
    // logits chosen so softmax is analytic: [ln2, 0] -> probs [2/3, 1/3]
    let logits = vec![2.0f64.ln(), 0.0];
    let (loss, dlogits) = kernels::ce_loss_from_logits(&logits, 1, 2, &[0]);
    assert!((loss - (1.5f64).ln()).abs() < 1e-12); // -ln(2/3)
    assert!((dlogits[0] - (2.0 / 3.0 - 1.0)).abs() < 1e-12);
    assert!((dlogits[1] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn binary_cross_entropy_matches_hand_example() {
    let logits = vec![0.0f64];
    let (loss, dlogits) = kernels::bce_loss_from_logits(&logits, 1, &[1]);
    assert!((loss - 2.0f64.ln()).abs() < 1e-12); // -ln(sigmoid(0))
    assert!((dlogits[0] - (0.5 - 1.0)).abs() < 1e-12);

    // strongly correct prediction: tiny loss, tiny gradient
    let logits = vec![30.0f64];
    let (loss, dlogits) = kernels::bce_loss_from_logits(&logits, 1, &[1]);
    assert!(loss < 1e-12);
    assert!(dlogits[0].abs() < 1e-12);
}

#[test]
fn sigmoid_is_stable_at_extremes() {
    assert_eq!(kernels::sigmoid(0.0f64), 0.5);
    assert!(kernels::sigmoid(800.0f64) <= 1.0);
    assert!(kernels::sigmoid(-800.0f64) >= 0.0);
    assert!(kernels::sigmoid(800.0f64).is_finite());
    assert!(kernels::sigmoid(-800.0f64).is_finite());
}
