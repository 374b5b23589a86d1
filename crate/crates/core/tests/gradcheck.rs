//! Central-finite-difference checks of every layer's backward pass and of
//! the whole network, in f64.

use claustra_core::rng;
use claustra_core::unet::layers::{
    conv_backward, conv_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    softmax_backward, softmax_forward, upsample2_backward, upsample2_forward, Conv,
};
use claustra_core::unet::loss::{one_hot, soft_dice_loss};
use claustra_core::unet::tensor::Tensor;
use claustra_core::unet::{backward, forward_cached, TrainState, UNetConfig};
use rand::Rng;

const FD_H: f64 = 1e-6;
const REL_TOL: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
}

fn rand_tensor(c: usize, d: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, rng::stage::PHANTOM);
    Tensor::from_vec(c, d, h, w, (0..c * d * h * w).map(|_| r.gen_range(-1.0..1.0)).collect())
}

/// Projection loss L = sum(out * proj): dL/dout = proj.
fn projection(out: &Tensor<f64>, proj: &Tensor<f64>) -> f64 {
    out.data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
}

#[test]
fn conv3_gradients_match_finite_differences() {
    let x = rand_tensor(2, 4, 4, 4, 1);
    let mut conv = Conv::<f64>::zeros(3, 2, 3);
    let mut r = rng::stream(2, rng::stage::INIT);
    for w in conv.weights.iter_mut() {
        *w = r.gen_range(-0.5..0.5);
    }
    for b in conv.bias.iter_mut() {
        *b = r.gen_range(-0.5..0.5);
    }
    let proj = rand_tensor(3, 4, 4, 4, 3);
    let out = conv_forward(&conv, &x);
    let (dx, grad) = conv_backward(&conv, &x, &proj, true);
    let dx = dx.unwrap();
    let _ = out;

    for probe in (0..conv.weights.len()).step_by(7) {
        let mut cp = conv.clone();
        cp.weights[probe] += FD_H;
        let lp = projection(&conv_forward(&cp, &x), &proj);
        cp.weights[probe] -= 2.0 * FD_H;
        let lm = projection(&conv_forward(&cp, &x), &proj);
        let fd = (lp - lm) / (2.0 * FD_H);
        assert!(rel_err(fd, grad.weights[probe]) < REL_TOL, "weight {probe}: {fd} vs {}", grad.weights[probe]);
    }
    for probe in 0..conv.bias.len() {
        let mut cp = conv.clone();
        cp.bias[probe] += FD_H;
        let lp = projection(&conv_forward(&cp, &x), &proj);
        cp.bias[probe] -= 2.0 * FD_H;
        let lm = projection(&conv_forward(&cp, &x), &proj);
        let fd = (lp - lm) / (2.0 * FD_H);
        assert!(rel_err(fd, grad.bias[probe]) < REL_TOL, "bias {probe}");
    }
    for probe in (0..x.data.len()).step_by(11) {
        let mut xp = x.clone();
        xp.data[probe] += FD_H;
        let lp = projection(&conv_forward(&conv, &xp), &proj);
        xp.data[probe] -= 2.0 * FD_H;
        let lm = projection(&conv_forward(&conv, &xp), &proj);
        let fd = (lp - lm) / (2.0 * FD_H);
        assert!(rel_err(fd, dx.data[probe]) < REL_TOL, "input {probe}");
    }
}

#[test]
fn conv1_gradients_match_finite_differences() {
    let x = rand_tensor(3, 2, 2, 2, 4);
    let mut conv = Conv::<f64>::zeros(2, 3, 1);
    let mut r = rng::stream(5, rng::stage::INIT);
    for w in conv.weights.iter_mut() {
        *w = r.gen_range(-0.5..0.5);
    }
    let proj = rand_tensor(2, 2, 2, 2, 6);
    let (dx, grad) = conv_backward(&conv, &x, &proj, true);
    let dx = dx.unwrap();
    for probe in 0..conv.weights.len() {
        let mut cp = conv.clone();
        cp.weights[probe] += FD_H;
        let lp = projection(&conv_forward(&cp, &x), &proj);
        cp.weights[probe] -= 2.0 * FD_H;
        let lm = projection(&conv_forward(&cp, &x), &proj);
        assert!(rel_err((lp - lm) / (2.0 * FD_H), grad.weights[probe]) < REL_TOL);
    }
    for probe in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[probe] += FD_H;
        let lp = projection(&conv_forward(&conv, &xp), &proj);
        xp.data[probe] -= 2.0 * FD_H;
        let lm = projection(&conv_forward(&conv, &xp), &proj);
        assert!(rel_err((lp - lm) / (2.0 * FD_H), dx.data[probe]) < REL_TOL);
    }
}

#[test]
fn relu_gradient_matches_away_from_kink() {
    // keep inputs away from 0 so the finite difference is valid
    let mut x = rand_tensor(2, 2, 2, 2, 7);
    for v in x.data.iter_mut() {
        if v.abs() < 0.05 {
            *v = 0.1 * v.signum();
        }
    }
    let proj = rand_tensor(2, 2, 2, 2, 8);
    let a = relu_forward(&x);
    let dx = relu_backward(&a, &proj);
    for probe in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[probe] += FD_H;
        let lp = projection(&relu_forward(&xp), &proj);
        xp.data[probe] -= 2.0 * FD_H;
        let lm = projection(&relu_forward(&xp), &proj);
        assert!(rel_err((lp - lm) / (2.0 * FD_H), dx.data[probe]) < REL_TOL, "probe {probe}");
    }
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    // distinct values so the argmax is stable under the probe step
    let mut x = rand_tensor(1, 4, 4, 4, 9);
    for (i, v) in x.data.iter_mut().enumerate() {
        *v += i as f64 * 1e-3;
    }
    let proj = rand_tensor(1, 2, 2, 2, 10);
    let (_, idx) = maxpool2_forward(&x);
    let dx = maxpool2_backward((1, 4, 4, 4), &idx, &proj);
    for probe in (0..x.data.len()).step_by(5) {
        let mut xp = x.clone();
        xp.data[probe] += FD_H;
        let lp = projection(&maxpool2_forward(&xp).0, &proj);
        xp.data[probe] -= 2.0 * FD_H;
        let lm = projection(&maxpool2_forward(&xp).0, &proj);
        assert!(rel_err((lp - lm) / (2.0 * FD_H), dx.data[probe]) < REL_TOL, "probe {probe}");
    }
}

#[test]
fn upsample_gradient_matches_finite_differences() {
    let x = rand_tensor(2, 2, 2, 2, 11);
    let proj = rand_tensor(2, 4, 4, 4, 12);
    let dx = upsample2_backward(&proj);
    for probe in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[probe] += FD_H;
        let lp = projection(&upsample2_forward(&xp), &proj);
        xp.data[probe] -= 2.0 * FD_H;
        let lm = projection(&upsample2_forward(&xp), &proj);
        assert!(rel_err((lp - lm) / (2.0 * FD_H), dx.data[probe]) < REL_TOL);
    }
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let x = rand_tensor(3, 2, 2, 2, 13);
    let proj = rand_tensor(3, 2, 2, 2, 14);
    let p = softmax_forward(&x);
    let dx = softmax_backward(&p, &proj);
    for probe in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[probe] += FD_H;
        let lp = projection(&softmax_forward(&xp), &proj);
        xp.data[probe] -= 2.0 * FD_H;
        let lm = projection(&softmax_forward(&xp), &proj);
        assert!(rel_err((lp - lm) / (2.0 * FD_H), dx.data[probe]) < REL_TOL, "probe {probe}");
    }
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    let cfg = UNetConfig {
        levels: 2,
        base_features: 2,
        class_codes: vec![0, 1, 2],
        claustrum_code: 1,
        seed: 20,
    };
    let state = TrainState::<f64>::init(cfg.clone()).unwrap();
    let x = {
        let mut t = rand_tensor(1, 4, 4, 4, 21);
        for v in t.data.iter_mut() {
            *v = (*v + 1.0) / 2.0;
        }
        t
    };
    let classes: Vec<u32> = (0..64).map(|v| (v % 3) as u32).collect();
    let y = one_hot::<f64>(&classes, 3, 4, 4, 4);

    let loss_of = |state: &TrainState<f64>| -> f64 {
        let cache = forward_cached(state, &x).unwrap();
        soft_dice_loss(&cache.probs, &y).0
    };

    let cache = forward_cached(&state, &x).unwrap();
    let (_, dprobs) = soft_dice_loss(&cache.probs, &y);
    let grads = backward(&state, &cache, &dprobs);

    for (ci, conv) in state.convs.iter().enumerate() {
        for probe in (0..conv.weights.len()).step_by(13) {
            let mut sp = state.clone();
            sp.convs[ci].weights[probe] += FD_H;
            let lp = loss_of(&sp);
            sp.convs[ci].weights[probe] -= 2.0 * FD_H;
            let lm = loss_of(&sp);
            let fd = (lp - lm) / (2.0 * FD_H);
            let an = grads[ci].weights[probe];
            // skip dead units (both sides zero)
            if fd.abs() < 1e-12 && an.abs() < 1e-12 {
                continue;
            }
            assert!(
                rel_err(fd, an) < REL_TOL,
                "conv {ci} weight {probe}: fd {fd} vs analytic {an}"
            );
        }
        for probe in 0..conv.bias.len() {
            let mut sp = state.clone();
            sp.convs[ci].bias[probe] += FD_H;
            let lp = loss_of(&sp);
            sp.convs[ci].bias[probe] -= 2.0 * FD_H;
            let lm = loss_of(&sp);
            let fd = (lp - lm) / (2.0 * FD_H);
            let an = grads[ci].bias[probe];
            if fd.abs() < 1e-12 && an.abs() < 1e-12 {
                continue;
            }
            assert!(rel_err(fd, an) < REL_TOL, "conv {ci} bias {probe}: fd {fd} vs {an}");
        }
    }
}
