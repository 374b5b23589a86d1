//! Soft Dice loss over all classes with uniform weights.

use super::tensor::{Real, Tensor};

pub const DICE_EPS: f64 = 1e-5;

/// loss = 1 - mean_c (2 sum(p y) + eps) / (sum(p^2) + sum(y^2) + eps).
/// Returns the loss and dL/dprobs.
pub fn soft_dice_loss<T: Real>(probs: &Tensor<T>, onehot: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(probs.c, onehot.c);
    assert_eq!(probs.spatial(), onehot.spatial());
    let spatial = probs.spatial();
    let c = probs.c;
    let eps = T::from_f64(DICE_EPS);
    let mut dprobs = Tensor::zeros(probs.c, probs.d, probs.h, probs.w);
    let mut loss_acc = 0.0f64;
    for ch in 0..c {
        let p = &probs.data[ch * spatial..(ch + 1) * spatial];
        let y = &onehot.data[ch * spatial..(ch + 1) * spatial];
        let mut inter = T::ZERO;
        let mut p2 = T::ZERO;
        let mut y2 = T::ZERO;
        for (&pv, &yv) in p.iter().zip(y) {
            inter += pv * yv;
            p2 += pv * pv;
            y2 += yv * yv;
        }
        let num = T::from_f64(2.0) * inter + eps;
        let den = p2 + y2 + eps;
        loss_acc += (num / den).to_f64();
        // d(num/den)/dp = (2 y den - num 2 p) / den^2
        let dl = &mut dprobs.data[ch * spatial..(ch + 1) * spatial];
        let inv_den = T::ONE / den;
        let scale = T::from_f64(-1.0 / c as f64);
        for ((g, &pv), &yv) in dl.iter_mut().zip(p).zip(y) {
            let d_ratio =
                (T::from_f64(2.0) * yv - num * T::from_f64(2.0) * pv * inv_den) * inv_den;
            *g = scale * d_ratio;
        }
    }
    (1.0 - loss_acc / c as f64, dprobs)
}

/// One-hot encode an integer class-index tensor (single channel of indices)
/// into C channels.
pub fn one_hot<T: Real>(class_index: &[u32], c: usize, d: usize, h: usize, w: usize) -> Tensor<T> {
    assert_eq!(class_index.len(), d * h * w);
    let mut out = Tensor::zeros(c, d, h, w);
    let spatial = d * h * w;
    for (v, &cls) in class_index.iter().enumerate() {
        out.data[cls as usize * spatial + v] = T::ONE;
    }
    out
}
