//! U-Net building blocks with explicit forward and backward passes.
//!
//! Every parallel loop partitions its output so each element has exactly one
//! writer; results are bit-identical regardless of thread count.

use super::tensor::{Real, Tensor};
use rayon::prelude::*;

/// 3D convolution parameters; k is 3 (zero-padded, stride 1) or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T: Real> {
    pub cout: usize,
    pub cin: usize,
    pub k: usize,
    /// \[cout\]\[cin\]\[k^3\], tap order (dz, dy, dx)
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(cout: usize, cin: usize, k: usize) -> Self {
        Self {
            cout,
            cin,
            k,
            weights: vec![T::ZERO; cout * cin * k * k * k],
            bias: vec![T::ZERO; cout],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fixed-order blocked dot product; deterministic and autovectorizable.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            lanes[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut acc = T::ZERO;
    for l in 0..8 {
        acc += lanes[l];
    }
    for i in chunks * 8..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn block_sum<T: Real>(a: &[T]) -> T {
    let mut lanes = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            lanes[l] += a[i * 8 + l];
        }
    }
    let mut acc = T::ZERO;
    for l in 0..8 {
        acc += lanes[l];
    }
    for i in chunks * 8..a.len() {
        acc += a[i];
    }
    acc
}

pub fn conv_forward<T: Real>(conv: &Conv<T>, x: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.c, conv.cin);
    if conv.k == 1 {
        return conv1_forward(conv, x);
    }
    assert_eq!(conv.k, 3);
    let (d, h, w) = (x.d, x.h, x.w);
    let mut out = Tensor::zeros(conv.cout, d, h, w);
    let spatial = d * h * w;
    let plane = h * w;
    out.data.par_chunks_mut(plane).enumerate().for_each(|(slab, out_plane)| {
        let co = slab / d;
        let z = slab % d;
        let mut acc = vec![T::ZERO; w];
        for y in 0..h {
            for a in acc.iter_mut() {
                *a = conv.bias[co];
            }
            for ci in 0..conv.cin {
                let chan = &x.data[ci * spatial..(ci + 1) * spatial];
                for dz in -1i64..=1 {
                    let zi = z as i64 + dz;
                    if zi < 0 || zi >= d as i64 {
                        continue;
                    }
                    for dy in -1i64..=1 {
                        let yi = y as i64 + dy;
                        if yi < 0 || yi >= h as i64 {
                            continue;
                        }
                        let row = &chan[(zi as usize * h + yi as usize) * w..][..w];
                        let tap_base =
                            ((co * conv.cin + ci) * 27) + ((dz + 1) * 9 + (dy + 1) * 3) as usize;
                        let wm1 = conv.weights[tap_base];
                        let w0 = conv.weights[tap_base + 1];
                        let wp1 = conv.weights[tap_base + 2];
                        for xv in 1..w {
                            acc[xv] += wm1 * row[xv - 1];
                        }
                        for xv in 0..w {
                            acc[xv] += w0 * row[xv];
                        }
                        for xv in 0..w - 1 {
                            acc[xv] += wp1 * row[xv + 1];
                        }
                    }
                }
            }
            out_plane[y * w..(y + 1) * w].copy_from_slice(&acc);
        }
    });
    out
}

fn conv1_forward<T: Real>(conv: &Conv<T>, x: &Tensor<T>) -> Tensor<T> {
    let spatial = x.spatial();
    let mut out = Tensor::zeros(conv.cout, x.d, x.h, x.w);
    out.data.par_chunks_mut(spatial).enumerate().for_each(|(co, out_chan)| {
        for v in out_chan.iter_mut() {
            *v = conv.bias[co];
        }
        for ci in 0..conv.cin {
            let wv = conv.weights[co * conv.cin + ci];
            let chan = &x.data[ci * spatial..(ci + 1) * spatial];
            for (o, &i) in out_chan.iter_mut().zip(chan) {
                *o += wv * i;
            }
        }
    });
    out
}

/// Gradients of one convolution.
#[derive(Debug, Clone)]
pub struct ConvGrad<T: Real> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass: returns (input gradient, parameter gradients).
pub fn conv_backward<T: Real>(
    conv: &Conv<T>,
    x: &Tensor<T>,
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, ConvGrad<T>) {
    if conv.k == 1 {
        return conv1_backward(conv, x, dout, need_dx);
    }
    let (d, h, w) = (x.d, x.h, x.w);
    let spatial = d * h * w;
    let plane = h * w;

    // parameter gradients, one task per output channel
    let mut grad = ConvGrad {
        weights: vec![T::ZERO; conv.weights.len()],
        bias: vec![T::ZERO; conv.bias.len()],
    };
    let wg_per_co = conv.cin * 27;
    grad.weights
        .par_chunks_mut(wg_per_co)
        .zip(grad.bias.par_iter_mut())
        .enumerate()
        .for_each(|(co, (wg, bg))| {
            let dchan = &dout.data[co * spatial..(co + 1) * spatial];
            *bg = block_sum(dchan);
            for ci in 0..conv.cin {
                let chan = &x.data[ci * spatial..(ci + 1) * spatial];
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let tap = ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                            let mut acc = T::ZERO;
                            for z in 0..d {
                                let zi = z as i64 + dz;
                                if zi < 0 || zi >= d as i64 {
                                    continue;
                                }
                                for y in 0..h {
                                    let yi = y as i64 + dy;
                                    if yi < 0 || yi >= h as i64 {
                                        continue;
                                    }
                                    let orow = &dchan[(z * h + y) * w..][..w];
                                    let irow = &chan[(zi as usize * h + yi as usize) * w..][..w];
                                    acc += match dx {
                                        -1 => dot(&orow[1..], &irow[..w - 1]),
                                        0 => dot(orow, irow),
                                        _ => dot(&orow[..w - 1], &irow[1..]),
                                    };
                                }
                            }
                            wg[ci * 27 + tap] = acc;
                        }
                    }
                }
            }
        });

    if !need_dx {
        return (None, grad);
    }

    // input gradient, one task per (input channel, z) plane
    let mut dx_t = Tensor::zeros(conv.cin, d, h, w);
    dx_t.data.par_chunks_mut(plane).enumerate().for_each(|(slab, dx_plane)| {
        let ci = slab / d;
        let zi = slab % d;
        let mut acc = vec![T::ZERO; w];
        for yi in 0..h {
            for a in acc.iter_mut() {
                *a = T::ZERO;
            }
            for co in 0..conv.cout {
                let dchan = &dout.data[co * spatial..(co + 1) * spatial];
                for dz in -1i64..=1 {
                    let zo = zi as i64 - dz;
                    if zo < 0 || zo >= d as i64 {
                        continue;
                    }
                    for dy in -1i64..=1 {
                        let yo = yi as i64 - dy;
                        if yo < 0 || yo >= h as i64 {
                            continue;
                        }
                        let orow = &dchan[(zo as usize * h + yo as usize) * w..][..w];
                        let tap_base =
                            ((co * conv.cin + ci) * 27) + ((dz + 1) * 9 + (dy + 1) * 3) as usize;
                        let wm1 = conv.weights[tap_base];
                        let w0 = conv.weights[tap_base + 1];
                        let wp1 = conv.weights[tap_base + 2];
                        // xo = xi - dx
                        for xi in 0..w - 1 {
                            acc[xi] += wm1 * orow[xi + 1];
                        }
                        for xi in 0..w {
                            acc[xi] += w0 * orow[xi];
                        }
                        for xi in 1..w {
                            acc[xi] += wp1 * orow[xi - 1];
                        }
                    }
                }
            }
            dx_plane[yi * w..(yi + 1) * w].copy_from_slice(&acc);
        }
    });
    (Some(dx_t), grad)
}

fn conv1_backward<T: Real>(
    conv: &Conv<T>,
    x: &Tensor<T>,
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, ConvGrad<T>) {
    let spatial = x.spatial();
    let mut grad = ConvGrad {
        weights: vec![T::ZERO; conv.weights.len()],
        bias: vec![T::ZERO; conv.bias.len()],
    };
    grad.weights
        .par_chunks_mut(conv.cin)
        .zip(grad.bias.par_iter_mut())
        .enumerate()
        .for_each(|(co, (wg, bg))| {
            let dchan = &dout.data[co * spatial..(co + 1) * spatial];
            *bg = block_sum(dchan);
            for ci in 0..conv.cin {
                wg[ci] = dot(dchan, &x.data[ci * spatial..(ci + 1) * spatial]);
            }
        });
    if !need_dx {
        return (None, grad);
    }
    let mut dx_t = Tensor::zeros(conv.cin, x.d, x.h, x.w);
    dx_t.data.par_chunks_mut(spatial).enumerate().for_each(|(ci, dchan_in)| {
        for co in 0..conv.cout {
            let wv = conv.weights[co * conv.cin + ci];
            let dchan = &dout.data[co * spatial..(co + 1) * spatial];
            for (o, &g) in dchan_in.iter_mut().zip(dchan) {
                *o += wv * g;
            }
        }
    });
    (Some(dx_t), grad)
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.data.par_iter_mut().for_each(|v| *v = v.maximum(T::ZERO));
    out
}

/// Gradient passes where the activation is strictly positive.
pub fn relu_backward<T: Real>(activated: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = dout.clone();
    dx.data.par_iter_mut().zip(activated.data.par_iter()).for_each(|(g, &a)| {
        if !(a > T::ZERO) {
            *g = T::ZERO;
        }
    });
    dx
}

/// 2x max pooling; returns the pooled tensor and the flat input index of each
/// window maximum for the backward scatter.
pub fn maxpool2_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    assert!(x.d % 2 == 0 && x.h % 2 == 0 && x.w % 2 == 0);
    let (d2, h2, w2) = (x.d / 2, x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, d2, h2, w2);
    let mut idx = vec![0u32; out.data.len()];
    let plane_out = h2 * w2;
    out.data
        .par_chunks_mut(plane_out)
        .zip(idx.par_chunks_mut(plane_out))
        .enumerate()
        .for_each(|(slab, (out_plane, idx_plane))| {
            let c = slab / d2;
            let zo = slab % d2;
            for yo in 0..h2 {
                for xo in 0..w2 {
                    let mut best = T::from_f64(f64::NEG_INFINITY);
                    let mut best_idx = 0u32;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let src = x.idx(c, zo * 2 + dz, yo * 2 + dy, xo * 2 + dx);
                                let v = x.data[src];
                                if v > best {
                                    best = v;
                                    best_idx = src as u32;
                                }
                            }
                        }
                    }
                    out_plane[yo * w2 + xo] = best;
                    idx_plane[yo * w2 + xo] = best_idx;
                }
            }
        });
    (out, idx)
}

pub fn maxpool2_backward<T: Real>(
    input_shape: (usize, usize, usize, usize),
    indices: &[u32],
    dout: &Tensor<T>,
) -> Tensor<T> {
    let (c, d, h, w) = input_shape;
    let mut dx = Tensor::zeros(c, d, h, w);
    // pooling windows are disjoint, so each input cell has one writer
    for (&i, &g) in indices.iter().zip(dout.data.iter()) {
        dx.data[i as usize] += g;
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (d2, h2, w2) = (x.d * 2, x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, d2, h2, w2);
    let plane = h2 * w2;
    out.data.par_chunks_mut(plane).enumerate().for_each(|(slab, out_plane)| {
        let c = slab / d2;
        let zo = slab % d2;
        let zi = zo / 2;
        for yo in 0..h2 {
            let yi = yo / 2;
            for xo in 0..w2 {
                out_plane[yo * w2 + xo] = x.at(c, zi, yi, xo / 2);
            }
        }
    });
    out
}

/// Sum gradients over each 2x2x2 child block.
pub fn upsample2_backward<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let (d, h, w) = (dout.d / 2, dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.c, d, h, w);
    let plane = h * w;
    dx.data.par_chunks_mut(plane).enumerate().for_each(|(slab, dx_plane)| {
        let c = slab / d;
        let zi = slab % d;
        for yi in 0..h {
            for xi in 0..w {
                let mut acc = T::ZERO;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx_ in 0..2 {
                            acc += dout.at(c, zi * 2 + dz, yi * 2 + dy, xi * 2 + dx_);
                        }
                    }
                }
                dx_plane[yi * w + xi] = acc;
            }
        }
    });
    dx
}

/// Channel softmax per voxel.
pub fn softmax_forward<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let spatial = logits.spatial();
    let c = logits.c;
    let mut out = logits.clone();
    for v in 0..spatial {
        let mut maxv = logits.data[v];
        for ch in 1..c {
            maxv = maxv.maximum(logits.data[ch * spatial + v]);
        }
        let mut total = T::ZERO;
        for ch in 0..c {
            let e = (logits.data[ch * spatial + v] - maxv).exp();
            out.data[ch * spatial + v] = e;
            total += e;
        }
        for ch in 0..c {
            out.data[ch * spatial + v] = out.data[ch * spatial + v] / total;
        }
    }
    out
}

/// From dL/dprobs to dL/dlogits through the softmax Jacobian.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, dprobs: &Tensor<T>) -> Tensor<T> {
    let spatial = probs.spatial();
    let c = probs.c;
    let mut dlogits = Tensor::zeros(probs.c, probs.d, probs.h, probs.w);
    for v in 0..spatial {
        let mut s = T::ZERO;
        for ch in 0..c {
            s += probs.data[ch * spatial + v] * dprobs.data[ch * spatial + v];
        }
        for ch in 0..c {
            let p = probs.data[ch * spatial + v];
            dlogits.data[ch * spatial + v] = p * (dprobs.data[ch * spatial + v] - s);
        }
    }
    dlogits
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv3_matches_naive_reference() {
        // 2 in, 2 out channels on a 4x3x5 tensor vs a direct 6-loop evaluation
        let (cin, cout, d, h, w) = (2usize, 2usize, 4usize, 3usize, 5usize);
        let x = Tensor::from_vec(
            cin,
            d,
            h,
            w,
            (0..cin * d * h * w).map(|v| ((v * 37 % 11) as f64 - 5.0) * 0.25).collect(),
        );
        let mut conv = Conv::zeros(cout, cin, 3);
        for (i, wv) in conv.weights.iter_mut().enumerate() {
            *wv = ((i * 13 % 7) as f64 - 3.0) * 0.1;
        }
        conv.bias = vec![0.3, -0.2];
        let out = conv_forward(&conv, &x);
        for co in 0..cout {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = conv.bias[co];
                        for ci in 0..cin {
                            for dz in -1i64..=1 {
                                for dy in -1i64..=1 {
                                    for dx in -1i64..=1 {
                                        let (zi, yi, xi) =
                                            (z as i64 + dz, y as i64 + dy, xx as i64 + dx);
                                        if zi < 0
                                            || yi < 0
                                            || xi < 0
                                            || zi >= d as i64
                                            || yi >= h as i64
                                            || xi >= w as i64
                                        {
                                            continue;
                                        }
                                        let tap =
                                            ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                                        acc += conv.weights[(co * cin + ci) * 27 + tap]
                                            * x.at(ci, zi as usize, yi as usize, xi as usize);
                                    }
                                }
                            }
                        }
                        let got = out.at(co, z, y, xx);
                        assert!((got - acc).abs() < 1e-12, "at ({co},{z},{y},{xx})");
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_round_trip_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(1, 2, 2, 2, vec![1.0f64, 5.0, 2.0, 0.0, -1.0, 3.0, 0.5, 0.25]);
        let (out, idx) = maxpool2_forward(&x);
        assert_eq!(out.data, vec![5.0]);
        let dout = Tensor::from_vec(1, 1, 1, 1, vec![2.0]);
        let dx = maxpool2_backward((1, 2, 2, 2), &idx, &dout);
        let mut expect = vec![0.0; 8];
        expect[1] = 2.0;
        assert_eq!(dx.data, expect);
    }

    #[test]
    fn upsample_forward_and_backward_are_adjoint() {
        // <up(x), y> == <x, up^T(y)> for random x, y
        let x = Tensor::from_vec(2, 2, 2, 2, (0..16).map(|v| v as f64 * 0.5 - 3.0).collect());
        let y = Tensor::from_vec(
            2,
            4,
            4,
            4,
            (0..128).map(|v| ((v * 29 % 17) as f64 - 8.0) * 0.125).collect(),
        );
        let up = upsample2_forward(&x);
        let down = upsample2_backward(&y);
        let lhs: f64 = up.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&down.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn softmax_normalizes_every_voxel() {
        let logits = Tensor::from_vec(
            3,
            2,
            2,
            2,
            (0..24).map(|v| ((v * 7 % 13) as f64 - 6.0) * 1.5).collect(),
        );
        let p = softmax_forward(&logits);
        let spatial = logits.spatial();
        for v in 0..spatial {
            let total: f64 = (0..3).map(|c| p.data[c * spatial + v]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_masks_gradient() {
        let x = Tensor::from_vec(1, 1, 1, 4, vec![-1.0f64, 0.0, 2.0, 3.0]);
        let a = relu_forward(&x);
        assert_eq!(a.data, vec![0.0, 0.0, 2.0, 3.0]);
        let dout = Tensor::from_vec(1, 1, 1, 4, vec![1.0; 4]);
        let dx = relu_backward(&a, &dout);
        assert_eq!(dx.data, vec![0.0, 0.0, 1.0, 1.0]);
    }
}
