//! A minimal trainable 3D U-Net: encoder-decoder with skip connections,
//! two 3x3x3 convolutions per level (zero-padded, ReLU), 2x max-pool down,
//! nearest-neighbor upsample up, and a final 1x1x1 convolution with softmax.
//! Soft Dice loss over all classes, Adam with batch size 1.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::AdamConfig;
pub use checkpoint::Checkpoint;
pub use tensor::{Real, Tensor};

use crate::error::{Error, Result};
use crate::rng;
use crate::synth::{generate_training_pair, SynthesisConfig};
use crate::volume::{BinaryMask, LabelVolume, Side, Volume};
use adam::{adam_update, Moments};
use layers::{
    conv_backward, conv_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    softmax_backward, softmax_forward, upsample2_backward, upsample2_forward, Conv, ConvGrad,
};
use loss::{one_hot, soft_dice_loss};
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct UNetConfig {
    /// Encoder depth; input dims must divide by 2^(levels-1).
    pub levels: usize,
    /// Feature count at the top level; doubles per level down.
    pub base_features: usize,
    /// Output class label codes, ascending; index in this list = class index.
    pub class_codes: Vec<u32>,
    pub claustrum_code: u32,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidUNetConfig("levels must be >= 1".into()));
        }
        if self.base_features < 1 {
            return Err(Error::InvalidUNetConfig("base_features must be >= 1".into()));
        }
        if self.class_codes.len() < 2 {
            return Err(Error::InvalidUNetConfig("need at least 2 classes".into()));
        }
        let mut sorted = self.class_codes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.class_codes {
            return Err(Error::InvalidUNetConfig("class_codes must be ascending and unique".into()));
        }
        if !self.class_codes.contains(&self.claustrum_code) {
            return Err(Error::InvalidUNetConfig(format!(
                "claustrum code {} not among class codes",
                self.claustrum_code
            )));
        }
        Ok(())
    }

    pub fn features_at(&self, level: usize) -> usize {
        self.base_features << level
    }

    pub fn num_classes(&self) -> usize {
        self.class_codes.len()
    }

    /// (cout, cin, k) for every convolution in storage order: encoder pairs
    /// top-down, decoder pairs bottom-up, final 1x1x1.
    pub fn layer_specs(&self) -> Vec<(usize, usize, usize)> {
        let l = self.levels;
        let mut specs = Vec::with_capacity(4 * l - 1);
        for lv in 0..l {
            let f = self.features_at(lv);
            let cin = if lv == 0 { 1 } else { self.features_at(lv - 1) };
            specs.push((f, cin, 3));
            specs.push((f, f, 3));
        }
        for lv in (0..l.saturating_sub(1)).rev() {
            let f = self.features_at(lv);
            let f_deep = self.features_at(lv + 1);
            specs.push((f, f_deep + f, 3));
            specs.push((f, f, 3));
        }
        specs.push((self.num_classes(), self.base_features, 1));
        specs
    }

    fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let div = 1usize << (self.levels - 1);
        if dims.iter().any(|&d| d % div != 0 || d == 0) {
            return Err(Error::DimsNotDivisible {
                dims,
                levels: self.levels,
                levels_minus_one: self.levels - 1,
            });
        }
        Ok(())
    }

    fn class_index(&self) -> BTreeMap<u32, u32> {
        self.class_codes.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect()
    }
}

/// All network parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Real> {
    pub config: UNetConfig,
    pub convs: Vec<Conv<T>>,
    pub moments: Vec<(Moments<T>, Moments<T>)>,
    pub step: u64,
    pub epoch: u32,
}

impl<T: Real> TrainState<T> {
    /// He-uniform initialization seeded from the config.
    pub fn init(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, rng::stage::INIT);
        let mut convs = Vec::new();
        let mut moments = Vec::new();
        for (cout, cin, k) in config.layer_specs() {
            let mut conv = Conv::zeros(cout, cin, k);
            let fan_in = (cin * k * k * k) as f64;
            let limit = (6.0 / fan_in).sqrt();
            for w in conv.weights.iter_mut() {
                *w = T::from_f64(r.gen_range(-limit..limit));
            }
            moments.push((Moments::zeros(conv.weights.len()), Moments::zeros(conv.bias.len())));
            convs.push(conv);
        }
        Ok(Self { config, convs, moments, step: 0, epoch: 0 })
    }

    pub fn num_params(&self) -> usize {
        self.convs.iter().map(|c| c.num_params()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.convs.iter().all(|c| {
            c.weights.iter().all(|v| v.is_finite_value())
                && c.bias.iter().all(|v| v.is_finite_value())
        })
    }
}

/// Everything the backward pass needs from one forward run.
pub struct ForwardCache<T: Real> {
    conv_in: Vec<Tensor<T>>,
    conv_act: Vec<Tensor<T>>,
    pools: Vec<((usize, usize, usize, usize), Vec<u32>)>,
    pub probs: Tensor<T>,
}

fn dec_a_index(levels: usize, lv: usize) -> usize {
    2 * levels + 2 * (levels - 2 - lv)
}

/// Run the network; per-voxel class probabilities sum to 1.
pub fn forward<T: Real>(state: &TrainState<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward_cached(state, input)?.probs)
}

pub fn forward_cached<T: Real>(
    state: &TrainState<T>,
    input: &Tensor<T>,
) -> Result<ForwardCache<T>> {
    state.config.check_dims([input.w, input.h, input.d])?;
    if input.c != 1 {
        return Err(Error::InvalidInput(format!("expected 1 input channel, got {}", input.c)));
    }
    let l = state.config.levels;
    let n_convs = state.convs.len();
    let mut conv_in: Vec<Tensor<T>> = Vec::with_capacity(n_convs);
    let mut conv_act: Vec<Tensor<T>> = Vec::with_capacity(n_convs);
    let mut pools = Vec::with_capacity(l.saturating_sub(1));
    let mut skips: Vec<Tensor<T>> = Vec::with_capacity(l.saturating_sub(1));

    let run_conv_relu = |conv_in: &mut Vec<Tensor<T>>,
                             conv_act: &mut Vec<Tensor<T>>,
                             idx: usize,
                             x: Tensor<T>|
     -> Tensor<T> {
        let out = relu_forward(&conv_forward(&state.convs[idx], &x));
        conv_in.push(x);
        conv_act.push(out.clone());
        out
    };

    let mut cur = input.clone();
    for lv in 0..l {
        cur = run_conv_relu(&mut conv_in, &mut conv_act, 2 * lv, cur);
        cur = run_conv_relu(&mut conv_in, &mut conv_act, 2 * lv + 1, cur);
        if lv < l - 1 {
            skips.push(cur.clone());
            let shape = (cur.c, cur.d, cur.h, cur.w);
            let (pooled, idx) = maxpool2_forward(&cur);
            pools.push((shape, idx));
            cur = pooled;
        }
    }
    for lv in (0..l.saturating_sub(1)).rev() {
        let up = upsample2_forward(&cur);
        let cat = Tensor::concat_channels(&up, &skips[lv]);
        let base = dec_a_index(l, lv);
        cur = run_conv_relu(&mut conv_in, &mut conv_act, base, cat);
        cur = run_conv_relu(&mut conv_in, &mut conv_act, base + 1, cur);
    }
    let final_idx = n_convs - 1;
    let logits = conv_forward(&state.convs[final_idx], &cur);
    conv_in.push(cur);
    conv_act.push(logits.clone());
    let probs = softmax_forward(&logits);
    Ok(ForwardCache { conv_in, conv_act, pools, probs })
}

/// Backward from dL/dprobs; returns per-conv parameter gradients aligned
/// with `state.convs`.
pub fn backward<T: Real>(
    state: &TrainState<T>,
    cache: &ForwardCache<T>,
    dprobs: &Tensor<T>,
) -> Vec<ConvGrad<T>> {
    let l = state.config.levels;
    let n_convs = state.convs.len();
    let mut grads: Vec<Option<ConvGrad<T>>> = (0..n_convs).map(|_| None).collect();

    let dlogits = softmax_backward(&cache.probs, dprobs);
    let final_idx = n_convs - 1;
    let (d_final, g_final) =
        conv_backward(&state.convs[final_idx], &cache.conv_in[final_idx], &dlogits, true);
    grads[final_idx] = Some(g_final);
    let mut d_cur = d_final.expect("dx requested");

    // cache entries were pushed in execution order; map conv index ->
    // position in conv_in/conv_act
    let cache_pos = |conv_idx: usize| -> usize {
        // encoder convs 0..2l are cached at their own index; decoder conv at
        // dec index d is cached after all encoder entries in execution order,
        // which matches the storage order; final conv is last.
        conv_idx
    };

    let back_conv_relu = |conv_idx: usize, d_out: &Tensor<T>, need_dx: bool, grads: &mut Vec<Option<ConvGrad<T>>>| -> Option<Tensor<T>> {
        let pos = cache_pos(conv_idx);
        let d_act = relu_backward(&cache.conv_act[pos], d_out);
        let (dx, g) = conv_backward(&state.convs[conv_idx], &cache.conv_in[pos], &d_act, need_dx);
        grads[conv_idx] = Some(g);
        dx
    };

    // decoder levels in reverse execution order (topmost first)
    let mut d_skips: Vec<Option<Tensor<T>>> = (0..l.saturating_sub(1)).map(|_| None).collect();
    for lv in 0..l.saturating_sub(1) {
        let base = dec_a_index(l, lv);
        let d_b = back_conv_relu(base + 1, &d_cur, true, &mut grads).expect("dx");
        let d_cat = back_conv_relu(base, &d_b, true, &mut grads).expect("dx");
        let up_channels = state.config.features_at(lv + 1);
        let (d_up, d_skip) = d_cat.split_channels(up_channels);
        d_skips[lv] = Some(d_skip);
        d_cur = upsample2_backward(&d_up);
    }

    // encoder levels bottom-up
    for lv in (0..l).rev() {
        let d_b = back_conv_relu(2 * lv + 1, &d_cur, true, &mut grads).expect("dx");
        let d_a = back_conv_relu(2 * lv, &d_b, lv > 0, &mut grads);
        if lv > 0 {
            let mut d = maxpool2_backward(
                cache.pools[lv - 1].0,
                &cache.pools[lv - 1].1,
                &d_a.expect("dx"),
            );
            if let Some(skip) = &d_skips[lv - 1] {
                for (a, &b) in d.data.iter_mut().zip(&skip.data) {
                    *a += b;
                }
            }
            d_cur = d;
        }
    }

    grads.into_iter().map(|g| g.expect("all convs visited")).collect()
}

/// Apply one Adam step over every parameter tensor.
pub fn apply_gradients<T: Real>(
    state: &mut TrainState<T>,
    grads: &[ConvGrad<T>],
    cfg: &AdamConfig,
) {
    state.step += 1;
    let step = state.step;
    for (conv, (grad, (mw, mb))) in
        state.convs.iter_mut().zip(grads.iter().zip(state.moments.iter_mut()))
    {
        adam_update(&mut conv.weights, &grad.weights, mw, cfg, step);
        adam_update(&mut conv.bias, &grad.bias, mb, cfg, step);
    }
}

/// Volume -> single-channel tensor (shared x-fastest layout).
pub fn tensor_from_volume<T: Real>(v: &Volume<f32>) -> Tensor<T> {
    let [nx, ny, nz] = v.dims();
    Tensor::from_vec(1, nz, ny, nx, v.data().iter().map(|&x| T::from_f64(x as f64)).collect())
}

/// One-hot target from a label volume using the config's class table.
pub fn onehot_from_labels<T: Real>(cfg: &UNetConfig, labels: &LabelVolume) -> Result<Tensor<T>> {
    let table = cfg.class_index();
    let [nx, ny, nz] = labels.dims();
    let mut idx = Vec::with_capacity(labels.geometry().num_voxels());
    for &code in labels.data() {
        match table.get(&code) {
            Some(&i) => idx.push(i),
            None => return Err(Error::UnmappedLabel(code)),
        }
    }
    Ok(one_hot(&idx, cfg.num_classes(), nz, ny, nx))
}

/// Argmax class per voxel (ties resolve to the lowest class index), returned
/// as a label volume of class codes.
pub fn argmax_labels(cfg: &UNetConfig, probs: &Tensor<f32>, like: &Volume<f32>) -> LabelVolume {
    let spatial = probs.spatial();
    let mut data = Vec::with_capacity(spatial);
    for v in 0..spatial {
        let mut best = 0usize;
        let mut best_p = probs.data[v];
        for c in 1..probs.c {
            let p = probs.data[c * spatial + v];
            if p > best_p {
                best_p = p;
                best = c;
            }
        }
        data.push(cfg.class_codes[best]);
    }
    Volume::new(like.geometry().clone(), data).expect("same grid")
}

/// Run inference on a FoV image and extract the claustrum mask. For
/// side=left the mask is flipped back into native orientation.
pub fn segment(state: &TrainState<f32>, fov_image: &Volume<f32>, side: Side) -> Result<BinaryMask> {
    let input = tensor_from_volume::<f32>(fov_image);
    let probs = forward(state, &input)?;
    let labels = argmax_labels(&state.config, &probs, fov_image);
    let mask = labels.mask_of(state.config.claustrum_code);
    match side {
        Side::Right => Ok(mask),
        Side::Left => mask.flip_lr(),
    }
}

/// A real-image validation case.
#[derive(Debug, Clone)]
pub struct ValCase {
    pub id: String,
    pub image: Volume<f32>,
    pub label: LabelVolume,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub adam: AdamConfig,
    /// Where to dump state if the loss goes non-finite.
    pub dump_dir: Option<std::path::PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 1, steps_per_epoch: 100, adam: AdamConfig::default(), dump_dir: None }
    }
}

/// Mean claustrum Dice over the validation set (both-empty pairs count 1).
pub fn validation_dice(state: &TrainState<f32>, val: &[ValCase]) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for case in val {
        let pred = segment(state, &case.image, Side::Right)?;
        let truth = case.label.mask_of(state.config.claustrum_code);
        total += crate::metrics::dice(&pred, &truth)?;
    }
    Ok(total / val.len() as f64)
}

/// Progress callback invoked after every epoch: (epoch, mean loss, val dice).
pub type EpochHook<'a> = dyn FnMut(usize, f64, f64) + 'a;

/// Train with on-the-fly synthesis, batch size 1. Each step draws one seed,
/// generates one pair from a random training label map, and applies one Adam
/// update. After each epoch the claustrum Dice on the real-image validation
/// set decides the retained checkpoint (ties keep the earlier epoch).
pub fn train(
    labels: &[LabelVolume],
    synth_cfg: &SynthesisConfig,
    unet_cfg: &UNetConfig,
    opts: &TrainOptions,
    val: &[ValCase],
    mut epoch_hook: Option<&mut EpochHook<'_>>,
) -> Result<Checkpoint> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no training labels".into()));
    }
    synth_cfg.validate()?;
    let mut state = TrainState::<f32>::init(unet_cfg.clone())?;
    let synth_digest = synth_cfg.digest();
    let mut run_rng = rng::stream(unet_cfg.seed, rng::stage::TRAIN);

    let make_ckpt = |state: &TrainState<f32>, epoch: u32, score: f64| Checkpoint {
        state: state.clone(),
        synth_digest,
        epoch,
        val_score: score,
    };

    if opts.epochs == 0 {
        let score = validation_dice(&state, val)?;
        return Ok(make_ckpt(&state, 0, score));
    }

    let mut best: Option<Checkpoint> = None;
    for epoch in 0..opts.epochs {
        state.epoch = epoch as u32;
        let mut loss_sum = 0.0f64;
        for step_in_epoch in 0..opts.steps_per_epoch {
            let label_idx = (run_rng.gen::<u64>() % labels.len() as u64) as usize;
            let pair_seed: u64 = run_rng.gen();
            let pair = generate_training_pair(&labels[label_idx], synth_cfg, pair_seed)?;
            let x = tensor_from_volume::<f32>(&pair.image);
            let y = onehot_from_labels::<f32>(unet_cfg, &pair.label)?;
            let cache = forward_cached(&state, &x)?;
            let (loss, dprobs) = soft_dice_loss(&cache.probs, &y);
            if !loss.is_finite() {
                if let Some(dir) = &opts.dump_dir {
                    let dump = make_ckpt(&state, epoch as u32, f64::NAN);
                    let _ = checkpoint::save(&dump, dir.join("diverged.ckpt"));
                }
                return Err(Error::TrainingDiverged {
                    epoch,
                    step: epoch * opts.steps_per_epoch + step_in_epoch,
                    loss,
                });
            }
            loss_sum += loss;
            let grads = backward(&state, &cache, &dprobs);
            apply_gradients(&mut state, &grads, &opts.adam);
        }
        let score = validation_dice(&state, val)?;
        let mean_loss =
            if opts.steps_per_epoch > 0 { loss_sum / opts.steps_per_epoch as f64 } else { 0.0 };
        if let Some(hook) = epoch_hook.as_deref_mut() {
            hook(epoch, mean_loss, score);
        }
        let improves = match &best {
            None => true,
            Some(b) => score > b.val_score,
        };
        if improves {
            best = Some(make_ckpt(&state, epoch as u32, score));
        }
    }
    Ok(best.expect("epochs >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;

    fn small_cfg() -> UNetConfig {
        UNetConfig {
            levels: 2,
            base_features: 2,
            class_codes: vec![0, 1],
            claustrum_code: 1,
            seed: 11,
        }
    }

    fn input_tensor(d: usize, seed: u64) -> Tensor<f32> {
        let mut r = rng::stream(seed, rng::stage::PHANTOM);
        Tensor::from_vec(1, d, d, d, (0..d * d * d).map(|_| r.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn probabilities_sum_to_one() {
        let state = TrainState::<f32>::init(small_cfg()).unwrap();
        let x = input_tensor(8, 1);
        let probs = forward(&state, &x).unwrap();
        let spatial = probs.spatial();
        for v in 0..spatial {
            let total: f32 = (0..probs.c).map(|c| probs.data[c * spatial + v]).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_final_layer_gives_uniform_classes() {
        let mut state = TrainState::<f32>::init(small_cfg()).unwrap();
        let last = state.convs.len() - 1;
        for w in state.convs[last].weights.iter_mut() {
            *w = 0.0;
        }
        for b in state.convs[last].bias.iter_mut() {
            *b = 0.0;
        }
        let x = input_tensor(8, 2);
        let probs = forward(&state, &x).unwrap();
        for &p in &probs.data {
            assert!((p - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let state = TrainState::<f32>::init(small_cfg()).unwrap();
        let x = input_tensor(8, 3);
        let a = forward(&state, &x).unwrap();
        let b = forward(&state, &x).unwrap();
        assert_eq!(a.data, b.data);
        // fresh state from the same seed matches too
        let state2 = TrainState::<f32>::init(small_cfg()).unwrap();
        let c = forward(&state2, &x).unwrap();
        assert_eq!(a.data, c.data);
    }

    #[test]
    fn indivisible_dims_rejected() {
        let state = TrainState::<f32>::init(small_cfg()).unwrap();
        let x = input_tensor(7, 4);
        assert!(matches!(forward(&state, &x), Err(Error::DimsNotDivisible { .. })));
    }

    #[test]
    fn uniform_probs_argmax_is_background() {
        let cfg = small_cfg();
        let g = Geometry::axis_aligned([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let like: Volume<f32> = Volume::filled(g, 0.0);
        let probs = Tensor::from_vec(2, 4, 4, 4, vec![0.5f32; 128]);
        let labels = argmax_labels(&cfg, &probs, &like);
        assert!(labels.data().iter().all(|&c| c == 0));
    }

    #[test]
    fn segment_left_flips_back() {
        let state = TrainState::<f32>::init(small_cfg()).unwrap();
        let g = Geometry::axis_aligned([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let img = Volume::from_fn(g, |i, j, k| ((i * 3 + j + k) % 7) as f32 / 7.0);
        let right = segment(&state, &img, Side::Right).unwrap();
        let left = segment(&state, &img, Side::Left).unwrap();
        assert_eq!(left, right.flip_lr().unwrap());
    }

    #[test]
    fn zero_epochs_returns_initial_checkpoint() {
        let g = Geometry::axis_aligned([8, 8, 8], [0.35; 3], [0.0; 3]).unwrap();
        let labels: Vec<LabelVolume> =
            vec![Volume::from_fn(g, |i, _, _| if i < 4 { 0u32 } else { 1 })];
        let cfg = small_cfg();
        let opts = TrainOptions { epochs: 0, steps_per_epoch: 0, ..Default::default() };
        let ckpt =
            train(&labels, &SynthesisConfig::degenerate(), &cfg, &opts, &[], None).unwrap();
        assert_eq!(ckpt.epoch, 0);
        assert_eq!(ckpt.state.step, 0);
        let init = TrainState::<f32>::init(cfg).unwrap();
        assert_eq!(ckpt.state.convs, init.convs);
    }
}
