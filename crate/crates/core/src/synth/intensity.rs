//! Intensity synthesis: GMM sampling conditioned on labels, bias field,
//! voxel noise, normalization with gamma, and resolution simulation.

use super::field::{control_noise, upsample_align_corners};
use super::SynthesisConfig;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::resample::{gaussian_smooth, resample, Interp};
use crate::rng;
use crate::volume::{LabelVolume, Volume};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// Per-group Gaussian intensity parameters drawn for one synthetic image.
#[derive(Debug, Clone, Serialize)]
pub struct GmmDraw {
    /// label code -> group id
    pub group_of: BTreeMap<u32, u32>,
    /// group id -> (mean, std)
    pub params: BTreeMap<u32, (f64, f64)>,
}

impl GmmDraw {
    pub fn params_of(&self, label: u32) -> Result<(f64, f64)> {
        let group = self.group_of.get(&label).ok_or(Error::UnmappedLabel(label))?;
        Ok(*self.params.get(group).expect("group table is closed over group_of"))
    }
}

/// Sample per-group means and stds for the given label codes. Labels sharing
/// a group (per the config map) share one component; default is one group per
/// label.
pub fn sample_gmm(cfg: &SynthesisConfig, labels_present: &BTreeSet<u32>, seed: u64) -> GmmDraw {
    let mut r = rng::stream(seed, rng::stage::GMM);
    let mut group_of = BTreeMap::new();
    for &code in labels_present {
        let group = cfg.label_groups.get(&code).copied().unwrap_or(code);
        group_of.insert(code, group);
    }
    let groups: BTreeSet<u32> = group_of.values().copied().collect();
    let mut params = BTreeMap::new();
    for group in groups {
        let mean = sample_range(&mut r, cfg.gmm_mean_range);
        let std = sample_range(&mut r, cfg.gmm_std_range);
        params.insert(group, (mean, std));
    }
    GmmDraw { group_of, params }
}

fn sample_range(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Draw each voxel independently from the Gaussian of its label's group.
pub fn synthesize_intensity(labels: &LabelVolume, draw: &GmmDraw, seed: u64) -> Result<Volume<f32>> {
    let mut r = rng::stream(seed, rng::stage::INTENSITY);
    // resolve (mean, std) per code up front so unmapped labels fail fast
    let mut table: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for code in labels.unique_codes() {
        table.insert(code, draw.params_of(code)?);
    }
    let mut data = Vec::with_capacity(labels.geometry().num_voxels());
    for &code in labels.data() {
        let (mean, std) = table[&code];
        let z: f64 = r.sample(StandardNormal);
        data.push((mean + std * z) as f32);
    }
    Volume::new(labels.geometry().clone(), data)
}

/// Multiply by exp(B), where B is low-resolution Gaussian noise of the
/// configured log-amplitude upsampled to the image grid.
pub fn apply_bias_field(img: &Volume<f32>, cfg: &SynthesisConfig, seed: u64) -> Result<Volume<f32>> {
    if cfg.bias_log_std == 0.0 {
        return Ok(img.clone());
    }
    let mut r = rng::stream(seed, rng::stage::BIAS);
    let field = sample_bias_log_field(cfg, &mut r, img.dims());
    let data: Vec<f32> =
        img.data().iter().zip(&field).map(|(&v, &b)| (v as f64 * b.exp()) as f32).collect();
    Volume::new(img.geometry().clone(), data)
}

/// The log-bias field itself (control noise times log-amplitude, upsampled).
pub fn sample_bias_log_field(
    cfg: &SynthesisConfig,
    rng: &mut impl Rng,
    dims: [usize; 3],
) -> Vec<f64> {
    let ctrl: Vec<f64> =
        control_noise(rng, cfg.bias_control_dims).iter().map(|z| z * cfg.bias_log_std).collect();
    upsample_align_corners(&ctrl, cfg.bias_control_dims, dims)
}

/// Outcome of the voxel-noise stage.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NoiseDraw {
    pub applied: bool,
    pub sigma: f64,
}

/// With the configured probability, add i.i.d. Gaussian noise with a sigma
/// drawn uniformly from the configured range; otherwise pass through.
pub fn add_voxel_noise(
    img: &Volume<f32>,
    cfg: &SynthesisConfig,
    seed: u64,
) -> Result<(Volume<f32>, NoiseDraw)> {
    let mut r = rng::stream(seed, rng::stage::NOISE);
    let applied = r.gen::<f64>() < cfg.noise_prob;
    if !applied {
        return Ok((img.clone(), NoiseDraw { applied: false, sigma: 0.0 }));
    }
    let sigma = sample_range(&mut r, cfg.noise_sigma_range);
    if sigma == 0.0 {
        return Ok((img.clone(), NoiseDraw { applied: true, sigma }));
    }
    let data: Vec<f32> = img
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = r.sample(StandardNormal);
            (v as f64 + sigma * z) as f32
        })
        .collect();
    Ok((Volume::new(img.geometry().clone(), data)?, NoiseDraw { applied: true, sigma }))
}

/// Min-max rescale to [0,1], then apply a random gamma exponent
/// exp(N(0, gamma_log_std^2)). Endpoints 0 and 1 are fixed points.
pub fn normalize_and_gamma(
    img: &Volume<f32>,
    cfg: &SynthesisConfig,
    seed: u64,
) -> Result<(Volume<f32>, f64)> {
    let (lo, hi) = img.min_max();
    if !(hi > lo) {
        return Err(Error::ZeroIntensityRange);
    }
    let mut r = rng::stream(seed, rng::stage::GAMMA);
    let z: f64 = r.sample(StandardNormal);
    let gamma = (cfg.gamma_log_std * z).exp();
    let range = (hi - lo) as f64;
    let data: Vec<f32> = img
        .data()
        .iter()
        .map(|&v| {
            let n = ((v - lo) as f64 / range).clamp(0.0, 1.0);
            n.powf(gamma) as f32
        })
        .collect();
    Ok((Volume::new(img.geometry().clone(), data)?, gamma))
}

/// Which resolution branch was drawn.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolutionDraw {
    pub anisotropic: bool,
    pub spacing_mm: [f64; 3],
}

/// Degrade to a fixed target spacing: Gaussian blur with FWHM equal to the
/// target spacing per axis, trilinear downsample to that spacing, trilinear
/// upsample back to the native grid. Dims are preserved.
pub fn degrade_to_spacing(img: &Volume<f32>, target_mm: [f64; 3]) -> Result<Volume<f32>> {
    const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949; // 2 sqrt(2 ln 2)
    let sigma = [
        target_mm[0] / FWHM_TO_SIGMA,
        target_mm[1] / FWHM_TO_SIGMA,
        target_mm[2] / FWHM_TO_SIGMA,
    ];
    let blurred = gaussian_smooth(img, sigma)?;
    let src = img.geometry();
    let extent = src.extent_mm();
    let center = src.center_world();
    let mut dims = [0usize; 3];
    let mut origin = [0f64; 3];
    for axis in 0..3 {
        dims[axis] = ((extent[axis] / target_mm[axis]).round() as usize).max(1);
        origin[axis] = center[axis] - target_mm[axis] * (dims[axis] - 1) as f64 / 2.0;
    }
    let coarse_geom = Geometry::axis_aligned(dims, target_mm, origin)?;
    let coarse = resample(&blurred, &coarse_geom, Interp::Trilinear)?;
    resample(&coarse, src, Interp::Trilinear)
}

/// Draw a resolution (isotropic or per-axis anisotropic branch) and simulate
/// it; the output stays on the native grid.
pub fn simulate_resolution(
    img: &Volume<f32>,
    cfg: &SynthesisConfig,
    seed: u64,
) -> Result<(Volume<f32>, ResolutionDraw)> {
    let mut r = rng::stream(seed, rng::stage::RESOLUTION);
    let anisotropic = r.gen::<f64>() < cfg.aniso_prob;
    let spacing_mm = if anisotropic {
        [
            sample_range(&mut r, cfg.aniso_spacing_range),
            sample_range(&mut r, cfg.aniso_spacing_range),
            sample_range(&mut r, cfg.aniso_spacing_range),
        ]
    } else {
        let s = sample_range(&mut r, cfg.iso_spacing_range);
        [s, s, s]
    };
    let out = degrade_to_spacing(img, spacing_mm)?;
    Ok((out, ResolutionDraw { anisotropic, spacing_mm }))
}
