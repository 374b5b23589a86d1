//! The generative model: from one training label map and one seed, produce a
//! spatially augmented label map and a matched synthetic intensity image with
//! random contrast and simulated resolution.
//!
//! Chain per pair: sample deformation -> warp labels -> GMM intensities ->
//! bias field -> voxel noise -> min-max normalization with gamma ->
//! resolution simulation. Labels are never resampled by the resolution stage;
//! only the image degrades. Every stage is a pure function of (inputs, seed).

pub mod deform;
pub mod field;
pub mod intensity;

pub use deform::{sample_deformation, warp_labels, AffineDraw, DeformationField};
pub use intensity::{
    add_voxel_noise, apply_bias_field, degrade_to_spacing, normalize_and_gamma, sample_gmm,
    simulate_resolution, synthesize_intensity, GmmDraw, NoiseDraw, ResolutionDraw,
};

use crate::config::KvFile;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

/// All sampling distributions of the generative model.
#[derive(Debug, Clone, Serialize)]
pub struct SynthesisConfig {
    /// Grid spacing the training labels live on (mm).
    pub native_spacing_mm: f64,
    /// Affine ranges: rotation is +/- deg per axis, scale a [lo, hi] factor,
    /// shear +/- per off-diagonal term, translation +/- mm per axis.
    pub rotation_deg: f64,
    pub scale_range: [f64; 2],
    pub shear: f64,
    pub translation_mm: f64,
    /// Stationary velocity field: std in mm, control grid, integration steps.
    pub svf_std_mm: f64,
    pub svf_control_dims: [usize; 3],
    pub svf_integration_steps: u32,
    /// GMM priors: per-group mean and std ranges (intensity units).
    pub gmm_mean_range: [f64; 2],
    pub gmm_std_range: [f64; 2],
    /// label code -> group id; labels absent from the map form their own group.
    pub label_groups: BTreeMap<u32, u32>,
    /// Bias field control grid and log-amplitude std.
    pub bias_control_dims: [usize; 3],
    pub bias_log_std: f64,
    /// Gamma transform: exponent is exp(N(0, gamma_log_std^2)).
    pub gamma_log_std: f64,
    /// Voxel noise: sigma range and application probability.
    pub noise_sigma_range: [f64; 2],
    pub noise_prob: f64,
    /// Resolution simulation: isotropic and per-axis anisotropic spacing
    /// ranges (mm) and the probability of the anisotropic branch.
    pub iso_spacing_range: [f64; 2],
    pub aniso_spacing_range: [f64; 2],
    pub aniso_prob: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            native_spacing_mm: 0.35,
            rotation_deg: 15.0,
            scale_range: [0.85, 1.15],
            shear: 0.012,
            translation_mm: 5.0,
            svf_std_mm: 2.0,
            svf_control_dims: [10, 10, 10],
            svf_integration_steps: 7,
            gmm_mean_range: [0.0, 255.0],
            gmm_std_range: [0.0, 35.0],
            label_groups: BTreeMap::new(),
            bias_control_dims: [4, 4, 4],
            bias_log_std: 0.3,
            gamma_log_std: 0.4,
            noise_sigma_range: [0.0, 100.0],
            noise_prob: 0.95,
            iso_spacing_range: [0.35, 3.5],
            aniso_spacing_range: [0.35, 5.0],
            aniso_prob: 0.5,
        }
    }
}

impl SynthesisConfig {
    /// A config with every augmentation disabled: the pair reduces to the
    /// input labels plus normalized GMM means.
    pub fn degenerate() -> Self {
        Self {
            rotation_deg: 0.0,
            scale_range: [1.0, 1.0],
            shear: 0.0,
            translation_mm: 0.0,
            svf_std_mm: 0.0,
            gmm_std_range: [0.0, 0.0],
            bias_log_std: 0.0,
            gamma_log_std: 0.0,
            noise_sigma_range: [0.0, 0.0],
            noise_prob: 0.0,
            iso_spacing_range: [0.35, 0.35],
            aniso_spacing_range: [0.35, 0.35],
            aniso_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_range = |name: &str, r: [f64; 2]| {
            if r[0] > r[1] || !r[0].is_finite() || !r[1].is_finite() {
                Err(Error::InvalidSynthesisConfig(format!("{name} range {r:?} needs lo <= hi")))
            } else {
                Ok(())
            }
        };
        check_range("scale", self.scale_range)?;
        check_range("gmm_mean", self.gmm_mean_range)?;
        check_range("gmm_std", self.gmm_std_range)?;
        check_range("noise_sigma", self.noise_sigma_range)?;
        check_range("iso_spacing", self.iso_spacing_range)?;
        check_range("aniso_spacing", self.aniso_spacing_range)?;
        for (name, p) in [("noise_prob", self.noise_prob), ("aniso_prob", self.aniso_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSynthesisConfig(format!("{name} = {p} outside [0,1]")));
            }
        }
        if !(self.native_spacing_mm > 0.0) {
            return Err(Error::InvalidSynthesisConfig("native spacing must be > 0".into()));
        }
        for (name, v) in [
            ("rotation_deg", self.rotation_deg),
            ("shear", self.shear),
            ("translation_mm", self.translation_mm),
            ("svf_std_mm", self.svf_std_mm),
            ("bias_log_std", self.bias_log_std),
            ("gamma_log_std", self.gamma_log_std),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidSynthesisConfig(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.gmm_std_range[0] < 0.0 || self.noise_sigma_range[0] < 0.0 {
            return Err(Error::InvalidSynthesisConfig("std ranges must be >= 0".into()));
        }
        if self.svf_control_dims.iter().any(|&d| d < 2)
            || self.bias_control_dims.iter().any(|&d| d < 2)
        {
            return Err(Error::InvalidSynthesisConfig("control grids need >= 2 cells per axis".into()));
        }
        Ok(())
    }

    /// Load from a flat key-value file; unknown keys are hard errors.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut kv = KvFile::parse(path)?;
        let d = Self::default();
        let mut cfg = Self {
            native_spacing_mm: kv.take_or("native_spacing_mm", d.native_spacing_mm)?,
            rotation_deg: kv.take_or("rotation_deg", d.rotation_deg)?,
            scale_range: [
                kv.take_or("scale_min", d.scale_range[0])?,
                kv.take_or("scale_max", d.scale_range[1])?,
            ],
            shear: kv.take_or("shear", d.shear)?,
            translation_mm: kv.take_or("translation_mm", d.translation_mm)?,
            svf_std_mm: kv.take_or("svf_std_mm", d.svf_std_mm)?,
            svf_control_dims: to_dims(kv.take_list_or("svf_control_dims", &d.svf_control_dims)?)?,
            svf_integration_steps: kv.take_or("svf_integration_steps", d.svf_integration_steps)?,
            gmm_mean_range: [
                kv.take_or("gmm_mean_min", d.gmm_mean_range[0])?,
                kv.take_or("gmm_mean_max", d.gmm_mean_range[1])?,
            ],
            gmm_std_range: [
                kv.take_or("gmm_std_min", d.gmm_std_range[0])?,
                kv.take_or("gmm_std_max", d.gmm_std_range[1])?,
            ],
            label_groups: BTreeMap::new(),
            bias_control_dims: to_dims(kv.take_list_or("bias_control_dims", &d.bias_control_dims)?)?,
            bias_log_std: kv.take_or("bias_log_std", d.bias_log_std)?,
            gamma_log_std: kv.take_or("gamma_log_std", d.gamma_log_std)?,
            noise_sigma_range: [
                kv.take_or("noise_sigma_min", d.noise_sigma_range[0])?,
                kv.take_or("noise_sigma_max", d.noise_sigma_range[1])?,
            ],
            noise_prob: kv.take_or("noise_prob", d.noise_prob)?,
            iso_spacing_range: [
                kv.take_or("iso_spacing_min", d.iso_spacing_range[0])?,
                kv.take_or("iso_spacing_max", d.iso_spacing_range[1])?,
            ],
            aniso_spacing_range: [
                kv.take_or("aniso_spacing_min", d.aniso_spacing_range[0])?,
                kv.take_or("aniso_spacing_max", d.aniso_spacing_range[1])?,
            ],
            aniso_prob: kv.take_or("aniso_prob", d.aniso_prob)?,
        };
        if let Some(raw) = kv.take_raw("label_groups") {
            for pair in raw.split(',') {
                let (code, group) = pair.trim().split_once(':').ok_or_else(|| {
                    Error::InvalidSynthesisConfig(format!("label_groups entry \"{pair}\" needs code:group"))
                })?;
                let code: u32 = code.trim().parse().map_err(|_| {
                    Error::InvalidSynthesisConfig(format!("bad label code \"{code}\""))
                })?;
                let group: u32 = group.trim().parse().map_err(|_| {
                    Error::InvalidSynthesisConfig(format!("bad group id \"{group}\""))
                })?;
                cfg.label_groups.insert(code, group);
            }
        }
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable 64-bit digest of the config, recorded in checkpoints.
    pub fn digest(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        // FNV-1a
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Flat key-value pairs for run manifests.
    pub fn manifest_pairs(&self) -> Vec<(String, String)> {
        let dims = |d: [usize; 3]| format!("{},{},{}", d[0], d[1], d[2]);
        let mut pairs = vec![
            ("native_spacing_mm".into(), self.native_spacing_mm.to_string()),
            ("rotation_deg".into(), self.rotation_deg.to_string()),
            ("scale_min".into(), self.scale_range[0].to_string()),
            ("scale_max".into(), self.scale_range[1].to_string()),
            ("shear".into(), self.shear.to_string()),
            ("translation_mm".into(), self.translation_mm.to_string()),
            ("svf_std_mm".into(), self.svf_std_mm.to_string()),
            ("svf_control_dims".into(), dims(self.svf_control_dims)),
            ("svf_integration_steps".into(), self.svf_integration_steps.to_string()),
            ("gmm_mean_min".into(), self.gmm_mean_range[0].to_string()),
            ("gmm_mean_max".into(), self.gmm_mean_range[1].to_string()),
            ("gmm_std_min".into(), self.gmm_std_range[0].to_string()),
            ("gmm_std_max".into(), self.gmm_std_range[1].to_string()),
            ("bias_control_dims".into(), dims(self.bias_control_dims)),
            ("bias_log_std".into(), self.bias_log_std.to_string()),
            ("gamma_log_std".into(), self.gamma_log_std.to_string()),
            ("noise_sigma_min".into(), self.noise_sigma_range[0].to_string()),
            ("noise_sigma_max".into(), self.noise_sigma_range[1].to_string()),
            ("noise_prob".into(), self.noise_prob.to_string()),
            ("iso_spacing_min".into(), self.iso_spacing_range[0].to_string()),
            ("iso_spacing_max".into(), self.iso_spacing_range[1].to_string()),
            ("aniso_spacing_min".into(), self.aniso_spacing_range[0].to_string()),
            ("aniso_spacing_max".into(), self.aniso_spacing_range[1].to_string()),
            ("aniso_prob".into(), self.aniso_prob.to_string()),
        ];
        if !self.label_groups.is_empty() {
            let entries: Vec<String> =
                self.label_groups.iter().map(|(c, g)| format!("{c}:{g}")).collect();
            pairs.push(("label_groups".into(), entries.join(",")));
        }
        pairs
    }
}

fn to_dims(v: Vec<usize>) -> Result<[usize; 3]> {
    if v.len() != 3 {
        return Err(Error::InvalidSynthesisConfig(format!("expected 3 dims, got {}", v.len())));
    }
    Ok([v[0], v[1], v[2]])
}

/// Everything drawn while generating one pair.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub affine: AffineDraw,
    pub gmm: GmmDraw,
    pub noise: NoiseDraw,
    pub gamma: f64,
    pub resolution: ResolutionDraw,
}

/// Matched (augmented label, synthetic image) pair, deterministic in seed.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub label: LabelVolume,
    pub image: Volume<f32>,
    pub seed: u64,
    pub provenance: Provenance,
}

/// Run the full synthesis chain for one seed.
pub fn generate_training_pair(
    labels: &LabelVolume,
    cfg: &SynthesisConfig,
    seed: u64,
) -> Result<TrainingPair> {
    let grid = labels.geometry().clone();
    let field = sample_deformation(cfg, &grid, seed)?;
    let warped = warp_labels(labels, &field);
    assert!(warped.geometry().approx_eq(&grid, 1e-9), "warp left the native grid");

    let draw = sample_gmm(cfg, &labels.unique_codes(), seed);
    let img = synthesize_intensity(&warped, &draw, seed)?;
    assert!(img.geometry().approx_eq(&grid, 1e-9), "synthesis left the native grid");

    let img = apply_bias_field(&img, cfg, seed)?;
    assert!(img.geometry().approx_eq(&grid, 1e-9), "bias left the native grid");

    let (img, noise) = add_voxel_noise(&img, cfg, seed)?;
    assert!(img.geometry().approx_eq(&grid, 1e-9), "noise left the native grid");

    let (img, gamma) = normalize_and_gamma(&img, cfg, seed)?;
    assert!(img.geometry().approx_eq(&grid, 1e-9), "normalization left the native grid");

    let (img, resolution) = simulate_resolution(&img, cfg, seed)?;
    assert!(img.geometry().approx_eq(&grid, 1e-9), "resolution simulation left the native grid");

    Ok(TrainingPair {
        label: warped,
        image: img,
        seed,
        provenance: Provenance { affine: field.affine_draw().clone(), gmm: draw, noise, gamma, resolution },
    })
}
