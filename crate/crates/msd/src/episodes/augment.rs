//! Augmentation pipelines over support data.
//!
//! Only support data is ever augmented; query data is shared untouched across
//! all views of a task. Image pipelines follow the strong/weak recipes
//! (random resize-crop or center-crop, color jitter, grayscale, gaussian
//! blur, horizontal flip, each with its own probability); the noise-channel
//! pipeline resamples the synthetic noise block and leaves target channels
//! bitwise unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::episodes::dataset::{Modality, Task};
use crate::episodes::image;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Parameters of an image augmentation pipeline, applied in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAugParams {
    /// Random resized crop, area scale range. `None` disables.
    pub resize_crop_scale: Option<(f64, f64)>,
    /// Center crop to this side length. `None` disables.
    pub center_crop: Option<usize>,
    /// (brightness, contrast, saturation, hue) strengths.
    pub color_jitter: (f64, f64, f64, f64),
    pub color_jitter_p: f64,
    pub grayscale_p: f64,
    /// Blur sigma is drawn around `blur_expectation` with `blur_variance`.
    pub blur_expectation: f64,
    pub blur_variance: f64,
    pub blur_p: f64,
    pub hflip_p: f64,
}

/// An augmentation recipe. `Strong` and `Weak` carry the image pipeline
/// parameters; `NoiseChannel` resamples synthetic noise channels with an
/// optional scale override (defaulting to the generator's own scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AugmentationSpec {
    Strong(ImageAugParams),
    Weak(ImageAugParams),
    NoiseChannel { scale: Option<f64> },
}

impl AugmentationSpec {
    /// The strong-augmentation recipe: resize-crop scale 0.5-1, color jitter
    /// (0.8, 0.8, 0.8, 0.2) at p 0.8, grayscale at 0.2, blur E 0.1 / Var 2 at
    /// 0.5, horizontal flip at 0.5.
    pub fn strong() -> Self {
        AugmentationSpec::Strong(ImageAugParams {
            resize_crop_scale: Some((0.5, 1.0)),
            center_crop: None,
            color_jitter: (0.8, 0.8, 0.8, 0.2),
            color_jitter_p: 0.8,
            grayscale_p: 0.2,
            blur_expectation: 0.1,
            blur_variance: 2.0,
            blur_p: 0.5,
            hflip_p: 0.5,
        })
    }

    /// The weak-augmentation recipe: full-size center crop, color jitter
    /// (0.4, 0.4, 0.4, 0.1) at p 0.8, grayscale at 0.2, blur E 0 / Var 1 at
    /// 0.5, horizontal flip at 0.5. `image_side` scales the crop to the
    /// dataset's resolution (the reference recipe crops at full frame).
    pub fn weak(image_side: usize) -> Self {
        AugmentationSpec::Weak(ImageAugParams {
            resize_crop_scale: None,
            center_crop: Some(image_side),
            color_jitter: (0.4, 0.4, 0.4, 0.1),
            color_jitter_p: 0.8,
            grayscale_p: 0.2,
            blur_expectation: 0.0,
            blur_variance: 1.0,
            blur_p: 0.5,
            hflip_p: 0.5,
        })
    }

    pub fn noise_channel(scale: Option<f64>) -> Self {
        AugmentationSpec::NoiseChannel { scale }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AugmentationSpec::Strong(p) | AugmentationSpec::Weak(p) => {
                for (name, prob) in [
                    ("color_jitter_p", p.color_jitter_p),
                    ("grayscale_p", p.grayscale_p),
                    ("blur_p", p.blur_p),
                    ("hflip_p", p.hflip_p),
                ] {
                    if !(0.0..=1.0).contains(&prob) {
                        return Err(Error::Config(format!("{name} = {prob} outside [0, 1]")));
                    }
                }
                if let Some((lo, hi)) = p.resize_crop_scale {
                    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                        return Err(Error::Config(format!(
                            "resize_crop_scale ({lo}, {hi}) is not a valid range"
                        )));
                    }
                }
                Ok(())
            }
            AugmentationSpec::NoiseChannel { scale } => {
                if let Some(s) = scale {
                    if *s < 0.0 {
                        return Err(Error::Config(format!("noise scale {s} must be >= 0")));
                    }
                }
                Ok(())
            }
        }
    }
}

fn apply_image_pipeline(
    img: &Tensor,
    p: &ImageAugParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let mut out = img.detach();
    if let Some(scale) = p.resize_crop_scale {
        out = image::resize_crop(&out, scale, rng)?;
    }
    if let Some(size) = p.center_crop {
        let side = out.shape()[1];
        if size != side {
            return Err(Error::invalid_shape("center_crop in pipeline", out.shape(), &[3, size, size]));
        }
        out = image::center_crop(&out, size)?;
    }
    if p.color_jitter_p > 0.0 && rng.gen_range(0.0..1.0) < p.color_jitter_p {
        out = image::color_jitter(&out, p.color_jitter, rng)?;
    }
    if p.grayscale_p > 0.0 && rng.gen_range(0.0..1.0) < p.grayscale_p {
        out = image::grayscale(&out)?;
    }
    if p.blur_p > 0.0 && rng.gen_range(0.0..1.0) < p.blur_p {
        let sigma = image::draw_blur_sigma(p.blur_expectation, p.blur_variance, rng);
        out = image::gaussian_blur(&out, sigma)?;
    }
    if p.hflip_p > 0.0 && rng.gen_range(0.0..1.0) < p.hflip_p {
        out = image::hflip(&out)?;
    }
    Ok(out)
}

/// Applies `spec` to one support batch. For image data the batch is
/// `[n, 3, h, w]`; each sample gets its own pipeline draws from `rng`.
pub fn augment_batch(
    batch: &Tensor,
    modality: Modality,
    synthetic: Option<crate::episodes::dataset::SyntheticInfo>,
    spec: &AugmentationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    spec.validate()?;
    match (spec, modality) {
        (AugmentationSpec::Strong(p) | AugmentationSpec::Weak(p), Modality::Image { channels, height, width }) => {
            let n = batch.shape()[0];
            let plane = channels * height * width;
            let mut out = Vec::with_capacity(batch.numel());
            for i in 0..n {
                let img = Tensor::from_vec(
                    vec![channels, height, width],
                    batch.data()[i * plane..(i + 1) * plane].to_vec(),
                )?;
                out.extend_from_slice(apply_image_pipeline(&img, p, rng)?.data());
            }
            Tensor::from_vec(batch.shape().to_vec(), out)
        }
        (AugmentationSpec::Strong(_) | AugmentationSpec::Weak(_), Modality::Vector { .. }) => {
            Err(Error::Modality("image augmentation on vector data".into()))
        }
        (AugmentationSpec::NoiseChannel { scale }, Modality::Vector { dim }) => {
            let info = synthetic.ok_or_else(|| {
                Error::Modality("noise-channel augmentation needs synthetic data".into())
            })?;
            let scale = scale.unwrap_or(info.noise_scale);
            let n = batch.shape()[0];
            let mut out = batch.data().to_vec();
            for i in 0..n {
                let base = i * dim + info.dim_target;
                for v in out[base..base + info.dim_noise].iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = scale * z;
                }
            }
            Tensor::from_vec(batch.shape().to_vec(), out)
        }
        (AugmentationSpec::NoiseChannel { .. }, Modality::Image { .. }) => {
            Err(Error::Modality("noise-channel augmentation on image data".into()))
        }
    }
}

/// A task together with `n` augmented views of its support data. Query data
/// and all labels are shared across views.
#[derive(Debug, Clone)]
pub struct AugmentedTaskSet {
    pub views: Vec<Tensor>,
    pub base: Task,
}

impl AugmentedTaskSet {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }
}

/// Builds `n` independently augmented support views. `stream` should be the
/// per-task stream; view `i` draws from `stream.child(i)`, so views are
/// reproducible regardless of evaluation order. Without a spec the views are
/// plain copies of the support batch.
pub fn augment_views(
    task: &Task,
    spec: Option<&AugmentationSpec>,
    n: usize,
    stream: &Stream,
) -> Result<AugmentedTaskSet> {
    if n < 1 {
        return Err(Error::Contract("view count must be at least 1".into()));
    }
    let mut views = Vec::with_capacity(n);
    for i in 0..n {
        let view = match spec {
            None => task.support_x.detach(),
            Some(spec) => {
                let mut rng = stream.child(i as u64).rng();
                augment_batch(&task.support_x, task.modality, task.synthetic, spec, &mut rng)?
            }
        };
        views.push(view);
    }
    Ok(AugmentedTaskSet { views, base: task.clone() })
}
