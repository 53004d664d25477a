//! Run configuration: a single versioned JSON document. Unknown keys are
//! rejected so hyperparameters cannot drift silently, and every run log row
//! carries a fingerprint of the exact configuration it came from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::episodes::{self, AugmentationSpec, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::meta::{Algo, EpisodeConfig, InnerLoopConfig, MetaConfig};
use crate::nn::ModelSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Where episodes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// Synthetic target/noise benchmark, split into the first
    /// `train_classes` and the remaining classes for meta-test.
    Synthetic {
        spec: SyntheticSpec,
        train_classes: usize,
        /// Seed offset for the generator so data can be held fixed across
        /// training seeds.
        data_seed: u64,
    },
    /// Folders of P6 images, one subdirectory per class.
    ImageFolder { train_path: PathBuf, test_path: PathBuf },
}

/// Augmentation selection by name, with the image recipes desk-scaled to the
/// dataset's resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AugConfig {
    Strong,
    Weak,
    NoiseChannel {
        #[serde(default)]
        scale: Option<f64>,
    },
}

impl AugConfig {
    pub fn to_spec(&self, image_side: usize) -> AugmentationSpec {
        match self {
            AugConfig::Strong => AugmentationSpec::strong(),
            AugConfig::Weak => AugmentationSpec::weak(image_side),
            AugConfig::NoiseChannel { scale } => AugmentationSpec::noise_channel(*scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub algo: Algo,
    pub model: ModelSpec,
    pub data: DataConfig,
    pub episode: EpisodeConfig,
    pub inner: InnerLoopConfig,
    pub meta: MetaConfig,
    #[serde(default)]
    pub train_aug: Option<AugConfig>,
    #[serde(default)]
    pub test_aug: Option<AugConfig>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub eval_tasks: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub noise_sensitivity_probes: usize,
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.inner.validate()?;
        self.meta.validate()?;
        if self.episode.way < 2 || self.episode.shot == 0 || self.episode.queries_per_class == 0 {
            return Err(Error::Config(format!(
                "episode layout {:?} invalid",
                self.episode
            )));
        }
        if self.eval_tasks == 0 {
            return Err(Error::Config("eval_tasks must be positive".into()));
        }
        if let DataConfig::Synthetic { spec, train_classes, .. } = &self.data {
            spec.validate()?;
            if *train_classes == 0 || *train_classes >= spec.num_classes_total {
                return Err(Error::Config(format!(
                    "train_classes {} must split {} classes into two non-empty parts",
                    train_classes, spec.num_classes_total
                )));
            }
        }
        // The consistency term only sees distinct views when support data is
        // augmented; with augmentation off it is identically zero.
        if self.algo == Algo::Msd && self.meta.use_kc && self.train_aug.is_none() {
            eprintln!(
                "warning: knowledge-consistency loss with augmentation off is ineffective (views are identical)"
            );
        }
        Ok(())
    }

    /// Short content hash of the canonical JSON encoding. Execution details
    /// that cannot affect results (output directory, worker count) are
    /// normalized out, so the fingerprint identifies the experiment itself.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.workers = 1;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Materializes train/test datasets.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataConfig::Synthetic { spec, train_classes, data_seed } => {
                let full = episodes::generate_synthetic(spec, *data_seed)?;
                let train = full.class_slice(0, *train_classes)?;
                let test = full.class_slice(*train_classes, spec.num_classes_total)?;
                Ok((train, test))
            }
            DataConfig::ImageFolder { train_path, test_path } => {
                let train = episodes::load_image_folder(train_path)?;
                let test = episodes::load_image_folder(test_path)?;
                Ok((train, test))
            }
        }
    }

    /// Image side length for desk-scaling crop recipes (1 for vector data).
    pub fn image_side(&self) -> usize {
        match self.model.input_shape[..] {
            [_, h, _] => h,
            _ => 1,
        }
    }

    pub fn train_aug_spec(&self) -> Option<AugmentationSpec> {
        self.train_aug.as_ref().map(|a| a.to_spec(self.image_side()))
    }

    pub fn test_aug_spec(&self) -> Option<AugmentationSpec> {
        self.test_aug.as_ref().map(|a| a.to_spec(self.image_side()))
    }
}

/// A ready-to-run desk-scale benchmark configuration on the synthetic
/// dataset: 20 train / 5 test classes, noise-channel augmentation.
pub fn synthetic_benchmark_config(algo: Algo, seed: u64, out_dir: PathBuf) -> RunConfig {
    let spec = SyntheticSpec::default();
    RunConfig {
        schema_version: SCHEMA_VERSION,
        algo,
        model: ModelSpec::mlp(spec.input_dim(), vec![32], 5),
        data: DataConfig::Synthetic { spec, train_classes: 20, data_seed: 1 },
        episode: EpisodeConfig { way: 5, shot: 1, queries_per_class: 15 },
        inner: InnerLoopConfig::default(),
        meta: MetaConfig::default(),
        train_aug: match algo {
            Algo::Msd => Some(AugConfig::NoiseChannel { scale: None }),
            _ => None,
        },
        test_aug: Some(AugConfig::NoiseChannel { scale: None }),
        seed,
        out_dir,
        eval_tasks: 200,
        workers: 1,
        noise_sensitivity_probes: 8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        synthetic_benchmark_config(Algo::Msd, 7, PathBuf::from("/tmp/run"))
    }

    #[test]
    fn round_trip_and_validate() {
        let cfg = sample();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::to_value(sample()).unwrap();
        v.as_object_mut().unwrap().insert("outer_lr_typo".into(), 1.0.into());
        let back: std::result::Result<RunConfig, _> = serde_json::from_value(v);
        assert!(back.is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut cfg = sample();
        cfg.schema_version = 99;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn fingerprints_separate_configs() {
        let a = sample();
        let mut b = sample();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.meta.outer_lr = 0.002;
        assert_ne!(a.fingerprint(), b.fingerprint());
        let mut c = sample();
        c.seed = 8;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn synthetic_split_shapes() {
        let cfg = sample();
        let (train, test) = cfg.load_datasets().unwrap();
        assert_eq!(train.num_classes(), 20);
        assert_eq!(test.num_classes(), 5);
        assert!(train.synthetic.is_some());
    }

    #[test]
    fn bad_split_is_rejected() {
        let mut cfg = sample();
        if let DataConfig::Synthetic { train_classes, .. } = &mut cfg.data {
            *train_classes = 25;
        }
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
