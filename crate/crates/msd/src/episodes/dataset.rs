//! Labeled datasets and N-way K-shot task sampling.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// What one sample's flat feature vector means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Vector { dim: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl Modality {
    pub fn sample_len(&self) -> usize {
        match self {
            Modality::Vector { dim } => *dim,
            Modality::Image { channels, height, width } => channels * height * width,
        }
    }

    /// Shape of a batch of `n` samples.
    pub fn batch_shape(&self, n: usize) -> Vec<usize> {
        match self {
            Modality::Vector { dim } => vec![n, *dim],
            Modality::Image { channels, height, width } => vec![n, *channels, *height, *width],
        }
    }
}

/// How the synthetic generator split each feature vector, kept so noise-aware
/// code (augmentation, sensitivity probes) knows which channels are which.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInfo {
    pub dim_target: usize,
    pub dim_noise: usize,
    pub noise_scale: f64,
    pub class_margin: f64,
}

/// Immutable labeled dataset: per-class sample lists of flat feature vectors.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub modality: Modality,
    pub classes: Vec<Vec<Vec<f64>>>,
    pub synthetic: Option<SyntheticInfo>,
    /// Source path per sample, present for folder-loaded data (manifests).
    pub paths: Option<Vec<Vec<String>>>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// New dataset holding only the class range `[start, end)`.
    pub fn class_slice(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.classes.len() {
            return Err(Error::Capacity(format!(
                "class slice {start}..{end} out of range for {} classes",
                self.classes.len()
            )));
        }
        Ok(Dataset {
            modality: self.modality,
            classes: self.classes[start..end].to_vec(),
            synthetic: self.synthetic,
            paths: self.paths.as_ref().map(|p| p[start..end].to_vec()),
        })
    }

    /// Line-oriented index of the dataset: `path<TAB>class` per sample, in
    /// class then file order. Only available for folder-loaded datasets.
    pub fn manifest(&self) -> Result<String> {
        let paths = self.paths.as_ref().ok_or_else(|| {
            Error::Contract("manifest requires a folder-loaded dataset".into())
        })?;
        let mut out = String::new();
        for (class, files) in paths.iter().enumerate() {
            for f in files {
                out.push_str(f);
                out.push('\t');
                out.push_str(&class.to_string());
                out.push('\n');
            }
        }
        Ok(out)
    }
}

/// One few-shot episode. Labels are remapped to `[0, way)`; sample identities
/// `(class, index)` are kept so disjointness is checkable.
#[derive(Debug, Clone)]
pub struct Task {
    pub support_x: Tensor,
    pub support_y: Vec<usize>,
    pub query_x: Tensor,
    pub query_y: Vec<usize>,
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub support_ids: Vec<(usize, usize)>,
    pub query_ids: Vec<(usize, usize)>,
    pub modality: Modality,
    pub synthetic: Option<SyntheticInfo>,
}

/// Samples an N-way K-shot task: N distinct classes, then K support and
/// Q query instances per class without replacement.
pub fn sample_task(
    dataset: &Dataset,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Task> {
    if way < 2 {
        return Err(Error::Contract(format!("way must be at least 2, got {way}")));
    }
    if dataset.num_classes() < way {
        return Err(Error::Capacity(format!(
            "dataset has {} classes, task needs {way}",
            dataset.num_classes()
        )));
    }
    let needed = shot + queries_per_class;
    let mut class_order: Vec<usize> = (0..dataset.num_classes()).collect();
    class_order.shuffle(rng);
    let chosen = &class_order[..way];

    let sample_len = dataset.modality.sample_len();
    let mut support_x = Vec::with_capacity(way * shot * sample_len);
    let mut query_x = Vec::with_capacity(way * queries_per_class * sample_len);
    let mut support_y = Vec::new();
    let mut query_y = Vec::new();
    let mut support_ids = Vec::new();
    let mut query_ids = Vec::new();

    for (episode_label, &class) in chosen.iter().enumerate() {
        let pool = &dataset.classes[class];
        if pool.len() < needed {
            return Err(Error::Capacity(format!(
                "class {class} has {} samples, task needs {needed}",
                pool.len()
            )));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(rng);
        for &i in &idx[..shot] {
            support_x.extend_from_slice(&pool[i]);
            support_y.push(episode_label);
            support_ids.push((class, i));
        }
        for &i in &idx[shot..needed] {
            query_x.extend_from_slice(&pool[i]);
            query_y.push(episode_label);
            query_ids.push((class, i));
        }
    }

    Ok(Task {
        support_x: Tensor::from_vec(dataset.modality.batch_shape(way * shot), support_x)?,
        support_y,
        query_x: Tensor::from_vec(dataset.modality.batch_shape(way * queries_per_class), query_x)?,
        query_y,
        way,
        shot,
        queries_per_class,
        support_ids,
        query_ids,
        modality: dataset.modality,
        synthetic: dataset.synthetic,
    })
}

/// Convenience for tests: a small deterministic vector dataset.
#[cfg(test)]
pub(crate) fn toy_dataset(classes: usize, per_class: usize, dim: usize) -> Dataset {
    let mut data = Vec::new();
    for c in 0..classes {
        let mut samples = Vec::new();
        for s in 0..per_class {
            samples.push((0..dim).map(|d| (c * 100 + s * 10 + d) as f64).collect());
        }
        data.push(samples);
    }
    Dataset {
        modality: Modality::Vector { dim },
        classes: data,
        synthetic: None,
        paths: None,
    }
}

/// Convenience for tests: a small random vector dataset with values scaled
/// for direct use as network input.
#[cfg(test)]
pub(crate) fn toy_random(classes: usize, per_class: usize, dim: usize, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, &[90]);
    let classes = (0..classes)
        .map(|c| {
            (0..per_class)
                .map(|_| (0..dim).map(|d| rng.gen_range(-1.0..1.0) + 0.3 * (c + d) as f64 % 2.0).collect())
                .collect()
        })
        .collect();
    Dataset {
        modality: Modality::Vector { dim },
        classes,
        synthetic: None,
        paths: None,
    }
}
