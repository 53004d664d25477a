//! Model definitions: an MLP and a miniature four-block convolutional net,
//! both mapping inputs to class logits, with deterministic fan-in-scaled
//! initialization and the cross-entropy loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mlp,
    Conv4Mini,
}

/// Architecture description. `hidden` holds layer widths for the MLP and
/// per-block channel counts for the conv net. With `shared_head`, the
/// classifier keeps a single weight vector that is tiled across classes and
/// untied per episode by the meta layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_shape: Vec<usize>,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub shared_head: bool,
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_shape: vec![input_dim],
            hidden,
            num_classes,
            shared_head: false,
        }
    }

    pub fn conv4_mini(channels: usize, height: usize, width: usize, width_per_block: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Conv4Mini,
            input_shape: vec![channels, height, width],
            hidden: vec![width_per_block; 4],
            num_classes,
            shared_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match self.kind {
            ModelKind::Mlp => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return Err(Error::Config(format!(
                        "mlp input_shape must be [dim], got {:?}",
                        self.input_shape
                    )));
                }
            }
            ModelKind::Conv4Mini => {
                let [c, h, w] = match self.input_shape[..] {
                    [c, h, w] => [c, h, w],
                    _ => {
                        return Err(Error::Config(format!(
                            "conv input_shape must be [c, h, w], got {:?}",
                            self.input_shape
                        )))
                    }
                };
                if c == 0 || h == 0 || w == 0 {
                    return Err(Error::Config("conv extents must be positive".into()));
                }
                let blocks = self.hidden.len() as u32;
                let factor = 1usize << blocks;
                if h % factor != 0 || w % factor != 0 {
                    return Err(Error::Config(format!(
                        "conv input {h}x{w} not divisible by 2^{blocks} for pooling"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Flattened feature dimension entering the classifier head.
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            ModelKind::Mlp => *self.hidden.last().unwrap_or(&self.input_shape[0]),
            ModelKind::Conv4Mini => {
                let blocks = self.hidden.len() as u32;
                let h = self.input_shape[1] >> blocks;
                let w = self.input_shape[2] >> blocks;
                self.hidden.last().unwrap() * h * w
            }
        }
    }
}

/// Draws weights uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases
/// zero. Identical `(spec, seed)` yields a bitwise-identical set.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &[rng::tag::INIT]);
    let mut params = ParamSet::new();
    let mut uniform = |fan_in: usize, n: usize| -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
    };

    match spec.kind {
        ModelKind::Mlp => {
            let mut dim = self_input_dim(spec);
            for (i, &width) in spec.hidden.iter().enumerate() {
                params.push(
                    format!("fc{i}.w"),
                    Tensor::from_vec(vec![dim, width], uniform(dim, dim * width))?,
                )?;
                params.push(format!("fc{i}.b"), Tensor::zeros(&[width]))?;
                dim = width;
            }
        }
        ModelKind::Conv4Mini => {
            let mut channels = spec.input_shape[0];
            for (i, &width) in spec.hidden.iter().enumerate() {
                let fan_in = channels * 9;
                params.push(
                    format!("conv{i}.w"),
                    Tensor::from_vec(vec![width, channels, 3, 3], uniform(fan_in, width * fan_in))?,
                )?;
                params.push(format!("conv{i}.b"), Tensor::zeros(&[width]))?;
                channels = width;
            }
        }
    }

    let feat = spec.feature_dim();
    if spec.shared_head {
        params.push("head.w".into(), Tensor::from_vec(vec![feat], uniform(feat, feat))?)?;
    } else {
        params.push(
            "head.w".into(),
            Tensor::from_vec(vec![feat, spec.num_classes], uniform(feat, feat * spec.num_classes))?,
        )?;
    }
    params.push("head.b".into(), Tensor::zeros(&[spec.num_classes]))?;
    Ok(params)
}

fn self_input_dim(spec: &ModelSpec) -> usize {
    spec.input_shape[0]
}

fn check_batch_shape(spec: &ModelSpec, x: &Tensor) -> Result<usize> {
    let want = &spec.input_shape;
    let got = x.shape();
    if got.len() != want.len() + 1 || &got[1..] != want.as_slice() {
        return Err(Error::invalid_shape("predict", got, want));
    }
    Ok(got[0])
}

/// Class logits `[batch, num_classes]`; differentiable in `params` whenever
/// those are tracked.
pub fn predict(params: &ParamSet, spec: &ModelSpec, x: &Tensor) -> Result<Tensor> {
    let batch = check_batch_shape(spec, x)?;
    let features = match spec.kind {
        ModelKind::Mlp => {
            let mut h = x.detach();
            for i in 0..spec.hidden.len() {
                let w = named(params, &format!("fc{i}.w"))?;
                let b = named(params, &format!("fc{i}.b"))?;
                h = ops::relu(&ops::add(&ops::matmul(&h, w)?, &ops::expand_rows(b, batch)?)?)?;
            }
            h
        }
        ModelKind::Conv4Mini => {
            let mut h = x.detach();
            for i in 0..spec.hidden.len() {
                let w = named(params, &format!("conv{i}.w"))?;
                let b = named(params, &format!("conv{i}.b"))?;
                h = ops::mean_pool2(&ops::relu(&ops::conv2d_3x3(&h, w, Some(b))?)?)?;
            }
            ops::reshape(&h, &[batch, spec.feature_dim()])?
        }
    };
    let head_w = head_matrix(params, spec)?;
    let head_b = named(params, "head.b")?;
    ops::add(&ops::matmul(&features, &head_w)?, &ops::expand_rows(head_b, batch)?)
}

/// The `[feature_dim, num_classes]` classifier matrix: either the stored
/// matrix, or the shared vector tiled across classes.
pub fn head_matrix(params: &ParamSet, spec: &ModelSpec) -> Result<Tensor> {
    let w = named(params, "head.w")?;
    match w.shape() {
        [_, _] => Ok(w.clone()),
        [feat] => {
            let col = ops::reshape(w, &[*feat, 1])?;
            let ones = Tensor::filled(&[1, spec.num_classes], 1.0);
            ops::matmul(&col, &ones)
        }
        other => Err(Error::invalid_shape("head_matrix", other, &[spec.feature_dim()])),
    }
}

fn named<'a>(params: &'a ParamSet, name: &str) -> Result<&'a Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::Contract(format!("missing parameter {name:?}")))
}

/// Mean over the batch of the negative log-softmax at the true label.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (batch, classes) = match logits.shape() {
        [b, c] => (*b, *c),
        other => return Err(Error::invalid_shape("cross_entropy", other, &[labels.len(), 0])),
    };
    if labels.len() != batch {
        return Err(Error::invalid_shape("cross_entropy", logits.shape(), &[labels.len()]));
    }
    let mut onehot = vec![0.0; batch * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Contract(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        onehot[i * classes + y] = 1.0;
    }
    let mask = Tensor::from_vec(vec![batch, classes], onehot)?;
    let picked = ops::sum(&ops::mul(&ops::log_softmax(logits)?, &mask)?)?;
    ops::scale(&picked, -1.0 / batch as f64)
}

/// Fraction of rows whose argmax matches the label, in percent.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (batch, classes) = match logits.shape() {
        [b, c] => (*b, *c),
        other => return Err(Error::invalid_shape("accuracy", other, &[labels.len(), 0])),
    };
    if labels.len() != batch || batch == 0 {
        return Err(Error::invalid_shape("accuracy", logits.shape(), &[labels.len()]));
    }
    let data = logits.data();
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = &data[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for j in 1..classes {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == y {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / batch as f64)
}
