//! The outer training loop: episodic meta-training with per-epoch validation
//! and a learning-rate decay schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::episodes::{augment_views, sample_task, AugmentationSpec, Dataset};
use crate::error::{Error, Result};
use crate::meta::eval::{meta_test, EvalOptions};
use crate::meta::inner::InnerLoopConfig;
use crate::meta::maml::{maml_task_gradient, msd_task_gradient, outer_step, MsdLossOptions};
use crate::metrics::MetricsRecord;
use crate::nn::{self, ModelSpec};
use crate::rng::{tag, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Maml,
    Fomaml,
    Msd,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algo::Maml => write!(f, "maml"),
            Algo::Fomaml => write!(f, "fomaml"),
            Algo::Msd => write!(f, "msd"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub outer_lr: f64,
    pub alpha: f64,
    pub task_batch: usize,
    pub views: usize,
    pub epochs: usize,
    /// Outer steps per epoch.
    pub tasks_per_epoch: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Validation episodes evaluated after each epoch.
    pub val_tasks: usize,
    pub use_adam: bool,
    pub use_kc: bool,
    pub consistency_on_softmax: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            outer_lr: 0.001,
            alpha: 1.0,
            task_batch: 2,
            views: 2,
            epochs: 10,
            tasks_per_epoch: 100,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            val_tasks: 100,
            use_adam: false,
            use_kc: true,
            consistency_on_softmax: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_lr > 0.0) {
            return Err(Error::Config(format!("outer_lr must be > 0, got {}", self.outer_lr)));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.task_batch == 0 {
            return Err(Error::Config("task_batch must be positive".into()));
        }
        if !(1..=8).contains(&self.views) {
            return Err(Error::Config(format!("views must be in 1..=8, got {}", self.views)));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be positive".into()));
        }
        Ok(())
    }

    /// Outer learning rate in effect during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.outer_lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Adam state for the optional adaptive outer optimizer.
#[derive(Debug, Clone)]
struct AdamState {
    m: ParamSet,
    v: ParamSet,
    t: i32,
}

impl AdamState {
    fn new(theta: &ParamSet) -> Self {
        AdamState { m: theta.zeros_like(), v: theta.zeros_like(), t: 0 }
    }

    fn step(&mut self, theta: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        self.m = self.m.zip_map(grads, |m, g| {
            let data = m.data().iter().zip(g.data()).map(|(m, g)| BETA1 * m + (1.0 - BETA1) * g).collect();
            Tensor::from_vec(m.shape().to_vec(), data)
        })?;
        self.v = self.v.zip_map(grads, |v, g| {
            let data = v.data().iter().zip(g.data()).map(|(v, g)| BETA2 * v + (1.0 - BETA2) * g * g).collect();
            Tensor::from_vec(v.shape().to_vec(), data)
        })?;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let mhat_vhat = self.m.zip_map(&self.v, |m, v| {
            let data = m
                .data()
                .iter()
                .zip(v.data())
                .map(|(m, v)| (m / bc1) / ((v / bc2).sqrt() + EPS))
                .collect();
            Tensor::from_vec(m.shape().to_vec(), data)
        })?;
        theta.add_scaled(&mhat_vhat, -lr)
    }
}

/// Datasets and episode layout for one training run.
pub struct TrainInputs<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub episode: EpisodeConfig,
    pub train_aug: Option<AugmentationSpec>,
    /// Augmentation used for the per-epoch validation pass (augmented-mode
    /// evaluation when present).
    pub val_aug: Option<AugmentationSpec>,
}

pub struct TrainOutput {
    pub final_params: ParamSet,
    pub best_params: ParamSet,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub records: Vec<MetricsRecord>,
}

/// Runs `epochs x tasks_per_epoch` outer steps, each averaging the meta
/// gradient of `task_batch` freshly sampled tasks, then validates. The whole
/// run is a pure function of its arguments; identical seeds give bitwise
/// identical parameters.
///
/// `on_epoch` fires after each epoch's validation with the current
/// parameters and the validation record (the harness uses it to write
/// checkpoints and stream the log).
pub fn meta_train(
    spec: &ModelSpec,
    inputs: &TrainInputs<'_>,
    algo: Algo,
    meta: &MetaConfig,
    inner: &InnerLoopConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &ParamSet, &MetricsRecord) -> Result<()>,
) -> Result<TrainOutput> {
    meta.validate()?;
    inner.validate()?;
    spec.validate()?;

    let inner_cfg = InnerLoopConfig {
        first_order: inner.first_order || algo == Algo::Fomaml,
        ..*inner
    };
    let msd_opts = MsdLossOptions {
        alpha: meta.alpha,
        use_kc: meta.use_kc,
        consistency_on_softmax: meta.consistency_on_softmax,
    };
    let root = Stream::new(seed);

    let mut theta = nn::init_params(spec, seed)?;
    let mut adam = meta.use_adam.then(|| AdamState::new(&theta));
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut records = Vec::new();

    for epoch in 0..meta.epochs {
        let beta = meta.lr_at_epoch(epoch);
        for step in 0..meta.tasks_per_epoch {
            let mut grad_acc = theta.zeros_like();
            for t in 0..meta.task_batch {
                let task_stream = root.with(&[tag::TASK, epoch as u64, step as u64, t as u64]);
                let task = sample_task(
                    inputs.train,
                    inputs.episode.way,
                    inputs.episode.shot,
                    inputs.episode.queries_per_class,
                    &mut task_stream.rng(),
                )?;
                let tg = match algo {
                    Algo::Maml | Algo::Fomaml => maml_task_gradient(&theta, &task, spec, &inner_cfg)?,
                    Algo::Msd => {
                        let views = augment_views(
                            &task,
                            inputs.train_aug.as_ref(),
                            meta.views,
                            &task_stream.child(tag::AUGMENT),
                        )?;
                        msd_task_gradient(&theta, &views, spec, &inner_cfg, &msd_opts)?
                    }
                };
                grad_acc = grad_acc.add_scaled(&tg.grads, 1.0)?;
            }
            let grads = grad_acc.map_values(|t| {
                Tensor::from_vec(
                    t.shape().to_vec(),
                    t.data().iter().map(|v| v / meta.task_batch as f64).collect(),
                )
            })?;
            theta = match adam.as_mut() {
                Some(state) => state.step(&theta, &grads, beta)?,
                None => outer_step(&theta, &grads, beta)?,
            };
        }

        let val_opts = EvalOptions {
            tasks: meta.val_tasks,
            aug: inputs.val_aug.clone(),
            views: meta.views,
            consistency_on_softmax: meta.consistency_on_softmax,
            noise_sensitivity_probes: 0,
            workers: 1,
            inner_steps_override: None,
        };
        let record = meta_test(
            &theta,
            inputs.val,
            spec,
            &inputs.episode,
            &inner_cfg,
            &val_opts,
            seed,
            &format!("epoch-{epoch}-val"),
            "",
        )?;
        on_epoch(epoch, &theta, &record)?;
        let is_better = match &best {
            None => true,
            Some((acc, _, _)) => record.accuracy_mean > *acc,
        };
        if is_better {
            best = Some((record.accuracy_mean, epoch, theta.snapshot()));
        }
        records.push(record);
    }

    let (best_val_accuracy, best_epoch, best_params) = match best {
        Some((acc, epoch, params)) => (acc, epoch, params),
        None => (f64::NAN, 0, theta.snapshot()),
    };
    Ok(TrainOutput {
        final_params: theta,
        best_params,
        best_epoch,
        best_val_accuracy,
        records,
    })
}
