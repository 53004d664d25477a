//! Quantitative evaluation: accuracy with confidence intervals, the
//! knowledge-consistency score, knowledge change between parameter sets, and
//! the noise-sensitivity estimate the synthetic benchmark makes measurable.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, ParamSet, Tensor};
use crate::episodes::SyntheticInfo;
use crate::error::{Error, Result};
use crate::meta::inner::{inner_update, InnerLoopConfig};
use crate::meta::losses::knowledge_consistency;
use crate::nn::{self, ModelSpec};

/// Per-task measurements, later aggregated into a [`MetricsRecord`].
#[derive(Debug, Clone)]
pub struct TaskRecord {
    /// Query accuracy in percent (mean over views in augmented mode).
    pub accuracy: f64,
    pub consistency: Option<f64>,
    pub consistency_softmax: Option<f64>,
    pub kc_loss: Option<f64>,
    pub cls_loss: f64,
    pub degeneracies: usize,
    pub noise_sensitivity: Option<f64>,
}

/// One row of the run log: aggregate statistics over a batch of tasks plus
/// the run metadata that makes the row attributable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub context: String,
    pub task_count: usize,
    pub accuracy_mean: f64,
    pub accuracy_ci95: f64,
    pub consistency_mean: Option<f64>,
    pub consistency_softmax_mean: Option<f64>,
    pub kc_loss_mean: Option<f64>,
    pub cls_loss_mean: f64,
    pub degeneracy_count: usize,
    pub noise_sensitivity: Option<f64>,
    pub fingerprint: String,
    pub seed: u64,
}

impl MetricsRecord {
    pub fn to_jsonl_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Column order of [`MetricsRecord::to_csv_row`]. Optional fields are
    /// left empty when absent.
    pub const CSV_HEADER: &'static str = "context,task_count,accuracy_mean,accuracy_ci95,consistency_mean,consistency_softmax_mean,kc_loss_mean,cls_loss_mean,degeneracy_count,noise_sensitivity,fingerprint,seed";

    pub fn to_csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.context,
            self.task_count,
            self.accuracy_mean,
            self.accuracy_ci95,
            opt(&self.consistency_mean),
            opt(&self.consistency_softmax_mean),
            opt(&self.kc_loss_mean),
            self.cls_loss_mean,
            self.degeneracy_count,
            opt(&self.noise_sensitivity),
            self.fingerprint,
            self.seed
        )
    }
}

/// Raw mean-cosine consistency of a set of query outputs, plus the count of
/// degenerate zero-norm terms. The score is the metric reported in result
/// tables (as percent); the trainable loss is `1 - score`.
pub fn consistency_score(query_logits: &[Tensor]) -> Result<(f64, usize)> {
    let detached: Vec<Tensor> = query_logits.iter().map(|t| t.detach()).collect();
    let out = knowledge_consistency(&detached)?;
    Ok((out.score, out.degeneracies))
}

/// Output change between two parameter sets on a probe batch:
/// `predict(theta2, x) - predict(theta1, x)`.
pub fn knowledge_change(
    theta1: &ParamSet,
    theta2: &ParamSet,
    spec: &ModelSpec,
    probes: &Tensor,
) -> Result<Tensor> {
    let before = nn::predict(&theta1.snapshot(), spec, probes)?;
    let after = nn::predict(&theta2.snapshot(), spec, probes)?;
    ops::sub(&after, &before)
}

/// Which vector norm summarizes an output-change difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L1,
    L2,
}

/// Monte-Carlo estimate of how much of the knowledge change induced by
/// fine-tuning on `support` lives in the noise channels.
///
/// Each probe pair must differ only in noise channels. The model is adapted
/// on the support set, and for each pair the norm of
/// `knowledge_change(x) - knowledge_change(x_perturbed)` is averaged. A model
/// that never reads noise channels scores exactly zero.
pub fn noise_sensitivity(
    theta: &ParamSet,
    support: (&Tensor, &[usize]),
    spec: &ModelSpec,
    inner_cfg: &InnerLoopConfig,
    probe_pairs: &[(Tensor, Tensor)],
    info: &SyntheticInfo,
    norm: NormKind,
) -> Result<f64> {
    if probe_pairs.is_empty() {
        return Err(Error::Contract("noise_sensitivity needs probe pairs".into()));
    }
    let dim = info.dim_target + info.dim_noise;
    for (x, xp) in probe_pairs {
        if x.shape() != [dim] || xp.shape() != [dim] {
            return Err(Error::invalid_shape("noise_sensitivity probe", x.shape(), &[dim]));
        }
        for d in 0..info.dim_target {
            if x.data()[d].to_bits() != xp.data()[d].to_bits() {
                return Err(Error::Modality(
                    "probe pair differs outside the noise channels".into(),
                ));
            }
        }
    }

    let adapted = inner_update(&theta.snapshot(), support.0, support.1, spec, inner_cfg, false)?;

    // batch all probes in one pass: originals then perturbed
    let n = probe_pairs.len();
    let mut flat = Vec::with_capacity(2 * n * dim);
    for (x, _) in probe_pairs {
        flat.extend_from_slice(x.data());
    }
    for (_, xp) in probe_pairs {
        flat.extend_from_slice(xp.data());
    }
    let batch = Tensor::from_vec(vec![2 * n, dim], flat)?;
    let change = knowledge_change(theta, &adapted, spec, &batch)?;
    let classes = change.shape()[1];

    let mut total = 0.0;
    for i in 0..n {
        let a = &change.data()[i * classes..(i + 1) * classes];
        let b = &change.data()[(n + i) * classes..(n + i + 1) * classes];
        let term = match norm {
            NormKind::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
            NormKind::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        };
        total += term;
    }
    Ok(total / n as f64)
}

/// Builds noise-channel probe pairs from a batch of samples: the perturbed
/// partner keeps target channels bitwise and resamples the noise block.
pub fn make_noise_probe_pairs(
    samples: &Tensor,
    info: &SyntheticInfo,
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<(Tensor, Tensor)>> {
    use rand_distr::StandardNormal;
    let dim = info.dim_target + info.dim_noise;
    let rows = match samples.shape() {
        [r, d] if *d == dim => *r,
        other => return Err(Error::invalid_shape("make_noise_probe_pairs", other, &[0, dim])),
    };
    let count = count.min(rows);
    if count == 0 {
        return Err(Error::Contract("probe pair count must be positive".into()));
    }
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let row = samples.data()[i * dim..(i + 1) * dim].to_vec();
        let mut pert = row.clone();
        for v in pert[info.dim_target..].iter_mut() {
            let z: f64 = rand::Rng::sample(rng, StandardNormal);
            *v = info.noise_scale * z;
        }
        pairs.push((Tensor::from_vec(vec![dim], row)?, Tensor::from_vec(vec![dim], pert)?));
    }
    Ok(pairs)
}

/// Aggregates per-task records: means plus a 95% interval computed as
/// `1.96 * stddev / sqrt(T)` over the per-task accuracies.
pub fn aggregate(
    records: &[TaskRecord],
    context: &str,
    fingerprint: &str,
    seed: u64,
) -> Result<MetricsRecord> {
    if records.is_empty() {
        return Err(Error::Contract("aggregate needs at least one task record".into()));
    }
    let t = records.len() as f64;

    let accuracy_mean = records.iter().map(|r| r.accuracy).sum::<f64>() / t;
    let variance = records
        .iter()
        .map(|r| (r.accuracy - accuracy_mean).powi(2))
        .sum::<f64>()
        / t;
    let accuracy_ci95 = if records.len() == 1 { 0.0 } else { 1.96 * variance.sqrt() / t.sqrt() };

    let opt_mean = |get: &dyn Fn(&TaskRecord) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = records.iter().filter_map(get).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    Ok(MetricsRecord {
        context: context.to_string(),
        task_count: records.len(),
        accuracy_mean,
        accuracy_ci95,
        consistency_mean: opt_mean(&|r| r.consistency),
        consistency_softmax_mean: opt_mean(&|r| r.consistency_softmax),
        kc_loss_mean: opt_mean(&|r| r.kc_loss),
        cls_loss_mean: records.iter().map(|r| r.cls_loss).sum::<f64>() / t,
        degeneracy_count: records.iter().map(|r| r.degeneracies).sum(),
        noise_sensitivity: opt_mean(&|r| r.noise_sensitivity),
        fingerprint: fingerprint.to_string(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn record(acc: f64) -> TaskRecord {
        TaskRecord {
            accuracy: acc,
            consistency: Some(0.9),
            consistency_softmax: None,
            kc_loss: Some(0.1),
            cls_loss: 1.0,
            degeneracies: 1,
            noise_sensitivity: None,
        }
    }

    #[test]
    fn aggregate_zero_variance() {
        let out = aggregate(&[record(100.0), record(100.0)], "t", "f", 0).unwrap();
        assert_eq!(out.accuracy_mean, 100.0);
        assert_eq!(out.accuracy_ci95, 0.0);
        assert_eq!(out.degeneracy_count, 2);
    }

    #[test]
    fn aggregate_two_tasks_interval() {
        let out = aggregate(&[record(40.0), record(60.0)], "t", "f", 0).unwrap();
        assert_eq!(out.accuracy_mean, 50.0);
        let expect = 1.96 * 10.0 / 2.0_f64.sqrt();
        assert!((out.accuracy_ci95 - expect).abs() < 1e-9, "{}", out.accuracy_ci95);
    }

    #[test]
    fn aggregate_single_task_has_zero_interval() {
        let out = aggregate(&[record(73.0)], "t", "f", 0).unwrap();
        assert_eq!(out.accuracy_ci95, 0.0);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a = vec![record(10.0), record(50.0), record(90.0)];
        let b = vec![record(90.0), record(10.0), record(50.0)];
        let ra = aggregate(&a, "t", "f", 0).unwrap();
        let rb = aggregate(&b, "t", "f", 0).unwrap();
        assert!((ra.accuracy_mean - rb.accuracy_mean).abs() < 1e-12);
        assert!((ra.accuracy_ci95 - rb.accuracy_ci95).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert!(matches!(aggregate(&[], "t", "f", 0), Err(Error::Contract(_))));
    }

    #[test]
    fn consistency_score_identity_and_orthogonal() {
        let l = Tensor::from_vec(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let (c, d) = consistency_score(&[l.clone(), l]).unwrap();
        assert_eq!(c, 1.0);
        assert_eq!(d, 0);
        let a = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let (c, _) = consistency_score(&[a, b]).unwrap();
        assert!((c - 0.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn consistency_score_is_scale_invariant() {
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 0.4, -0.2, 0.8]).unwrap();
        let b = Tensor::from_vec(vec![2, 2], vec![0.3, 1.1, 0.5, -0.6]).unwrap();
        let (base, _) = consistency_score(&[a.clone(), b.clone()]).unwrap();
        let sa = ops::scale(&a, 42.0).unwrap();
        let sb = ops::scale(&b, 42.0).unwrap();
        let (scaled, _) = consistency_score(&[sa, sb]).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    mod knowledge {
        use super::*;
        use crate::episodes::{generate_synthetic, sample_task, SyntheticSpec};
        use crate::nn::ModelSpec;

        fn setup() -> (ModelSpec, ParamSet, Tensor) {
            let spec = ModelSpec::mlp(6, vec![4], 3);
            let theta = nn::init_params(&spec, 3).unwrap();
            let mut rng = stream(9, &[1]);
            let probes = Tensor::from_vec(
                vec![4, 6],
                (0..24).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect(),
            )
            .unwrap();
            (spec, theta, probes)
        }

        #[test]
        fn equal_params_give_zero_change() {
            let (spec, theta, probes) = setup();
            let change = knowledge_change(&theta, &theta, &spec, &probes).unwrap();
            assert!(change.data().iter().all(|v| *v == 0.0));
        }

        #[test]
        fn change_is_antisymmetric_and_additive() {
            let (spec, theta, probes) = setup();
            let theta2 = theta.map_values(|t| ops::scale(&t.detach(), 1.1)).unwrap();
            let theta3 = theta.map_values(|t| ops::scale(&t.detach(), 0.8)).unwrap();
            let ab = knowledge_change(&theta, &theta2, &spec, &probes).unwrap();
            let ba = knowledge_change(&theta2, &theta, &spec, &probes).unwrap();
            for (x, y) in ab.data().iter().zip(ba.data()) {
                assert!((x + y).abs() < 1e-12);
            }
            let ac = knowledge_change(&theta, &theta3, &spec, &probes).unwrap();
            let bc = knowledge_change(&theta2, &theta3, &spec, &probes).unwrap();
            // telescoping: (theta -> theta2) + (theta2 -> theta3) = theta -> theta3
            for i in 0..ac.numel() {
                let lhs = ab.data()[i] + bc.data()[i];
                assert!((lhs - ac.data()[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn noise_sensitivity_zero_for_noise_blind_model() {
            // A model whose first-layer weights on noise channels are zero
            // both before and after the inner update. Keeping them zero
            // through adaptation requires zero-noise support data (the
            // weight gradient is input-proportional), so the generator runs
            // with noise_scale 0 while the probes perturb at scale 1.
            let spec = SyntheticSpec {
                num_classes_total: 6,
                dim_target: 3,
                dim_noise: 4,
                noise_scale: 0.0,
                samples_per_class: 10,
                ..Default::default()
            };
            let ds = generate_synthetic(&spec, 4).unwrap();
            let info = ds.synthetic.unwrap();
            let mspec = ModelSpec::mlp(spec.input_dim(), vec![5], 3);
            let theta = nn::init_params(&mspec, 5).unwrap();
            let blinded = theta
                .map_values_named(|name, t| {
                    if name == "fc0.w" {
                        let mut data = t.data().to_vec();
                        // rows are input dims; zero the noise rows
                        for d in spec.dim_target..spec.input_dim() {
                            for j in 0..5 {
                                data[d * 5 + j] = 0.0;
                            }
                        }
                        Tensor::from_vec(t.shape().to_vec(), data)
                    } else {
                        Ok(t.detach())
                    }
                })
                .unwrap();
            let task = sample_task(&ds, 3, 2, 3, &mut stream(5, &[2])).unwrap();
            let probe_info = SyntheticInfo { noise_scale: 1.0, ..info };
            let pairs =
                make_noise_probe_pairs(&task.query_x, &probe_info, 5, &mut stream(5, &[3])).unwrap();
            let cfg = InnerLoopConfig { steps: 4, inner_lr: 0.05, first_order: false };
            let ns = noise_sensitivity(
                &blinded,
                (&task.support_x, &task.support_y),
                &mspec,
                &cfg,
                &pairs,
                &info,
                NormKind::L1,
            )
            .unwrap();
            assert_eq!(ns, 0.0);
        }

        #[test]
        fn noise_sensitivity_zero_for_zero_scale_and_zero_perturbation() {
            let spec = SyntheticSpec {
                num_classes_total: 6,
                dim_target: 3,
                dim_noise: 4,
                noise_scale: 0.0,
                samples_per_class: 10,
                ..Default::default()
            };
            let ds = generate_synthetic(&spec, 4).unwrap();
            let info = ds.synthetic.unwrap();
            let mspec = ModelSpec::mlp(spec.input_dim(), vec![5], 3);
            let theta = nn::init_params(&mspec, 5).unwrap();
            let task = sample_task(&ds, 3, 2, 3, &mut stream(5, &[2])).unwrap();
            // probes resample noise at scale 0: identical pairs
            let pairs =
                make_noise_probe_pairs(&task.query_x, &info, 5, &mut stream(5, &[3])).unwrap();
            let cfg = InnerLoopConfig { steps: 2, inner_lr: 0.05, first_order: false };
            let ns = noise_sensitivity(
                &theta,
                (&task.support_x, &task.support_y),
                &mspec,
                &cfg,
                &pairs,
                &info,
                NormKind::L1,
            )
            .unwrap();
            assert_eq!(ns, 0.0);
        }

        #[test]
        fn noise_sensitivity_positive_for_random_model_and_matches_recompute() {
            let spec = SyntheticSpec {
                num_classes_total: 6,
                dim_target: 3,
                dim_noise: 4,
                samples_per_class: 10,
                ..Default::default()
            };
            let ds = generate_synthetic(&spec, 4).unwrap();
            let info = ds.synthetic.unwrap();
            let mspec = ModelSpec::mlp(spec.input_dim(), vec![5], 3);
            let theta = nn::init_params(&mspec, 6).unwrap();
            let task = sample_task(&ds, 3, 2, 3, &mut stream(6, &[2])).unwrap();
            let pairs =
                make_noise_probe_pairs(&task.query_x, &info, 4, &mut stream(6, &[3])).unwrap();
            let cfg = InnerLoopConfig { steps: 3, inner_lr: 0.05, first_order: false };
            let ns = noise_sensitivity(
                &theta,
                (&task.support_x, &task.support_y),
                &mspec,
                &cfg,
                &pairs,
                &info,
                NormKind::L1,
            )
            .unwrap();
            assert!(ns > 0.0);

            // from-scratch recomputation with per-probe predictions
            let adapted =
                inner_update(&theta, &task.support_x, &task.support_y, &mspec, &cfg, false).unwrap();
            let mut expect = 0.0;
            for (x, xp) in &pairs {
                let one = |v: &Tensor| -> Vec<f64> {
                    let b = Tensor::from_vec(vec![1, spec.input_dim()], v.data().to_vec()).unwrap();
                    let before = nn::predict(&theta, &mspec, &b).unwrap();
                    let after = nn::predict(&adapted, &mspec, &b).unwrap();
                    before.data().iter().zip(after.data()).map(|(p, q)| q - p).collect()
                };
                let da = one(x);
                let db = one(xp);
                expect += da.iter().zip(&db).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
            expect /= pairs.len() as f64;
            assert!((ns - expect).abs() < 1e-10, "{ns} vs {expect}");
        }

        #[test]
        fn probe_pairs_must_match_in_target_channels() {
            let info = SyntheticInfo { dim_target: 2, dim_noise: 2, noise_scale: 1.0, class_margin: 4.0 };
            let mspec = ModelSpec::mlp(4, vec![3], 2);
            let theta = nn::init_params(&mspec, 7).unwrap();
            let sx = Tensor::from_vec(vec![2, 4], vec![0.1; 8]).unwrap();
            let sy = vec![0, 1];
            let x = Tensor::from_vec(vec![4], vec![1.0, 2.0, 0.0, 0.0]).unwrap();
            let bad = Tensor::from_vec(vec![4], vec![1.0, 2.5, 0.0, 0.0]).unwrap();
            let cfg = InnerLoopConfig::default().with_steps(1);
            let err = noise_sensitivity(
                &theta,
                (&sx, &sy),
                &mspec,
                &cfg,
                &[(x, bad)],
                &info,
                NormKind::L1,
            );
            assert!(matches!(err, Err(Error::Modality(_))));
        }
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let r = MetricsRecord {
            context: "eval".into(),
            task_count: 3,
            accuracy_mean: 50.0,
            accuracy_ci95: 1.5,
            consistency_mean: None,
            consistency_softmax_mean: None,
            kc_loss_mean: None,
            cls_loss_mean: 0.7,
            degeneracy_count: 0,
            noise_sensitivity: None,
            fingerprint: "abc".into(),
            seed: 9,
        };
        let header_cols = MetricsRecord::CSV_HEADER.split(',').count();
        let row_cols = r.to_csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
        let line = r.to_jsonl_line().unwrap();
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
