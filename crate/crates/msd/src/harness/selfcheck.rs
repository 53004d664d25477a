//! Fast self-contained oracle checks, runnable from the CLI: differentiation
//! against finite differences, the closed-form meta-gradient, consistency
//! identities, checkpoint round trips, and training determinism.

use rand::Rng;

use crate::autodiff::{backward, finite_diff_gradient, max_relative_error, ops, Graph, ParamSet, Tensor};
use crate::episodes::dataset::{Dataset, Modality};
use crate::error::Result;
use crate::meta::{
    inner_update_fn, meta_train, Algo, EpisodeConfig, InnerLoopConfig, MetaConfig, TrainInputs,
};
use crate::nn::{self, ModelSpec};
use crate::rng::stream;

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs every check, printing one PASS/FAIL line each, and returns the
/// number of failures.
pub fn run_selfcheck() -> usize {
    let checks: Vec<(&'static str, fn() -> Result<(bool, String)>)> = vec![
        ("operator-gradients", check_operator_gradients),
        ("second-order-quadratic", check_second_order_quadratic),
        ("consistency-identities", check_consistency_identities),
        ("checkpoint-roundtrip", check_checkpoint_roundtrip),
        ("training-determinism", check_training_determinism),
    ];
    let mut failures = 0;
    for (name, f) in checks {
        let result = match f() {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult { name, passed: false, detail: e.to_string() },
        };
        println!(
            "{} {} - {}",
            if result.passed { "PASS" } else { "FAIL" },
            result.name,
            result.detail
        );
        if !result.passed {
            failures += 1;
        }
    }
    failures
}

fn random_params(entries: &[(&str, Vec<usize>)], seed: u64) -> ParamSet {
    let mut rng = stream(seed, &[991]);
    let mut p = ParamSet::new();
    for (name, shape) in entries {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p.push(name.to_string(), Tensor::from_vec(shape.clone(), data).unwrap())
            .unwrap();
    }
    p
}

fn check_operator_gradients() -> Result<(bool, String)> {
    // composite objective exercising the main operator set
    let params = random_params(&[("a", vec![3, 4]), ("b", vec![4, 2]), ("v", vec![2])], 7);
    let objective = |p: &ParamSet| -> Result<Tensor> {
        let a = p.get("a").unwrap();
        let b = p.get("b").unwrap();
        let v = p.get("v").unwrap();
        let h = ops::relu(&ops::matmul(a, b)?)?;
        let h = ops::add(&h, &ops::expand_rows(v, 3)?)?;
        let ls = ops::log_softmax(&h)?;
        let s = ops::sum(&ops::mul(&ls, &h)?)?;
        let d = ops::dot(v, v)?;
        ops::add(&ops::scale(&s, 0.1)?, &ops::sqrt(&ops::add(&d, &Tensor::scalar(1.0))?)?)
    };
    let graph = Graph::new();
    let tracked = params.tracked_in(&graph);
    let analytic = backward(&objective(&tracked)?, &tracked, false)?;
    let numeric = finite_diff_gradient(|p| objective(p)?.item(), &params, 1e-5)?;
    let err = max_relative_error(&analytic, &numeric)?;
    Ok((err < 1e-4, format!("max relative error {err:.2e}")))
}

fn check_second_order_quadratic() -> Result<(bool, String)> {
    let mut theta = ParamSet::new();
    theta.push("theta".into(), Tensor::scalar(1.0))?;
    let quadratic = |p: &ParamSet| ops::mul(p.get("theta").unwrap(), p.get("theta").unwrap());

    let graph = Graph::new();
    let leaves = theta.tracked_in(&graph);
    let adapted = inner_update_fn(&leaves, 1, 0.05, true, quadratic)?;
    let second = backward(&quadratic(&adapted)?, &leaves, false)?
        .get("theta")
        .unwrap()
        .item()?;

    let detached = inner_update_fn(&theta, 1, 0.05, false, quadratic)?;
    let g2 = Graph::new();
    let fo_leaves = detached.tracked_in(&g2);
    let first = backward(&quadratic(&fo_leaves)?, &fo_leaves, false)?
        .get("theta")
        .unwrap()
        .item()?;

    let ok = (second - 1.62).abs() < 1e-9 && (first - 1.8).abs() < 1e-9;
    Ok((ok, format!("second-order {second:.9}, first-order {first:.9}")))
}

fn check_consistency_identities() -> Result<(bool, String)> {
    let l = Tensor::from_vec(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3])?;
    let (ident, _) = crate::metrics::consistency_score(&[l.clone(), l.clone()])?;
    let a = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0])?;
    let b = Tensor::from_vec(vec![1, 2], vec![0.0, 1.0])?;
    let (ortho, _) = crate::metrics::consistency_score(&[a.clone(), b.clone()])?;
    let (scaled, _) = crate::metrics::consistency_score(&[ops::scale(&a, 7.0)?, ops::scale(&b, 7.0)?])?;
    let ok = ident == 1.0
        && (ortho - 0.5_f64.sqrt()).abs() < 1e-9
        && (ortho - scaled).abs() < 1e-12;
    Ok((ok, format!("identity {ident}, orthogonal {ortho:.6}")))
}

fn check_checkpoint_roundtrip() -> Result<(bool, String)> {
    let spec = ModelSpec::mlp(6, vec![5], 3);
    let params = nn::init_params(&spec, 99)?;
    let bytes = params.to_bytes();
    let back = ParamSet::from_bytes(&bytes)?;
    let ok = back.bitwise_eq(&params) && back.to_bytes() == bytes;
    Ok((ok, format!("{} bytes", bytes.len())))
}

fn check_training_determinism() -> Result<(bool, String)> {
    let mut rng = stream(5, &[992]);
    let classes: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| (0..8).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        .collect();
    let ds = Dataset { modality: Modality::Vector { dim: 6 }, classes, synthetic: None, paths: None };
    let spec = ModelSpec::mlp(6, vec![5], 3);
    let inputs = TrainInputs {
        train: &ds,
        val: &ds,
        episode: EpisodeConfig { way: 3, shot: 1, queries_per_class: 2 },
        train_aug: None,
        val_aug: None,
    };
    let meta = MetaConfig { epochs: 1, tasks_per_epoch: 2, val_tasks: 2, ..Default::default() };
    let inner = InnerLoopConfig { steps: 2, inner_lr: 0.05, first_order: false };
    let run = || meta_train(&spec, &inputs, Algo::Msd, &meta, &inner, 4, |_, _, _| Ok(()));
    let a = run()?;
    let b = run()?;
    let ok = a.final_params.bitwise_eq(&b.final_params);
    Ok((ok, "two identical seeded runs".into()))
}
