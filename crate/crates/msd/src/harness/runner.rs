//! Run orchestration: train, evaluate, inner-step sweeps, and the ablation
//! grid, all writing reproducible artifacts (checkpoints, JSONL log, CSV
//! summary) under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::harness::checkpoint::{checkpoint, restore};
use crate::harness::config::{AugConfig, RunConfig};
use crate::meta::{meta_test, meta_train, Algo, EvalOptions, TrainInputs, TrainOutput};
use crate::metrics::MetricsRecord;

pub struct TrainArtifacts {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub metrics_jsonl: PathBuf,
    pub metrics_csv: PathBuf,
    pub output: TrainOutput,
}

fn write_rows(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&r.to_jsonl_line()?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_csv(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut text = String::from(MetricsRecord::CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Meta-trains per the config, writing per-epoch and best/final checkpoints,
/// the JSONL metrics log, a CSV summary, and (for folder datasets) the
/// dataset manifests.
pub fn run_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;

    let (train, test) = cfg.load_datasets()?;
    if train.paths.is_some() {
        fs::write(out.join("train_manifest.txt"), train.manifest()?)?;
        fs::write(out.join("test_manifest.txt"), test.manifest()?)?;
    }

    let inputs = TrainInputs {
        train: &train,
        val: &test,
        episode: cfg.episode,
        train_aug: cfg.train_aug_spec(),
        val_aug: cfg.test_aug_spec(),
    };

    let output = meta_train(
        &cfg.model,
        &inputs,
        cfg.algo,
        &cfg.meta,
        &cfg.inner,
        cfg.seed,
        |epoch, params, _record| checkpoint(params, &out.join(format!("epoch-{epoch}.ckpt"))),
    )?;

    let final_checkpoint = out.join("final.ckpt");
    let best_checkpoint = out.join("best.ckpt");
    checkpoint(&output.final_params, &final_checkpoint)?;
    checkpoint(&output.best_params, &best_checkpoint)?;

    let mut records = output.records.clone();
    for r in &mut records {
        r.fingerprint = fp.clone();
    }
    let metrics_jsonl = out.join("metrics.jsonl");
    let metrics_csv = out.join("metrics.csv");
    write_rows(&metrics_jsonl, &records)?;
    write_csv(&metrics_csv, &records)?;

    Ok(TrainArtifacts {
        final_checkpoint,
        best_checkpoint,
        metrics_jsonl,
        metrics_csv,
        output: TrainOutput { records, ..output },
    })
}

pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub tasks: Option<usize>,
    pub augmented: bool,
    pub steps_override: Option<usize>,
}

/// Evaluates a checkpoint on the meta-test split, appending the record to
/// the run log and returning it.
pub fn run_eval(cfg: &RunConfig, req: &EvalRequest) -> Result<MetricsRecord> {
    cfg.validate()?;
    let params = restore(&req.checkpoint)?;
    let (_, test) = cfg.load_datasets()?;
    let aug = if req.augmented {
        let spec = cfg.test_aug_spec().ok_or_else(|| {
            Error::Config("augmented evaluation requested but test_aug is not set".into())
        })?;
        Some(spec)
    } else {
        None
    };
    let opts = EvalOptions {
        tasks: req.tasks.unwrap_or(cfg.eval_tasks),
        aug,
        views: cfg.meta.views,
        consistency_on_softmax: cfg.meta.consistency_on_softmax,
        noise_sensitivity_probes: if test.synthetic.is_some() { cfg.noise_sensitivity_probes } else { 0 },
        workers: cfg.workers,
        inner_steps_override: req.steps_override,
    };
    let context = match (req.augmented, req.steps_override) {
        (true, Some(k)) => format!("eval-augmented-steps-{k}"),
        (true, None) => "eval-augmented".to_string(),
        (false, Some(k)) => format!("eval-standard-steps-{k}"),
        (false, None) => "eval-standard".to_string(),
    };
    let record = meta_test(
        &params,
        &test,
        &cfg.model,
        &cfg.episode,
        &cfg.inner,
        &opts,
        cfg.seed,
        &context,
        &cfg.fingerprint(),
    )?;
    append_record(&cfg.out_dir.join("eval.jsonl"), &record)?;
    Ok(record)
}

fn append_record(path: &Path, record: &MetricsRecord) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    use std::io::Write;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", record.to_jsonl_line()?)?;
    Ok(())
}

/// Table-style accuracy line for one evaluation record.
pub fn format_eval_line(cfg: &RunConfig, record: &MetricsRecord) -> String {
    let mut line = format!(
        "{} {}way{}shot: {:.2} \u{00b1} {:.2} (over {} tasks)",
        cfg.algo,
        cfg.episode.way,
        cfg.episode.shot,
        record.accuracy_mean,
        record.accuracy_ci95,
        record.task_count
    );
    if let Some(c) = record.consistency_mean {
        line.push_str(&format!(", consistency {:.2}", 100.0 * c));
    }
    if let Some(ns) = record.noise_sensitivity {
        line.push_str(&format!(", noise-sensitivity {ns:.4}"));
    }
    line
}

/// Evaluates a checkpoint at each fine-tuning step count, augmented mode
/// when the config carries a test augmentation. One record per step value.
pub fn run_sweep(cfg: &RunConfig, checkpoint_path: &Path, steps: &[usize], tasks: Option<usize>) -> Result<Vec<MetricsRecord>> {
    if steps.is_empty() {
        return Err(Error::Config("sweep needs at least one step value".into()));
    }
    let mut rows = Vec::with_capacity(steps.len());
    for &k in steps {
        let record = run_eval(
            cfg,
            &EvalRequest {
                checkpoint: checkpoint_path.to_path_buf(),
                tasks,
                augmented: cfg.test_aug.is_some(),
                steps_override: Some(k),
            },
        )?;
        rows.push(record);
    }
    let out = cfg.out_dir.join("sweep.jsonl");
    write_rows(&out, &rows)?;
    write_csv(&cfg.out_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// One cell of the ablation grid.
pub struct AblationRow {
    pub second_order: bool,
    pub augmentation: bool,
    pub kc_loss: bool,
    pub record: MetricsRecord,
}

impl AblationRow {
    pub fn format_line(&self) -> String {
        let mark = |b: bool| if b { "on " } else { "off" };
        format!(
            "second-order {} | augmentation {} | kc-loss {} => accuracy {:.2} \u{00b1} {:.2}{}",
            mark(self.second_order),
            mark(self.augmentation),
            mark(self.kc_loss),
            self.record.accuracy_mean,
            self.record.accuracy_ci95,
            match self.record.consistency_mean {
                Some(c) => format!(", consistency {:.2}", 100.0 * c),
                None => String::new(),
            }
        )
    }
}

/// The four-row ablation grid: first-order full method, plain second-order
/// baseline without augmentation or consistency loss, augmented views
/// without the consistency loss, and the full method. Each row trains from
/// scratch with the base config's seed and is evaluated in augmented mode.
pub fn run_ablate(cfg: &RunConfig, eval_tasks: Option<usize>) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let aug: AugConfig = cfg
        .train_aug
        .clone()
        .or(cfg.test_aug.clone())
        .ok_or_else(|| Error::Config("ablation needs an augmentation recipe in the config".into()))?;

    // (second order, augmentation, kc loss)
    let grid = [(false, true, true), (true, false, false), (true, true, false), (true, true, true)];
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &(second_order, augmentation, kc_loss)) in grid.iter().enumerate() {
        let mut row_cfg = cfg.clone();
        row_cfg.out_dir = cfg.out_dir.join(format!("ablate-row-{i}"));
        row_cfg.inner.first_order = !second_order;
        row_cfg.train_aug = augmentation.then(|| aug.clone());
        row_cfg.meta.use_kc = kc_loss;
        // without augmented views the method degenerates to its baseline
        row_cfg.algo = if augmentation || kc_loss { Algo::Msd } else { Algo::Maml };
        if row_cfg.algo == Algo::Maml && !second_order {
            row_cfg.algo = Algo::Fomaml;
        }

        let artifacts = run_train(&row_cfg)?;
        let record = run_eval(
            &row_cfg,
            &EvalRequest {
                checkpoint: artifacts.best_checkpoint.clone(),
                tasks: eval_tasks,
                augmented: row_cfg.test_aug.is_some(),
                steps_override: None,
            },
        )?;
        rows.push(AblationRow { second_order, augmentation, kc_loss, record });
    }

    let records: Vec<MetricsRecord> = rows
        .iter()
        .map(|r| {
            let mut rec = r.record.clone();
            rec.context = format!(
                "ablate-so-{}-aug-{}-kc-{}",
                r.second_order as u8, r.augmentation as u8, r.kc_loss as u8
            );
            rec
        })
        .collect();
    write_rows(&cfg.out_dir.join("ablate.jsonl"), &records)?;
    write_csv(&cfg.out_dir.join("ablate.csv"), &records)?;
    Ok(rows)
}

/// Restores a checkpoint and re-evaluates prediction determinism: used by
/// cross-process reproducibility checks.
pub fn restore_params(path: &Path) -> Result<ParamSet> {
    restore(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::synthetic_benchmark_config;
    use crate::episodes::SyntheticSpec;

    fn tiny_cfg(algo: Algo, dir: &Path) -> RunConfig {
        let mut cfg = synthetic_benchmark_config(algo, 3, dir.to_path_buf());
        // shrink everything: this is a smoke-scale run
        cfg.data = crate::harness::config::DataConfig::Synthetic {
            spec: SyntheticSpec { num_classes_total: 8, samples_per_class: 12, ..Default::default() },
            train_classes: 5,
            data_seed: 1,
        };
        cfg.model = crate::nn::ModelSpec::mlp(40, vec![8], 3);
        cfg.episode = crate::meta::EpisodeConfig { way: 3, shot: 1, queries_per_class: 3 };
        cfg.inner.steps = 2;
        cfg.meta.epochs = 2;
        cfg.meta.tasks_per_epoch = 2;
        cfg.meta.val_tasks = 3;
        cfg.eval_tasks = 4;
        cfg.noise_sensitivity_probes = 2;
        cfg
    }

    #[test]
    fn train_writes_expected_artifacts_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_a = tiny_cfg(Algo::Msd, &dir.path().join("a"));
        let cfg_b = tiny_cfg(Algo::Msd, &dir.path().join("b"));
        let a = run_train(&cfg_a).unwrap();
        let b = run_train(&cfg_b).unwrap();
        for name in ["final.ckpt", "best.ckpt", "epoch-0.ckpt", "epoch-1.ckpt", "metrics.jsonl", "metrics.csv"] {
            let fa = std::fs::read(dir.path().join("a").join(name)).unwrap();
            let fb = std::fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(fa, fb, "artifact {name} differs between identical runs");
        }
        assert!(a.output.final_params.bitwise_eq(&b.output.final_params));
        // log rows carry fingerprint and seed
        let text = std::fs::read_to_string(&a.metrics_jsonl).unwrap();
        let fp = cfg_a.fingerprint();
        for line in text.lines() {
            let rec: MetricsRecord = serde_json::from_str(line).unwrap();
            assert_eq!(rec.fingerprint, fp);
            assert_eq!(rec.seed, 3);
        }
    }

    #[test]
    fn eval_standard_and_augmented_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(Algo::Maml, dir.path());
        let artifacts = run_train(&cfg).unwrap();
        let std_rec = run_eval(
            &cfg,
            &EvalRequest {
                checkpoint: artifacts.final_checkpoint.clone(),
                tasks: Some(3),
                augmented: false,
                steps_override: None,
            },
        )
        .unwrap();
        assert!(std_rec.consistency_mean.is_none());
        let aug_rec = run_eval(
            &cfg,
            &EvalRequest {
                checkpoint: artifacts.final_checkpoint.clone(),
                tasks: Some(3),
                augmented: true,
                steps_override: None,
            },
        )
        .unwrap();
        assert!(aug_rec.consistency_mean.is_some());
        assert!(aug_rec.noise_sensitivity.is_some());
        let line = format_eval_line(&cfg, &aug_rec);
        assert!(line.contains("3way1shot"), "{line}");
        assert!(line.contains("consistency"), "{line}");
    }

    #[test]
    fn sweep_emits_one_record_per_step() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(Algo::Msd, dir.path());
        let artifacts = run_train(&cfg).unwrap();
        let rows = run_sweep(&cfg, &artifacts.final_checkpoint, &[1, 5], Some(3)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].context, "eval-augmented-steps-1");
        assert_eq!(rows[1].context, "eval-augmented-steps-5");
        assert!(dir.path().join("sweep.jsonl").exists());
    }

    #[test]
    fn ablation_grid_has_four_rows_in_shape() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(Algo::Msd, dir.path());
        let rows = run_ablate(&cfg, Some(3)).unwrap();
        assert_eq!(rows.len(), 4);
        let shapes: Vec<_> = rows.iter().map(|r| (r.second_order, r.augmentation, r.kc_loss)).collect();
        assert_eq!(
            shapes,
            vec![(false, true, true), (true, false, false), (true, true, false), (true, true, true)]
        );
        assert!(dir.path().join("ablate.jsonl").exists());
    }
}
