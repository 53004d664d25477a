// Desk-scale benchmark calibration across generator noise scales.

use std::time::Instant;

use msd::harness::{run_eval, run_train, synthetic_benchmark_config, DataConfig, EvalRequest};
use msd::meta::Algo;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise_scales: Vec<f64> = args[1].split(',').map(|s| s.parse().unwrap()).collect();
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let tmp = std::env::temp_dir().join("msd-calibrate");

    for &ns in &noise_scales {
        let mut results = Vec::new();
        for algo in [Algo::Maml, Algo::Msd] {
            let t0 = Instant::now();
            let mut cfg = synthetic_benchmark_config(algo, seed, tmp.join(format!("{algo}-{seed}-{ns}")));
            if let DataConfig::Synthetic { spec, .. } = &mut cfg.data {
                spec.noise_scale = ns;
            }
            let artifacts = run_train(&cfg).unwrap();
            let record = run_eval(&cfg, &EvalRequest {
                checkpoint: artifacts.best_checkpoint.clone(),
                tasks: None,
                augmented: true,
                steps_override: None,
            }).unwrap();
            println!(
                "noise {ns} seed {seed} {algo}: acc {:.2} cons {:.4} ns {:.4} ({:.0}s)",
                record.accuracy_mean,
                record.consistency_mean.unwrap(),
                record.noise_sensitivity.unwrap(),
                t0.elapsed().as_secs_f64(),
            );
            results.push(record);
        }
        let gap_c = results[1].consistency_mean.unwrap() - results[0].consistency_mean.unwrap();
        let gap_a = results[1].accuracy_mean - results[0].accuracy_mean;
        let gap_n = results[0].noise_sensitivity.unwrap() - results[1].noise_sensitivity.unwrap();
        println!("  => gaps: consistency {gap_c:+.4} accuracy {gap_a:+.2} noise-sens(maml-msd) {gap_n:+.4}");
    }
}
