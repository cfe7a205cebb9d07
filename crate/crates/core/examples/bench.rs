//! Scratch benchmark for pipeline tuning (not part of the test suite).

use std::time::Instant;

use rfgest_core::eval::{SplitKind, SplitSpec};
use rfgest_core::pipeline::{run_experiment, PipelineConfig};
use rfgest_core::synth::{generate_dataset, SynthConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let hidden: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.003);
    let subjects: u32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5);

    let clean = args.get(5).map(|s| s == "clean").unwrap_or(false);
    let mut synth_cfg = SynthConfig {
        subjects,
        ..SynthConfig::default()
    };
    if clean {
        synth_cfg.dropout.frame_drop_prob = vec![0.0; 8];
        synth_cfg.dropout.reading_drop_prob = 0.0;
        synth_cfg.channel.noise_var = 0.0;
        synth_cfg.channel.n_paths = 1;
    }
    let t0 = Instant::now();
    let samples = generate_dataset(&synth_cfg).unwrap();
    println!("generated {} samples in {:.2?}", samples.len(), t0.elapsed());
    let avg_t: f64 =
        samples.iter().map(|s| s.readings.len() as f64).sum::<f64>() / samples.len() as f64;
    println!("mean readings per sample: {avg_t:.1}");

    let mut cfg = PipelineConfig::default();
    if std::env::var("AGG").as_deref() == Ok("sum") {
        cfg.model.aggregation = rfgest_core::gnn::Aggregation::Sum;
    }
    cfg.model.hidden_dim = hidden;
    cfg.train.epochs = epochs;
    cfg.train.learning_rate = lr;
    cfg.train.batch_size = 32;
    cfg.train.weight_decay = 1e-4;

    // Feature scale probe.
    let conditioned = rfgest_core::pipeline::condition_samples(&samples, &cfg);
    let mut rss_all = Vec::new();
    let mut phase_all = Vec::new();
    for g in conditioned.iter().take(200) {
        for f in &g.frames {
            rss_all.extend_from_slice(&f.rss);
            phase_all.extend_from_slice(&f.phase);
        }
    }
    rss_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    phase_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |v: &[f64], p: f64| v[((v.len() - 1) as f64 * p) as usize];
    println!(
        "rss   p0 {:.3} p1 {:.3} p50 {:.3} p99 {:.3} p100 {:.3}",
        pct(&rss_all, 0.0), pct(&rss_all, 0.01), pct(&rss_all, 0.5), pct(&rss_all, 0.99), pct(&rss_all, 1.0)
    );
    println!(
        "phase p0 {:.3} p1 {:.3} p50 {:.3} p99 {:.3} p100 {:.3}",
        pct(&phase_all, 0.0), pct(&phase_all, 0.01), pct(&phase_all, 0.5), pct(&phase_all, 0.99), pct(&phase_all, 1.0)
    );

    let spec = SplitSpec {
        kind: SplitKind::WithinSubject { test_fraction: 0.2 },
        seed: 42,
    };

    // 1-NN oracle on flattened (imputed) tensors: data separability check.
    {
        use rfgest_core::eval::split;
        use rfgest_core::graph::build_tensor;
        use rfgest_core::pipeline::impute_split;
        let (train_idx, test_idx) = split(&samples, &spec).unwrap();
        let (gestures, _, _) =
            impute_split(&conditioned, &train_idx, &cfg, &std::collections::BTreeSet::new());
        let tensors: Vec<Vec<f64>> = gestures
            .iter()
            .map(|g| build_tensor(g).unwrap().values().to_vec())
            .collect();
        let mut correct = 0usize;
        for &ti in &test_idx {
            let mut best = (f64::INFINITY, 0u8);
            for &si in &train_idx {
                let d: f64 = tensors[ti]
                    .iter()
                    .zip(tensors[si].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, gestures[si].label);
                }
            }
            if best.1 == gestures[ti].label {
                correct += 1;
            }
        }
        println!(
            "1-NN oracle accuracy: {:.4} ({} test)",
            correct as f64 / test_idx.len() as f64,
            test_idx.len()
        );
        let mut confusions: Vec<(u8, u8)> = Vec::new();
        for &ti in &test_idx {
            let mut best = (f64::INFINITY, 0u8);
            for &si in &train_idx {
                let d: f64 = tensors[ti]
                    .iter()
                    .zip(tensors[si].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, gestures[si].label);
                }
            }
            if best.1 != gestures[ti].label {
                confusions.push((gestures[ti].label, best.1));
            }
        }
        confusions.sort_unstable();
        println!("1-NN confusions (true -> pred): {confusions:?}");
    }

    let t1 = Instant::now();
    let result = run_experiment(&samples, &cfg, &spec).unwrap();
    println!("experiment in {:.2?}", t1.elapsed());
    for s in result.trace.iter().step_by(5.max(epochs / 10)) {
        println!("  epoch {:3}  loss {:.4}  train_acc {:.4}", s.epoch, s.loss, s.accuracy);
    }
    let last = result.trace.last().unwrap();
    println!("  final     loss {:.4}  train_acc {:.4}", last.loss, last.accuracy);
    println!("TEST accuracy: {:.4}  macro-F1 {:.4}", result.metrics.accuracy, result.metrics.macro_f1);
    println!("imputation failures: {}", result.imputation_failures.len());
    let cascade = result.audit.iter().filter(|a| a.pair_cascade).count();
    println!("audit records: {} (cascade {})", result.audit.len(), cascade);
}
