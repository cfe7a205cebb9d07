//! End-to-end experiment orchestration: conditioning, gap repair,
//! imputation, tensor/graph assembly, training, and evaluation, plus the
//! tag-ablation and parameter-sweep drivers built on top.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{compute_metrics, split, subjects_of, EvalError, Metrics, SplitKind, SplitSpec};
use crate::gnn::{
    predict, train, EpochStats, ModelConfig, ModelParams, TrainConfig, TrainError, TrainExample,
};
use crate::graph::{build_temporal_knn_graph, build_tensor, GraphError};
use crate::impute::{impute_nulls_excluding, AuditRecord, ImputeConfig, ImputeMode};
use crate::interp::{repair_frames, resample};
use crate::preprocess::{preprocess_sample, SmoothingConfig};
use crate::types::{Dataframe, FrameStatus, GestureSample, ProcessedGesture};

/// How sparse frames are repaired before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillStrategy {
    /// Linear/exponential interpolation plus null-frame imputation.
    Interpolate,
    /// Leave padded zeros in place and skip imputation (ablation baseline).
    ZeroFill,
}

/// Everything one experiment run needs.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub n_tags: u8,
    pub n_classes: usize,
    pub smoothing: SmoothingConfig,
    pub l_rs: usize,
    pub exp_epsilon: f64,
    pub impute: ImputeConfig,
    pub k: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fill: FillStrategy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_tags: crate::types::DEFAULT_TAG_COUNT,
            n_classes: crate::types::DEFAULT_CLASS_COUNT,
            smoothing: SmoothingConfig::default(),
            l_rs: 30,
            exp_epsilon: crate::interp::DEFAULT_EXP_EPSILON,
            impute: ImputeConfig::default(),
            k: 3,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            fill: FillStrategy::Interpolate,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// One test-set prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionRecord {
    pub sample_id: usize,
    pub label: u8,
    pub predicted: u8,
}

/// Output of one experiment run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Metrics,
    pub trace: Vec<EpochStats>,
    pub params: ModelParams,
    pub audit: Vec<AuditRecord>,
    /// Samples whose imputation could not complete; their frames stayed
    /// zero-filled. `(sample_id, reason)`.
    pub imputation_failures: Vec<(usize, String)>,
    pub predictions: Vec<PredictionRecord>,
}

/// Condition every sample: the preprocessing chain, then gap repair onto the
/// `l_rs` grid according to the fill strategy.
pub fn condition_samples(
    samples: &[GestureSample],
    cfg: &PipelineConfig,
) -> Vec<ProcessedGesture> {
    samples
        .par_iter()
        .map(|sample| {
            let frames = preprocess_sample(sample, &cfg.smoothing, cfg.n_tags);
            let frames = match cfg.fill {
                FillStrategy::Interpolate => repair_frames(frames, cfg.l_rs, cfg.exp_epsilon),
                FillStrategy::ZeroFill => zero_fill_frames(frames, cfg.l_rs),
            };
            ProcessedGesture {
                sample_id: sample.sample_id,
                label: sample.label,
                subject: sample.subject,
                environment: sample.environment,
                distance_m: sample.distance_m,
                frames,
            }
        })
        .collect()
}

/// Resample padded vectors (zeros included) straight to `l_rs`; no
/// interpolation, no imputation downstream.
fn zero_fill_frames(frames: Vec<Dataframe>, l_rs: usize) -> Vec<Dataframe> {
    frames
        .into_iter()
        .map(|df| {
            if df.status == FrameStatus::Null || df.is_empty() {
                return Dataframe {
                    epc: df.epc,
                    timestamps: (0..l_rs).map(|i| i as f64).collect(),
                    rss: vec![0.0; l_rs],
                    phase: vec![0.0; l_rs],
                    mask: vec![false; l_rs],
                    status: FrameStatus::Null,
                };
            }
            let rss = resample(&df.rss, l_rs);
            let phase = resample(&df.phase, l_rs);
            let timestamps = resample(&df.timestamps, l_rs);
            Dataframe {
                epc: df.epc,
                timestamps,
                rss,
                phase,
                mask: vec![true; l_rs],
                status: FrameStatus::Complete,
            }
        })
        .collect()
}

/// Impute nulls across a split. Training gestures use the within-class
/// neighbor machinery against the un-imputed training pool; test gestures
/// only ever copy their proximity partner. Gestures whose imputation fails
/// keep their zero frames and are reported, not dropped.
pub fn impute_split(
    conditioned: &[ProcessedGesture],
    train_idx: &[usize],
    cfg: &PipelineConfig,
    excluded: &BTreeSet<u8>,
) -> (Vec<ProcessedGesture>, Vec<AuditRecord>, Vec<(usize, String)>) {
    if cfg.fill == FillStrategy::ZeroFill {
        return (conditioned.to_vec(), Vec::new(), Vec::new());
    }
    let mut is_train = vec![false; conditioned.len()];
    let mut pool_by_class: BTreeMap<u8, Vec<&ProcessedGesture>> = BTreeMap::new();
    for &i in train_idx {
        is_train[i] = true;
        let g = &conditioned[i];
        pool_by_class.entry(g.label).or_default().push(g);
    }
    let empty: Vec<&ProcessedGesture> = Vec::new();

    let results: Vec<(ProcessedGesture, Vec<AuditRecord>, Option<String>)> = conditioned
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let mode = if is_train[i] {
                ImputeMode::Train
            } else {
                ImputeMode::Test
            };
            let pool: &[&ProcessedGesture] = match mode {
                ImputeMode::Train => pool_by_class.get(&g.label).unwrap_or(&empty),
                ImputeMode::Test => &empty,
            };
            match impute_nulls_excluding(g.clone(), pool, &cfg.impute, mode, excluded) {
                Ok((imputed, audit)) => (imputed, audit, None),
                Err(err) => (g.clone(), Vec::new(), Some(err.to_string())),
            }
        })
        .collect();

    let mut gestures = Vec::with_capacity(results.len());
    let mut audit = Vec::new();
    let mut failures = Vec::new();
    for (g, mut a, failure) in results {
        if let Some(reason) = failure {
            failures.push((g.sample_id, reason));
        }
        audit.append(&mut a);
        gestures.push(g);
    }
    (gestures, audit, failures)
}

fn build_examples(
    gestures: &[ProcessedGesture],
    indices: &[usize],
    k: usize,
) -> Result<Vec<TrainExample>, GraphError> {
    indices
        .par_iter()
        .map(|&i| {
            let tensor = build_tensor(&gestures[i])?;
            let graph = build_temporal_knn_graph(&tensor, k)?;
            Ok(TrainExample {
                tensor,
                graph,
                label: gestures[i].label,
            })
        })
        .collect()
}

/// Run one full experiment: condition, split, impute, build graphs, train,
/// and score the held-out set. Deterministic given the config and spec.
pub fn run_experiment(
    samples: &[GestureSample],
    cfg: &PipelineConfig,
    spec: &SplitSpec,
) -> Result<RunResult, PipelineError> {
    run_experiment_excluding(samples, cfg, spec, &BTreeSet::new())
}

fn run_experiment_excluding(
    samples: &[GestureSample],
    cfg: &PipelineConfig,
    spec: &SplitSpec,
    removed: &BTreeSet<u8>,
) -> Result<RunResult, PipelineError> {
    let (train_idx, test_idx) = split(samples, spec)?;
    let mut conditioned = condition_samples(samples, cfg);
    if !removed.is_empty() {
        let l_rs = cfg.l_rs;
        for g in &mut conditioned {
            for f in &mut g.frames {
                if removed.contains(&f.epc) {
                    *f = Dataframe {
                        epc: f.epc,
                        timestamps: (0..l_rs).map(|i| i as f64).collect(),
                        rss: vec![0.0; l_rs],
                        phase: vec![0.0; l_rs],
                        mask: vec![false; l_rs],
                        status: FrameStatus::Null,
                    };
                }
            }
        }
    }
    let (gestures, audit, failures) = impute_split(&conditioned, &train_idx, cfg, removed);

    let train_examples = build_examples(&gestures, &train_idx, cfg.k)?;
    let output = train(&train_examples, &cfg.model, &cfg.train)?;

    let predictions: Vec<PredictionRecord> = test_idx
        .par_iter()
        .map(|&i| {
            let tensor = build_tensor(&gestures[i])?;
            let graph = build_temporal_knn_graph(&tensor, cfg.k)?;
            let (predicted, _) = predict(&output.params, &tensor, &graph);
            Ok(PredictionRecord {
                sample_id: gestures[i].sample_id,
                label: gestures[i].label,
                predicted,
            })
        })
        .collect::<Result<_, GraphError>>()?;

    let preds: Vec<u8> = predictions.iter().map(|p| p.predicted).collect();
    let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let metrics = compute_metrics(&preds, &labels, cfg.n_classes)?;

    Ok(RunResult {
        metrics,
        trace: output.trace,
        params: output.params,
        audit,
        imputation_failures: failures,
        predictions,
    })
}

/// Leave-one-person-out summary.
#[derive(Debug, Clone)]
pub struct LopoResult {
    pub folds: Vec<(u32, Metrics)>,
    pub mean_accuracy: f64,
}

/// Run one fold per subject and average the fold accuracies.
pub fn run_lopo(samples: &[GestureSample], cfg: &PipelineConfig, seed: u64) -> Result<LopoResult, PipelineError> {
    let subjects = subjects_of(samples);
    if subjects.len() < 2 {
        return Err(PipelineError::Config(
            "leave-one-person-out needs at least 2 subjects".into(),
        ));
    }
    let mut folds = Vec::new();
    for &subject in &subjects {
        let spec = SplitSpec {
            kind: SplitKind::LeaveOnePersonOut {
                held_out_subject: subject,
            },
            seed,
        };
        let result = run_experiment(samples, cfg, &spec)?;
        folds.push((subject, result.metrics));
    }
    let mean_accuracy = folds.iter().map(|(_, m)| m.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(LopoResult {
        folds,
        mean_accuracy,
    })
}

/// Re-run the pipeline with a set of tags forced missing across the whole
/// dataset. The removed tags are nulled after conditioning, skipped by
/// imputation, and enter the classifier as all-zero frames.
pub fn ablate_tags(
    samples: &[GestureSample],
    removed: &BTreeSet<u8>,
    cfg: &PipelineConfig,
    spec: &SplitSpec,
) -> Result<RunResult, PipelineError> {
    if removed.len() >= cfg.n_tags as usize {
        return Err(PipelineError::Config(
            "cannot remove every tag from the dataset".into(),
        ));
    }
    if let Some(&bad) = removed.iter().find(|&&e| e == 0 || e > cfg.n_tags) {
        return Err(PipelineError::Config(format!(
            "removed EPC {bad} outside 1..={}",
            cfg.n_tags
        )));
    }
    run_experiment_excluding(samples, cfg, spec, removed)
}

/// Grid for [`sweep`].
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub nu: Vec<usize>,
    pub l_rs: Vec<usize>,
    pub k: Vec<usize>,
}

/// One sweep evaluation.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub nu: usize,
    pub l_rs: usize,
    pub k: usize,
    pub metrics: Metrics,
}

/// Full-pipeline rerun per grid point, shared seed.
pub fn sweep(
    samples: &[GestureSample],
    grid: &SweepGrid,
    cfg: &PipelineConfig,
    spec: &SplitSpec,
) -> Result<Vec<SweepRow>, PipelineError> {
    if grid.nu.is_empty() || grid.l_rs.is_empty() || grid.k.is_empty() {
        return Err(PipelineError::Config("sweep grid must be nonempty".into()));
    }
    let mut rows = Vec::new();
    for &nu in &grid.nu {
        for &l_rs in &grid.l_rs {
            for &k in &grid.k {
                let mut point = cfg.clone();
                point.impute.nu = nu;
                point.l_rs = l_rs;
                point.k = k;
                let result = run_experiment(samples, &point, spec)?;
                rows.push(SweepRow {
                    nu,
                    l_rs,
                    k,
                    metrics: result.metrics,
                });
            }
        }
    }
    Ok(rows)
}

/// Conditioned frames as CSV rows
/// (`sample_id,label,subject,epc,row,timestamp,rss,phase,observed,status`).
pub fn frames_csv(gestures: &[ProcessedGesture]) -> String {
    let mut out = String::from("sample_id,label,subject,epc,row,timestamp,rss,phase,observed,status\n");
    for g in gestures {
        for f in &g.frames {
            let status = match f.status {
                FrameStatus::Raw => "raw",
                FrameStatus::Sparse => "sparse",
                FrameStatus::Null => "null",
                FrameStatus::Complete => "complete",
            };
            for row in 0..f.len() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    g.sample_id,
                    g.label,
                    g.subject,
                    f.epc,
                    row,
                    f.timestamps[row],
                    f.rss[row],
                    f.phase[row],
                    f.mask[row],
                    status
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, DropoutConfig, SynthConfig};

    fn small_dataset() -> Vec<GestureSample> {
        let cfg = SynthConfig {
            classes: 3,
            subjects: 2,
            reps: 6,
            dropout: DropoutConfig {
                frame_drop_prob: vec![0.1, 0.1, 0.02, 0.02, 0.1, 0.3, 0.02, 0.02],
                reading_drop_prob: 0.15,
            },
            ..SynthConfig::default()
        };
        generate_dataset(&cfg).unwrap()
    }

    fn small_pipeline() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.n_classes = 3;
        cfg.l_rs = 12;
        cfg.model.hidden_dim = 8;
        cfg.model.n_classes = 3;
        cfg.train.epochs = 4;
        cfg.train.batch_size = 8;
        cfg.train.learning_rate = 0.01;
        cfg
    }

    #[test]
    fn conditioning_yields_fixed_length_frames() {
        let samples = small_dataset();
        let cfg = small_pipeline();
        let conditioned = condition_samples(&samples, &cfg);
        for g in &conditioned {
            assert_eq!(g.frames.len(), 8);
            for f in &g.frames {
                assert_eq!(f.len(), cfg.l_rs);
            }
        }
    }

    #[test]
    fn run_experiment_is_deterministic() {
        let samples = small_dataset();
        let cfg = small_pipeline();
        let spec = SplitSpec {
            kind: SplitKind::WithinSubject { test_fraction: 0.25 },
            seed: 11,
        };
        let a = run_experiment(&samples, &cfg, &spec).unwrap();
        let b = run_experiment(&samples, &cfg, &spec).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(
            a.params.to_param_vector(),
            b.params.to_param_vector()
        );
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn ablate_empty_set_matches_baseline() {
        let samples = small_dataset();
        let cfg = small_pipeline();
        let spec = SplitSpec {
            kind: SplitKind::WithinSubject { test_fraction: 0.25 },
            seed: 3,
        };
        let base = run_experiment(&samples, &cfg, &spec).unwrap();
        let ablated = ablate_tags(&samples, &BTreeSet::new(), &cfg, &spec).unwrap();
        assert_eq!(base.metrics, ablated.metrics);
    }

    #[test]
    fn ablate_rejects_removing_everything() {
        let samples = small_dataset();
        let cfg = small_pipeline();
        let spec = SplitSpec {
            kind: SplitKind::WithinSubject { test_fraction: 0.25 },
            seed: 3,
        };
        let removed: BTreeSet<u8> = (1..=8u8).collect();
        assert!(ablate_tags(&samples, &removed, &cfg, &spec).is_err());
    }

    #[test]
    fn sweep_single_point_matches_direct_run() {
        let samples = small_dataset();
        let cfg = small_pipeline();
        let spec = SplitSpec {
            kind: SplitKind::WithinSubject { test_fraction: 0.25 },
            seed: 5,
        };
        let grid = SweepGrid {
            nu: vec![cfg.impute.nu],
            l_rs: vec![cfg.l_rs],
            k: vec![cfg.k],
        };
        let rows = sweep(&samples, &grid, &cfg, &spec).unwrap();
        assert_eq!(rows.len(), 1);
        let direct = run_experiment(&samples, &cfg, &spec).unwrap();
        assert_eq!(rows[0].metrics, direct.metrics);
    }

    #[test]
    fn sweep_grid_row_count() {
        let samples = small_dataset();
        let mut cfg = small_pipeline();
        cfg.train.epochs = 1;
        let spec = SplitSpec {
            kind: SplitKind::WithinSubject { test_fraction: 0.25 },
            seed: 5,
        };
        let grid = SweepGrid {
            nu: vec![5, 10],
            l_rs: vec![8, 12],
            k: vec![2],
        };
        let rows = sweep(&samples, &grid, &cfg, &spec).unwrap();
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn lopo_runs_every_subject() {
        let samples = small_dataset();
        let cfg = small_pipeline();
        let result = run_lopo(&samples, &cfg, 2).unwrap();
        assert_eq!(result.folds.len(), 2);
        let mean = (result.folds[0].1.accuracy + result.folds[1].1.accuracy) / 2.0;
        assert!((result.mean_accuracy - mean).abs() < 1e-12);
    }
}
