//! Classification metrics, data splits, and misdetection statistics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{GestureSample, ProcessedGesture, ProximityMatrix};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and label vectors differ in length ({preds} vs {labels})")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("empty evaluation set")]
    Empty,
    #[error("class id {0} outside 1..={1}")]
    BadClass(u8, usize),
    #[error("held-out subject {0} not present in the dataset")]
    MissingSubject(u32),
    #[error("within-subject split requires labeled samples (sample {0} is unlabeled)")]
    Unlabeled(usize),
    #[error("test fraction {0} must lie in (0, 1)")]
    BadFraction(f64),
}

/// Accuracy, macro-averaged precision/recall/F1, and the confusion matrix
/// (`confusion[true][pred]`, 0-based over class ids `1..=n_classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub n_classes: usize,
}

impl Metrics {
    pub fn per_class_precision(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let predicted: usize = (0..self.n_classes).map(|t| self.confusion[t][c]).sum();
                if predicted == 0 {
                    0.0
                } else {
                    self.confusion[c][c] as f64 / predicted as f64
                }
            })
            .collect()
    }

    pub fn per_class_recall(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let actual: usize = self.confusion[c].iter().sum();
                if actual == 0 {
                    0.0
                } else {
                    self.confusion[c][c] as f64 / actual as f64
                }
            })
            .collect()
    }

    pub fn per_class_f1(&self) -> Vec<f64> {
        let p = self.per_class_precision();
        let r = self.per_class_recall();
        p.iter()
            .zip(r.iter())
            .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
            .collect()
    }

    /// Confusion matrix as CSV counts, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true_class");
        for c in 1..=self.n_classes {
            out.push_str(&format!(",pred_{c}"));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&format!("{}", t + 1));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Row-normalized confusion matrix as CSV.
    pub fn confusion_normalized_csv(&self) -> String {
        let mut out = String::from("true_class");
        for c in 1..=self.n_classes {
            out.push_str(&format!(",pred_{c}"));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let total: usize = row.iter().sum();
            out.push_str(&format!("{}", t + 1));
            for v in row {
                let norm = if total == 0 {
                    0.0
                } else {
                    *v as f64 / total as f64
                };
                out.push_str(&format!(",{norm:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Confusion counts plus macro-averaged metrics over 1-based class vectors.
/// Classes absent from the labels contribute zero precision/recall and are
/// reported through a warning.
pub fn compute_metrics(preds: &[u8], labels: &[u8], n_classes: usize) -> Result<Metrics, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &l) in preds.iter().zip(labels.iter()) {
        if p == 0 || p as usize > n_classes {
            return Err(EvalError::BadClass(p, n_classes));
        }
        if l == 0 || l as usize > n_classes {
            return Err(EvalError::BadClass(l, n_classes));
        }
        confusion[(l - 1) as usize][(p - 1) as usize] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let metrics = Metrics {
        accuracy: correct as f64 / preds.len() as f64,
        macro_precision: 0.0,
        macro_recall: 0.0,
        macro_f1: 0.0,
        confusion,
        n_classes,
    };
    let absent: Vec<usize> = (0..n_classes)
        .filter(|&c| metrics.confusion[c].iter().sum::<usize>() == 0)
        .map(|c| c + 1)
        .collect();
    if !absent.is_empty() {
        log::warn!(
            "classes {absent:?} absent from labels; their precision/recall count as 0 in the macro average"
        );
    }
    let p = metrics.per_class_precision();
    let r = metrics.per_class_recall();
    let f = metrics.per_class_f1();
    Ok(Metrics {
        macro_precision: p.iter().sum::<f64>() / n_classes as f64,
        macro_recall: r.iter().sum::<f64>() / n_classes as f64,
        macro_f1: f.iter().sum::<f64>() / n_classes as f64,
        ..metrics
    })
}

/// How to partition a dataset into train and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitKind {
    /// Stratified by (subject, class) at the given test fraction.
    WithinSubject { test_fraction: f64 },
    /// Every sample of one subject held out.
    LeaveOnePersonOut { held_out_subject: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub seed: u64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E3779B97F4A7C15) ^ b.wrapping_mul(0xC2B2AE3D27D4EB4F);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51AFD7ED558CCD);
    x ^= x >> 33;
    x
}

/// Partition into `(train_indices, test_indices)`. Deterministic under the
/// spec seed; the two sides are disjoint and cover the dataset.
pub fn split(samples: &[GestureSample], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    match spec.kind {
        SplitKind::LeaveOnePersonOut { held_out_subject } => {
            if !samples.iter().any(|s| s.subject == held_out_subject) {
                return Err(EvalError::MissingSubject(held_out_subject));
            }
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, s) in samples.iter().enumerate() {
                if s.subject == held_out_subject {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            Ok((train, test))
        }
        SplitKind::WithinSubject { test_fraction } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(EvalError::BadFraction(test_fraction));
            }
            let mut strata: BTreeMap<(u32, u8), Vec<usize>> = BTreeMap::new();
            for (i, s) in samples.iter().enumerate() {
                if !s.is_labeled() {
                    return Err(EvalError::Unlabeled(s.sample_id));
                }
                strata.entry((s.subject, s.label)).or_default().push(i);
            }
            let mut train = Vec::new();
            let mut test = Vec::new();
            for ((subject, label), mut indices) in strata {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(
                    spec.seed,
                    subject as u64,
                    label as u64,
                ));
                indices.shuffle(&mut rng);
                let test_count = (test_fraction * indices.len() as f64).round() as usize;
                let test_count = test_count.min(indices.len());
                test.extend_from_slice(&indices[..test_count]);
                train.extend_from_slice(&indices[test_count..]);
            }
            train.sort_unstable();
            test.sort_unstable();
            Ok((train, test))
        }
    }
}

/// Sorted unique subject ids.
pub fn subjects_of(samples: &[GestureSample]) -> Vec<u32> {
    let mut subjects: Vec<u32> = samples.iter().map(|s| s.subject).collect();
    subjects.sort_unstable();
    subjects.dedup();
    subjects
}

/// Frame-missing rates per EPC and per proximity pair, over gestures with
/// null status already assigned (post zero-padding).
#[derive(Debug, Clone, PartialEq)]
pub struct MisdetectionStats {
    pub per_epc: Vec<f64>,
    pub per_pair: Vec<([u8; 2], f64)>,
    pub sample_count: usize,
}

impl MisdetectionStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,id,rate\n");
        for (i, rate) in self.per_epc.iter().enumerate() {
            out.push_str(&format!("epc,{},{rate:.6}\n", i + 1));
        }
        for (pair, rate) in &self.per_pair {
            out.push_str(&format!("pair,{}-{},{rate:.6}\n", pair[0], pair[1]));
        }
        out
    }
}

pub fn misdetection_stats(
    gestures: &[ProcessedGesture],
    proximity: &ProximityMatrix,
) -> MisdetectionStats {
    let n = gestures.len().max(1);
    let n_tags = gestures.first().map(|g| g.frames.len()).unwrap_or(0);
    let mut per_epc = vec![0usize; n_tags];
    let mut per_pair = vec![0usize; proximity.pairs().len()];
    for g in gestures {
        for f in &g.frames {
            if f.is_null() {
                per_epc[(f.epc - 1) as usize] += 1;
            }
        }
        for (pi, pair) in proximity.pairs().iter().enumerate() {
            if g.frame(pair[0]).is_null() && g.frame(pair[1]).is_null() {
                per_pair[pi] += 1;
            }
        }
    }
    MisdetectionStats {
        per_epc: per_epc.iter().map(|&c| c as f64 / n as f64).collect(),
        per_pair: proximity
            .pairs()
            .iter()
            .zip(per_pair.iter())
            .map(|(&pair, &c)| (pair, c as f64 / n as f64))
            .collect(),
        sample_count: gestures.len(),
    }
}
