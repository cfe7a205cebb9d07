//! TOML experiment configuration: one file drives synthesis, conditioning,
//! imputation, graph construction, training, and evaluation. Every key has a
//! default, so an empty file is a valid config.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::eval::{SplitKind, SplitSpec};
use crate::gnn::{Aggregation, ModelConfig, Optimizer, TrainConfig};
use crate::impute::ImputeConfig;
use crate::pipeline::{FillStrategy, PipelineConfig, SweepGrid};
use crate::preprocess::SmoothingConfig;
use crate::synth::{ChannelConfig, DropoutConfig, SynthConfig, TrajectoryModel};
use crate::types::{Environment, ProximityMatrix};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {0}: {1}")]
    Io(String, std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_tags: Option<u8>,
    #[serde(default)]
    pub n_classes: Option<usize>,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub interp: InterpSection,
    #[serde(default)]
    pub impute: ImputeSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub sg_window: Option<usize>,
    pub sg_polyorder: Option<usize>,
    pub gauss_sigma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InterpSection {
    pub l_rs: Option<usize>,
    pub exp_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ImputeSection {
    pub nu: Option<usize>,
    pub proximity_pairs: Option<Vec<[u8; 2]>>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: Option<usize>,
    pub layer_count: Option<usize>,
    pub aggregation: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
    /// "adam" (default) or "momentum".
    pub optimizer: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// "within_subject" or "lopo".
    pub split: Option<String>,
    pub test_fraction: Option<f64>,
    pub held_out_subject: Option<u32>,
    pub seed: Option<u64>,
    pub ablation_sets: Option<Vec<Vec<u8>>>,
    pub sweep_nu: Option<Vec<usize>>,
    pub sweep_l_rs: Option<Vec<usize>>,
    pub sweep_k: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub classes: Option<usize>,
    pub subjects: Option<u32>,
    pub reps: Option<usize>,
    pub base_distance_m: Option<f64>,
    pub arm_amplitude_m: Option<f64>,
    pub wrist_amplitude_m: Option<f64>,
    pub class_separation: Option<f64>,
    pub subject_jitter: Option<f64>,
    pub rep_jitter: Option<f64>,
    pub wavelength: Option<f64>,
    pub tx_power_dbm: Option<f64>,
    pub antenna_gain_dbic: Option<f64>,
    pub n_paths: Option<usize>,
    pub noise_var: Option<f64>,
    pub frame_drop_prob: Option<Vec<f64>>,
    pub reading_drop_prob: Option<f64>,
    pub environment: Option<String>,
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Ok(toml::from_str(&text)?)
    }

    /// Apply a command-line seed override to every seeded component.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.train.seed = Some(seed);
        self.eval.seed = Some(seed);
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let defaults = PipelineConfig::default();
        let n_tags = self.n_tags.unwrap_or(defaults.n_tags);
        let n_classes = self.n_classes.unwrap_or(defaults.n_classes);
        let smoothing = SmoothingConfig {
            sg_window: self.preprocess.sg_window.unwrap_or(defaults.smoothing.sg_window),
            sg_polyorder: self
                .preprocess
                .sg_polyorder
                .unwrap_or(defaults.smoothing.sg_polyorder),
            gauss_sigma: self
                .preprocess
                .gauss_sigma
                .unwrap_or(defaults.smoothing.gauss_sigma),
        };
        smoothing.validate().map_err(ConfigError::Invalid)?;
        let proximity = match &self.impute.proximity_pairs {
            Some(pairs) => ProximityMatrix::new(pairs.clone(), n_tags).map_err(ConfigError::Invalid)?,
            None => ProximityMatrix::default(),
        };
        let aggregation = match &self.model.aggregation {
            Some(s) => s.parse::<Aggregation>().map_err(ConfigError::Invalid)?,
            None => defaults.model.aggregation,
        };
        let l_rs = self.interp.l_rs.unwrap_or(defaults.l_rs);
        if l_rs < 2 {
            return Err(ConfigError::Invalid(format!("l_rs must be >= 2, got {l_rs}")));
        }
        let k = self.graph.k.unwrap_or(defaults.k);
        if k == 0 || k > n_tags as usize {
            return Err(ConfigError::Invalid(format!(
                "graph k must lie in 1..={n_tags}, got {k}"
            )));
        }
        let seed = self.train.seed.or(self.seed).unwrap_or(defaults.train.seed);
        Ok(PipelineConfig {
            n_tags,
            n_classes,
            smoothing,
            l_rs,
            exp_epsilon: self.interp.exp_epsilon.unwrap_or(defaults.exp_epsilon),
            impute: ImputeConfig {
                nu: self.impute.nu.unwrap_or(defaults.impute.nu),
                proximity,
            },
            k,
            model: ModelConfig {
                feature_dim: defaults.model.feature_dim,
                hidden_dim: self.model.hidden_dim.unwrap_or(defaults.model.hidden_dim),
                layer_count: self.model.layer_count.unwrap_or(defaults.model.layer_count),
                n_classes,
                aggregation,
            },
            train: TrainConfig {
                epochs: self.train.epochs.unwrap_or(defaults.train.epochs),
                batch_size: self.train.batch_size.unwrap_or(defaults.train.batch_size),
                learning_rate: self
                    .train
                    .learning_rate
                    .unwrap_or(defaults.train.learning_rate),
                seed,
                weight_decay: self.train.weight_decay.unwrap_or(defaults.train.weight_decay),
                momentum: self.train.momentum.unwrap_or(defaults.train.momentum),
                optimizer: match &self.train.optimizer {
                    Some(s) => s.parse::<Optimizer>().map_err(ConfigError::Invalid)?,
                    None => defaults.train.optimizer,
                },
            },
            fill: FillStrategy::Interpolate,
        })
    }

    pub fn split_spec(&self, subjects: &[u32]) -> Result<SplitSpec, ConfigError> {
        let seed = self.eval.seed.or(self.seed).unwrap_or(42);
        let kind = match self.eval.split.as_deref() {
            None | Some("within_subject") => SplitKind::WithinSubject {
                test_fraction: self.eval.test_fraction.unwrap_or(0.2),
            },
            Some("lopo") => SplitKind::LeaveOnePersonOut {
                held_out_subject: self
                    .eval
                    .held_out_subject
                    .or_else(|| subjects.first().copied())
                    .ok_or_else(|| ConfigError::Invalid("no subjects in dataset".into()))?,
            },
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "unknown split kind '{other}' (expected within_subject or lopo)"
                )))
            }
        };
        Ok(SplitSpec { kind, seed })
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        let pipeline_defaults = PipelineConfig::default();
        SweepGrid {
            nu: self
                .eval
                .sweep_nu
                .clone()
                .unwrap_or_else(|| vec![10, 20, 30]),
            l_rs: self
                .eval
                .sweep_l_rs
                .clone()
                .unwrap_or_else(|| vec![10, 20, 30, 40]),
            k: self
                .eval
                .sweep_k
                .clone()
                .unwrap_or_else(|| vec![pipeline_defaults.k]),
        }
    }

    /// Tag sets for the ablation study; always includes the "No Tag"
    /// baseline as the leading empty set.
    pub fn ablation_sets(&self) -> Vec<Vec<u8>> {
        let mut sets = vec![Vec::new()];
        match &self.eval.ablation_sets {
            Some(user) => sets.extend(user.iter().cloned().filter(|s| !s.is_empty())),
            None => sets.extend(
                [
                    vec![4u8],
                    vec![8],
                    vec![4, 8],
                    vec![3, 7],
                    vec![1, 2, 5, 6],
                    vec![3, 4, 7, 8],
                ]
                .into_iter(),
            ),
        }
        sets
    }

    pub fn synth_config(&self) -> Result<SynthConfig, ConfigError> {
        let defaults = SynthConfig::default();
        let environment = match self.synth.environment.as_deref() {
            None => defaults.environment,
            Some(s) => s.parse::<Environment>().map_err(ConfigError::Invalid)?,
        };
        let dropout = DropoutConfig {
            frame_drop_prob: self
                .synth
                .frame_drop_prob
                .clone()
                .unwrap_or(defaults.dropout.frame_drop_prob),
            reading_drop_prob: self
                .synth
                .reading_drop_prob
                .unwrap_or(defaults.dropout.reading_drop_prob),
        };
        for &p in &dropout.frame_drop_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!(
                    "frame_drop_prob entries must lie in [0,1], got {p}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&dropout.reading_drop_prob) {
            return Err(ConfigError::Invalid(
                "reading_drop_prob must lie in [0,1]".into(),
            ));
        }
        Ok(SynthConfig {
            classes: self.synth.classes.or(self.n_classes).unwrap_or(defaults.classes),
            subjects: self.synth.subjects.unwrap_or(defaults.subjects),
            reps: self.synth.reps.unwrap_or(defaults.reps),
            trajectory: TrajectoryModel {
                base_distance_m: self
                    .synth
                    .base_distance_m
                    .unwrap_or(defaults.trajectory.base_distance_m),
                arm_amplitude_m: self
                    .synth
                    .arm_amplitude_m
                    .unwrap_or(defaults.trajectory.arm_amplitude_m),
                wrist_amplitude_m: self
                    .synth
                    .wrist_amplitude_m
                    .unwrap_or(defaults.trajectory.wrist_amplitude_m),
                class_separation: self
                    .synth
                    .class_separation
                    .unwrap_or(defaults.trajectory.class_separation),
                subject_jitter: self
                    .synth
                    .subject_jitter
                    .unwrap_or(defaults.trajectory.subject_jitter),
                rep_jitter: self.synth.rep_jitter.unwrap_or(defaults.trajectory.rep_jitter),
            },
            channel: ChannelConfig {
                wavelength: self.synth.wavelength.unwrap_or(defaults.channel.wavelength),
                tx_power_dbm: self
                    .synth
                    .tx_power_dbm
                    .unwrap_or(defaults.channel.tx_power_dbm),
                antenna_gain_dbic: self
                    .synth
                    .antenna_gain_dbic
                    .unwrap_or(defaults.channel.antenna_gain_dbic),
                n_paths: self.synth.n_paths.unwrap_or(defaults.channel.n_paths),
                noise_var: self.synth.noise_var.unwrap_or(defaults.channel.noise_var),
                seed: self.seed.unwrap_or(defaults.channel.seed),
            },
            dropout,
            environment,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        let pipeline = cfg.pipeline_config().unwrap();
        assert_eq!(pipeline.l_rs, 30);
        assert_eq!(pipeline.impute.nu, 30);
        assert_eq!(pipeline.k, 3);
        assert_eq!(pipeline.model.hidden_dim, 64);
        let synth = cfg.synth_config().unwrap();
        assert_eq!(synth.classes, 21);
        assert!((synth.channel.wavelength - 0.3466).abs() < 1e-3);
    }

    #[test]
    fn sections_override_defaults() {
        let text = r#"
seed = 7
[interp]
l_rs = 20
[impute]
nu = 10
[graph]
k = 5
[model]
aggregation = "sum"
[train]
epochs = 3
"#;
        let cfg: Config = toml::from_str(text).unwrap();
        let pipeline = cfg.pipeline_config().unwrap();
        assert_eq!(pipeline.l_rs, 20);
        assert_eq!(pipeline.impute.nu, 10);
        assert_eq!(pipeline.k, 5);
        assert_eq!(pipeline.train.epochs, 3);
        assert_eq!(pipeline.train.seed, 7);
        assert_eq!(pipeline.model.aggregation, crate::gnn::Aggregation::Sum);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cfg: Config = toml::from_str("[graph]\nk = 9\n").unwrap();
        assert!(cfg.pipeline_config().is_err());
        let cfg: Config = toml::from_str("[interp]\nl_rs = 1\n").unwrap();
        assert!(cfg.pipeline_config().is_err());
        let cfg: Config = toml::from_str("[preprocess]\nsg_window = 4\n").unwrap();
        assert!(cfg.pipeline_config().is_err());
        assert!(toml::from_str::<Config>("[graph]\nunknown_key = 1\n").is_err());
    }

    #[test]
    fn split_spec_kinds() {
        let cfg: Config = toml::from_str("[eval]\nsplit = \"lopo\"\n").unwrap();
        let spec = cfg.split_spec(&[3, 4]).unwrap();
        assert!(matches!(
            spec.kind,
            SplitKind::LeaveOnePersonOut { held_out_subject: 3 }
        ));
        let cfg: Config = toml::from_str("[eval]\nsplit = \"nope\"\n").unwrap();
        assert!(cfg.split_spec(&[1]).is_err());
    }
}
