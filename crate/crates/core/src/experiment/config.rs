//! Experiment configuration as flat `key=value` pairs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::DEFAULT_BACKBONE;
use crate::error::{Error, Result};
use crate::fusion::ClassLossMode;
use crate::graph_store::parse_key_values;
use crate::labeler::{HeadRanking, LabelerConfig, LabelerMode};
use crate::losses::{DecoderConfig, LossWeights, Reduction};
use crate::metrics::{FairnessMode, Normalizer, FAIRNESS_KS};
use crate::model::{ModelConfig, ObjectiveConfig};
use crate::optim::AdamConfig;

use super::synthetic::SyntheticSpec;

/// One-at-a-time component removal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    NoFair,
    NoClass,
    NoContrast,
    NoDeg,
    NoGru,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoFair,
        Ablation::NoClass,
        Ablation::NoContrast,
        Ablation::NoDeg,
        Ablation::NoGru,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoFair => "no_fair",
            Ablation::NoClass => "no_class",
            Ablation::NoContrast => "no_contrast",
            Ablation::NoDeg => "no_deg",
            Ablation::NoGru => "no_gru",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownAblation(s.to_string()))
    }
}

/// Where interactions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Delimited `user,item,timestamp` log.
    Log { path: PathBuf, delimiter: char },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub snapshots: usize,
    pub windows: usize,
    pub dim: usize,
    pub gnn_layers: usize,
    pub recurrent_layers: usize,
    pub backbone: String,
    pub log1p: bool,
    pub lr: f64,
    pub weights: LossWeights,
    pub tau: f64,
    pub n_neg: usize,
    pub decoder: DecoderConfig,
    pub class_mode: ClassLossMode,
    pub ds_reduction: Reduction,
    pub class_reduction: Reduction,
    pub labeler: LabelerConfig,
    pub epochs: usize,
    /// Training stops once the monitored loss moves less than this ...
    pub early_stop_delta: f64,
    /// ... for this many consecutive epochs.
    pub early_stop_patience: usize,
    pub seeds: Vec<u64>,
    /// Seed of data generation and of the held-out split, shared by all runs.
    pub data_seed: u64,
    pub ablation: Option<Ablation>,
    pub eval_ks: Vec<usize>,
    pub fairness_ks: Vec<usize>,
    pub fairness_mode: FairnessMode,
    pub normalizer: Normalizer,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            snapshots: 5,
            windows: 1,
            dim: 64,
            gnn_layers: 2,
            recurrent_layers: 3,
            backbone: DEFAULT_BACKBONE.to_string(),
            log1p: false,
            lr: 5e-4,
            weights: LossWeights::default(),
            tau: 0.5,
            n_neg: 5,
            decoder: DecoderConfig::default(),
            class_mode: ClassLossMode::Literal,
            ds_reduction: Reduction::Sum,
            class_reduction: Reduction::Sum,
            labeler: LabelerConfig {
                mode: LabelerMode::DegreeThreshold,
                ..LabelerConfig::default()
            },
            epochs: 100,
            early_stop_delta: 1e-4,
            early_stop_patience: 5,
            seeds: vec![0, 1, 2, 3, 4],
            data_seed: 2024,
            ablation: None,
            eval_ks: vec![5, 10, 20],
            fairness_ks: FAIRNESS_KS.to_vec(),
            fairness_mode: FairnessMode::PerUser,
            normalizer: Normalizer::Extremal,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    /// Keys accepted by [`ExperimentConfig::apply`].
    pub const KEYS: &'static [&'static str] = &[
        "data", "delimiter", "snapshots", "windows", "dim", "gnn_layers", "recurrent_layers", "backbone", "log1p",
        "lr", "gamma1", "gamma2", "gamma3", "gamma4", "lambda_l2", "lambda_l1", "tau", "n_neg", "radius",
        "temperature", "class_loss", "ds_reduction", "class_reduction", "labeler", "head_ratio",
        "degree_variation", "theta", "head_ranking", "epochs", "early_stop_delta", "early_stop_patience", "seed",
        "seeds", "data_seed", "ablate", "eval_ks", "fairness_ks", "fairness_mode", "normalizer",
        "synth.vertices", "synth.ratios", "synth.exponent", "synth.edges", "synth.user_fraction",
        "synth.communities", "synth.intra", "synth.threshold",
    ];

    /// Sets one field from its textual form.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => {
                self.data = if v == "synthetic" {
                    DataSource::Synthetic(SyntheticSpec::default())
                } else {
                    let delimiter = match &self.data {
                        DataSource::Log { delimiter, .. } => *delimiter,
                        DataSource::Synthetic(_) => ',',
                    };
                    DataSource::Log {
                        path: PathBuf::from(v),
                        delimiter,
                    }
                }
            }
            "delimiter" => {
                let d = match v {
                    "tab" | "\\t" => '\t',
                    _ if v.chars().count() == 1 => v.chars().next().unwrap_or(','),
                    _ => return Err(Error::Config(format!("delimiter `{v}` is not one character"))),
                };
                match &mut self.data {
                    DataSource::Log { delimiter, .. } => *delimiter = d,
                    DataSource::Synthetic(_) => return Err(Error::Config("delimiter needs a log data source".into())),
                }
            }
            "snapshots" => self.snapshots = parse(key, v)?,
            "windows" => self.windows = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "gnn_layers" => self.gnn_layers = parse(key, v)?,
            "recurrent_layers" => self.recurrent_layers = parse(key, v)?,
            "backbone" => self.backbone = v.to_string(),
            "log1p" => self.log1p = parse_bool(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "gamma1" => self.weights.gamma_ds = parse(key, v)?,
            "gamma2" => self.weights.gamma_class = parse(key, v)?,
            "gamma3" => self.weights.gamma_contrast = parse(key, v)?,
            "gamma4" => self.weights.gamma_fair = parse(key, v)?,
            "lambda_l2" => self.weights.lambda_l2 = parse(key, v)?,
            "lambda_l1" => self.weights.lambda_l1 = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "n_neg" => self.n_neg = parse(key, v)?,
            "radius" => self.decoder.radius = parse(key, v)?,
            "temperature" => self.decoder.temperature = parse(key, v)?,
            "class_loss" => {
                self.class_mode = match v {
                    "literal" => ClassLossMode::Literal,
                    "single_softmax" => ClassLossMode::SingleSoftmax,
                    _ => return Err(Error::Config(format!("unknown class loss `{v}`"))),
                }
            }
            "ds_reduction" => self.ds_reduction = parse_reduction(key, v)?,
            "class_reduction" => self.class_reduction = parse_reduction(key, v)?,
            "labeler" => self.labeler.mode = v.parse()?,
            "head_ratio" => self.labeler.head_ratio = parse(key, v)?,
            "degree_variation" => self.labeler.degree_variation = parse(key, v)?,
            "theta" => self.labeler.degree_threshold = parse(key, v)?,
            "head_ranking" => {
                self.labeler.head_ranking = match v {
                    "total" => HeadRanking::TotalDegree,
                    "last" => HeadRanking::LastSnapshotDegree,
                    _ => return Err(Error::Config(format!("unknown head ranking `{v}`"))),
                }
            }
            "epochs" => self.epochs = parse(key, v)?,
            "early_stop_delta" => self.early_stop_delta = parse(key, v)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, v)?,
            "seed" => self.seeds = vec![parse(key, v)?],
            "seeds" => self.seeds = parse_list(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "ablate" => self.ablation = if v == "none" { None } else { Some(v.parse()?) },
            "eval_ks" => self.eval_ks = parse_list(key, v)?,
            "fairness_ks" => self.fairness_ks = parse_list(key, v)?,
            "fairness_mode" => {
                self.fairness_mode = match v {
                    "per_user" => FairnessMode::PerUser,
                    "global" => FairnessMode::Global,
                    _ => return Err(Error::Config(format!("unknown fairness mode `{v}`"))),
                }
            }
            "normalizer" => {
                self.normalizer = match v {
                    "extremal" => Normalizer::Extremal,
                    "exact" => Normalizer::Exact,
                    _ => return Err(Error::Config(format!("unknown normalizer `{v}`"))),
                }
            }
            k if k.starts_with("synth.") => {
                let DataSource::Synthetic(spec) = &mut self.data else {
                    return Err(Error::Config(format!("`{k}` needs the synthetic data source")));
                };
                match k {
                    "synth.vertices" => spec.vertices = parse(k, v)?,
                    "synth.ratios" => {
                        let r: Vec<f64> = parse_list(k, v)?;
                        let [fat, t2h, sfh] = r[..] else {
                            return Err(Error::Config("synth.ratios takes FaT,T2H,SfH".into()));
                        };
                        spec.ratios = [fat, t2h, sfh];
                    }
                    "synth.exponent" => spec.exponent = parse(k, v)?,
                    "synth.edges" => spec.edges_per_snapshot = parse(k, v)?,
                    "synth.user_fraction" => spec.user_fraction = parse(k, v)?,
                    "synth.communities" => spec.communities = parse(k, v)?,
                    "synth.intra" => spec.intra_probability = parse(k, v)?,
                    "synth.threshold" => spec.threshold = parse(k, v)?,
                    _ => return Err(Error::Config(format!("unknown key `{k}`"))),
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every pair of a `key=value` file.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_key_values(&text, &path.display().to_string())? {
            self.apply(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.gnn_layers == 0 || self.recurrent_layers == 0 {
            return Err(Error::Config("dim and layer counts must be positive".into()));
        }
        if self.snapshots == 0 || self.windows == 0 || !self.snapshots.is_multiple_of(self.windows) {
            return Err(Error::Config(format!(
                "window count {} does not divide {} snapshots",
                self.windows, self.snapshots
            )));
        }
        if !(self.lr > 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config("learning rate and tau must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed".into()));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config("evaluation cutoffs must be positive".into()));
        }
        self.weights.validate()?;
        self.decoder.validate()?;
        self.labeler.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// The configuration with `self.ablation` folded into the plain fields.
    pub fn effective(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if let Some(a) = c.ablation.take() {
            match a {
                Ablation::NoFair => c.weights.gamma_fair = 0.0,
                Ablation::NoClass => c.weights.gamma_class = 0.0,
                Ablation::NoContrast => c.weights.gamma_contrast = 0.0,
                Ablation::NoDeg => {}
                Ablation::NoGru => {}
            }
            c.ablation = Some(a);
        }
        c
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            gnn_layers: self.gnn_layers,
            recurrent_layers: self.recurrent_layers,
            backbone: self.backbone.clone(),
            use_trend: self.ablation != Some(Ablation::NoDeg),
            recurrent: self.ablation != Some(Ablation::NoGru),
            log1p: self.log1p,
        }
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            weights: self.effective().weights,
            tau: self.tau,
            decoder: self.decoder,
            class_mode: self.class_mode,
            ds_reduction: self.ds_reduction,
            class_reduction: self.class_reduction,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// JSON echo recorded in reports and checkpoints.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

fn parse_reduction(key: &str, v: &str) -> Result<Reduction> {
    match v {
        "mean" => Ok(Reduction::Mean),
        "sum" => Ok(Reduction::Sum),
        _ => Err(Error::Config(format!("invalid reduction `{v}` for `{key}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.dim, 64);
        assert_eq!(c.gnn_layers, 2);
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.seeds.len(), 5);
        assert_eq!(c.windows, 1);
        let w = c.weights;
        assert_eq!([w.gamma_ds, w.gamma_class, w.gamma_contrast, w.gamma_fair], [0.25; 4]);
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.n_neg, 5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn apply_round_trips_through_text() {
        let mut c = ExperimentConfig::default();
        c.apply("gamma4", "0.5").unwrap();
        c.apply("seeds", "7,8").unwrap();
        c.apply("labeler", "slope").unwrap();
        c.apply("ablate", "no_gru").unwrap();
        c.apply("synth.ratios", "0.8,0.15,0.05").unwrap();
        assert_eq!(c.weights.gamma_fair, 0.5);
        assert_eq!(c.seeds, vec![7, 8]);
        assert_eq!(c.labeler.mode, LabelerMode::Slope);
        assert_eq!(c.ablation, Some(Ablation::NoGru));
        assert!(!c.model_config().recurrent);
        assert!(c.apply("bogus", "1").is_err());
        assert!(c.apply("dim", "x").is_err());
        assert!(matches!(c.apply("ablate", "no_x"), Err(Error::UnknownAblation(_))));
    }

    #[test]
    fn file_values_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\ndim = 16\nepochs=3\n").unwrap();
        let mut c = ExperimentConfig::default();
        c.apply_file(&p).unwrap();
        c.apply("dim", "8").unwrap();
        assert_eq!((c.dim, c.epochs), (8, 3));
    }

    #[test]
    fn ablations_touch_one_component_each() {
        let base = ExperimentConfig::default();
        for a in Ablation::ALL {
            let c = ExperimentConfig {
                ablation: Some(a),
                ..base.clone()
            };
            let w = c.objective_config().weights;
            let m = c.model_config();
            let changed = [
                w.gamma_fair == 0.0,
                w.gamma_class == 0.0,
                w.gamma_contrast == 0.0,
                !m.use_trend,
                !m.recurrent,
            ];
            assert_eq!(changed.iter().filter(|&&x| x).count(), 1, "{a}");
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
    }
}
