//! Multi-seed runs: plain training, ablations, fairness plug-in, scalability.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneRegistry;
use crate::error::{Error, Result};
use crate::graph_store::degree_series;
use crate::labeler::{group_statistics, EvolutionLabel, GroupStats};
use crate::scalar::Scalar;

use super::config::{Ablation, ExperimentConfig};
use super::data::{load_dataset, prepare_records, Dataset, Prepared};
use super::evaluate::evaluate_embeddings;
use super::report::{ExperimentReport, RunReport, ScalePoint, VariantReport};
use super::train::{Trainer, TrainingData};

/// Name of the unablated variant in reports.
pub const FULL: &str = "full";

/// Label group statistics of the training graph.
pub fn training_group_statistics(p: &Prepared) -> Result<BTreeMap<String, GroupStats>> {
    let stats = group_statistics(&p.labels, &degree_series(&p.train), &EvolutionLabel::ALL)?;
    Ok(stats.into_iter().map(|(k, v)| (k.as_str().to_string(), v)).collect())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Where per-seed training state is written, and how often.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointPolicy {
    pub dir: Option<PathBuf>,
    /// Save every this many epochs as well as at the end.
    pub every: Option<usize>,
}

impl CheckpointPolicy {
    pub fn path(&self, variant: &str, seed: u64) -> Option<PathBuf> {
        let stem: String = variant
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
            .collect();
        self.dir.as_ref().map(|d| d.join(format!("{stem}-seed{seed}.ckpt")))
    }
}

/// Trains `t` to the end and evaluates it. With a checkpoint path the
/// state is saved every `every` epochs and after the last one, and a
/// divergence leaves its last finite state next to it.
pub fn complete_run<T: Scalar>(
    t: &mut Trainer<'_, T>,
    p: &Prepared,
    checkpoint: Option<&Path>,
    every: Option<usize>,
) -> Result<RunReport> {
    if let Some(path) = checkpoint {
        t.divergence_checkpoint = Some(path.with_extension("diverged.ckpt"));
    }
    while !t.finished() {
        t.step()?;
        if let (Some(path), Some(n)) = (checkpoint, every) {
            if n > 0 && t.epoch.is_multiple_of(n) {
                t.save(path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        t.save(path)?;
    }
    let metrics = evaluate_embeddings(&t.embeddings(), p, &t.cfg)?;
    Ok(RunReport {
        seed: t.seed,
        metrics,
        converged_at: t.converged_at,
        parameter_count: t.model.params.scalar_count(),
        mean_epoch_seconds: mean(&t.epoch_seconds),
        trace: t.trace.clone(),
    })
}

/// Trains and evaluates one configuration for every seed.
pub fn run_variant<T: Scalar>(
    name: &str,
    cfg: &ExperimentConfig,
    p: &Prepared,
    data: &TrainingData<T>,
    registry: &BackboneRegistry<T>,
) -> Result<VariantReport> {
    run_variant_with(name, cfg, p, data, registry, &CheckpointPolicy::default())
}

pub fn run_variant_with<T: Scalar>(
    name: &str,
    cfg: &ExperimentConfig,
    p: &Prepared,
    data: &TrainingData<T>,
    registry: &BackboneRegistry<T>,
    policy: &CheckpointPolicy,
) -> Result<VariantReport> {
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        info!("{name}: seed {seed}");
        let mut t = Trainer::new(cfg, seed, data, registry)?;
        let path = policy.path(name, seed);
        runs.push(complete_run(&mut t, p, path.as_deref(), policy.every)?);
    }
    Ok(VariantReport::new(name, runs))
}

fn report(kind: &str, cfg: &ExperimentConfig, p: &Prepared, variants: Vec<VariantReport>) -> Result<ExperimentReport> {
    Ok(ExperimentReport {
        kind: kind.to_string(),
        config_echo: cfg.echo(),
        seeds: cfg.seeds.clone(),
        group_statistics: training_group_statistics(p)?,
        variants,
        scalability: Vec::new(),
    })
}

/// The configured pipeline, `cfg.ablation` included.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, p: &Prepared, registry: &BackboneRegistry<T>) -> Result<ExperimentReport> {
    run_experiment_with(cfg, p, registry, &CheckpointPolicy::default())
}

pub fn run_experiment_with<T: Scalar>(
    cfg: &ExperimentConfig,
    p: &Prepared,
    registry: &BackboneRegistry<T>,
    policy: &CheckpointPolicy,
) -> Result<ExperimentReport> {
    let data = TrainingData::new(p, cfg)?;
    let name = cfg.ablation.map_or(FULL, Ablation::as_str);
    let v = run_variant_with(name, cfg, p, &data, registry, policy)?;
    report("train", cfg, p, vec![v])
}

/// Report of a single finished run, as written by `train`.
pub fn single_run_report(kind: &str, name: &str, cfg: &ExperimentConfig, p: &Prepared, run: RunReport) -> Result<ExperimentReport> {
    let mut r = report(kind, cfg, p, vec![VariantReport::new(name, vec![run])])?;
    r.seeds = r.variants[0].runs.iter().map(|x| x.seed).collect();
    Ok(r)
}

/// The full model followed by each switched-off variant, seeds shared.
pub fn run_ablation_suite<T: Scalar>(
    cfg: &ExperimentConfig,
    switches: &[Ablation],
    p: &Prepared,
    registry: &BackboneRegistry<T>,
) -> Result<ExperimentReport> {
    let base = ExperimentConfig {
        ablation: None,
        ..cfg.clone()
    };
    let data = TrainingData::new(p, &base)?;
    let mut variants = vec![run_variant(FULL, &base, p, &data, registry)?];
    for &a in switches {
        let c = ExperimentConfig {
            ablation: Some(a),
            ..base.clone()
        };
        variants.push(run_variant(a.as_str(), &c, p, &data, registry)?);
    }
    report("ablation", &base, p, variants)
}

/// Full model against one named switch.
pub fn run_ablation<T: Scalar>(
    cfg: &ExperimentConfig,
    switch: &str,
    p: &Prepared,
    registry: &BackboneRegistry<T>,
) -> Result<ExperimentReport> {
    let a: Ablation = switch.parse()?;
    run_ablation_suite(cfg, &[a], p, registry)
}

/// Which vertex groups the fairness term compares in plug-in mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FairGrouping {
    /// T2H against SfH from the configured labeler.
    Trend,
    /// Tail against head, split at the degree threshold.
    Degree,
}

impl FromStr for FairGrouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trend" => Ok(FairGrouping::Trend),
            "degree" => Ok(FairGrouping::Degree),
            _ => Err(Error::Config(format!("unknown grouping `{s}`, expected trend or degree"))),
        }
    }
}

impl fmt::Display for FairGrouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairGrouping::Trend => "trend",
            FairGrouping::Degree => "degree",
        })
    }
}

/// Head (as SfH) when the training union-graph degree reaches the
/// threshold, tail (as T2H) otherwise.
pub fn degree_groups(p: &Prepared, threshold: u32) -> BTreeMap<usize, EvolutionLabel> {
    p.train_neighbors
        .iter()
        .enumerate()
        .map(|(v, nb)| {
            let head = nb.len() >= threshold as usize;
            (v, if head { EvolutionLabel::SfH } else { EvolutionLabel::T2H })
        })
        .collect()
}

/// A backbone trained on link prediction alone, then with the fairness
/// term added when `with_fair_loss` is set. The trend encoder, the
/// classification and the contrastive terms stay off in both.
pub fn run_fairness_plugin<T: Scalar>(
    backbone: &str,
    with_fair_loss: bool,
    grouping: FairGrouping,
    cfg: &ExperimentConfig,
    p: &Prepared,
    registry: &BackboneRegistry<T>,
) -> Result<ExperimentReport> {
    registry.get(backbone)?;
    let mut base = ExperimentConfig {
        backbone: backbone.to_string(),
        ablation: Some(Ablation::NoDeg),
        ..cfg.clone()
    };
    base.weights.gamma_class = 0.0;
    base.weights.gamma_contrast = 0.0;
    let fair_weight = base.weights.gamma_fair;
    base.weights.gamma_fair = 0.0;
    let labels = match grouping {
        FairGrouping::Trend => p.labels.clone(),
        FairGrouping::Degree => degree_groups(p, cfg.labeler.degree_threshold),
    };
    let data = TrainingData::with_labels(p, &base, labels)?;
    let mut variants = vec![run_variant(backbone, &base, p, &data, registry)?];
    if with_fair_loss {
        let mut c = base.clone();
        c.weights.gamma_fair = fair_weight;
        let name = match grouping {
            FairGrouping::Trend => format!("{backbone} w/ fair loss"),
            FairGrouping::Degree => format!("{backbone} w/ degree fairness"),
        };
        variants.push(run_variant(&name, &c, p, &data, registry)?);
    }
    report("plugin", &base, p, variants)
}

/// Default probe fractions.
pub const SCALE_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const WARMUP_EPOCHS: usize = 2;
pub const TIMED_EPOCHS: usize = 3;

/// Mean epoch time on random user subsamples of `data`, each user with all
/// of its interactions.
pub fn scalability_probe<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset,
    fractions: &[f64],
    registry: &BackboneRegistry<T>,
) -> Result<Vec<ScalePoint>> {
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let probe_cfg = ExperimentConfig {
        epochs: WARMUP_EPOCHS + TIMED_EPOCHS,
        early_stop_patience: usize::MAX,
        ..cfg.clone()
    };
    // Whole users are sampled so that kept vertices keep their degree
    // profiles, and every vertex keeps its label from the complete data: a
    // small subsample labeled on its own can end up with a single group.
    let whole = prepare_records(data, &probe_cfg)?;
    let labels: BTreeMap<&str, EvolutionLabel> = whole
        .labels
        .iter()
        .map(|(&v, &l)| (whole.full.name(v), l))
        .collect();
    let users: Vec<&str> = data
        .records
        .iter()
        .map(|r| r.user_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        let keep = ((users.len() as f64 * f).round() as usize).max(1);
        let picked: BTreeSet<&str> = index::sample(&mut rng, users.len(), keep)
            .into_iter()
            .map(|i| users[i])
            .collect();
        let sub = Dataset {
            records: data
                .records
                .iter()
                .filter(|r| picked.contains(r.user_id.as_str()))
                .cloned()
                .collect(),
            planted: None,
        };
        let mut p = prepare_records(&sub, &probe_cfg)?;
        p.labels = (0..p.full.num_vertices())
            .map(|v| (v, labels[p.full.name(v)]))
            .collect();
        let td = TrainingData::<T>::new(&p, &probe_cfg)?;
        let mut t = Trainer::new(&probe_cfg, seed, &td, registry)?;
        t.run()?;
        let timed = &t.epoch_seconds[WARMUP_EPOCHS..];
        let point = ScalePoint {
            fraction: f,
            vertices: p.train.num_vertices(),
            edges: p.train.snapshots().iter().map(|s| s.edge_count()).sum(),
            parameter_count: t.model.params.scalar_count(),
            mean_epoch_seconds: mean(timed),
        };
        info!("fraction {f}: {:.3} s per epoch over {} edges", point.mean_epoch_seconds, point.edges);
        out.push(point);
    }
    Ok(out)
}

/// Probe report on the configured data source.
pub fn run_scalability<T: Scalar>(cfg: &ExperimentConfig, fractions: &[f64], registry: &BackboneRegistry<T>) -> Result<ExperimentReport> {
    let data = load_dataset(cfg)?;
    let scalability = scalability_probe(cfg, &data, fractions, registry)?;
    Ok(ExperimentReport {
        kind: "scale".into(),
        config_echo: cfg.echo(),
        seeds: cfg.seeds.iter().take(1).copied().collect(),
        group_statistics: BTreeMap::new(),
        variants: Vec::new(),
        scalability,
    })
}
