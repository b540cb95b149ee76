//! Training loop with early stopping, divergence handling and resumable state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneRegistry;
use crate::error::{Error, Result};
use crate::labeler::EvolutionLabel;
use crate::losses::{build_edge_terms, joint_loss, sample_contrast_pairs, ContrastBatch, EdgeTerm};
use crate::matrix::Matrix;
use crate::model::{objective_components, record_objective, Model, ObjectiveBatch, ObjectiveConfig, WindowInput};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::tape::Tape;

use super::checkpoint::{self, CheckpointHeader, TensorInfo};
use super::config::ExperimentConfig;
use super::data::Prepared;

/// Stream offset of the fixed monitoring sample.
const MONITOR_STREAM: u64 = 0x006d_6f6e_6974_6f72;

/// Losses of one epoch, all at the parameters before its update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ds: f64,
    pub class: f64,
    pub contrast: f64,
    pub fair: f64,
    pub l2: f64,
    pub l1: f64,
    /// Joint loss on a sample drawn once per run; drives early stopping.
    pub monitor: f64,
}

/// Inputs of the optimization that do not change between epochs.
#[derive(Clone, Debug)]
pub struct TrainingData<T> {
    pub windows: Vec<WindowInput<T>>,
    /// Labels seen by the classification, contrastive and fairness terms.
    pub labels: BTreeMap<usize, EvolutionLabel>,
    pub neighbors: Vec<Vec<usize>>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub vertices: Vec<usize>,
    is_user: Vec<bool>,
}

impl<T: Scalar> TrainingData<T> {
    pub fn new(p: &Prepared, cfg: &ExperimentConfig) -> Result<Self> {
        Self::with_labels(p, cfg, p.labels.clone())
    }

    /// Training inputs with a replacement grouping for the label-driven terms.
    pub fn with_labels(p: &Prepared, cfg: &ExperimentConfig, labels: BTreeMap<usize, EvolutionLabel>) -> Result<Self> {
        let n = p.train.num_vertices();
        let mut is_user = vec![false; n];
        for &u in &p.users {
            is_user[u] = true;
        }
        Ok(TrainingData {
            windows: WindowInput::windows(&p.train, cfg.windows)?,
            labels,
            neighbors: p.train_neighbors.clone(),
            users: p.users.clone(),
            items: p.items.clone(),
            vertices: (0..n).collect(),
            is_user,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    fn sample(&self, n_neg: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<EdgeTerm>, Vec<ContrastBatch>)> {
        // Negatives of a user are items and vice versa.
        let terms = build_edge_terms(
            &self.neighbors,
            &self.neighbors,
            &self.vertices,
            |v| Some(if self.is_user[v] { &self.items[..] } else { &self.users[..] }),
            rng,
        );
        let contrast = sample_contrast_pairs(&self.labels, &self.vertices, n_neg, rng)?;
        Ok((terms, contrast))
    }
}

/// Resumable optimization state over borrowed data.
pub struct Trainer<'a, T: Scalar> {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub model: Model<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    data: &'a TrainingData<T>,
    objective: ObjectiveConfig,
    monitor: (Vec<EdgeTerm>, Vec<ContrastBatch>),
    pub epoch: usize,
    pub trace: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch, not part of the reproducible state.
    pub epoch_seconds: Vec<f64>,
    stall: usize,
    prev_monitor: Option<f64>,
    pub converged_at: Option<usize>,
    /// Where a divergence writes the last finite state.
    pub divergence_checkpoint: Option<PathBuf>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(cfg: &ExperimentConfig, seed: u64, data: &'a TrainingData<T>, registry: &BackboneRegistry<T>) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.effective();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.model_config(), data.num_vertices(), registry, &mut rng)?;
        let adam = Adam::new(cfg.adam_config(), &model.params);
        let mut monitor_rng = ChaCha8Rng::seed_from_u64(seed ^ MONITOR_STREAM);
        let monitor = data.sample(cfg.n_neg, &mut monitor_rng)?;
        info!(
            "seed {seed}: {} parameters over {} vertices",
            model.params.scalar_count(),
            data.num_vertices()
        );
        Ok(Trainer {
            objective: cfg.objective_config(),
            cfg,
            seed,
            model,
            adam,
            rng,
            data,
            monitor,
            epoch: 0,
            trace: Vec::new(),
            epoch_seconds: Vec::new(),
            stall: 0,
            prev_monitor: None,
            converged_at: None,
            divergence_checkpoint: None,
        })
    }

    pub fn finished(&self) -> bool {
        self.converged_at.is_some() || self.epoch >= self.cfg.epochs
    }

    /// One forward pass, sampling, joint loss and update.
    pub fn step(&mut self) -> Result<&EpochRecord> {
        let start = Instant::now();
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape);
        let f = self.model.forward(&mut tape, &bound, &self.data.windows);
        let (terms, contrast) = self.data.sample(self.cfg.n_neg, &mut self.rng)?;
        let batch = ObjectiveBatch {
            labels: &self.data.labels,
            class_vertices: &self.data.vertices,
            edge_terms: &terms,
            contrast: &contrast,
        };
        let (total, comps, l2, l1) = match record_objective(&mut tape, &bound, f, &batch, &self.objective) {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => return Err(self.diverge(what)),
            Err(e) => return Err(e),
        };
        let monitor_batch = ObjectiveBatch {
            edge_terms: &self.monitor.0,
            contrast: &self.monitor.1,
            ..batch
        };
        let (mc, _) = match objective_components(tape.value(f.embeddings), tape.value(f.scores), &monitor_batch, &self.objective) {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => return Err(self.diverge(what)),
            Err(e) => return Err(e),
        };
        let monitor = joint_loss(&mc, &self.objective.weights, l2, l1)?.to_f64_lossy();

        let mut grads = tape.backward(total);
        let grads: Vec<Option<Matrix<T>>> = bound.vars().iter().map(|&v| grads.take(v)).collect();
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(self.diverge("gradient"));
        }
        self.adam.update(&mut self.model.params, &grads);

        let record = EpochRecord {
            epoch: self.epoch,
            loss: tape.value(total).item().to_f64_lossy(),
            ds: comps.ds.to_f64_lossy(),
            class: comps.class.to_f64_lossy(),
            contrast: comps.contrast.to_f64_lossy(),
            fair: comps.fair.to_f64_lossy(),
            l2: l2.to_f64_lossy(),
            l1: l1.to_f64_lossy(),
            monitor,
        };
        self.epoch += 1;
        if let Some(prev) = self.prev_monitor {
            if (monitor - prev).abs() < self.cfg.early_stop_delta {
                self.stall += 1;
            } else {
                self.stall = 0;
            }
        }
        self.prev_monitor = Some(monitor);
        if self.stall >= self.cfg.early_stop_patience && self.converged_at.is_none() {
            self.converged_at = Some(self.epoch);
            info!("seed {}: converged after {} epochs", self.seed, self.epoch);
        }
        debug!(
            "epoch {} loss {:.6} monitor {:.6} (ds {:.4} class {:.4} contrast {:.4} fair {:.4})",
            record.epoch, record.loss, record.monitor, record.ds, record.class, record.contrast, record.fair
        );
        self.trace.push(record);
        self.epoch_seconds.push(start.elapsed().as_secs_f64());
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Trains until convergence or the epoch budget.
    pub fn run(&mut self) -> Result<()> {
        while !self.finished() {
            self.step()?;
        }
        Ok(())
    }

    fn diverge(&self, what: &str) -> Error {
        warn!("seed {}: non-finite {what} at epoch {}", self.seed, self.epoch);
        if let Some(path) = &self.divergence_checkpoint {
            match self.save(path) {
                Ok(()) => warn!("last finite state written to {}", path.display()),
                Err(e) => warn!("could not write divergence checkpoint: {e}"),
            }
        }
        Error::Diverged { epoch: self.epoch }
    }

    /// Embeddings of the current parameters, averaged over windows.
    pub fn embeddings(&self) -> Matrix<T> {
        self.model.embed(&self.data.windows)
    }

    pub fn header(&self) -> CheckpointHeader {
        let params = &self.model.params;
        CheckpointHeader {
            scalar: T::NAME.to_string(),
            config: self.cfg.clone(),
            seed: self.seed,
            epoch: self.epoch,
            rng: self.rng.clone(),
            tensors: params
                .ids()
                .map(|id| {
                    let m = params.get(id);
                    TensorInfo {
                        name: params.name(id).to_string(),
                        rows: m.rows(),
                        cols: m.cols(),
                    }
                })
                .collect(),
            parameter_count: params.scalar_count(),
            adam: self.adam.cfg,
            adam_step: self.adam.step,
            trace: self.trace.clone(),
            stall: self.stall,
            prev_monitor: self.prev_monitor,
            converged_at: self.converged_at,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.header(), self.model.params.values(), &self.adam.m, &self.adam.v)
    }

    /// Restores a saved state; `data` must be the inputs it was trained on.
    pub fn resume(path: impl AsRef<Path>, data: &'a TrainingData<T>, registry: &BackboneRegistry<T>) -> Result<Self> {
        let ck = checkpoint::load::<T>(path)?;
        let h = ck.header;
        let mut t = Trainer::new(&h.config, h.seed, data, registry)?;
        let params = &mut t.model.params;
        if params.len() != h.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {}",
                h.tensors.len(),
                params.len()
            )));
        }
        for (i, info) in h.tensors.iter().enumerate() {
            let cur = &params.values()[i];
            if params.names()[i] != info.name || cur.shape() != (info.rows, info.cols) {
                return Err(Error::Checkpoint(format!("tensor `{}` does not match the model", info.name)));
            }
        }
        params.values_mut().clone_from_slice(&ck.params);
        t.adam.cfg = h.adam;
        t.adam.step = h.adam_step;
        t.adam.m = ck.m;
        t.adam.v = ck.v;
        t.rng = h.rng;
        t.epoch = h.epoch;
        t.trace = h.trace;
        t.stall = h.stall;
        t.prev_monitor = h.prev_monitor;
        t.converged_at = h.converged_at;
        Ok(t)
    }
}

/// Trained model and its loss history.
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub trace: Vec<EpochRecord>,
    pub epoch_seconds: Vec<f64>,
    pub converged_at: Option<usize>,
}

pub fn run_training<T: Scalar>(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &TrainingData<T>,
    registry: &BackboneRegistry<T>,
) -> Result<TrainOutcome<T>> {
    let mut t = Trainer::new(cfg, seed, data, registry)?;
    t.run()?;
    Ok(TrainOutcome {
        model: t.model,
        trace: t.trace,
        epoch_seconds: t.epoch_seconds,
        converged_at: t.converged_at,
    })
}
