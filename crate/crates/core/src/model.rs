//! Full embedding model: trend encoder, structural backbone and fusion head
//! over one shared parameter set.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, BackboneRegistry, GraphInput, DEFAULT_BACKBONE};
use crate::error::{Error, Result};
use crate::fusion::{classification_loss, ClassLossMode, FusionConfig, FusionHead};
use crate::graph_store::{degree_series, DegreeSeries, DynamicGraph};
use crate::labeler::EvolutionLabel;
use crate::losses::{
    contrastive_loss, group_fairness_loss, joint_loss, link_prediction_loss, ContrastBatch, DecoderConfig,
    EdgeTerm, LossComponents, LossWeights, Reduction,
};
use crate::matrix::Matrix;
use crate::nn::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::trend::{TrendEncoder, TrendEncoderConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub gnn_layers: usize,
    pub recurrent_layers: usize,
    pub backbone: String,
    /// False removes the trend encoder.
    pub use_trend: bool,
    /// False replaces recurrent sequence encoding with the last snapshot.
    pub recurrent: bool,
    pub log1p: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            gnn_layers: 2,
            recurrent_layers: 3,
            backbone: DEFAULT_BACKBONE.to_string(),
            use_trend: true,
            recurrent: true,
            log1p: false,
        }
    }
}

/// Per-window graph operators and degree series.
#[derive(Clone, Debug)]
pub struct WindowInput<T> {
    pub graph: GraphInput<T>,
    pub series: Vec<DegreeSeries>,
}

impl<T: Scalar> WindowInput<T> {
    pub fn new(g: &DynamicGraph) -> Self {
        WindowInput {
            graph: GraphInput::new(g),
            series: degree_series(g),
        }
    }

    /// One input per window of `window_count` contiguous snapshot ranges.
    pub fn windows(g: &DynamicGraph, window_count: usize) -> Result<Vec<Self>> {
        Ok(g.windows(window_count)?
            .into_iter()
            .map(|r| Self::new(&g.restrict(r)))
            .collect())
    }
}

pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<T>,
    pub trend: Option<TrendEncoder>,
    pub backbone: Box<dyn Backbone<T>>,
    pub head: FusionHead,
}

impl<T: Scalar> std::fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("cfg", &self.cfg)
            .field("parameters", &self.params.scalar_count())
            .finish()
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Final vertex embeddings, `n x dim`.
    pub embeddings: Var,
    /// Rectified class scores, `n x 3`.
    pub scores: Var,
}

impl<T: Scalar> Model<T> {
    pub fn new(
        cfg: ModelConfig,
        num_vertices: usize,
        registry: &BackboneRegistry<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut params = ParamSet::new();
        let trend = if cfg.use_trend {
            let tc = TrendEncoderConfig {
                dim: cfg.dim,
                recurrent_layers: cfg.recurrent_layers,
                log1p: cfg.log1p,
            };
            Some(TrendEncoder::new(tc, &mut params, rng)?)
        } else {
            None
        };
        let bc = BackboneConfig {
            dim: cfg.dim,
            gnn_layers: cfg.gnn_layers,
            recurrent: cfg.recurrent,
        };
        let backbone = registry.build(&cfg.backbone, &bc, num_vertices, &mut params, rng)?;
        let head = FusionHead::new(
            FusionConfig {
                dim: cfg.dim,
                use_trend: cfg.use_trend,
            },
            &mut params,
            rng,
        )?;
        Ok(Model {
            cfg,
            params,
            trend,
            backbone,
            head,
        })
    }

    /// Embeddings averaged over windows, then class scores.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, windows: &[WindowInput<T>]) -> ForwardVars {
        assert!(!windows.is_empty(), "at least one window");
        let per_window: Vec<Var> = windows
            .iter()
            .map(|w| {
                let h_str = self.backbone.forward(tape, bound, &w.graph);
                let h_deg = self.trend.as_ref().map(|t| t.forward(tape, bound, &w.series));
                self.head.fuse(tape, bound, h_deg, h_str)
            })
            .collect();
        let embeddings = if per_window.len() == 1 {
            per_window[0]
        } else {
            tape.mean(&per_window)
        };
        let scores = self.head.class_scores(tape, bound, embeddings);
        ForwardVars { embeddings, scores }
    }

    /// Embedding matrix without gradient bookkeeping.
    pub fn embed(&self, windows: &[WindowInput<T>]) -> Matrix<T> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let f = self.forward(&mut tape, &bound, windows);
        tape.value(f.embeddings).clone()
    }
}

/// Everything the joint objective needs for one step.
#[derive(Clone, Debug)]
pub struct ObjectiveBatch<'a> {
    pub labels: &'a BTreeMap<usize, EvolutionLabel>,
    /// Rows of the classification loss; every vertex must be labeled.
    pub class_vertices: &'a [usize],
    pub edge_terms: &'a [EdgeTerm],
    pub contrast: &'a [ContrastBatch],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub tau: f64,
    pub decoder: DecoderConfig,
    pub class_mode: ClassLossMode,
    pub ds_reduction: Reduction,
    pub class_reduction: Reduction,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            weights: LossWeights::default(),
            tau: 0.5,
            decoder: DecoderConfig::default(),
            class_mode: ClassLossMode::Literal,
            ds_reduction: Reduction::Sum,
            class_reduction: Reduction::Sum,
        }
    }
}

/// Component values of the objective given precomputed embeddings and scores.
pub fn objective_components<T: Scalar>(
    emb: &Matrix<T>,
    scores: &Matrix<T>,
    batch: &ObjectiveBatch<'_>,
    cfg: &ObjectiveConfig,
) -> Result<(LossComponents<T>, [crate::losses::LossValue<T>; 4])> {
    let class_rows = gather(scores, batch.class_vertices);
    let ds = link_prediction_loss(emb, batch.edge_terms, &cfg.decoder, cfg.ds_reduction)?;
    let class = classification_loss(&class_rows, batch.class_vertices, batch.labels, cfg.class_mode, cfg.class_reduction)?;
    let contrast = contrastive_loss(emb, batch.contrast, T::from_f64_lossy(cfg.tau))?;
    let fair = group_fairness_loss(emb, batch.edge_terms, batch.labels, &cfg.decoder, cfg.ds_reduction)?;
    let comps = LossComponents {
        ds: ds.value,
        class: class.value,
        contrast: contrast.value,
        fair: fair.value,
    };
    comps.check_finite()?;
    Ok((comps, [ds, class, contrast, fair]))
}

fn gather<T: Scalar>(m: &Matrix<T>, rows: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(r));
    }
    out
}

fn scatter<T: Scalar>(g: &Matrix<T>, rows: &[usize], n: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(n, g.cols());
    for (i, &r) in rows.iter().enumerate() {
        for (o, &v) in out.row_mut(r).iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

/// Records the joint objective on `tape` and returns the scalar node plus
/// the unweighted components and the two regularization norms.
pub fn record_objective<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    f: ForwardVars,
    batch: &ObjectiveBatch<'_>,
    cfg: &ObjectiveConfig,
) -> Result<(Var, LossComponents<T>, T, T)> {
    let emb = tape.value(f.embeddings).clone();
    let scores = tape.value(f.scores).clone();
    let (comps, [ds, class, contrast, fair]) = objective_components(&emb, &scores, batch, cfg)?;
    let w = &cfg.weights;
    let t = T::from_f64_lossy;

    let mut emb_grad = ds.grad;
    emb_grad.scale(t(w.gamma_ds));
    emb_grad.axpy(t(w.gamma_contrast), &contrast.grad);
    emb_grad.axpy(t(w.gamma_fair), &fair.grad);
    let mut score_grad = scatter(&class.grad, batch.class_vertices, scores.rows());
    score_grad.scale(t(w.gamma_class));
    let weighted = t(w.gamma_ds) * comps.ds
        + t(w.gamma_class) * comps.class
        + t(w.gamma_contrast) * comps.contrast
        + t(w.gamma_fair) * comps.fair;
    let data_term = tape.custom_scalar(weighted, vec![(f.embeddings, emb_grad), (f.scores, score_grad)]);

    let mut terms = vec![(data_term, T::one())];
    let mut l2 = T::zero();
    let mut l1 = T::zero();
    for &p in bound.vars() {
        let sq = tape.sum_squares(p);
        let ab = tape.sum_abs(p);
        l2 += tape.value(sq).item();
        l1 += tape.value(ab).item();
        terms.push((sq, t(w.lambda_l2)));
        terms.push((ab, t(w.lambda_l1)));
    }
    let total = tape.weighted_sum(&terms);
    let expected = joint_loss(&comps, w, l2, l1)?;
    if !tape.value(total).item().is_finite() || !expected.is_finite() {
        return Err(Error::NonFinite("joint"));
    }
    Ok((total, comps, l2, l1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_store::SnapshotGraph;
    use crate::losses::sample_contrast_pairs;
    use crate::nn::max_param_grad_error;
    use rand::SeedableRng;

    #[test]
    fn joint_objective_gradients_match_finite_differences() {
        let names = (0..6).map(|i| format!("v{i}")).collect();
        let snaps = vec![
            SnapshotGraph::new(1, [(0, 1), (1, 2), (3, 4)]),
            SnapshotGraph::new(2, [(0, 2), (2, 5), (4, 5), (1, 3)]),
        ];
        let g = DynamicGraph::new(names, snaps, vec![0.0, 1.0, 2.0]).unwrap();
        let windows = vec![WindowInput::<f64>::new(&g)];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = ModelConfig {
            dim: 3,
            recurrent_layers: 2,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, 6, &BackboneRegistry::default(), &mut rng).unwrap();
        let labels: BTreeMap<usize, EvolutionLabel> = [
            (0, EvolutionLabel::SfH),
            (1, EvolutionLabel::SfH),
            (2, EvolutionLabel::T2H),
            (3, EvolutionLabel::T2H),
            (4, EvolutionLabel::FaT),
            (5, EvolutionLabel::FaT),
        ]
        .into();
        let contrast = sample_contrast_pairs(&labels, &[0, 1, 2, 3, 4, 5], 2, &mut rng).unwrap();
        let terms = vec![
            EdgeTerm { anchor: 0, other: 1, positive: true },
            EdgeTerm { anchor: 0, other: 4, positive: false },
            EdgeTerm { anchor: 2, other: 5, positive: true },
            EdgeTerm { anchor: 2, other: 3, positive: false },
            EdgeTerm { anchor: 3, other: 1, positive: true },
            EdgeTerm { anchor: 1, other: 5, positive: false },
        ];
        let verts: Vec<usize> = (0..6).collect();
        let batch = ObjectiveBatch {
            labels: &labels,
            class_vertices: &verts,
            edge_terms: &terms,
            contrast: &contrast,
        };
        let ocfg = ObjectiveConfig {
            weights: LossWeights {
                lambda_l2: 1e-2,
                lambda_l1: 1e-3,
                ..LossWeights::default()
            },
            ..ObjectiveConfig::default()
        };
        let err = max_param_grad_error(&model.params, 1e-5, |tape, b| {
            let f = model.forward(tape, b, &windows);
            record_objective(tape, b, f, &batch, &ocfg).unwrap().0
        });
        assert!(err < 1e-4, "relative error {err}");
    }
}
