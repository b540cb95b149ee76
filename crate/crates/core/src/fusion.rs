//! Fusion of trend and structural embeddings, and the auxiliary evolution
//! classifier.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::EvolutionLabel;
use crate::losses::{LossValue, Reduction};
use crate::matrix::Matrix;
use crate::nn::{Bound, Linear, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const NUM_CLASSES: usize = 3;

/// How the classification loss treats the classifier's probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassLossMode {
    /// Softmax cross-entropy applied on top of the already normalized
    /// probabilities.
    Literal,
    /// Ordinary cross-entropy of the probabilities.
    SingleSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub dim: usize,
    /// False drops the trend input and narrows the fusion layer to `dim`.
    pub use_trend: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    pub cfg: FusionConfig,
    pub fuse: Linear,
    pub hidden: Linear,
    pub out: Linear,
}

impl FusionHead {
    pub fn new<T: Scalar>(cfg: FusionConfig, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::Config("fusion dim must be positive".into()));
        }
        let d = cfg.dim;
        let input = if cfg.use_trend { 2 * d } else { d };
        let fuse = Linear::new(params, "fusion.g", input, d, true, rng);
        let hidden = Linear::new(params, "fusion.mlp1", d, d, true, rng);
        let out = Linear::new(params, "fusion.mlp2", d, NUM_CLASSES, true, rng);
        Ok(FusionHead { cfg, fuse, hidden, out })
    }

    /// Final vertex embeddings.
    pub fn fuse<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, h_deg: Option<Var>, h_str: Var) -> Var {
        let x = match (self.cfg.use_trend, h_deg) {
            (true, Some(d)) => tape.concat_cols(&[d, h_str]),
            (false, _) => h_str,
            (true, None) => panic!("fusion configured with trend input but none was given"),
        };
        self.fuse.forward(tape, bound, x)
    }

    /// Rectified class scores; their row softmax is the class distribution.
    pub fn class_scores<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, h: Var) -> Var {
        let a = self.hidden.forward(tape, bound, h);
        let a = tape.relu(a);
        let logits = self.out.forward(tape, bound, a);
        tape.relu(logits)
    }
}

/// `W [h_deg; h_str] + b` for single vectors.
pub fn fuse_vectors<T: Scalar>(w: &Matrix<T>, b: &[T], h_deg: &[T], h_str: &[T]) -> Result<Vec<T>> {
    if h_deg.len() != h_str.len() {
        return Err(Error::DimensionMismatch {
            expected: h_deg.len(),
            actual: h_str.len(),
        });
    }
    let x: Vec<T> = h_deg.iter().chain(h_str).copied().collect();
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: w.cols(),
            actual: x.len(),
        });
    }
    Ok((0..w.rows())
        .map(|r| w.row(r).iter().zip(&x).map(|(&a, &v)| a * v).sum::<T>() + b[r])
        .collect())
}

pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Row-wise softmax of the class scores.
pub fn class_probabilities<T: Scalar>(scores: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        out.row_mut(r).copy_from_slice(&softmax(scores.row(r)));
    }
    out
}

/// `-log softmax(values)[label]`.
pub fn softmax_cross_entropy<T: Scalar>(values: &[T], label: usize) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let z: T = values.iter().map(|&v| (v - max).exp()).sum();
    z.ln() + max - values[label]
}

/// Classification loss over the rows `vertices` of `scores`, with gradient
/// with respect to `scores`. Row `i` of `scores` belongs to vertex
/// `vertices[i]`.
pub fn classification_loss<T: Scalar>(
    scores: &Matrix<T>,
    vertices: &[usize],
    labels: &BTreeMap<usize, EvolutionLabel>,
    mode: ClassLossMode,
    reduction: Reduction,
) -> Result<LossValue<T>> {
    assert_eq!(scores.rows(), vertices.len(), "one score row per vertex");
    let mut out = LossValue::zero(scores.rows(), scores.cols());
    if vertices.is_empty() {
        return Ok(out);
    }
    let weight = match reduction {
        Reduction::Sum => T::one(),
        Reduction::Mean => T::one() / T::from_usize_lossy(vertices.len()),
    };
    for (i, v) in vertices.iter().enumerate() {
        let y = labels
            .get(v)
            .ok_or_else(|| Error::MissingLabel(v.to_string()))?
            .class_index();
        let p = softmax(scores.row(i));
        let grad = out.grad.row_mut(i);
        match mode {
            ClassLossMode::Literal => {
                out.value += weight * softmax_cross_entropy(&p, y);
                let q = softmax(&p);
                let g: Vec<T> = q
                    .iter()
                    .enumerate()
                    .map(|(j, &qj)| if j == y { qj - T::one() } else { qj })
                    .collect();
                let pg: T = p.iter().zip(&g).map(|(&a, &b)| a * b).sum();
                for j in 0..p.len() {
                    grad[j] = weight * p[j] * (g[j] - pg);
                }
            }
            ClassLossMode::SingleSoftmax => {
                out.value += weight * softmax_cross_entropy(scores.row(i), y);
                for j in 0..p.len() {
                    let t = if j == y { T::one() } else { T::zero() };
                    grad[j] = weight * (p[j] - t);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::max_param_grad_error;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fuse_projection_examples() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
        assert_eq!(fuse_vectors(&w, &[0.0, 0.0], &[3.0, -1.0], &[7.0, 8.0]).unwrap(), vec![3.0, -1.0]);
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]);
        assert_eq!(fuse_vectors(&w, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert!(fuse_vectors(&w, &[0.0, 0.0], &[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2f64.ln(), 0.0, 0.0]);
        for (a, b) in p.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        let u = softmax(&[0.7f64; 3]);
        assert!(u.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn literal_loss_closed_forms() {
        // Uniform probabilities stay uniform under the second softmax.
        let uniform = [1.0 / 3.0; 3];
        assert!((softmax_cross_entropy(&uniform, 0) - 3f64.ln()).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for m in [0.5f64, 1.0, 2.0, 4.0] {
            let l = softmax_cross_entropy(&[m, 0.0, 0.0], 0);
            assert!((l - (1.0 + 2.0 * (-m).exp()).ln()).abs() < 1e-14);
            assert!(l < last);
            last = l;
        }
        let empty = classification_loss::<f64>(
            &Matrix::zeros(0, 3),
            &[],
            &BTreeMap::new(),
            ClassLossMode::Literal,
            Reduction::Sum,
        )
        .unwrap();
        assert_eq!(empty.value, 0.0);
    }

    #[test]
    fn missing_label_is_an_error() {
        let s = Matrix::zeros(1, 3);
        let r = classification_loss::<f64>(&s, &[4], &BTreeMap::new(), ClassLossMode::Literal, Reduction::Sum);
        assert!(matches!(r, Err(Error::MissingLabel(_))));
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let labels: BTreeMap<usize, EvolutionLabel> =
            [(0, EvolutionLabel::SfH), (1, EvolutionLabel::T2H), (2, EvolutionLabel::FaT)].into();
        for (use_trend, mode) in [(true, ClassLossMode::Literal), (false, ClassLossMode::SingleSoftmax)] {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut p = ParamSet::<f64>::new();
            let head = FusionHead::new(FusionConfig { dim: 3, use_trend }, &mut p, &mut rng).unwrap();
            let deg = Matrix::from_rows(&[vec![0.2, -0.4, 1.0], vec![0.5, 0.5, -0.3], vec![-1.0, 0.1, 0.4]]);
            let stru = Matrix::from_rows(&[vec![1.1, 0.3, -0.2], vec![-0.6, 0.8, 0.9], vec![0.0, -0.7, 0.3]]);
            let err = max_param_grad_error(&p, 1e-5, |tape, b| {
                let d = tape.constant(deg.clone());
                let s = tape.constant(stru.clone());
                let h = head.fuse(tape, b, Some(d), s);
                let sc = head.class_scores(tape, b, h);
                let l = classification_loss(tape.value(sc), &[0, 1, 2], &labels, mode, Reduction::Sum).unwrap();
                tape.custom_scalar(l.value, vec![(sc, l.grad)])
            });
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(x in prop::collection::vec(-30.0f64..30.0, 3)) {
            let p = softmax(&x);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn loss_invariant_under_class_permutation(
            x in prop::collection::vec(0.0f64..5.0, 3),
            y in 0usize..3,
            rot in 1usize..3,
        ) {
            let p = softmax(&x);
            let perm = |i: usize| (i + rot) % 3;
            let mut pp = [0.0; 3];
            for i in 0..3 { pp[perm(i)] = p[i]; }
            let a = softmax_cross_entropy(&p, y);
            let b = softmax_cross_entropy(&pp, perm(y));
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn fusion_is_linear_without_bias(
            x in prop::collection::vec(-2.0f64..2.0, 4),
            alpha in -3.0f64..3.0,
            w in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            let w = Matrix::from_vec(2, 4, w);
            let base = fuse_vectors(&w, &[0.0, 0.0], &x[..2], &x[2..]).unwrap();
            let sx: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            let scaled = fuse_vectors(&w, &[0.0, 0.0], &sx[..2], &sx[2..]).unwrap();
            for (a, b) in scaled.iter().zip(&base) {
                prop_assert!((a - alpha * b).abs() < 1e-12);
            }
        }
    }
}
