//! Debiasing objective: group contrast, link prediction through a
//! Fermi-Dirac decoder, T2H/SfH parity, and the weighted joint loss.
//!
//! Each loss works on a plain embedding matrix and returns its value together
//! with the gradient with respect to that matrix, so it can be attached to a
//! tape as a single node.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::EvolutionLabel;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Probability clamp of the decoder.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Scalar loss and its gradient with respect to the input matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: Matrix<T>,
}

impl<T: Scalar> LossValue<T> {
    pub fn zero(rows: usize, cols: usize) -> Self {
        LossValue {
            value: T::zero(),
            grad: Matrix::zeros(rows, cols),
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity of rows `a` and `b` of `emb`.
pub fn cosine<T: Scalar>(emb: &Matrix<T>, a: usize, b: usize) -> Result<T> {
    let (ra, rb) = (emb.row(a), emb.row(b));
    let na = dot(ra, ra).sqrt();
    let nb = dot(rb, rb).sqrt();
    if na == T::zero() {
        return Err(Error::ZeroNorm(a));
    }
    if nb == T::zero() {
        return Err(Error::ZeroNorm(b));
    }
    Ok(dot(ra, rb) / (na * nb))
}

/// Adds `scale * d cos(a, b) / d emb` into `grad`.
fn add_cosine_grad<T: Scalar>(emb: &Matrix<T>, a: usize, b: usize, scale: T, grad: &mut Matrix<T>) {
    let (ra, rb) = (emb.row(a), emb.row(b));
    let na = dot(ra, ra).sqrt();
    let nb = dot(rb, rb).sqrt();
    let s = dot(ra, rb) / (na * nb);
    let inv = T::one() / (na * nb);
    let (ca, cb) = (s / (na * na), s / (nb * nb));
    let da: Vec<T> = ra.iter().zip(rb).map(|(&x, &y)| scale * (y * inv - ca * x)).collect();
    let db: Vec<T> = ra.iter().zip(rb).map(|(&x, &y)| scale * (x * inv - cb * y)).collect();
    for (g, d) in grad.row_mut(a).iter_mut().zip(da) {
        *g += d;
    }
    for (g, d) in grad.row_mut(b).iter_mut().zip(db) {
        *g += d;
    }
}

/// One anchor with a same-label positive and different-label negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastBatch {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// InfoNCE over cosine similarities, averaged over anchors. Zero for an
/// empty batch.
pub fn contrastive_loss<T: Scalar>(emb: &Matrix<T>, batch: &[ContrastBatch], tau: T) -> Result<LossValue<T>> {
    if !(tau > T::zero()) {
        return Err(Error::Config("contrastive temperature must be positive".into()));
    }
    let mut out = LossValue::zero(emb.rows(), emb.cols());
    if batch.is_empty() {
        return Ok(out);
    }
    let weight = T::one() / T::from_usize_lossy(batch.len());
    for b in batch {
        let mut logits = Vec::with_capacity(1 + b.negatives.len());
        logits.push(cosine(emb, b.anchor, b.positive)? / tau);
        for &n in &b.negatives {
            logits.push(cosine(emb, b.anchor, n)? / tau);
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.value += weight * (z.ln() + max - logits[0]);
        let others = std::iter::once(b.positive).chain(b.negatives.iter().copied());
        for (j, other) in others.enumerate() {
            let mut d = exps[j] / z;
            if j == 0 {
                d -= T::one();
            }
            add_cosine_grad(emb, b.anchor, other, weight * d / tau, &mut out.grad);
        }
    }
    Ok(out)
}

/// `|a - b|`.
pub fn fairness_loss<T: Scalar>(loss_t2h: T, loss_sfh: T) -> T {
    (loss_t2h - loss_sfh).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub radius: f64,
    pub temperature: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            radius: 2.0,
            temperature: 1.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("decoder temperature must be positive".into()));
        }
        Ok(())
    }

    /// Edge probability `1 / (exp((d2 - r) / t) + 1)`, unclamped.
    pub fn probability<T: Scalar>(&self, d2: T) -> T {
        let r = T::from_f64_lossy(self.radius);
        let t = T::from_f64_lossy(self.temperature);
        T::one() / (((d2 - r) / t).exp() + T::one())
    }
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// A decoded vertex pair: observed (`positive`) or sampled non-edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTerm {
    /// Vertex whose edge set the term belongs to.
    pub anchor: usize,
    pub other: usize,
    pub positive: bool,
}

/// Binary cross-entropy over decoded pairs. Clamped probabilities carry no
/// gradient.
pub fn link_prediction_loss<T: Scalar>(
    emb: &Matrix<T>,
    terms: &[EdgeTerm],
    dec: &DecoderConfig,
    reduction: Reduction,
) -> Result<LossValue<T>> {
    dec.validate()?;
    let mut out = LossValue::zero(emb.rows(), emb.cols());
    if terms.is_empty() {
        return Ok(out);
    }
    let weight = match reduction {
        Reduction::Sum => T::one(),
        Reduction::Mean => T::one() / T::from_usize_lossy(terms.len()),
    };
    let eps = T::from_f64_lossy(PROB_EPS);
    let t = T::from_f64_lossy(dec.temperature);
    let two = T::one() + T::one();
    let mut clamped = 0usize;
    for term in terms {
        let (a, b) = (emb.row(term.anchor), emb.row(term.other));
        let d2 = squared_distance(a, b);
        let p = dec.probability(d2);
        let (pc, active) = if p < eps {
            (eps, false)
        } else if p > T::one() - eps {
            (T::one() - eps, false)
        } else {
            (p, true)
        };
        if !active {
            clamped += 1;
        }
        let (loss, dl_dd2) = if term.positive {
            (-pc.ln(), (T::one() - p) / t)
        } else {
            (-(T::one() - pc).ln(), -p / t)
        };
        out.value += weight * loss;
        if active && term.anchor != term.other {
            let coef = weight * dl_dd2 * two;
            let diff: Vec<T> = a.iter().zip(b).map(|(&x, &y)| coef * (x - y)).collect();
            for (g, &d) in out.grad.row_mut(term.anchor).iter_mut().zip(&diff) {
                *g += d;
            }
            for (g, &d) in out.grad.row_mut(term.other).iter_mut().zip(&diff) {
                *g -= d;
            }
        }
    }
    if clamped > 0 {
        log::debug!("{clamped} decoder probabilities clamped to [{PROB_EPS}, 1 - {PROB_EPS}]");
    }
    Ok(out)
}

/// Parity term between the link-prediction losses of terms anchored at T2H
/// and at SfH vertices, each group reduced like the main link loss. A
/// missing group contributes zero.
pub fn group_fairness_loss<T: Scalar>(
    emb: &Matrix<T>,
    terms: &[EdgeTerm],
    labels: &BTreeMap<usize, EvolutionLabel>,
    dec: &DecoderConfig,
    reduction: Reduction,
) -> Result<LossValue<T>> {
    let pick = |want: EvolutionLabel| -> Vec<EdgeTerm> {
        terms
            .iter()
            .filter(|t| labels.get(&t.anchor) == Some(&want))
            .copied()
            .collect()
    };
    let t2h = pick(EvolutionLabel::T2H);
    let sfh = pick(EvolutionLabel::SfH);
    if t2h.is_empty() || sfh.is_empty() {
        warn!("fairness loss skipped: a T2H or SfH group has no terms in this batch");
        return Ok(LossValue::zero(emb.rows(), emb.cols()));
    }
    let a = link_prediction_loss(emb, &t2h, dec, reduction)?;
    let b = link_prediction_loss(emb, &sfh, dec, reduction)?;
    let diff = a.value - b.value;
    let sign = if diff > T::zero() {
        T::one()
    } else if diff < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    let mut grad = a.grad;
    grad.axpy(-T::one(), &b.grad);
    grad.scale(sign);
    Ok(LossValue {
        value: fairness_loss(a.value, b.value),
        grad,
    })
}

/// Weights of the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma_ds: f64,
    pub gamma_class: f64,
    pub gamma_contrast: f64,
    pub gamma_fair: f64,
    /// Coefficient of the squared L2 norm of all parameters.
    pub lambda_l2: f64,
    /// Coefficient of the L1 norm of all parameters.
    pub lambda_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma_ds: 0.25,
            gamma_class: 0.25,
            gamma_contrast: 0.25,
            gamma_fair: 0.25,
            lambda_l2: 1e-5,
            lambda_l1: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gamma_ds,
            self.gamma_class,
            self.gamma_contrast,
            self.gamma_fair,
            self.lambda_l2,
            self.lambda_l1,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Values of the four loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents<T> {
    pub ds: T,
    pub class: T,
    pub contrast: T,
    pub fair: T,
}

impl<T: Scalar> LossComponents<T> {
    /// Fails on the first non-finite component.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("link_prediction", self.ds),
            ("classification", self.class),
            ("contrastive", self.contrast),
            ("fairness", self.fair),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }
}

/// `sum gamma_i * component_i + lambda_l2 * l2_sq + lambda_l1 * l1`.
pub fn joint_loss<T: Scalar>(c: &LossComponents<T>, w: &LossWeights, l2_sq: T, l1: T) -> Result<T> {
    c.check_finite()?;
    w.validate()?;
    let f = T::from_f64_lossy;
    Ok(f(w.gamma_ds) * c.ds
        + f(w.gamma_class) * c.class
        + f(w.gamma_contrast) * c.contrast
        + f(w.gamma_fair) * c.fair
        + f(w.lambda_l2) * l2_sq
        + f(w.lambda_l1) * l1)
}

/// For each anchor, one uniformly drawn same-label positive and up to
/// `n_neg` distinct different-label negatives. Anchors alone in their group
/// are skipped.
pub fn sample_contrast_pairs(
    labels: &BTreeMap<usize, EvolutionLabel>,
    anchors: &[usize],
    n_neg: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ContrastBatch>> {
    let mut groups: BTreeMap<EvolutionLabel, Vec<usize>> = BTreeMap::new();
    for (&v, &l) in labels {
        groups.entry(l).or_default().push(v);
    }
    let complements: BTreeMap<EvolutionLabel, Vec<usize>> = groups
        .keys()
        .map(|&l| {
            let rest = labels.iter().filter(|(_, &m)| m != l).map(|(&v, _)| v).collect();
            (l, rest)
        })
        .collect();
    let mut skipped = 0usize;
    let mut short = 0usize;
    let mut out = Vec::with_capacity(anchors.len());
    for &a in anchors {
        let label = *labels.get(&a).ok_or_else(|| Error::MissingLabel(a.to_string()))?;
        let group = &groups[&label];
        if group.len() < 2 {
            skipped += 1;
            continue;
        }
        let others = &complements[&label];
        if others.is_empty() {
            return Err(Error::Config("contrast sampling needs at least two labels".into()));
        }
        let pos_in_group = group.binary_search(&a).expect("anchor is in its group");
        let mut k = rng.random_range(0..group.len() - 1);
        if k >= pos_in_group {
            k += 1;
        }
        let take = n_neg.min(others.len());
        if take < n_neg {
            short += 1;
        }
        let negatives = index::sample(rng, others.len(), take)
            .into_iter()
            .map(|i| others[i])
            .collect();
        out.push(ContrastBatch {
            anchor: a,
            positive: group[k],
            negatives,
        });
    }
    if skipped > 0 {
        warn!("{skipped} contrast anchors skipped: their label group has a single member");
    }
    if short > 0 {
        warn!("{short} contrast anchors received fewer than {n_neg} negatives");
    }
    Ok(out)
}

/// Up to `count` distinct vertices drawn uniformly from `candidates` (or
/// all `0..neighbors.len()`), excluding `v` and its union-graph neighbors.
pub fn sample_negatives(
    neighbors: &[Vec<usize>],
    v: usize,
    count: usize,
    candidates: Option<&[usize]>,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = candidates.map_or(neighbors.len(), <[usize]>::len);
    let at = |i: usize| candidates.map_or(i, |c| c[i]);
    let excluded = |u: usize| u == v || neighbors[v].binary_search(&u).is_ok();
    let blocked = match candidates {
        None => neighbors[v].len() + 1,
        Some(c) => c.iter().filter(|&&u| excluded(u)).count(),
    };
    let available = n.saturating_sub(blocked);
    if available == 0 || count == 0 {
        if count > 0 {
            warn!("vertex {v} has no non-neighbors to sample");
        }
        return Vec::new();
    }
    if available <= 2 * count {
        let pool: Vec<usize> = (0..n).map(at).filter(|&u| !excluded(u)).collect();
        if pool.len() <= count {
            if pool.len() < count {
                warn!("vertex {v}: only {} non-neighbors for {count} negatives", pool.len());
            }
            return pool;
        }
        return index::sample(rng, pool.len(), count)
            .into_iter()
            .map(|i| pool[i])
            .collect();
    }
    let mut chosen = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    while chosen.len() < count {
        let u = at(rng.random_range(0..n));
        if !excluded(u) && seen.insert(u) {
            chosen.push(u);
        }
    }
    chosen
}

/// Negative pairs `(v, u)` against the union graph of `g`.
pub fn sample_negative_edges(
    g: &crate::graph_store::DynamicGraph,
    v: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let nb = g.union_neighbors();
    sample_negatives(&nb, v, count, None, rng)
        .into_iter()
        .map(|u| (v, u))
        .collect()
}

/// For every vertex in `anchors`, its positive edges and as many sampled
/// negatives. `candidates[v]`, when given, restricts the negatives of `v`.
pub fn build_edge_terms<'a>(
    positives: &[Vec<usize>],
    neighbors: &[Vec<usize>],
    anchors: &[usize],
    candidates: impl Fn(usize) -> Option<&'a [usize]>,
    rng: &mut impl Rng,
) -> Vec<EdgeTerm> {
    let mut out = Vec::new();
    for &v in anchors {
        let pos = &positives[v];
        if pos.is_empty() {
            continue;
        }
        out.extend(pos.iter().map(|&u| EdgeTerm {
            anchor: v,
            other: u,
            positive: true,
        }));
        let negs = sample_negatives(neighbors, v, pos.len(), candidates(v), rng);
        out.extend(negs.into_iter().map(|u| EdgeTerm {
            anchor: v,
            other: u,
            positive: false,
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn numeric_check<F: Fn(&Matrix<f64>) -> f64>(m: &Matrix<f64>, analytic: &Matrix<f64>, f: F) {
        let eps = 1e-6;
        for k in 0..m.len() {
            let mut up = m.clone();
            up.as_mut_slice()[k] += eps;
            let mut down = m.clone();
            down.as_mut_slice()[k] -= eps;
            let num = (f(&up) - f(&down)) / (2.0 * eps);
            let a = analytic.as_slice()[k];
            assert!((a - num).abs() < 1e-6 * (1.0 + num.abs()), "entry {k}: {a} vs {num}");
        }
    }

    #[test]
    fn symmetric_single_negative_gives_ln2() {
        let e = emb(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let b = [ContrastBatch { anchor: 0, positive: 1, negatives: vec![2] }];
        let l = contrastive_loss(&e, &b, 0.5).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn opposite_cosines_at_unit_temperature() {
        let e = emb(&[&[1.0, 0.0], &[2.0, 0.0], &[-3.0, 0.0]]);
        let b = [ContrastBatch { anchor: 0, positive: 1, negatives: vec![2] }];
        let l = contrastive_loss(&e, &b, 1.0).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((l.value - expected).abs() < 1e-12);
        assert!((expected - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn zero_norm_is_an_error() {
        let e = emb(&[&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]]);
        let b = [ContrastBatch { anchor: 0, positive: 1, negatives: vec![2] }];
        assert!(matches!(contrastive_loss(&e, &b, 0.5), Err(Error::ZeroNorm(1))));
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let e = emb(&[&[0.3, -1.0, 0.4], &[1.2, 0.1, -0.5], &[-0.7, 0.9, 0.2], &[0.5, 0.5, 0.5]]);
        let b = vec![
            ContrastBatch { anchor: 0, positive: 1, negatives: vec![2, 3] },
            ContrastBatch { anchor: 2, positive: 3, negatives: vec![0] },
        ];
        let l = contrastive_loss(&e, &b, 0.5).unwrap();
        numeric_check(&e, &l.grad, |m| contrastive_loss(m, &b, 0.5).unwrap().value);
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(fairness_loss(0.4, 0.4), 0.0);
        assert!((fairness_loss(0.5f64, 0.2) - 0.3).abs() < 1e-12);
        assert_eq!(fairness_loss(0.2, 0.5), fairness_loss(0.5, 0.2));
    }

    #[test]
    fn decoder_points() {
        let dec = DecoderConfig::default();
        assert_eq!(dec.probability(2.0), 0.5);
        let p = dec.probability(2.0 + 3f64.ln());
        assert!((p - 0.25).abs() < 1e-15);
        // One positive and one negative at the midpoint.
        let e = emb(&[&[0.0, 0.0], &[2f64.sqrt(), 0.0], &[0.0, 2f64.sqrt()]]);
        let terms = [
            EdgeTerm { anchor: 0, other: 1, positive: true },
            EdgeTerm { anchor: 0, other: 2, positive: false },
        ];
        let l = link_prediction_loss(&e, &terms, &dec, Reduction::Sum).unwrap();
        assert!((l.value - 2.0 * 2f64.ln()).abs() < 1e-12);
        let e = emb(&[&[0.0], &[(2.0 + 3f64.ln()).sqrt()]]);
        let single = [EdgeTerm { anchor: 0, other: 1, positive: true }];
        let l = link_prediction_loss(&e, &single, &dec, Reduction::Sum).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_separation_drives_loss_to_zero() {
        let dec = DecoderConfig::default();
        let e = emb(&[&[0.0], &[0.0], &[100.0]]);
        let terms = [
            EdgeTerm { anchor: 0, other: 1, positive: true },
            EdgeTerm { anchor: 0, other: 2, positive: false },
        ];
        let l = link_prediction_loss(&e, &terms, &dec, Reduction::Sum).unwrap();
        assert!(l.value < 0.2);
        let far = emb(&[&[0.0], &[0.0], &[1e3]]);
        let l2 = link_prediction_loss(&far, &terms, &dec, Reduction::Sum).unwrap();
        assert!(l2.value <= l.value && l2.value >= 0.0);
    }

    #[test]
    fn link_and_fair_gradients_match_finite_differences() {
        let dec = DecoderConfig::default();
        let e = emb(&[&[0.3, -1.0], &[1.2, 0.1], &[-0.7, 0.9], &[0.5, 0.5], &[0.1, 0.2]]);
        let terms = vec![
            EdgeTerm { anchor: 0, other: 1, positive: true },
            EdgeTerm { anchor: 0, other: 2, positive: false },
            EdgeTerm { anchor: 3, other: 4, positive: true },
            EdgeTerm { anchor: 3, other: 1, positive: false },
            EdgeTerm { anchor: 2, other: 4, positive: true },
        ];
        let l = link_prediction_loss(&e, &terms, &dec, Reduction::Mean).unwrap();
        numeric_check(&e, &l.grad, |m| link_prediction_loss(m, &terms, &dec, Reduction::Mean).unwrap().value);
        let labels: BTreeMap<usize, EvolutionLabel> = [
            (0, EvolutionLabel::T2H),
            (1, EvolutionLabel::FaT),
            (2, EvolutionLabel::FaT),
            (3, EvolutionLabel::SfH),
            (4, EvolutionLabel::FaT),
        ]
        .into();
        let f = group_fairness_loss(&e, &terms, &labels, &dec, Reduction::Mean).unwrap();
        assert!(f.value > 0.0);
        numeric_check(&e, &f.grad, |m| group_fairness_loss(m, &terms, &labels, &dec, Reduction::Mean).unwrap().value);
    }

    #[test]
    fn joint_loss_examples() {
        let zero = LossWeights {
            gamma_ds: 0.0,
            gamma_class: 0.0,
            gamma_contrast: 0.0,
            gamma_fair: 0.0,
            lambda_l2: 0.0,
            lambda_l1: 0.0,
        };
        let c = LossComponents { ds: 0.4f64, class: 1.1, contrast: 0.7, fair: 0.3 };
        assert_eq!(joint_loss(&c, &zero, 5.0, 5.0).unwrap(), 0.0);
        let w = LossWeights { lambda_l2: 0.0, lambda_l1: 0.0, ..LossWeights::default() };
        assert!((joint_loss(&c, &w, 5.0f64, 5.0).unwrap() - 0.625).abs() < 1e-12);
        let bad = LossComponents { contrast: f64::NAN, ..c };
        assert!(matches!(joint_loss(&bad, &w, 0.0, 0.0), Err(Error::NonFinite("contrastive"))));
    }

    #[test]
    fn forced_contrast_pair() {
        let labels: BTreeMap<usize, EvolutionLabel> =
            [(0, EvolutionLabel::FaT), (1, EvolutionLabel::FaT), (2, EvolutionLabel::SfH)].into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_contrast_pairs(&labels, &[0, 2], 5, &mut rng).unwrap();
        assert_eq!(b, vec![ContrastBatch { anchor: 0, positive: 1, negatives: vec![2] }]);
    }

    #[test]
    fn positive_draws_are_uniform() {
        let labels: BTreeMap<usize, EvolutionLabel> = (0..10)
            .map(|v| (v, if v < 5 { EvolutionLabel::FaT } else { EvolutionLabel::T2H }))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            let b = sample_contrast_pairs(&labels, &[0], 2, &mut rng).unwrap();
            counts[b[0].positive] += 1;
        }
        assert_eq!(counts[0], 0);
        let p: f64 = 0.25;
        let sigma = (10_000.0f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - 10_000.0 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn negative_sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Complete graph on 4 vertices.
        let complete: Vec<Vec<usize>> = (0..4).map(|v| (0..4).filter(|&u| u != v).collect()).collect();
        assert!(sample_negatives(&complete, 0, 2, None, &mut rng).is_empty());
        // Star centered at 0.
        let mut star = vec![vec![1, 2, 3, 4]];
        star.extend((1..5).map(|_| vec![0]));
        assert!(sample_negatives(&star, 0, 1, None, &mut rng).is_empty());
        // Path 0-1-2-3-4 from endpoint 0.
        let path = vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]];
        for _ in 0..50 {
            let n = sample_negatives(&path, 0, 2, None, &mut rng);
            assert_eq!(n.len(), 2);
            assert_ne!(n[0], n[1]);
            assert!(n.iter().all(|u| [2, 3, 4].contains(u)));
        }
    }

    proptest! {
        #[test]
        fn sampling_respects_constraints(
            raw in prop::collection::vec(0usize..3, 3..40),
            n_neg in 1usize..6,
            seed in 0u64..1000,
        ) {
            let labels: BTreeMap<usize, EvolutionLabel> = raw
                .iter()
                .enumerate()
                .map(|(v, &l)| (v, EvolutionLabel::from_class_index(l).unwrap()))
                .collect();
            let distinct: std::collections::BTreeSet<_> = labels.values().collect();
            prop_assume!(distinct.len() >= 2);
            let anchors: Vec<usize> = labels.keys().copied().collect();
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let a = sample_contrast_pairs(&labels, &anchors, n_neg, &mut r1).unwrap();
            let b = sample_contrast_pairs(&labels, &anchors, n_neg, &mut r2).unwrap();
            prop_assert_eq!(&a, &b);
            for c in &a {
                prop_assert_ne!(c.anchor, c.positive);
                prop_assert_eq!(labels[&c.anchor], labels[&c.positive]);
                let uniq: std::collections::BTreeSet<_> = c.negatives.iter().collect();
                prop_assert_eq!(uniq.len(), c.negatives.len());
                for n in &c.negatives {
                    prop_assert_ne!(labels[n], labels[&c.anchor]);
                }
            }
        }

        #[test]
        fn negatives_avoid_neighbors(
            edges in prop::collection::vec((0usize..15, 0usize..15), 0..40),
            v in 0usize..15,
            count in 0usize..8,
            seed in 0u64..1000,
        ) {
            let mut nb = vec![Vec::new(); 15];
            for &(a, b) in &edges {
                if a != b {
                    nb[a].push(b);
                    nb[b].push(a);
                }
            }
            for l in &mut nb { l.sort_unstable(); l.dedup(); }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = sample_negatives(&nb, v, count, None, &mut rng);
            let avail = 15 - nb[v].len() - 1;
            prop_assert_eq!(got.len(), count.min(avail));
            let uniq: std::collections::BTreeSet<_> = got.iter().collect();
            prop_assert_eq!(uniq.len(), got.len());
            for u in got {
                prop_assert!(u != v && nb[v].binary_search(&u).is_err());
            }
        }

        #[test]
        fn decoder_is_strictly_decreasing(a in 0.0f64..20.0, gap in 1e-3f64..5.0) {
            let dec = DecoderConfig::default();
            prop_assert!(dec.probability(a + gap) < dec.probability(a));
        }

        #[test]
        fn contrast_loss_decreases_with_positive_similarity(theta in 0.05f64..3.0, step in 0.01f64..0.5) {
            // Positive at angle theta from the anchor; the negative stays fixed.
            let at = |t: f64| emb(&[&[1.0, 0.0], &[t.cos(), t.sin()], &[-0.3, -1.0]]);
            let b = [ContrastBatch { anchor: 0, positive: 1, negatives: vec![2] }];
            let far = contrastive_loss(&at(theta), &b, 0.5).unwrap().value;
            let near = contrastive_loss(&at((theta - step).max(0.0)), &b, 0.5).unwrap().value;
            prop_assert!(near < far);
            prop_assert!(far >= 0.0);
        }
    }
}
