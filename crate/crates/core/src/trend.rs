//! Degree-trend encoder.
//!
//! A stacked GRU reads the degree series duplicated across `dim` columns
//! (long-term view) and a kernel-3 convolution over the raw series, mean
//! pooled over time, gives the short-term view. The two are averaged.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_store::DegreeSeries;
use crate::matrix::Matrix;
use crate::nn::{Bound, Gru, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const CONV_KERNEL: usize = 3;
pub const CONV_PADDING: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendEncoderConfig {
    pub dim: usize,
    pub recurrent_layers: usize,
    /// Feed `ln(1 + deg)` instead of raw counts.
    pub log1p: bool,
}

impl Default for TrendEncoderConfig {
    fn default() -> Self {
        TrendEncoderConfig {
            dim: 64,
            recurrent_layers: 3,
            log1p: false,
        }
    }
}

/// `T x dim` matrix whose every column is the series.
pub fn expand<T: Scalar>(series: &[u32], dim: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(series.len(), dim);
    for (t, &d) in series.iter().enumerate() {
        out.row_mut(t).fill(T::from_f64_lossy(f64::from(d)));
    }
    out
}

/// Element-wise mean of two equally long embeddings.
pub fn fuse_stack_mean<T: Scalar>(long: &[T], short: &[T]) -> Result<Vec<T>> {
    if long.len() != short.len() {
        return Err(Error::DimensionMismatch {
            expected: long.len(),
            actual: short.len(),
        });
    }
    let half = T::from_f64_lossy(0.5);
    Ok(long.iter().zip(short).map(|(&a, &b)| (a + b) * half).collect())
}

/// Direct kernel-3, padding-1 convolution from one input channel to
/// `weight.cols()` output channels, followed by a mean over time.
///
/// `weight` is `3 x channels` with row `k` multiplying `x[t + k - 1]`.
pub fn conv_mean_pool<T: Scalar>(x: &[T], weight: &Matrix<T>, bias: &[T]) -> Vec<T> {
    let len = x.len();
    let channels = weight.cols();
    let mut pooled = vec![T::zero(); channels];
    for t in 0..len {
        for (c, p) in pooled.iter_mut().enumerate() {
            let mut acc = bias[c];
            for k in 0..CONV_KERNEL {
                let pos = t as isize + k as isize - CONV_PADDING as isize;
                if pos >= 0 && (pos as usize) < len {
                    acc += weight[(k, c)] * x[pos as usize];
                }
            }
            *p += acc;
        }
    }
    let n = T::from_usize_lossy(len.max(1));
    pooled.iter_mut().for_each(|p| *p /= n);
    pooled
}

/// For each kernel offset, the time average of the zero-padded input at
/// that offset. Pooled convolution output equals `shifted_means * W + b`.
fn shifted_means<T: Scalar>(x: &[T]) -> [T; CONV_KERNEL] {
    let len = x.len();
    let mut out = [T::zero(); CONV_KERNEL];
    for (k, o) in out.iter_mut().enumerate() {
        for t in 0..len {
            let pos = t as isize + k as isize - CONV_PADDING as isize;
            if pos >= 0 && (pos as usize) < len {
                *o += x[pos as usize];
            }
        }
        *o /= T::from_usize_lossy(len.max(1));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendEncoder {
    pub cfg: TrendEncoderConfig,
    pub gru: Gru,
    /// `3 x dim`.
    pub conv_weight: ParamId,
    /// `1 x dim`.
    pub conv_bias: ParamId,
}

impl TrendEncoder {
    pub fn new<T: Scalar>(cfg: TrendEncoderConfig, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<Self> {
        if cfg.dim == 0 || cfg.recurrent_layers == 0 {
            return Err(Error::Config("trend encoder needs positive dim and layer count".into()));
        }
        let gru = Gru::new(params, "trend.gru", cfg.dim, cfg.dim, cfg.recurrent_layers, rng);
        let fan_in = CONV_KERNEL;
        let conv_weight = params.add_uniform("trend.conv.weight", CONV_KERNEL, cfg.dim, fan_in, rng);
        let conv_bias = params.add_uniform("trend.conv.bias", 1, cfg.dim, fan_in, rng);
        Ok(TrendEncoder {
            cfg,
            gru,
            conv_weight,
            conv_bias,
        })
    }

    fn input<T: Scalar>(&self, d: u32) -> T {
        let v = f64::from(d);
        T::from_f64_lossy(if self.cfg.log1p { v.ln_1p() } else { v })
    }

    /// Long-term embeddings, one row per series.
    pub fn long_term<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, series: &[&[u32]]) -> Var {
        let steps = series.first().map_or(0, |s| s.len());
        let inputs: Vec<Var> = (0..steps)
            .map(|t| {
                let mut x = Matrix::zeros(series.len(), self.cfg.dim);
                for (i, s) in series.iter().enumerate() {
                    x.row_mut(i).fill(self.input(s[t]));
                }
                tape.constant(x)
            })
            .collect();
        self.gru.final_state(tape, bound, &inputs)
    }

    /// Short-term embeddings, one row per series.
    pub fn short_term<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, series: &[&[u32]]) -> Var {
        let mut shifted = Matrix::zeros(series.len(), CONV_KERNEL);
        for (i, s) in series.iter().enumerate() {
            let x: Vec<T> = s.iter().map(|&d| self.input(d)).collect();
            shifted.row_mut(i).copy_from_slice(&shifted_means(&x));
        }
        let s = tape.constant(shifted);
        let y = tape.matmul(s, bound.var(self.conv_weight));
        tape.add_row(y, bound.var(self.conv_bias))
    }

    /// Trend embeddings for every series, `n x dim`. Identical series are
    /// encoded once.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, series: &[DegreeSeries]) -> Var {
        let mut unique: BTreeMap<&[u32], usize> = BTreeMap::new();
        let mut rows: Vec<&[u32]> = Vec::new();
        let index: Vec<usize> = series
            .iter()
            .map(|s| {
                *unique.entry(s.values.as_slice()).or_insert_with(|| {
                    rows.push(&s.values);
                    rows.len() - 1
                })
            })
            .collect();
        let long = self.long_term(tape, bound, &rows);
        let short = self.short_term(tape, bound, &rows);
        let fused = tape.mean(&[long, short]);
        if rows.len() == series.len() && index.iter().enumerate().all(|(i, &j)| i == j) {
            fused
        } else {
            tape.gather_rows(fused, Arc::new(index))
        }
    }

    /// Long-term embedding of one series.
    pub fn encode_long_term<T: Scalar>(&self, params: &ParamSet<T>, series: &[u32]) -> Vec<T> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let v = self.long_term(&mut tape, &bound, &[series]);
        tape.value(v).as_slice().to_vec()
    }

    /// Short-term embedding of one series.
    pub fn encode_short_term<T: Scalar>(&self, params: &ParamSet<T>, series: &[u32]) -> Vec<T> {
        let x: Vec<T> = series.iter().map(|&d| self.input(d)).collect();
        conv_mean_pool(
            &x,
            params.get(self.conv_weight),
            params.get(self.conv_bias).as_slice(),
        )
    }

    /// Fused trend embedding of one series.
    pub fn encode<T: Scalar>(&self, params: &ParamSet<T>, series: &[u32]) -> Result<Vec<T>> {
        fuse_stack_mean(
            &self.encode_long_term(params, series),
            &self.encode_short_term(params, series),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{max_param_grad_error, reference_gru_step};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(dim: usize, layers: usize, seed: u64) -> (TrendEncoder, ParamSet<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let cfg = TrendEncoderConfig {
            dim,
            recurrent_layers: layers,
            log1p: false,
        };
        let enc = TrendEncoder::new(cfg, &mut p, &mut rng).unwrap();
        (enc, p)
    }

    #[test]
    fn expand_duplicates_columns() {
        let m: Matrix<f64> = expand(&[2, 0, 1], 2);
        assert_eq!(m, Matrix::from_rows(&[vec![2.0, 2.0], vec![0.0, 0.0], vec![1.0, 1.0]]));
        let one: Matrix<f64> = expand(&[4, 5], 1);
        assert_eq!(one.as_slice(), &[4.0, 5.0]);
    }

    #[test]
    fn stack_mean_examples() {
        assert_eq!(fuse_stack_mean(&[2.0, 4.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fuse_stack_mean(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
        assert!(fuse_stack_mean(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identity_kernel_pools_to_series_mean() {
        let w = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.0]]);
        let out = conv_mean_pool(&[1.0, 2.0, 6.0], &w, &[0.0]);
        assert_eq!(out, vec![3.0]);
        let zero = conv_mean_pool(&[0.0; 4], &Matrix::filled(3, 2, 0.7), &[0.0, 0.0]);
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn tape_short_term_matches_direct_convolution() {
        let (enc, p) = encoder(4, 1, 11);
        for series in [vec![3u32], vec![1, 0], vec![0, 4, 2, 9, 1]] {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape);
            let v = enc.short_term(&mut tape, &bound, &[&series]);
            let direct = enc.encode_short_term(&p, &series);
            for (a, b) in tape.value(v).as_slice().iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn long_term_matches_manual_unroll() {
        // Two units, one layer, two steps, computed with an independent
        // slice-based recurrence.
        let (enc, p) = encoder(2, 1, 21);
        let layer = enc.gru.layers[0];
        let series = [1u32, 3];
        let mut h = vec![0.0; 2];
        for &d in &series {
            let x = [f64::from(d); 2];
            h = reference_gru_step(
                &x,
                &h,
                p.get(layer.w_ih),
                p.get(layer.w_hh),
                p.get(layer.b_ih).as_slice(),
                p.get(layer.b_hh).as_slice(),
            );
        }
        let got = enc.encode_long_term(&p, &series);
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_series_with_open_update_gate_keeps_zero_state() {
        // Biases zeroed and the update gate saturated open: h' = h = 0.
        let (enc, mut p) = encoder(2, 1, 4);
        let layer = enc.gru.layers[0];
        for id in [layer.b_ih, layer.b_hh] {
            p.get_mut(id).as_mut_slice().fill(0.0);
        }
        for j in 2..4 {
            p.get_mut(layer.b_ih).as_mut_slice()[j] = 50.0;
        }
        let out = enc.encode_long_term(&p, &[0, 0]);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn batched_forward_matches_per_series_and_dedupes() {
        let (enc, p) = encoder(3, 3, 8);
        let series: Vec<DegreeSeries> = [[1u32, 2, 0], [0, 0, 5], [1, 2, 0]]
            .iter()
            .enumerate()
            .map(|(v, s)| DegreeSeries {
                vertex: v,
                values: s.to_vec(),
            })
            .collect();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let out = enc.forward(&mut tape, &bound, &series);
        let m = tape.value(out).clone();
        assert_eq!(m.shape(), (3, 3));
        for (i, s) in series.iter().enumerate() {
            let single = enc.encode(&p, &s.values).unwrap();
            for (a, b) in m.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(m.row(0), m.row(2));
    }

    #[test]
    fn output_shape_is_independent_of_length() {
        let (enc, p) = encoder(5, 3, 2);
        for t in [1usize, 2, 5, 15] {
            let s: Vec<u32> = (0..t as u32).collect();
            assert_eq!(enc.encode_long_term(&p, &s).len(), 5);
            assert_eq!(enc.encode_short_term(&p, &s).len(), 5);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn encoder_gradients_match_finite_differences(
            seed in 0u64..1000,
            t in 1usize..=6,
            dim in 1usize..=4,
            vals in prop::collection::vec(0u32..6, 12),
        ) {
            let (enc, p) = encoder(dim, 3, seed);
            let series: Vec<DegreeSeries> = (0..2)
                .map(|v| DegreeSeries { vertex: v, values: vals[v * 6..v * 6 + t].to_vec() })
                .collect();
            let err = max_param_grad_error(&p, 1e-5, |tape, b| {
                let out = enc.forward(tape, b, &series);
                let sq = tape.tanh(out);
                tape.sum_squares(sq)
            });
            prop_assert!(err < 1e-4, "relative error {}", err);
        }

        #[test]
        fn stack_mean_is_linear_and_commutative(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in -3.0f64..3.0,
        ) {
            let ab = fuse_stack_mean(&a, &b).unwrap();
            prop_assert_eq!(&ab, &fuse_stack_mean(&b, &a).unwrap());
            let sa: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            let sb: Vec<f64> = b.iter().map(|x| alpha * x).collect();
            let scaled = fuse_stack_mean(&sa, &sb).unwrap();
            for (x, y) in scaled.iter().zip(&ab) {
                prop_assert!((x - alpha * y).abs() < 1e-12);
            }
        }

        #[test]
        fn encoding_is_deterministic(seed in 0u64..100, vals in prop::collection::vec(0u32..9, 1..6)) {
            let (enc, p) = encoder(3, 2, seed);
            let (enc2, p2) = encoder(3, 2, seed);
            prop_assert_eq!(enc.encode(&p, &vals).unwrap(), enc2.encode(&p2, &vals).unwrap());
        }
    }
}
