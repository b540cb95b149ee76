//! Named parameter storage and the small layers shared by the encoders.

use rand::Rng;
use rand::distr::{Distribution, Uniform};

use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Matrix<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "parameter `{name}` added twice");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..rows * cols)
            .map(|_| T::from_f64_lossy(dist.sample(rng)))
            .collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Records every tensor as a trainable leaf; the result is indexed by
    /// [`ParamId::index`].
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }
}

/// Tape variables of a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// `x W + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add_uniform(format!("{name}.weight"), input, output, input, rng);
        let bias = bias.then(|| params.add_uniform(format!("{name}.bias"), 1, output, input, rng));
        Linear { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, bound.var(self.weight));
        match self.bias {
            Some(b) => tape.add_row(y, bound.var(b)),
            None => y,
        }
    }
}

/// One gated recurrent layer with `[r | z | n]` column blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruLayer {
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl GruLayer {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruLayer {
            hidden,
            w_ih: params.add_uniform(format!("{name}.w_ih"), input, 3 * hidden, hidden, rng),
            w_hh: params.add_uniform(format!("{name}.w_hh"), hidden, 3 * hidden, hidden, rng),
            b_ih: params.add_uniform(format!("{name}.b_ih"), 1, 3 * hidden, hidden, rng),
            b_hh: params.add_uniform(format!("{name}.b_hh"), 1, 3 * hidden, hidden, rng),
        }
    }

    /// Runs the layer over `inputs` from a zero state and returns every
    /// hidden state in time order.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, inputs: &[Var]) -> Vec<Var> {
        let Some(&first) = inputs.first() else {
            return Vec::new();
        };
        let rows = tape.value(first).rows();
        let mut h = tape.constant(Matrix::zeros(rows, self.hidden));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = tape.gru_cell(
                x,
                h,
                bound.var(self.w_ih),
                bound.var(self.w_hh),
                bound.var(self.b_ih),
                bound.var(self.b_hh),
            );
            out.push(h);
        }
        out
    }
}

/// Stack of recurrent layers; the readout is the top layer's final state.
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub layers: Vec<GruLayer>,
}

impl Gru {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GruLayer::new(params, &format!("{name}.l{l}"), inp, hidden, rng)
            })
            .collect();
        Gru { layers }
    }

    pub fn final_state<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "recurrent encoder needs at least one step");
        let mut seq = inputs.to_vec();
        for layer in &self.layers {
            seq = layer.run(tape, bound, &seq);
        }
        *seq.last().expect("non-empty sequence")
    }
}

/// Plain-slice GRU step, used as an independent reference in tests.
#[cfg(test)]
pub(crate) fn reference_gru_step(
    x: &[f64],
    h: &[f64],
    w_ih: &Matrix<f64>,
    w_hh: &Matrix<f64>,
    b_ih: &[f64],
    b_hh: &[f64],
) -> Vec<f64> {
    let hid = h.len();
    let dot_col = |v: &[f64], w: &Matrix<f64>, c: usize| v.iter().enumerate().map(|(i, &a)| a * w[(i, c)]).sum::<f64>();
    let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
    (0..hid)
        .map(|j| {
            let r = sig(dot_col(x, w_ih, j) + b_ih[j] + dot_col(h, w_hh, j) + b_hh[j]);
            let z = sig(dot_col(x, w_ih, hid + j) + b_ih[hid + j] + dot_col(h, w_hh, hid + j) + b_hh[hid + j]);
            let n = (dot_col(x, w_ih, 2 * hid + j) + b_ih[2 * hid + j] + r * (dot_col(h, w_hh, 2 * hid + j) + b_hh[2 * hid + j]))
                .tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

/// Central finite-difference check of `loss` against its tape gradient for
/// every scalar of every parameter. Returns the worst relative error.
#[cfg(test)]
pub(crate) fn max_param_grad_error(
    params: &ParamSet<f64>,
    eps: f64,
    loss: impl Fn(&mut Tape<f64>, &Bound) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = loss(&mut tape, &bound);
    let grads = tape.backward(out);
    let eval = |p: &ParamSet<f64>| {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let o = loss(&mut t, &b);
        t.value(o).item()
    };
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for id in params.ids() {
        let analytic = grads
            .get(bound.var(id))
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(params.get(id).rows(), params.get(id).cols()));
        for k in 0..params.get(id).len() {
            let orig = params.get(id).as_slice()[k];
            probe.get_mut(id).as_mut_slice()[k] = orig + eps;
            let up = eval(&probe);
            probe.get_mut(id).as_mut_slice()[k] = orig - eps;
            let down = eval(&probe);
            probe.get_mut(id).as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.as_slice()[k];
            let err = (a - numeric).abs() / (1.0 + a.abs().max(numeric.abs()));
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::<f64>::new();
        let id = p.add_uniform("w", 20, 30, 16, &mut rng);
        assert!(p.get(id).as_slice().iter().all(|v| v.abs() <= 0.25));
        assert_eq!(p.scalar_count(), 600);
        assert_eq!(p.find("w"), Some(id));
    }

    #[test]
    fn stacked_gru_matches_reference_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::<f64>::new();
        let gru = Gru::new(&mut p, "g", 2, 2, 2, &mut rng);
        let xs = [vec![0.3, -1.0], vec![1.5, 0.2], vec![-0.4, 0.8]];

        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let inputs: Vec<Var> = xs.iter().map(|x| tape.constant(Matrix::row_vector(x))).collect();
        let out = gru.final_state(&mut tape, &bound, &inputs);

        let mut seq: Vec<Vec<f64>> = xs.to_vec();
        for layer in &gru.layers {
            let mut h = vec![0.0; 2];
            let mut next = Vec::new();
            for x in &seq {
                h = reference_gru_step(
                    x,
                    &h,
                    p.get(layer.w_ih),
                    p.get(layer.w_hh),
                    p.get(layer.b_ih).as_slice(),
                    p.get(layer.b_hh).as_slice(),
                );
                next.push(h.clone());
            }
            seq = next;
        }
        let expected = seq.last().unwrap();
        for (a, b) in tape.value(out).as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_and_gru_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParamSet::<f64>::new();
        let lin = Linear::new(&mut p, "lin", 3, 2, true, &mut rng);
        let gru = Gru::new(&mut p, "g", 2, 2, 2, &mut rng);
        let x = Matrix::from_rows(&[vec![0.5, -0.2, 1.0], vec![-1.0, 0.3, 0.1]]);
        let err = max_param_grad_error(&p, 1e-5, |tape, b| {
            let xv = tape.constant(x.clone());
            let h1 = lin.forward(tape, b, xv);
            let h2 = tape.tanh(h1);
            let s = gru.final_state(tape, b, &[h1, h2]);
            tape.sum_squares(s)
        });
        assert!(err < 1e-7, "relative error {err}");
    }
}
