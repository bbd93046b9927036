//! Dense linear algebra and reverse-mode gradients for small feed-forward
//! networks.
//!
//! Networks are stored as a flat parameter vector laid out layer by layer:
//! the weight block of layer `l` (row-major, `out x in`) followed by its bias.
//! A forward pass can record a [`GradTape`] which replays the chain rule once
//! to produce gradients with respect to both the parameters and the input.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{check_len, Error, Result};

/// Row-major dense matrix of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "matrix entry {bad} is not finite ({})",
                data[bad]
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("matrix row", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0; an empty-column matrix has no row data.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec input", self.cols, x.len())?;
        Ok(self.iter_rows().map(|row| dot(row, x)).collect())
    }

    /// `A^T y`
    pub fn t_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("transposed matvec input", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.iter_rows().zip(y) {
            axpy(yi, row, &mut out);
        }
        Ok(out)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the cached pre-activation and output.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Parameter(format!("unknown activation {other:?}"))),
        }
    }
}

/// Layer widths and hidden activations of a fully connected network.
///
/// The output layer is always affine; `activations[l]` applies to the output
/// of layer `l` for every layer but the last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Parameter(format!(
                "an MLP needs at least 2 widths, got {}",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Parameter("MLP widths must be positive".into()));
        }
        check_len("hidden activations", widths.len() - 2, activations.len())?;
        Ok(MlpSpec {
            widths,
            activations,
        })
    }

    /// Same activation on every hidden layer.
    pub fn uniform(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::new(widths, vec![activation; hidden])
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        self.activations
            .get(layer)
            .copied()
            .unwrap_or(Activation::Identity)
    }

    /// Offsets of the weight and bias blocks of `layer` within the flat
    /// parameter vector.
    fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.widths.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        (off, off + fan_in * fan_out)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        for layer in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w_off, b_off) = self.layer_offsets(layer);
            for w in &mut params[w_off..b_off] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        params
    }
}

impl fmt::Display for MlpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        write!(f, "{}", widths.join("-"))?;
        if let Some(a) = self.activations.first() {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

fn affine(spec: &MlpSpec, params: &[f64], layer: usize, x: &[f64]) -> Vec<f64> {
    let (fan_in, fan_out) = (spec.widths[layer], spec.widths[layer + 1]);
    let (w_off, b_off) = spec.layer_offsets(layer);
    let weights = &params[w_off..b_off];
    let bias = &params[b_off..b_off + fan_out];
    weights
        .chunks_exact(fan_in)
        .zip(bias)
        .map(|(row, b)| dot(row, x) + b)
        .collect()
}

fn check_inputs(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<()> {
    check_len("MLP parameters", spec.param_count(), params.len())?;
    check_len("MLP input", spec.input_dim(), x.len())
}

pub fn mlp_forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_inputs(spec, params, x)?;
    let mut h = x.to_vec();
    for layer in 0..spec.num_layers() {
        let act = spec.layer_activation(layer);
        h = affine(spec, params, layer, &h);
        if layer + 1 < spec.num_layers() {
            h.iter_mut().for_each(|v| *v = act.apply(*v));
        }
    }
    Ok(h)
}

/// Forward pass that records what the backward pass needs.
pub fn mlp_forward_taped<'a>(
    spec: &'a MlpSpec,
    params: &'a [f64],
    x: &[f64],
) -> Result<(Vec<f64>, GradTape<'a>)> {
    check_inputs(spec, params, x)?;
    let layers = spec.num_layers();
    let mut inputs = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers);
    let mut h = x.to_vec();
    for layer in 0..layers {
        let z = affine(spec, params, layer, &h);
        inputs.push(std::mem::take(&mut h));
        h = if layer + 1 < layers {
            let act = spec.layer_activation(layer);
            z.iter().map(|&v| act.apply(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    let tape = GradTape {
        spec,
        params,
        inputs,
        pre,
        output: h.clone(),
        consumed: false,
    };
    Ok((h, tape))
}

/// Cached forward state of one network evaluation.
///
/// A tape can be replayed exactly once.
#[derive(Debug)]
pub struct GradTape<'a> {
    spec: &'a MlpSpec,
    params: &'a [f64],
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Affine output of each layer, before its activation.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    consumed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl GradTape<'_> {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Gradients of `<upstream, output>` with respect to the parameters and
    /// the input.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<MlpGradients> {
        let mut params = vec![0.0; self.spec.param_count()];
        let input = self.backward_into(upstream, &mut params)?;
        Ok(MlpGradients { params, input })
    }

    /// Like [`backward`](Self::backward) but accumulates the parameter
    /// gradient into `param_grad`. Returns the input gradient.
    pub fn backward_into(&mut self, upstream: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        if self.consumed {
            return Err(Error::State("gradient tape already consumed"));
        }
        check_len("upstream gradient", self.spec.output_dim(), upstream.len())?;
        check_len("parameter gradient", self.spec.param_count(), param_grad.len())?;
        self.consumed = true;

        let spec = self.spec;
        let layers = spec.num_layers();
        let mut delta = upstream.to_vec();
        for layer in (0..layers).rev() {
            if layer + 1 < layers {
                let act = spec.layer_activation(layer);
                for (d, &z) in delta.iter_mut().zip(&self.pre[layer]) {
                    *d *= act.derivative(z, act.apply(z));
                }
            }
            let (fan_in, fan_out) = (spec.widths[layer], spec.widths[layer + 1]);
            let (w_off, b_off) = spec.layer_offsets(layer);
            let input = &self.inputs[layer];
            let mut next = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = w_off + o * fan_in;
                axpy(d, input, &mut param_grad[row..row + fan_in]);
                axpy(d, &self.params[row..row + fan_in], &mut next);
            }
            for (g, d) in param_grad[b_off..b_off + fan_out].iter_mut().zip(&delta) {
                *g += d;
            }
            delta = next;
        }
        Ok(delta)
    }
}

/// Largest coordinate-wise disagreement between an analytic gradient and a
/// central finite difference, scaled by `max(1, |analytic|)`.
///
/// `f` returns the value and its analytic gradient at a point. When `coords`
/// is `None` every coordinate is checked.
pub fn grad_check<F>(mut f: F, point: &[f64], eps: f64, coords: Option<&[usize]>) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("f(point) = {value}")));
    }
    check_len("analytic gradient", point.len(), analytic.len())?;
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut probe = point.to_vec();
    let mut worst = 0.0_f64;
    for &i in coords {
        if i >= point.len() {
            return Err(Error::shape("grad_check coordinate", point.len(), i));
        }
        probe[i] = point[i] + eps;
        let (plus, _) = f(&probe)?;
        probe[i] = point[i] - eps;
        let (minus, _) = f(&probe)?;
        probe[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value near coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward scalar-loop evaluation written independently of
    /// `mlp_forward`'s slice helpers.
    fn scalar_loop_forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = spec.widths();
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..w.len() - 1 {
            let mut out = vec![0.0; w[l + 1]];
            for o in 0..w[l + 1] {
                let mut s = 0.0;
                for i in 0..w[l] {
                    s += params[off + o * w[l] + i] * h[i];
                }
                out[o] = s + params[off + w[l] * w[l + 1] + o];
            }
            off += w[l] * w[l + 1] + w[l + 1];
            if l + 2 < w.len() {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            h = out;
        }
        h
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![2, 2], vec![]).unwrap();
        let params = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(mlp_forward(&spec, &params, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let spec = MlpSpec::uniform(vec![3, 4, 2], Activation::Tanh).unwrap();
        let mut params = vec![0.0; spec.param_count()];
        let n = params.len();
        params[n - 2] = 0.3;
        params[n - 1] = -1.5;
        let y = mlp_forward(&spec, &params, &[5.0, -2.0, 7.0]).unwrap();
        assert_eq!(y, vec![0.3, -1.5]);
    }

    #[test]
    fn random_tanh_net_matches_scalar_loop() {
        let spec = MlpSpec::uniform(vec![2, 4, 3], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = spec.init_params(&mut rng);
        for p in &mut params {
            *p += rng.random_range(-0.5..0.5);
        }
        let x = [0.3, -1.2];
        let y = mlp_forward(&spec, &params, &x).unwrap();
        let expected = scalar_loop_forward(&spec, &params, &x);
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_errors() {
        let spec = MlpSpec::uniform(vec![2, 3], Activation::Tanh).unwrap();
        let params = vec![0.0; spec.param_count()];
        assert!(matches!(
            mlp_forward(&spec, &params, &[1.0]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            mlp_forward(&spec, &params[1..], &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
        assert!(MlpSpec::new(vec![3], vec![]).is_err());
        assert!(MlpSpec::new(vec![3, 2, 1], vec![]).is_err());
    }

    #[test]
    fn linear_input_gradient_is_transpose_product() {
        let spec = MlpSpec::new(vec![3, 2], vec![]).unwrap();
        let w = [1.0, 2.0, 3.0, -1.0, 0.5, 4.0];
        let mut params = w.to_vec();
        params.extend([0.1, 0.2]);
        let (_, mut tape) = mlp_forward_taped(&spec, &params, &[0.4, 0.5, 0.6]).unwrap();
        let up = [2.0, -3.0];
        let grads = tape.backward(&up).unwrap();
        let expected = DenseMatrix::from_vec(2, 3, w.to_vec())
            .unwrap()
            .t_matvec(&up)
            .unwrap();
        assert_eq!(grads.input, expected);
    }

    #[test]
    fn constant_network_has_zero_gradients() {
        let spec = MlpSpec::uniform(vec![2, 3, 2], Activation::Relu).unwrap();
        let mut params = vec![0.0; spec.param_count()];
        // Hidden layer is dead (negative bias), so the output is constant.
        let (_, b_off) = spec.layer_offsets(0);
        params[b_off..b_off + 3].fill(-1.0);
        let (_, mut tape) = mlp_forward_taped(&spec, &params, &[0.1, 0.2]).unwrap();
        let g = tape.backward(&[1.0, 1.0]).unwrap();
        assert!(g.input.iter().all(|&v| v == 0.0));
        let (w1, _) = spec.layer_offsets(1);
        assert!(g.params[..w1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_reuse_is_a_state_error() {
        let spec = MlpSpec::uniform(vec![2, 2], Activation::Tanh).unwrap();
        let params = vec![0.1; spec.param_count()];
        let (_, mut tape) = mlp_forward_taped(&spec, &params, &[1.0, 1.0]).unwrap();
        tape.backward(&[1.0, 0.0]).unwrap();
        assert!(tape.is_consumed());
        assert!(matches!(tape.backward(&[1.0, 0.0]), Err(Error::State(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = MlpSpec::uniform(vec![3, 5, 4, 2], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = spec.init_params(&mut rng);
        let x = vec![0.2, -0.7, 1.1];
        let up = vec![0.8, -1.3];
        let objective = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (y, mut tape) = mlp_forward_taped(&spec, p, &x)?;
            Ok((dot(&y, &up), tape.backward(&up)?.params))
        };
        let err = grad_check(objective, &params, 1e-5, None).unwrap();
        assert!(err <= 1e-4, "param gradient error {err}");

        let input_objective = |xi: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (y, mut tape) = mlp_forward_taped(&spec, &params, xi)?;
            Ok((dot(&y, &up), tape.backward(&up)?.input))
        };
        let err = grad_check(input_objective, &x, 1e-5, None).unwrap();
        assert!(err <= 1e-4, "input gradient error {err}");
    }

    #[test]
    fn grad_check_quadratic_and_constant() {
        let quad = |x: &[f64]| Ok((dot(x, x), x.iter().map(|v| 2.0 * v).collect()));
        let err = grad_check(quad, &[0.3, -2.0, 5.0], 1e-5, None).unwrap();
        assert!(err <= 1e-8, "{err}");
        let constant = |x: &[f64]| Ok((4.2, vec![0.0; x.len()]));
        assert_eq!(grad_check(constant, &[1.0, 2.0], 1e-3, None).unwrap(), 0.0);
        assert!(grad_check(constant, &[1.0], 0.0, None).is_err());
        let blowup = |x: &[f64]| Ok((1.0 / x[0], vec![0.0]));
        assert!(matches!(
            grad_check(blowup, &[0.0], 1e-3, None),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let spec = MlpSpec::uniform(vec![4, 8, 3], Activation::Tanh).unwrap();
        let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let x = [0.1, 0.2, 0.3, 0.4];
        let a = mlp_forward(&spec, &params, &x).unwrap();
        let b = mlp_forward(&spec, &params, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn glorot_init_respects_limits() {
        let spec = MlpSpec::uniform(vec![10, 20, 5], Activation::Tanh).unwrap();
        let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let (w0, b0) = spec.layer_offsets(0);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(params[w0..b0].iter().all(|w| w.abs() <= limit));
        assert!(params[b0..b0 + 20].iter().all(|&b| b == 0.0));
    }

    proptest::proptest! {
        #[test]
        fn backward_is_linear_in_upstream(
            a in proptest::collection::vec(-2.0f64..2.0, 3),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            seed in 0u64..1000,
        ) {
            let spec = MlpSpec::uniform(vec![2, 4, 3], Activation::Tanh).unwrap();
            let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
            let x = [0.5, -0.25];
            let grad = |up: &[f64]| {
                let (_, mut tape) = mlp_forward_taped(&spec, &params, &x).unwrap();
                tape.backward(up).unwrap()
            };
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (ga, gb, gs) = (grad(&a), grad(&b), grad(&sum));
            for i in 0..gs.params.len() {
                proptest::prop_assert!((ga.params[i] + gb.params[i] - gs.params[i]).abs() < 1e-12);
            }
            for i in 0..gs.input.len() {
                proptest::prop_assert!((ga.input[i] + gb.input[i] - gs.input[i]).abs() < 1e-12);
            }
        }
    }
}
