//! Minimal layers with hand-written backward passes.
//!
//! Forward passes take `&self` and return the output together with the cache
//! that the matching backward pass needs, so a frozen model can be shared
//! across threads for inference. Backward passes accumulate into
//! [`Param::grad`].

mod attention;
mod conv;
mod optim;

pub use attention::{AttentionCache, AttentionPool};
pub use conv::{Conv1d, Conv1dCache, MaxPool1d, MaxPoolCache};
pub use optim::Adam;

use ndarray::{Array, Array1, Array2, Axis, Dimension, Zip};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};

/// A trainable matrix and its accumulated gradient. Bias vectors are 1 × n.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Array2::zeros((rows, cols)))
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Param::new(Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Visitor over named tensors, used for checkpoints and optimizers.
pub trait Module {
    /// Trainable parameters.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    /// Every persisted tensor: parameter values plus non-trainable buffers.
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.visit_params(prefix, &mut |name, p| f(name, &mut p.value));
    }

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// How a forward pass treats batch normalization and dropout.
pub enum Mode<'a, R: Rng> {
    /// Batch statistics and dropout drawn from the generator.
    Train(&'a mut R),
    /// Batch statistics, no dropout.
    BatchStats,
    /// Running statistics, no dropout.
    Eval,
}

impl<R: Rng> Mode<'_, R> {
    pub fn uses_batch_stats(&self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

/// Affine map `x W + b`, with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::fan_in_uniform(inputs, outputs, inputs, rng),
            bias: Param::fan_in_uniform(1, outputs, inputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Array2<f64>, grad_out: &Array2<f64>, need_input: bool) -> Option<Array2<f64>> {
        self.weight.grad += &x.t().dot(grad_out);
        self.bias.grad += &grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        need_input.then(|| grad_out.dot(&self.weight.value.t()))
    }
}

impl Module for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Batch normalization over the feature axis of a `batch × features` input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array2<f64>,
    pub running_var: Array2<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    train: bool,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Array2::ones((1, features))),
            beta: Param::zeros(1, features),
            running_mean: Array2::zeros((1, features)),
            running_var: Array2::ones((1, features)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array2<f64>, train: bool) -> (Array2<f64>, BatchNormCache) {
        let (mean, var) = if train {
            let n = x.nrows() as f64;
            let mean = x.sum_axis(Axis(0)) / n;
            let var = (x - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / n;
            (mean, var)
        } else {
            (self.running_mean.row(0).to_owned(), self.running_var.row(0).to_owned())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let normalized = (x - &mean) * &inv_std;
        let out = &normalized * &self.gamma.value + &self.beta.value;
        let cache = BatchNormCache {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            train,
        };
        (out, cache)
    }

    /// Folds the batch statistics of a training pass into the running
    /// estimates, using the unbiased batch variance.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if !cache.train {
            return;
        }
        let n = cache.normalized.nrows() as f64;
        let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        Zip::from(self.running_mean.row_mut(0))
            .and(&cache.batch_mean)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
        Zip::from(self.running_var.row_mut(0))
            .and(&cache.batch_var)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b * unbiased);
    }

    pub fn backward(&mut self, cache: &BatchNormCache, grad_out: &Array2<f64>) -> Array2<f64> {
        let xhat = &cache.normalized;
        self.gamma.grad += &(grad_out * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let gamma = self.gamma.value.row(0);
        let dxhat = grad_out * &gamma;
        if !cache.train {
            return dxhat * &cache.inv_std;
        }
        let n = grad_out.nrows() as f64;
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n - &sum_d - xhat * &sum_dx;
        dx *= &(&cache.inv_std / n);
        dx
    }
}

impl Module for BatchNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f(&join(prefix, "gamma"), &mut self.gamma.value);
        f(&join(prefix, "beta"), &mut self.beta.value);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

pub fn relu<D: Dimension>(mut x: Array<f64, D>) -> Array<f64, D> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Gradient of ReLU given its output.
pub fn relu_backward<D: Dimension>(output: &Array<f64, D>, mut grad: Array<f64, D>) -> Array<f64, D> {
    Zip::from(&mut grad).and(output).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    grad
}

/// Inverted dropout. Returns the output and the scaled keep-mask, or `None`
/// when nothing was dropped.
pub fn dropout<D: Dimension, R: Rng>(
    x: Array<f64, D>,
    rate: f64,
    mode: &mut Mode<'_, R>,
) -> (Array<f64, D>, Option<Array<f64, D>>) {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = Bernoulli::new(1.0 - rate).expect("rate in [0, 1)");
            let scale = 1.0 / (1.0 - rate);
            let mask = Array::from_shape_simple_fn(x.raw_dim(), || if keep.sample(*rng) { scale } else { 0.0 });
            (x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

pub fn dropout_backward<D: Dimension>(mask: Option<&Array<f64, D>>, grad: Array<f64, D>) -> Array<f64, D> {
    match mask {
        Some(m) => grad * m,
        None => grad,
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy computed from logits, and its gradient with
/// respect to each logit.
pub fn bce_with_logits(logits: &Array1<f64>, targets: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(logits.len());
    for ((g, &z), &y) in grad.iter_mut().zip(logits).zip(targets) {
        // log(1 + e^z) - y z, written to avoid overflow.
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - y) / n;
    }
    (loss / n, grad)
}


#[cfg(test)]
mod tests {
    use super::gradcheck::relative_error;
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_matches_direct_formula() {
        let logits = array![2.0, -1.0, 0.0];
        let targets = array![1.0, 0.0, 1.0];
        let (loss, grad) = bce_with_logits(&logits, &targets);
        let direct: f64 = logits
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| {
                let p = sigmoid(z);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((loss - direct).abs() < 1e-12);
        assert!((grad[0] - (sigmoid(2.0) - 1.0) / 3.0).abs() < 1e-12);
        let (big, _) = bce_with_logits(&array![800.0], &array![0.0]);
        assert!((big - 800.0).abs() < 1e-9);
    }

    #[test]
    fn batchnorm_train_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bn = BatchNorm::new(3);
        bn.gamma.value = array![[1.5, -0.7, 0.3]];
        bn.beta.value = array![[0.1, 0.2, -0.3]];
        let x = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-2.0..2.0));
        let upstream = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
        let loss = |bn: &BatchNorm, x: &Array2<f64>| (bn.forward(x, true).0 * &upstream).sum();
        let (_, cache) = bn.forward(&x, true);
        let dx = bn.backward(&cache, &upstream);
        let h = 1e-6;
        let mut numeric = Vec::new();
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            numeric.push((loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h));
        }
        assert!(relative_error(dx.as_slice().unwrap(), &numeric) < 1e-6);
    }

    #[test]
    fn batchnorm_inference_uses_running_stats() {
        let mut bn = BatchNorm::new(2);
        let x = array![[1.0, 10.0], [3.0, 14.0]];
        let (_, cache) = bn.forward(&x, true);
        bn.update_running(&cache);
        assert!((bn.running_mean[(0, 0)] - 0.2).abs() < 1e-12);
        // Unbiased variance of [1, 3] is 2.
        assert!((bn.running_var[(0, 0)] - (0.9 + 0.2)).abs() < 1e-12);
        let (alone, _) = bn.forward(&x.slice(ndarray::s![0..1, ..]).to_owned(), false);
        let (both, _) = bn.forward(&x, false);
        assert_eq!(alone.row(0), both.row(0));
    }

    #[test]
    fn dropout_only_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::<f64>::ones((50, 40));
        let (y, mask) = dropout(x.clone(), 0.2, &mut Mode::Train(&mut rng));
        assert!(mask.is_some());
        let zeros = y.iter().filter(|v| **v == 0.0).count();
        assert!(zeros > 200 && zeros < 600, "{zeros}");
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        let (y, mask) = dropout(x.clone(), 0.2, &mut Mode::<ChaCha8Rng>::Eval);
        assert!(mask.is_none());
        assert_eq!(y, x);
    }
}
