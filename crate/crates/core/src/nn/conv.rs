use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use super::{join, Module, Param};

/// 1-D convolution over the sequence axis of a `batch × length × channels`
/// input with "same" padding: the output keeps the input length. For even
/// kernels the extra padding goes on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `(kernel * in_channels) × out_channels`, tap-major.
    pub weight: Param,
    pub bias: Option<Param>,
    pub kernel: usize,
}

pub struct Conv1dCache {
    cols: Array2<f64>,
    shape: (usize, usize, usize),
}

impl Conv1d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let fan_in = kernel * in_channels;
        Conv1d {
            weight: Param::fan_in_uniform(fan_in, out_channels, fan_in, rng),
            bias: bias.then(|| Param::fan_in_uniform(1, out_channels, fan_in, rng)),
            kernel,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.nrows() / self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.ncols()
    }

    fn left_pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (b, len, cin) = x.dim();
        let k = self.kernel;
        let left = self.left_pad() as isize;
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut cols = Array2::<f64>::zeros((b * len, k * cin));
        let dst = cols.as_slice_mut().expect("fresh array");
        for bi in 0..b {
            for t in 0..len {
                let row = (bi * len + t) * k * cin;
                for tap in 0..k {
                    let pos = t as isize + tap as isize - left;
                    if pos < 0 || pos >= len as isize {
                        continue;
                    }
                    let s = (bi * len + pos as usize) * cin;
                    dst[row + tap * cin..row + (tap + 1) * cin].copy_from_slice(&src[s..s + cin]);
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, shape: (usize, usize, usize)) -> Array3<f64> {
        let (b, len, cin) = shape;
        let k = self.kernel;
        let left = self.left_pad() as isize;
        let src = dcols.as_slice().expect("standard layout");
        let mut dx = Array3::<f64>::zeros(shape);
        let dst = dx.as_slice_mut().expect("fresh array");
        for bi in 0..b {
            for t in 0..len {
                let row = (bi * len + t) * k * cin;
                for tap in 0..k {
                    let pos = t as isize + tap as isize - left;
                    if pos < 0 || pos >= len as isize {
                        continue;
                    }
                    let d = (bi * len + pos as usize) * cin;
                    for c in 0..cin {
                        dst[d + c] += src[row + tap * cin + c];
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Conv1dCache) {
        let (b, len, cin) = x.dim();
        assert_eq!(cin, self.in_channels(), "conv input channels");
        let cols = self.im2col(x);
        let mut y = cols.dot(&self.weight.value);
        if let Some(bias) = &self.bias {
            y += &bias.value;
        }
        let y = y
            .into_shape_with_order((b, len, self.out_channels()))
            .expect("contiguous product");
        (y, Conv1dCache { cols, shape: (b, len, cin) })
    }

    pub fn backward(&mut self, cache: &Conv1dCache, grad_out: &Array3<f64>, need_input: bool) -> Option<Array3<f64>> {
        let (b, len, _) = cache.shape;
        let g = grad_out
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * len, self.out_channels()))
            .expect("contiguous gradient");
        self.weight.grad += &cache.cols.t().dot(&g);
        if let Some(bias) = &mut self.bias {
            bias.grad += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        need_input.then(|| {
            let dcols = g.dot(&self.weight.value.t());
            self.col2im(&dcols, cache.shape)
        })
    }
}

impl Module for Conv1d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Non-overlapping max pooling along the sequence axis (window = stride).
/// A trailing partial window is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    pub window: usize,
}

pub struct MaxPoolCache {
    argmax: Vec<usize>,
    shape: (usize, usize, usize),
}

impl MaxPool1d {
    pub fn output_len(&self, len: usize) -> usize {
        len / self.window
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, MaxPoolCache) {
        let (b, len, c) = x.dim();
        let out_len = self.output_len(len);
        let mut y = Array3::<f64>::zeros((b, out_len, c));
        let mut argmax = vec![0usize; b * out_len * c];
        for bi in 0..b {
            for o in 0..out_len {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = o * self.window;
                    for t in o * self.window..(o + 1) * self.window {
                        let v = x[(bi, t, ch)];
                        if v > best {
                            best = v;
                            at = t;
                        }
                    }
                    y[(bi, o, ch)] = best;
                    argmax[(bi * out_len + o) * c + ch] = at;
                }
            }
        }
        (y, MaxPoolCache { argmax, shape: (b, len, c) })
    }

    pub fn backward(&self, cache: &MaxPoolCache, grad_out: &Array3<f64>) -> Array3<f64> {
        let (b, _, c) = cache.shape;
        let out_len = grad_out.dim().1;
        let mut dx = Array3::<f64>::zeros(cache.shape);
        for bi in 0..b {
            for o in 0..out_len {
                for ch in 0..c {
                    let t = cache.argmax[(bi * out_len + o) * c + ch];
                    dx[(bi, t, ch)] += grad_out[(bi, o, ch)];
                }
            }
        }
        dx
    }
}
