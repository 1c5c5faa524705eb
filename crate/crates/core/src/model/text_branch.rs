use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::Rng;

use super::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::{
    dropout, dropout_backward, join, relu, relu_backward, BatchNorm, BatchNormCache, Conv1d, Conv1dCache, Linear,
    MaxPool1d, MaxPoolCache, Mode, Module, Param,
};

/// The convolutional text branch shared by all three variants.
///
/// * `Parallel`: one same-padded convolution per filter size, each max-pooled
///   and flattened, then concatenated.
/// * `Stacked`: the parallel outputs are stacked along the channel axis and
///   run through extra convolutions before a single pooling.
/// * `Residual`: as `Stacked`, with every extra layer computing
///   `relu(conv(x)) + shortcut(x)`; the shortcut is the identity when widths
///   match and a 1×1 convolution otherwise.
///
/// All variants end in affine → batch norm → ReLU → dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBranch {
    pub variant: Variant,
    pub convs: Vec<Conv1d>,
    pub extra: Vec<Conv1d>,
    pub shortcuts: Vec<Option<Conv1d>>,
    pub pool: MaxPool1d,
    pub fc: Linear,
    pub bn: BatchNorm,
    pub dropout: f64,
}

struct ExtraCache {
    conv: Conv1dCache,
    activation: Array3<f64>,
    shortcut: Option<Conv1dCache>,
}

pub struct TextCache {
    conv: Vec<Conv1dCache>,
    conv_out: Vec<Array3<f64>>,
    pools: Vec<MaxPoolCache>,
    pooled_shape: (usize, usize, usize),
    extra: Vec<ExtraCache>,
    flat: Array2<f64>,
    bn: BatchNormCache,
    activation: Array2<f64>,
    drop_mask: Option<Array2<f64>>,
}

fn flatten(x: Array3<f64>) -> Array2<f64> {
    let (b, l, c) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, l * c))
        .expect("contiguous")
}

fn unflatten(x: Array2<f64>, shape: (usize, usize, usize)) -> Array3<f64> {
    x.as_standard_layout().into_owned().into_shape_with_order(shape).expect("contiguous")
}

impl TextBranch {
    pub fn new(cfg: &ModelConfig, variant: Variant, rng: &mut impl Rng) -> Self {
        let f = cfg.conv_filters;
        let convs: Vec<Conv1d> = cfg
            .filter_sizes
            .iter()
            .map(|&k| Conv1d::new(cfg.text_dim, f, k, true, rng))
            .collect();
        let (mut extra, mut shortcuts) = (Vec::new(), Vec::new());
        let mut width = f * cfg.filter_sizes.len();
        if variant != Variant::Parallel {
            for _ in 0..cfg.extra_conv_layers {
                extra.push(Conv1d::new(width, f, cfg.extra_kernel, true, rng));
                shortcuts.push((variant == Variant::Residual && width != f).then(|| Conv1d::new(width, f, 1, false, rng)));
                width = f;
            }
        }
        let pooled = cfg.seq_len / cfg.pool_size;
        let fc_in = match variant {
            Variant::Parallel => cfg.filter_sizes.len() * pooled * f,
            _ => pooled * width,
        };
        TextBranch {
            variant,
            convs,
            extra,
            shortcuts,
            pool: MaxPool1d { window: cfg.pool_size },
            fc: Linear::new(fc_in, cfg.fc_width, rng),
            bn: BatchNorm::new(cfg.fc_width),
            dropout: cfg.dropout,
        }
    }

    /// `x`: batch × L × D_t with padded rows already zeroed.
    pub fn forward<R: Rng>(&self, x: &Array3<f64>, mode: &mut Mode<'_, R>) -> Result<(Array2<f64>, TextCache)> {
        let len = x.dim().1;
        if len < self.pool.window {
            return Err(Error::SequenceTooShort { len, pool: self.pool.window });
        }
        let mut conv = Vec::with_capacity(self.convs.len());
        let mut conv_out = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let (y, cache) = c.forward(x);
            conv.push(cache);
            conv_out.push(relu(y));
        }

        let mut pools = Vec::new();
        let mut extra = Vec::new();
        let (flat, pooled_shape) = match self.variant {
            Variant::Parallel => {
                let mut pieces = Vec::with_capacity(conv_out.len());
                let mut shape = (0, 0, 0);
                for y in &conv_out {
                    let (p, cache) = self.pool.forward(y);
                    shape = p.dim();
                    pools.push(cache);
                    pieces.push(flatten(p));
                }
                let views: Vec<_> = pieces.iter().map(|p| p.view()).collect();
                (concatenate(Axis(1), &views).expect("equal batch sizes"), shape)
            }
            Variant::Stacked | Variant::Residual => {
                let views: Vec<_> = conv_out.iter().map(|y| y.view()).collect();
                let mut h = concatenate(Axis(2), &views).expect("same-padded lengths agree");
                for (layer, shortcut) in self.extra.iter().zip(&self.shortcuts) {
                    let (y, conv_cache) = layer.forward(&h);
                    let activation = relu(y);
                    let mut shortcut_cache = None;
                    let next = if self.variant == Variant::Residual {
                        let skip = match shortcut {
                            Some(p) => {
                                let (s, c) = p.forward(&h);
                                shortcut_cache = Some(c);
                                s
                            }
                            None => h.clone(),
                        };
                        &activation + &skip
                    } else {
                        activation.clone()
                    };
                    extra.push(ExtraCache { conv: conv_cache, activation, shortcut: shortcut_cache });
                    h = next;
                }
                let (p, cache) = self.pool.forward(&h);
                pools.push(cache);
                let shape = p.dim();
                (flatten(p), shape)
            }
        };
        if flat.ncols() != self.fc.inputs() {
            return Err(Error::Shape(format!(
                "text branch built for {} flattened features, got {} (sequence length {len})",
                self.fc.inputs(),
                flat.ncols()
            )));
        }
        let (normed, bn) = self.bn.forward(&self.fc.forward(&flat), mode.uses_batch_stats());
        let activation = relu(normed);
        let (out, drop_mask) = dropout(activation.clone(), self.dropout, mode);
        let cache = TextCache {
            conv,
            conv_out,
            pools,
            pooled_shape,
            extra,
            flat,
            bn,
            activation,
            drop_mask,
        };
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &TextCache, grad_out: &Array2<f64>) {
        let g = dropout_backward(cache.drop_mask.as_ref(), grad_out.clone());
        let g = relu_backward(&cache.activation, g);
        let g = self.bn.backward(&cache.bn, &g);
        let d_flat = self.fc.backward(&cache.flat, &g, true).expect("requested");

        match self.variant {
            Variant::Parallel => {
                let width = d_flat.ncols() / self.convs.len();
                for (i, conv) in self.convs.iter_mut().enumerate() {
                    let piece = d_flat.slice(s![.., i * width..(i + 1) * width]).to_owned();
                    let d_pooled = unflatten(piece, cache.pooled_shape);
                    let d_act = self.pool.backward(&cache.pools[i], &d_pooled);
                    let d_conv = relu_backward(&cache.conv_out[i], d_act);
                    conv.backward(&cache.conv[i], &d_conv, false);
                }
            }
            Variant::Stacked | Variant::Residual => {
                let d_pooled = unflatten(d_flat, cache.pooled_shape);
                let mut dh = self.pool.backward(&cache.pools[0], &d_pooled);
                for k in (0..self.extra.len()).rev() {
                    let ec = &cache.extra[k];
                    let d_conv = relu_backward(&ec.activation, dh.clone());
                    let mut d_in = self.extra[k].backward(&ec.conv, &d_conv, true).expect("requested");
                    if self.variant == Variant::Residual {
                        match (&mut self.shortcuts[k], &ec.shortcut) {
                            (Some(p), Some(c)) => d_in += &p.backward(c, &dh, true).expect("requested"),
                            _ => d_in += &dh,
                        }
                    }
                    dh = d_in;
                }
                let f = self.convs[0].out_channels();
                for (i, conv) in self.convs.iter_mut().enumerate() {
                    let piece = dh.slice(s![.., .., i * f..(i + 1) * f]).to_owned();
                    let d_conv = relu_backward(&cache.conv_out[i], piece);
                    conv.backward(&cache.conv[i], &d_conv, false);
                }
            }
        }
    }

    pub fn update_running(&mut self, cache: &TextCache) {
        self.bn.update_running(&cache.bn);
    }
}

impl Module for TextBranch {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params(&join(prefix, &format!("conv{i}")), f);
        }
        for (i, c) in self.extra.iter_mut().enumerate() {
            c.visit_params(&join(prefix, &format!("extra{i}")), f);
        }
        for (i, c) in self.shortcuts.iter_mut().enumerate() {
            if let Some(c) = c {
                c.visit_params(&join(prefix, &format!("shortcut{i}")), f);
            }
        }
        self.fc.visit_params(&join(prefix, "fc"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.visit_params(prefix, &mut |name, p| {
            if !name.starts_with(&join(prefix, "bn")) {
                f(name, &mut p.value)
            }
        });
        self.bn.visit_tensors(&join(prefix, "bn"), f);
    }
}
