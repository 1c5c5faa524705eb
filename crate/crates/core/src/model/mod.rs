//! The three fusion architectures, average fusion, the sigmoid head and
//! training.

mod checkpoint;
mod data;
mod text_branch;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use data::{encode_posts, EncodedSet, Encoders};
pub use text_branch::{TextBranch, TextCache};
pub use train::{dataset_loss, predict_set, train, write_history, EpochRecord, TrainOutcome};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use crate::encoders::{MetadataBranch, MetadataCache, ModalityVector, MODALITY_WIDTH};
use crate::error::{Error, Result};
use crate::features::COLUMNS;
use crate::nn::{join, sigmoid, AttentionCache, AttentionPool, Linear, Mode, Module, Param};
use crate::rng;

/// Which text branch a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Parallel convolutions, pooled and concatenated.
    Parallel = 1,
    /// Parallel convolutions stacked, then extra convolutions.
    Stacked = 2,
    /// As `Stacked`, with shortcut connections around the extra layers.
    Residual = 3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Parallel, Variant::Stacked, Variant::Residual];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Variant> {
        match n {
            1 => Some(Variant::Parallel),
            2 => Some(Variant::Stacked),
            3 => Some(Variant::Residual),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(Variant::from_number)
            .ok_or_else(|| Error::Config(format!("variant must be 1, 2 or 3, got `{s}`")))
    }
}

/// Architecture and optimization settings. Defaults are the published
/// hyperparameters with base-encoder input sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub fc_width: usize,
    pub dropout: f64,
    pub pool_size: usize,
    pub conv_filters: usize,
    pub filter_sizes: Vec<usize>,
    pub extra_conv_layers: usize,
    pub extra_kernel: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    /// Padded token count L.
    pub seq_len: usize,
    pub text_dim: usize,
    pub region_dim: usize,
    pub meta_dim: usize,
    pub attn_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fc_width: MODALITY_WIDTH,
            dropout: 0.2,
            pool_size: 5,
            conv_filters: 256,
            filter_sizes: vec![2, 3, 4, 5],
            extra_conv_layers: 3,
            extra_kernel: 3,
            learning_rate: 2e-5,
            batch_size: 16,
            epochs: 10,
            patience: 3,
            seed: 0,
            seq_len: 256,
            text_dim: 768,
            region_dim: 512,
            meta_dim: COLUMNS.len(),
            attn_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fc_width", self.fc_width),
            ("pool_size", self.pool_size),
            ("conv_filters", self.conv_filters),
            ("extra_kernel", self.extra_kernel),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("text_dim", self.text_dim),
            ("region_dim", self.region_dim),
            ("meta_dim", self.meta_dim),
            ("attn_dim", self.attn_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.filter_sizes.is_empty() || self.filter_sizes.contains(&0) {
            return Err(Error::Config("filter_sizes must be a non-empty list of positive sizes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.seq_len < self.pool_size {
            return Err(Error::SequenceTooShort { len: self.seq_len, pool: self.pool_size });
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let sizes: Vec<String> = self.filter_sizes.iter().map(usize::to_string).collect();
        [
            ("fc_width", self.fc_width.to_string()),
            ("dropout", self.dropout.to_string()),
            ("pool_size", self.pool_size.to_string()),
            ("conv_filters", self.conv_filters.to_string()),
            ("filter_sizes", sizes.join(",")),
            ("extra_conv_layers", self.extra_conv_layers.to_string()),
            ("extra_kernel", self.extra_kernel.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("text_dim", self.text_dim.to_string()),
            ("region_dim", self.region_dim.to_string()),
            ("meta_dim", self.meta_dim.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies every recognised key of `pairs`; other keys are ignored.
    pub fn apply_pairs(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        for (k, v) in pairs {
            match k.as_str() {
                "fc_width" => self.fc_width = parse(k, v)?,
                "dropout" => self.dropout = parse(k, v)?,
                "pool_size" => self.pool_size = parse(k, v)?,
                "conv_filters" => self.conv_filters = parse(k, v)?,
                "filter_sizes" => {
                    self.filter_sizes = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse(k, s))
                        .collect::<Result<_>>()?
                }
                "extra_conv_layers" => self.extra_conv_layers = parse(k, v)?,
                "extra_kernel" => self.extra_kernel = parse(k, v)?,
                "learning_rate" => self.learning_rate = parse(k, v)?,
                "batch_size" => self.batch_size = parse(k, v)?,
                "epochs" => self.epochs = parse(k, v)?,
                "patience" => self.patience = parse(k, v)?,
                "seed" => self.seed = parse(k, v)?,
                "seq_len" => self.seq_len = parse(k, v)?,
                "text_dim" => self.text_dim = parse(k, v)?,
                "region_dim" => self.region_dim = parse(k, v)?,
                "meta_dim" => self.meta_dim = parse(k, v)?,
                "attn_dim" => self.attn_dim = parse(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// Model inputs for a batch of posts.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// batch × L × D_t
    pub embeddings: Array3<f64>,
    /// batch × L, 1 for real tokens.
    pub mask: Array2<f64>,
    /// batch × D_t, mean of the unmasked embeddings.
    pub text_summary: Array2<f64>,
    /// batch × R × D_v
    pub regions: Array3<f64>,
    /// batch × features, standardized.
    pub metadata: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.embeddings.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Elementwise mean of the three modality vectors.
pub fn fuse(text: &ModalityVector, image: &ModalityVector, meta: &ModalityVector) -> Result<ModalityVector> {
    if text.width() != image.width() || text.width() != meta.width() {
        return Err(Error::Shape(format!(
            "modality widths differ: text {}, image {}, metadata {}",
            text.width(),
            image.width(),
            meta.width()
        )));
    }
    Ok(ModalityVector((&text.0 + &image.0 + &meta.0) / 3.0))
}

/// Text branch, image attention, metadata branch and sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub variant: Variant,
    pub cfg: ModelConfig,
    pub text: TextBranch,
    pub image: AttentionPool,
    pub meta: MetadataBranch,
    pub head: Linear,
}

pub struct ForwardCache {
    text: TextCache,
    image: AttentionCache,
    meta: MetadataCache,
    fused: Array2<f64>,
}

/// Result of a forward pass.
pub struct ForwardOutput {
    pub logits: Array1<f64>,
    pub text: Array2<f64>,
    pub image: Array2<f64>,
    pub meta: Array2<f64>,
    pub cache: ForwardCache,
}

impl ForwardOutput {
    pub fn probabilities(&self) -> Array1<f64> {
        self.logits.mapv(sigmoid)
    }

    pub fn attention_weights(&self) -> &Array2<f64> {
        &self.cache.image.weights
    }
}

impl FusionModel {
    /// Fresh model with seeded fan-in-uniform weights.
    pub fn new(cfg: ModelConfig, variant: Variant) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::substream(cfg.seed, "init");
        let text = TextBranch::new(&cfg, variant, &mut rng);
        let image = AttentionPool::new(cfg.text_dim, cfg.region_dim, cfg.attn_dim, cfg.fc_width, &mut rng);
        let meta = MetadataBranch::new(cfg.meta_dim, cfg.fc_width, &mut rng);
        let head = Linear::new(cfg.fc_width, 1, &mut rng);
        Ok(FusionModel { variant, cfg, text, image, meta, head })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let b = batch.len();
        let (_, len, dt) = batch.embeddings.dim();
        let bad = |what: String| Err(Error::Shape(what));
        if len != self.cfg.seq_len || dt != self.cfg.text_dim {
            return bad(format!(
                "embeddings are {len} × {dt}, model expects {} × {}",
                self.cfg.seq_len, self.cfg.text_dim
            ));
        }
        if batch.mask.dim() != (b, len) || batch.text_summary.dim() != (b, dt) {
            return bad("mask or text summary does not match the embeddings".into());
        }
        let (rb, r, dv) = batch.regions.dim();
        if rb != b || r == 0 || dv != self.cfg.region_dim {
            return bad(format!("regions are {rb} × {r} × {dv}, expected {b} × R × {}", self.cfg.region_dim));
        }
        if batch.metadata.dim() != (b, self.cfg.meta_dim) {
            return bad(format!(
                "metadata is {:?}, expected ({b}, {})",
                batch.metadata.dim(),
                self.cfg.meta_dim
            ));
        }
        Ok(())
    }

    pub fn forward<R: Rng>(&self, batch: &Batch, mode: &mut Mode<'_, R>) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        // Padded positions must not reach the convolutions.
        let masked = &batch.embeddings * &batch.mask.view().insert_axis(Axis(2));
        let (text, text_cache) = self.text.forward(&masked, mode)?;
        let (image, image_cache) = self.image.forward(&batch.regions, &batch.text_summary);
        let (meta, meta_cache) = self.meta.forward(&batch.metadata, mode.uses_batch_stats());
        let fused = (&text + &image + &meta) / 3.0;
        let logits = self.head.forward(&fused).column(0).to_owned();
        Ok(ForwardOutput {
            logits,
            text,
            image,
            meta,
            cache: ForwardCache {
                text: text_cache,
                image: image_cache,
                meta: meta_cache,
                fused,
            },
        })
    }

    /// Inference-mode probabilities.
    pub fn predict(&self, batch: &Batch) -> Result<Array1<f64>> {
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(batch, &mut Mode::Eval)?.probabilities())
    }

    /// Accumulates gradients of a loss whose gradient w.r.t. the logits is
    /// `d_logits`.
    pub fn backward(&mut self, cache: &ForwardCache, d_logits: &Array1<f64>) {
        let d_out = d_logits.clone().insert_axis(Axis(1));
        let d_fused = self.head.backward(&cache.fused, &d_out, true).expect("requested") / 3.0;
        self.text.backward(&cache.text, &d_fused);
        self.image.backward(&cache.image, &d_fused);
        self.meta.backward(&cache.meta, &d_fused);
    }

    /// Folds a training pass's batch statistics into the running estimates.
    pub fn update_running(&mut self, cache: &ForwardCache) {
        self.text.update_running(&cache.text);
        self.meta.update_running(&cache.meta);
    }

    pub fn n_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.len());
        n
    }
}

impl Module for FusionModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.text.visit_params(&join(prefix, "text"), f);
        self.image.visit_params(&join(prefix, "image"), f);
        self.meta.visit_params(&join(prefix, "meta"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.text.visit_tensors(&join(prefix, "text"), f);
        self.image.visit_tensors(&join(prefix, "image"), f);
        self.meta.visit_tensors(&join(prefix, "meta"), f);
        self.head.visit_tensors(&join(prefix, "head"), f);
    }
}
