use ndarray::{s, Array1, Array2, Array3, Axis};

use super::Batch;
use crate::dataset::{Label, RawPost};
use crate::encoders::{encode_image, encode_text, select_image, ImageBackbone, TextEncoder};
use crate::error::{Error, Result};

/// The text encoder, image backbone and image-choice seed used to turn
/// posts into model inputs.
#[derive(Clone, Copy)]
pub struct Encoders<'a> {
    pub text: &'a dyn TextEncoder,
    pub image: &'a dyn ImageBackbone,
    pub image_seed: u64,
}

/// Encoded model inputs for a whole split, one leading row per post.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet {
    pub ids: Vec<String>,
    pub embeddings: Array3<f64>,
    pub mask: Array2<f64>,
    pub text_summary: Array2<f64>,
    pub regions: Array3<f64>,
    pub metadata: Array2<f64>,
    pub labels: Vec<Option<Label>>,
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            embeddings: self.embeddings.select(Axis(0), rows),
            mask: self.mask.select(Axis(0), rows),
            text_summary: self.text_summary.select(Axis(0), rows),
            regions: self.regions.select(Axis(0), rows),
            metadata: self.metadata.select(Axis(0), rows),
        }
    }

    pub fn subset(&self, rows: &[usize]) -> EncodedSet {
        let b = self.batch(rows);
        EncodedSet {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            embeddings: b.embeddings,
            mask: b.mask,
            text_summary: b.text_summary,
            regions: b.regions,
            metadata: b.metadata,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn require_labels(&self) -> Result<Vec<Label>> {
        self.labels
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| l.ok_or_else(|| Error::Unlabeled(id.clone())))
            .collect()
    }

    pub fn targets(&self) -> Result<Array1<f64>> {
        Ok(self.require_labels()?.into_iter().map(Label::as_f64).collect())
    }

    pub fn positives(&self) -> Result<Vec<bool>> {
        Ok(self.require_labels()?.into_iter().map(Label::is_positive).collect())
    }
}

/// Encodes text, picks and encodes one image, and attaches the metadata
/// row for every post.
pub fn encode_posts(
    posts: &[RawPost],
    texts: &[String],
    metadata: &Array2<f64>,
    encoders: &Encoders<'_>,
    seq_len: usize,
) -> Result<EncodedSet> {
    let n = posts.len();
    if texts.len() != n || metadata.nrows() != n {
        return Err(Error::Shape(format!(
            "{n} posts, {} texts, {} metadata rows",
            texts.len(),
            metadata.nrows()
        )));
    }
    let dt = encoders.text.dim();
    let (r, dv) = (encoders.image.n_regions(), encoders.image.dim());
    let mut set = EncodedSet {
        ids: posts.iter().map(|p| p.id.clone()).collect(),
        embeddings: Array3::zeros((n, seq_len, dt)),
        mask: Array2::zeros((n, seq_len)),
        text_summary: Array2::zeros((n, dt)),
        regions: Array3::zeros((n, r, dv)),
        metadata: metadata.clone(),
        labels: posts.iter().map(|p| p.label).collect(),
    };
    for (i, (post, text)) in posts.iter().zip(texts).enumerate() {
        let emb = encode_text(&post.id, text, encoders.text, seq_len)?;
        set.text_summary.row_mut(i).assign(&emb.summary());
        set.embeddings.slice_mut(s![i, .., ..]).assign(&emb.values);
        for (t, &m) in emb.mask.iter().enumerate() {
            set.mask[(i, t)] = if m { 1.0 } else { 0.0 };
        }
        let image = select_image(post, encoders.image.input_resolution(), encoders.image_seed);
        let regions = encode_image(&post.id, &image, encoders.image)?;
        set.regions.slice_mut(s![i, .., ..]).assign(&regions.values);
    }
    Ok(set)
}
