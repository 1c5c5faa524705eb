//! Per-modality encoders: contextual token embeddings, image region
//! features with attention pooling, and the metadata branch.
//!
//! The text encoder and the image backbone are traits. Deterministic stubs
//! ship for desk-scale runs; adapters read precomputed matrices produced by
//! real encoders.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use log::warn;
use ndarray::{s, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::dataset::RawPost;
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, AttentionPool, BatchNorm, BatchNormCache, Linear, Module, Param};
use crate::rng;

/// Output width of every modality branch.
pub const MODALITY_WIDTH: usize = 512;

/// Contextual token embeddings, padded or truncated to a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    /// `L × D_t`; rows where `mask` is false are zero.
    pub values: Array2<f64>,
    pub mask: Vec<bool>,
}

impl TokenEmbeddings {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_tokens(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Mean of the unmasked rows; zero when every row is masked.
    pub fn summary(&self) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim());
        let mut n = 0usize;
        for (row, &m) in self.values.rows().into_iter().zip(&self.mask) {
            if m {
                acc += &row;
                n += 1;
            }
        }
        if n > 0 {
            acc /= n as f64;
        }
        acc
    }
}

/// Image region vectors: the spatial grid of the backbone's last feature
/// map, flattened row-major into `R × D_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub values: Array2<f64>,
}

impl RegionFeatures {
    pub fn n_regions(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// One modality after its branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityVector(pub Array1<f64>);

impl ModalityVector {
    pub fn width(&self) -> usize {
        self.0.len()
    }
}

/// Text in, one row per token out.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    /// `text` is the segmented text; tokens are separated by whitespace.
    fn encode(&self, id: &str, text: &str) -> std::result::Result<Array2<f64>, String>;
}

/// Runs `encoder` and fits the result to `max_len` rows.
pub fn encode_text(id: &str, text: &str, encoder: &dyn TextEncoder, max_len: usize) -> Result<TokenEmbeddings> {
    if max_len == 0 {
        return Err(Error::Config("maximum sequence length must be at least 1".into()));
    }
    let raw = encoder.encode(id, text).map_err(|message| Error::Encoder {
        id: id.to_string(),
        message,
    })?;
    if raw.ncols() != encoder.dim() {
        return Err(Error::Encoder {
            id: id.to_string(),
            message: format!("expected width {}, got {}", encoder.dim(), raw.ncols()),
        });
    }
    let n = raw.nrows().min(max_len);
    let mut values = Array2::zeros((max_len, encoder.dim()));
    values.slice_mut(s![..n, ..]).assign(&raw.slice(s![..n, ..]));
    let mask = (0..max_len).map(|i| i < n).collect();
    Ok(TokenEmbeddings { values, mask })
}

/// Hash-based stand-in for a contextual encoder. Each token gets a fixed
/// pseudo-random vector derived from its text; each row then mixes in a
/// quarter of its neighbours so identical tokens differ by context.
#[derive(Debug, Clone)]
pub struct HashTextEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl HashTextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashTextEncoder { dim, seed }
    }

    fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ rng::fnv1a(token.to_lowercase().as_bytes()));
        let scale = 1.0 / (self.dim as f64).sqrt();
        Array1::from_shape_simple_fn(self.dim, || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale * 4.0
        })
    }
}

impl TextEncoder for HashTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, _id: &str, text: &str) -> std::result::Result<Array2<f64>, String> {
        let base: Vec<Array1<f64>> = text.split_whitespace().map(|t| self.token_vector(t)).collect();
        let mut out = Array2::zeros((base.len(), self.dim));
        for (i, v) in base.iter().enumerate() {
            let mut row = v.clone();
            if i > 0 {
                row.scaled_add(0.25, &base[i - 1]);
            }
            if i + 1 < base.len() {
                row.scaled_add(0.25, &base[i + 1]);
            }
            out.row_mut(i).assign(&row);
        }
        Ok(out)
    }
}

const MATRIX_MAGIC: &[u8; 4] = b"RMAT";

/// Writes a matrix as `RMAT`, rows and cols (u32 LE), then row-major f32 LE.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + m.len() * 4);
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes).map_err(|m| Error::format(path, m))
}

pub(crate) fn decode_matrix(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    if bytes.len() < 12 || &bytes[..4] != MATRIX_MAGIC {
        return Err("not a matrix file".into());
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(format!("expected {} data bytes, found {}", rows * cols * 4, body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())
}

/// Reads `<dir>/<post id>.bin` matrices written by an external encoder.
#[derive(Debug, Clone)]
pub struct PrecomputedTextEncoder {
    pub dir: PathBuf,
    pub dim: usize,
}

impl TextEncoder for PrecomputedTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, id: &str, _text: &str) -> std::result::Result<Array2<f64>, String> {
        read_matrix(&self.dir.join(format!("{id}.bin"))).map_err(|e| e.to_string())
    }
}

/// `H × W × 3` RGB in `[0, 1]`.
pub type ImageArray = Array3<f64>;

pub fn blank_image(resolution: (usize, usize)) -> ImageArray {
    Array3::zeros((resolution.0, resolution.1, 3))
}

fn load_image(path: &Path, resolution: (usize, usize)) -> Result<ImageArray> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (h, w) = resolution;
    let rgb = img.resize_exact(w as u32, h as u32, FilterType::Triangle).to_rgb8();
    Ok(Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    }))
}

/// Picks one of the post's images uniformly at random (seeded by the root
/// seed and the post id), loads and resizes it. Posts without images, or
/// whose chosen image cannot be read, get the all-zero blank image.
pub fn select_image(post: &RawPost, resolution: (usize, usize), seed: u64) -> ImageArray {
    if post.image_paths.is_empty() {
        return blank_image(resolution);
    }
    let mut rng = rng::substream(seed, &format!("image-choice/{}", post.id));
    let pick = rng.random_range(0..post.image_paths.len());
    let path = &post.image_paths[pick];
    load_image(path, resolution).unwrap_or_else(|e| {
        warn!("post {}: {e}; using a blank image", post.id);
        blank_image(resolution)
    })
}

/// Image in, region grid out.
pub trait ImageBackbone: Send + Sync {
    fn input_resolution(&self) -> (usize, usize);
    fn n_regions(&self) -> usize;
    fn dim(&self) -> usize;
    fn encode(&self, id: &str, image: &ImageArray) -> std::result::Result<Array2<f64>, String>;
}

pub fn encode_image(id: &str, image: &ImageArray, backbone: &dyn ImageBackbone) -> Result<RegionFeatures> {
    let (h, w) = backbone.input_resolution();
    if image.dim() != (h, w, 3) {
        return Err(Error::Shape(format!(
            "image is {:?}, backbone expects ({h}, {w}, 3)",
            image.dim()
        )));
    }
    let values = backbone.encode(id, image).map_err(|message| Error::Encoder {
        id: id.to_string(),
        message,
    })?;
    if values.dim() != (backbone.n_regions(), backbone.dim()) {
        return Err(Error::Encoder {
            id: id.to_string(),
            message: format!("backbone returned {:?}", values.dim()),
        });
    }
    Ok(RegionFeatures { values })
}

/// A frozen, randomly initialised patch convolution. The image is cut into
/// a `grid × grid` lattice of cells; each cell is average-pooled to a
/// `sub × sub × 3` patch and mapped through one ReLU layer to `channels`.
#[derive(Debug, Clone)]
pub struct StubBackbone {
    pub resolution: (usize, usize),
    pub grid: usize,
    pub sub: usize,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl StubBackbone {
    pub fn new(resolution: (usize, usize), grid: usize, channels: usize, seed: u64) -> Result<Self> {
        let sub = 4;
        if grid == 0 || resolution.0 % (grid * sub) != 0 || resolution.1 % (grid * sub) != 0 {
            return Err(Error::Config(format!(
                "image resolution {resolution:?} must be a multiple of {}",
                grid * sub
            )));
        }
        let fan_in = sub * sub * 3;
        let mut rng = rng::substream(seed, "stub-backbone");
        let bound = (3.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Array2::from_shape_simple_fn((fan_in, channels), || dist.sample(&mut rng));
        let bias = Array1::from_shape_simple_fn(channels, || dist.sample(&mut rng) * 0.1);
        Ok(StubBackbone {
            resolution,
            grid,
            sub,
            weight,
            bias,
        })
    }
}

impl ImageBackbone for StubBackbone {
    fn input_resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn n_regions(&self) -> usize {
        self.grid * self.grid
    }

    fn dim(&self) -> usize {
        self.weight.ncols()
    }

    fn encode(&self, _id: &str, image: &ImageArray) -> std::result::Result<Array2<f64>, String> {
        let (h, w) = self.resolution;
        let (ch, cw) = (h / self.grid, w / self.grid);
        let (ph, pw) = (ch / self.sub, cw / self.sub);
        let mut patches = Array2::zeros((self.n_regions(), self.sub * self.sub * 3));
        for gy in 0..self.grid {
            for gx in 0..self.grid {
                let region = gy * self.grid + gx;
                for sy in 0..self.sub {
                    for sx in 0..self.sub {
                        let y0 = gy * ch + sy * ph;
                        let x0 = gx * cw + sx * pw;
                        let block = image.slice(s![y0..y0 + ph, x0..x0 + pw, ..]);
                        for c in 0..3 {
                            let mean = block.slice(s![.., .., c]).mean().unwrap_or(0.0);
                            patches[(region, (sy * self.sub + sx) * 3 + c)] = mean;
                        }
                    }
                }
            }
        }
        Ok(relu(patches.dot(&self.weight) + &self.bias))
    }
}

/// Reads `<dir>/<post id>.bin` region matrices written by an external
/// backbone. The image argument is ignored.
#[derive(Debug, Clone)]
pub struct PrecomputedBackbone {
    pub dir: PathBuf,
    pub resolution: (usize, usize),
    pub n_regions: usize,
    pub dim: usize,
}

impl ImageBackbone for PrecomputedBackbone {
    fn input_resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn n_regions(&self) -> usize {
        self.n_regions
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, id: &str, _image: &ImageArray) -> std::result::Result<Array2<f64>, String> {
        read_matrix(&self.dir.join(format!("{id}.bin"))).map_err(|e| e.to_string())
    }
}

/// Attention pooling of one post's regions with its text summary as query.
/// Returns the pooled vector and the attention weights.
pub fn attention_pool(
    regions: &RegionFeatures,
    text_summary: &Array1<f64>,
    params: &AttentionPool,
) -> Result<(ModalityVector, Array1<f64>)> {
    if regions.dim() != params.key.value.nrows() || text_summary.len() != params.query.value.nrows() {
        return Err(Error::Shape(format!(
            "regions width {} / text width {} do not match attention ({}, {})",
            regions.dim(),
            text_summary.len(),
            params.key.value.nrows(),
            params.query.value.nrows()
        )));
    }
    let r = regions.values.clone().insert_axis(ndarray::Axis(0));
    let t = text_summary.clone().insert_axis(ndarray::Axis(0));
    let (out, cache) = params.forward(&r, &t);
    Ok((ModalityVector(out.row(0).to_owned()), cache.weights.row(0).to_owned()))
}

/// Metadata branch: affine map, batch normalization, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataBranch {
    pub fc: Linear,
    pub bn: BatchNorm,
}

pub struct MetadataCache {
    input: Array2<f64>,
    bn: BatchNormCache,
    output: Array2<f64>,
}

impl MetadataBranch {
    pub fn new(features: usize, width: usize, rng: &mut impl Rng) -> Self {
        MetadataBranch {
            fc: Linear::new(features, width, rng),
            bn: BatchNorm::new(width),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, train: bool) -> (Array2<f64>, MetadataCache) {
        let (normed, bn) = self.bn.forward(&self.fc.forward(x), train);
        let output = relu(normed);
        (output.clone(), MetadataCache { input: x.clone(), bn, output })
    }

    pub fn backward(&mut self, cache: &MetadataCache, grad_out: &Array2<f64>) {
        let g = relu_backward(&cache.output, grad_out.clone());
        let g = self.bn.backward(&cache.bn, &g);
        self.fc.backward(&cache.input, &g, false);
    }

    pub fn update_running(&mut self, cache: &MetadataCache) {
        self.bn.update_running(&cache.bn);
    }
}

impl Module for MetadataBranch {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc.visit_params(&crate::nn::join(prefix, "fc"), f);
        self.bn.visit_params(&crate::nn::join(prefix, "bn"), f);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.fc.visit_tensors(&crate::nn::join(prefix, "fc"), f);
        self.bn.visit_tensors(&crate::nn::join(prefix, "bn"), f);
    }
}

/// Runs the metadata branch in inference mode on one standardized row.
pub fn encode_metadata(features: &Array1<f64>, branch: &MetadataBranch) -> Result<ModalityVector> {
    if features.len() != branch.fc.inputs() {
        return Err(Error::Shape(format!(
            "feature row has {} columns, branch expects {}",
            features.len(),
            branch.fc.inputs()
        )));
    }
    let (out, _) = branch.forward(&features.clone().insert_axis(ndarray::Axis(0)), false);
    Ok(ModalityVector(out.row(0).to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::relative_error;
    use ndarray::array;

    #[test]
    fn empty_text_is_all_padding() {
        let enc = HashTextEncoder::new(8, 1);
        let e = encode_text("p", "", &enc, 16).unwrap();
        assert_eq!(e.values.dim(), (16, 8));
        assert!(e.values.iter().all(|v| *v == 0.0));
        assert!(e.mask.iter().all(|m| !m));
        assert_eq!(e.summary(), Array1::zeros(8));
    }

    #[test]
    fn truncation_and_determinism() {
        let enc = HashTextEncoder::new(8, 1);
        let text = (0..300).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let e = encode_text("p", &text, &enc, 256).unwrap();
        assert_eq!(e.n_tokens(), 256);
        assert_eq!(e, encode_text("p", &text, &enc, 256).unwrap());
        let short = encode_text("p", "hai ba", &enc, 4).unwrap();
        assert_eq!(short.mask, vec![true, true, false, false]);
        assert!(short.values.row(2).iter().all(|v| *v == 0.0));
        assert!(encode_text("p", "x", &enc, 0).is_err());
    }

    #[test]
    fn hash_embeddings_are_contextual() {
        let enc = HashTextEncoder::new(6, 3);
        let a = enc.encode("", "tin gia").unwrap();
        let b = enc.encode("", "tin that").unwrap();
        assert_ne!(a.row(0), b.row(0));
        let c = enc.encode("", "tin gia").unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn masked_rows_do_not_move_the_summary() {
        let enc = HashTextEncoder::new(5, 2);
        let mut e = encode_text("p", "mot hai", &enc, 6).unwrap();
        let before = e.summary();
        e.values.row_mut(4).fill(123.0);
        assert_eq!(e.summary(), before);
    }

    #[test]
    fn matrix_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[1.0, -2.5, 0.125], [3.0, 4.0, 5.0]];
        let path = dir.path().join("x.bin");
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        std::fs::write(&path, b"RMAT\x01\0\0\0\x01\0\0\0").unwrap();
        assert!(read_matrix(&path).is_err());

        let pre = PrecomputedTextEncoder { dir: dir.path().to_path_buf(), dim: 3 };
        write_matrix(&dir.path().join("post7.bin"), &m).unwrap();
        let e = encode_text("post7", "ignored", &pre, 4).unwrap();
        assert_eq!(e.n_tokens(), 2);
        assert!(matches!(encode_text("nope", "", &pre, 4), Err(Error::Encoder { .. })));
    }

    fn post_with_images(paths: Vec<PathBuf>) -> RawPost {
        let mut p = RawPost::new("p1", "u", "t");
        p.image_paths = paths;
        p
    }

    fn save_solid(path: &Path, rgb: [u8; 3]) {
        image::RgbImage::from_pixel(10, 6, image::Rgb(rgb)).save(path).unwrap();
    }

    #[test]
    fn image_selection() {
        let dir = tempfile::tempdir().unwrap();
        assert!(select_image(&post_with_images(vec![]), (8, 8), 0).iter().all(|v| *v == 0.0));

        let red = dir.path().join("red.png");
        save_solid(&red, [255, 0, 0]);
        for seed in 0..5 {
            let img = select_image(&post_with_images(vec![red.clone()]), (8, 8), seed);
            assert_eq!(img.dim(), (8, 8, 3));
            assert!((img[(3, 3, 0)] - 1.0).abs() < 1e-12 && img[(3, 3, 1)] == 0.0);
        }

        let paths: Vec<PathBuf> = (0..3)
            .map(|i| {
                let p = dir.path().join(format!("{i}.png"));
                save_solid(&p, [i as u8 * 100, 0, 0]);
                p
            })
            .collect();
        let post = post_with_images(paths);
        let first = select_image(&post, (8, 8), 42);
        for _ in 0..3 {
            assert_eq!(select_image(&post, (8, 8), 42), first);
        }

        let broken = post_with_images(vec![dir.path().join("missing.png")]);
        assert!(select_image(&broken, (8, 8), 0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stub_backbone_grid_shape() {
        let bb = StubBackbone::new((224, 224), 7, 512, 0).unwrap();
        let r = encode_image("p", &blank_image((224, 224)), &bb).unwrap();
        assert_eq!((r.n_regions(), r.dim()), (49, 512));
        assert_eq!(r, encode_image("p", &blank_image((224, 224)), &bb).unwrap());
        assert!(matches!(encode_image("p", &blank_image((32, 32)), &bb), Err(Error::Shape(_))));
        assert!(StubBackbone::new((30, 30), 7, 8, 0).is_err());

        let bright = Array3::from_elem((224, 224, 3), 1.0);
        let rb = encode_image("p", &bright, &bb).unwrap();
        assert_ne!(rb, r);
        assert_eq!(rb, encode_image("q", &bright.clone(), &bb).unwrap());
    }

    #[test]
    fn attention_pool_stays_on_the_segment_between_two_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pool = AttentionPool::new(4, 3, 2, 5, &mut rng);
        let regions = RegionFeatures { values: array![[1.0, 0.0, -1.0], [0.5, 2.0, 0.0]] };
        let text = array![0.3, -0.2, 1.0, 0.0];
        let (out, w) = attention_pool(&regions, &text, &pool).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-12 && w.iter().all(|x| *x >= 0.0));
        let proj = pool.project(&regions.values);
        let expected = &proj.row(0) * w[0] + &proj.row(1) * w[1];
        assert!(out.0.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(attention_pool(&regions, &array![1.0], &pool).is_err());
    }

    #[test]
    fn attention_gradients_at_small_dimensions() {
        // R = 3, D_v = 4, d_a = 2.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pool = AttentionPool::new(3, 4, 2, 5, &mut rng);
        let regions = Array3::from_shape_simple_fn((1, 3, 4), || rng.random_range(-1.0..1.0));
        let text = Array2::from_shape_simple_fn((1, 3), || rng.random_range(-1.0..1.0));
        let up = Array2::from_shape_simple_fn((1, 5), || rng.random_range(-1.0..1.0));
        let (_, cache) = pool.forward(&regions, &text);
        let d_regions = pool.backward(&cache, &up);
        let loss = |p: &AttentionPool, r: &Array3<f64>| (p.forward(r, &text).0 * &up).sum();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..regions.len())
            .map(|i| {
                let (mut p, mut m) = (regions.clone(), regions.clone());
                p.as_slice_mut().unwrap()[i] += h;
                m.as_slice_mut().unwrap()[i] -= h;
                (loss(&pool, &p) - loss(&pool, &m)) / (2.0 * h)
            })
            .collect();
        assert!(relative_error(d_regions.as_slice().unwrap(), &numeric) < 1e-4);
    }

    #[test]
    fn metadata_branch_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut branch = MetadataBranch::new(18, MODALITY_WIDTH, &mut rng);
        branch.fc.bias.value.fill(0.0);
        let zero = Array1::zeros(18);
        let a = encode_metadata(&zero, &branch).unwrap();
        assert_eq!(a.width(), 512);
        assert_eq!(a, encode_metadata(&zero, &branch).unwrap());
        let row = Array1::from_shape_simple_fn(18, || rng.random_range(-1.0..1.0));
        let batch = ndarray::stack![ndarray::Axis(0), row, row];
        let (out, _) = branch.forward(&batch, false);
        assert_eq!(out.row(0), out.row(1));
        assert!(encode_metadata(&Array1::zeros(17), &branch).is_err());
    }
}
