use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{write_dataset, Label, RawPost, Schema};
use crate::error::{Error, Result};
use crate::rng;

/// File name of the generated dataset inside the output directory.
pub const SYNTH_DATASET: &str = "posts.csv";

/// Shape of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Number of posts; at least 8. Odd counts give the extra post to the
    /// reliable class.
    pub n: usize,
    /// Probability that each count cell and each timestamp is left empty.
    pub missing_rate: f64,
    /// Probability that a post has no image.
    pub image_missing_rate: f64,
    /// Planted in most unreliable posts and a few reliable ones.
    pub keyword: String,
    /// Side of the square PNGs.
    pub image_size: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 64,
            missing_rate: 0.1,
            image_missing_rate: 0.1,
            keyword: "sốc".into(),
            image_size: 32,
        }
    }
}

const VOCAB: &[&str] = &[
    "hôm", "nay", "trời", "đẹp", "mọi", "người", "đi", "chơi", "tin", "mới", "thành", "phố", "học", "sinh",
    "bệnh", "viện", "giá", "xăng", "tăng", "giảm", "chính", "phủ", "thông", "báo", "dịch", "bệnh", "khẩu",
    "trang", "cách", "ly", "xét", "nghiệm", "kinh", "tế", "thị", "trường", "bóng", "đá", "việt", "nam",
];
const DECORATIONS: &[&str] = &[":)", ":(", "#tintuc", "http://vd.vn/a1", "quáaaa", "ncov", "!!", "?", "=))"];

/// Per-post signal strengths. Each cue agrees with the label with the given
/// probability, so no single modality is a perfect predictor.
const KEYWORD_IF_UNRELIABLE: f64 = 0.9;
const KEYWORD_IF_RELIABLE: f64 = 0.1;
const IMAGE_AGREES: f64 = 0.9;
const USER_AGREES: f64 = 0.9;

fn draw_image(rng: &mut impl Rng, size: u32, bright: bool) -> RgbImage {
    let patch = (size / 2).max(1);
    let x0 = rng.random_range(0..=size - patch);
    let y0 = rng.random_range(0..=size - patch);
    let level: u8 = if bright { 230 } else { 25 };
    let noise: Vec<u8> = (0..size * size).map(|_| rng.random_range(0..24)).collect();
    RgbImage::from_fn(size, size, |x, y| {
        let n = noise[(y * size + x) as usize];
        if (x0..x0 + patch).contains(&x) && (y0..y0 + patch).contains(&y) {
            Rgb([level.saturating_add(n / 2), level.saturating_add(n / 3), level])
        } else {
            Rgb([118 + n, 118 + n, 118 + n])
        }
    })
}

/// Writes `posts.csv` and `images/*.png` under `dir` and returns the posts
/// as [`crate::dataset::load_dataset`] would read them back.
///
/// Labels are balanced and assigned in a seeded order. The label is
/// correlated with a keyword in the text, with the posting user (half the
/// users post mostly unreliable content), and with a bright or dark patch
/// in the image.
pub fn generate_synthetic(dir: &Path, spec: &SynthSpec, seed: u64) -> Result<Vec<RawPost>> {
    if spec.n < 8 {
        return Err(Error::Config(format!("synthetic datasets need at least 8 posts, got {}", spec.n)));
    }
    if !(0.0..=1.0).contains(&spec.missing_rate) || !(0.0..=1.0).contains(&spec.image_missing_rate) {
        return Err(Error::Config("missing rates must be in [0, 1]".into()));
    }
    if spec.image_size == 0 {
        return Err(Error::Config("image_size must be positive".into()));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rng = rng::substream(seed, "synthetic");

    let mut labels: Vec<Label> = (0..spec.n)
        .map(|i| if i < spec.n / 2 { Label::Unreliable } else { Label::Reliable })
        .collect();
    labels.shuffle(&mut rng);

    let n_users = (spec.n / 8).max(2);
    let start = 1_577_836_800i64; // 2020-01-01T00:00:00Z
    let log_likes = Normal::new(3.0f64, 1.0).expect("valid");
    let mut posts = Vec::with_capacity(spec.n);
    for (i, &label) in labels.iter().enumerate() {
        let unreliable = label == Label::Unreliable;
        let id = format!("s{i:05}");

        let bad_user = unreliable == rng.random_bool(USER_AGREES);
        let half = n_users / 2;
        let user = if bad_user { rng.random_range(0..half) } else { rng.random_range(half..n_users) };

        let n_words = rng.random_range(6..16);
        let mut words: Vec<&str> = (0..n_words).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
        let p_key = if unreliable { KEYWORD_IF_UNRELIABLE } else { KEYWORD_IF_RELIABLE };
        if rng.random_bool(p_key) {
            let at = rng.random_range(0..=words.len());
            words.insert(at, &spec.keyword);
        }
        if rng.random_bool(0.4) {
            let at = rng.random_range(0..=words.len());
            words.insert(at, DECORATIONS[rng.random_range(0..DECORATIONS.len())]);
        }

        let likes = log_likes.sample(&mut rng).exp().round();
        let shares = (0.3 * likes + rng.random_range(0.0f64..3.0)).round();
        let comments = (0.5 * likes + rng.random_range(0.0f64..5.0)).round();
        let mut keep = |v: f64| (!rng.random_bool(spec.missing_rate)).then_some(v as u64);
        let (num_likes, num_shares, num_comments) = (keep(likes), keep(shares), keep(comments));
        let ts = start + rng.random_range(0..366 * 86_400) + (likes as i64) * 60;
        let timestamp = (!rng.random_bool(spec.missing_rate)).then_some(ts);

        let mut image_paths = Vec::new();
        if !rng.random_bool(spec.image_missing_rate) {
            let bright = unreliable == rng.random_bool(IMAGE_AGREES);
            let copies = if rng.random_bool(0.2) { 2 } else { 1 };
            for c in 0..copies {
                let name = format!("{id}_{c}.png");
                let path = images.join(&name);
                draw_image(&mut rng, spec.image_size, bright)
                    .save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|e| Error::Image { path: path.clone(), message: e.to_string() })?;
                image_paths.push(PathBuf::from("images").join(name));
            }
        }

        posts.push(RawPost {
            id,
            user_id: format!("u{user:03}"),
            text: words.join(" "),
            timestamp,
            num_likes,
            num_shares,
            num_comments,
            image_paths,
            label: Some(label),
        });
    }
    write_dataset(&dir.join(SYNTH_DATASET), &posts, &Schema::default())?;
    for p in &mut posts {
        p.image_paths = p.image_paths.iter().map(|q| dir.join(q)).collect();
    }
    Ok(posts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;

    #[test]
    fn balanced_and_reloadable() {
        let dir = tempfile::tempdir().unwrap();
        let posts = generate_synthetic(dir.path(), &SynthSpec::default(), 7).unwrap();
        assert_eq!(posts.len(), 64);
        let unreliable = posts.iter().filter(|p| p.label == Some(Label::Unreliable)).count();
        assert_eq!(unreliable, 32);
        let loaded = load_dataset(&dir.path().join(SYNTH_DATASET), &Schema::default()).unwrap();
        assert_eq!(loaded, posts);
        assert!(posts.iter().flat_map(|p| &p.image_paths).all(|p| p.exists()));
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic(a.path(), &SynthSpec::default(), 3).unwrap();
        generate_synthetic(b.path(), &SynthSpec::default(), 3).unwrap();
        let read = |d: &Path| std::fs::read(d.join(SYNTH_DATASET)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        let img = |d: &Path| {
            let mut names: Vec<_> = std::fs::read_dir(d.join("images")).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            names.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(img(a.path()), img(b.path()));
    }

    #[test]
    fn too_small_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n: 7, ..SynthSpec::default() };
        assert!(matches!(generate_synthetic(dir.path(), &spec, 0), Err(Error::Config(_))));
    }
}
