//! Turns one post into the three modality vectors with the stub encoders
//! and fuses them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reintel::dataset::RawPost;
use reintel::encoders::{
    attention_pool, encode_image, encode_metadata, encode_text, select_image, HashTextEncoder, MetadataBranch,
    StubBackbone,
};
use reintel::model::fuse;
use reintel::nn::AttentionPool;
use reintel::pipeline::{generate_synthetic, SynthSpec};

fn main() -> reintel::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let posts = generate_synthetic(dir.path(), &SynthSpec { n: 8, ..SynthSpec::default() }, 4)?;
    let post: &RawPost = posts.iter().find(|p| !p.image_paths.is_empty()).expect("a post with an image");
    let width = 16;

    let text_enc = HashTextEncoder::new(32, 0);
    let tokens = encode_text(&post.id, &post.text, &text_enc, 24)?;
    println!("text: {} real tokens of {} slots, width {}", tokens.n_tokens(), tokens.len(), tokens.dim());

    let backbone = StubBackbone::new((32, 32), 2, 8, 0)?;
    let image = select_image(post, (32, 32), 0);
    let regions = encode_image(&post.id, &image, &backbone)?;
    println!("image: {} regions × {}", regions.n_regions(), regions.dim());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pool = AttentionPool::new(32, 8, 8, width, &mut rng);
    let (image_vec, weights) = attention_pool(&regions, &tokens.summary(), &pool)?;
    println!("attention weights: {:.3}", weights);

    // A text-branch stand-in: the summary projected by a fixed slice.
    let text_vec = reintel::encoders::ModalityVector(tokens.summary().slice(ndarray::s![..width]).to_owned());
    let branch = MetadataBranch::new(18, width, &mut rng);
    let meta_vec = encode_metadata(&ndarray::Array1::zeros(18), &branch)?;

    let fused = fuse(&text_vec, &image_vec, &meta_vec)?;
    println!("fused vector ({} wide): {:.3}", fused.width(), fused.0);
    Ok(())
}
