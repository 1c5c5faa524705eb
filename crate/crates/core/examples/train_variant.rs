//! Trains one model variant on synthetic posts using the library directly
//! and reports validation AUC.
//!
//! cargo run --release --example train_variant -- 3

use reintel::dataset::split_dataset;
use reintel::encoders::{HashTextEncoder, StubBackbone};
use reintel::features::{build_feature_matrix, compute_user_histories, standardize, FeatureConfig};
use reintel::metrics::roc_auc;
use reintel::model::{encode_posts, predict_set, train, Encoders, FusionModel, ModelConfig, Variant};
use reintel::pipeline::{generate_synthetic, SynthSpec};
use reintel::text::{text_statistics, Preprocessor};

fn main() -> reintel::Result<()> {
    let variant: Variant = std::env::args().nth(1).as_deref().unwrap_or("1").parse()?;
    let seed = 0;
    let dir = tempfile::tempdir().expect("temp dir");
    let posts = generate_synthetic(dir.path(), &SynthSpec { n: 96, ..SynthSpec::default() }, seed)?;
    let (train_posts, val_posts) = split_dataset(&posts, 0.75, seed)?;

    let pre = Preprocessor::default();
    let texts = |ps: &[reintel::dataset::RawPost]| -> reintel::Result<Vec<String>> {
        ps.iter().map(|p| pre.preprocess(&p.id, &p.text)).collect()
    };
    let histories = compute_user_histories(&train_posts)?;
    let features = |ps: &[reintel::dataset::RawPost]| {
        let stats: Vec<_> = ps.iter().map(|p| text_statistics(&p.text)).collect();
        build_feature_matrix(ps, &histories, &stats, &FeatureConfig::default())
    };
    let train_raw = features(&train_posts)?;
    let train_meta = standardize(&train_raw, true)?;
    let params = train_meta.standardization.clone().expect("fitted");
    let val_meta = standardize(&features(&val_posts)?.with_standardization(params), false)?;

    let cfg = ModelConfig {
        seq_len: 24,
        text_dim: 32,
        region_dim: 32,
        attn_dim: 16,
        conv_filters: 64,
        fc_width: 128,
        epochs: 30,
        learning_rate: 1e-4,
        seed,
        ..ModelConfig::default()
    };
    let text_enc = HashTextEncoder::new(cfg.text_dim, seed);
    let backbone = StubBackbone::new((32, 32), 2, cfg.region_dim, seed)?;
    let enc = Encoders { text: &text_enc, image: &backbone, image_seed: seed };
    let train_set = encode_posts(&train_posts, &texts(&train_posts)?, &train_meta.values, &enc, cfg.seq_len)?;
    let val_set = encode_posts(&val_posts, &texts(&val_posts)?, &val_meta.values, &enc, cfg.seq_len)?;

    let mut model = FusionModel::new(cfg, variant)?;
    println!("variant {variant}: {} parameters", model.n_params());
    let outcome = train(model, &train_set, Some(&val_set))?;
    for r in &outcome.history {
        println!("epoch {:>2} loss {:.4} train auc {:.3} val auc {:.3}", r.epoch, r.loss, r.train_auc.unwrap_or(f64::NAN), r.val_auc.unwrap_or(f64::NAN));
    }
    let scores = predict_set(&outcome.model, &val_set)?;
    println!("best epoch {}; val auc {:.4}", outcome.best_epoch, roc_auc(&val_set.positives()?, &scores)?);
    Ok(())
}
