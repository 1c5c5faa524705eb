//! Loads a dataset file, makes a stratified split and writes constant
//! predictions for the held-out part.
//!
//! cargo run --example dataset_split -- path/to/posts.csv 0.8

use std::path::PathBuf;

use reintel::dataset::{load_dataset, split_dataset, write_predictions, Prediction, Schema};
use reintel::pipeline::{generate_synthetic, SynthSpec, SYNTH_DATASET};

fn main() -> reintel::Result<()> {
    let mut args = std::env::args().skip(1);
    let scratch = tempfile::tempdir().expect("temp dir");
    let path = match args.next() {
        Some(p) => PathBuf::from(p),
        None => {
            generate_synthetic(scratch.path(), &SynthSpec { n: 20, ..SynthSpec::default() }, 1)?;
            scratch.path().join(SYNTH_DATASET)
        }
    };
    let fraction: f64 = args.next().map(|f| f.parse().expect("fraction")).unwrap_or(0.8);

    let posts = load_dataset(&path, &Schema::default())?;
    let (train, val) = split_dataset(&posts, fraction, 0)?;
    let positives = |ps: &[reintel::dataset::RawPost]| ps.iter().filter(|p| p.label.is_some_and(|l| l.is_positive())).count();
    println!("{} posts: train {} ({} unreliable), val {} ({} unreliable)", posts.len(), train.len(), positives(&train), val.len(), positives(&val));

    let out = scratch.path().join("constant.csv");
    let preds: Vec<Prediction> = val.iter().map(|p| Prediction { id: p.id.clone(), score: 0.5 }).collect();
    write_predictions(&out, &preds)?;
    print!("{}", std::fs::read_to_string(&out).expect("written"));
    Ok(())
}
