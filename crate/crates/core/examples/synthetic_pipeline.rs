//! Runs every pipeline stage on a generated dataset, the same sequence the
//! `reintel` binary exposes one stage at a time.
//!
//! cargo run --release --example synthetic_pipeline -- /tmp/reintel-demo

use std::path::PathBuf;

use reintel::model::Variant;
use reintel::pipeline::{run_stage, write_synthetic_project, PipelineConfig, Stage};

fn main() -> reintel::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("reintel-demo"));
    let mut base = PipelineConfig::desk_scale();
    base.out_dir = out.clone();
    base.synth_n = 128;
    let conf = write_synthetic_project(&base)?;
    println!("config: {}", conf.display());

    let mut cfg = PipelineConfig::from_file(&conf)?;
    cfg.model.epochs = 15;
    run_stage(Stage::Preprocess, &cfg)?;
    run_stage(Stage::Featurize, &cfg)?;
    for variant in [Variant::Parallel, Variant::Residual] {
        let c = PipelineConfig { variant, ..cfg.clone() };
        print!("{}", run_stage(Stage::Train, &c)?.message);
        run_stage(Stage::Predict, &c)?;
    }
    run_stage(Stage::Ensemble, &cfg)?;
    for input in ["predictions_1.csv", "predictions_3.csv", "ensemble.csv"] {
        let c = PipelineConfig { inputs: vec![input.into()], ..cfg.clone() };
        let report = run_stage(Stage::Evaluate, &c)?.message;
        println!("{input}: {}", report.lines().next().unwrap_or_default());
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
