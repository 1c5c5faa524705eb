//! Scores two prediction vectors and their average.

use reintel::metrics::{ensemble_average, roc_auc, EvalReport};

fn main() -> reintel::Result<()> {
    let labels = [true, false, true, false, true, false, false, true];
    let model_1 = vec![0.9, 0.3, 0.4, 0.2, 0.7, 0.6, 0.1, 0.5];
    let model_3 = vec![0.6, 0.4, 0.8, 0.1, 0.5, 0.2, 0.3, 0.35];
    let ensemble = ensemble_average(&[model_1.clone(), model_3.clone()])?;
    println!("model 1  auc {:.4}", roc_auc(&labels, &model_1)?);
    println!("model 3  auc {:.4}", roc_auc(&labels, &model_3)?);
    println!("ensemble auc {:.4}\n", roc_auc(&labels, &ensemble)?);
    print!("{}", EvalReport::compute(&labels, &ensemble)?);
    Ok(())
}
