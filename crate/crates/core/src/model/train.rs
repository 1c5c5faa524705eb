use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{EncodedSet, FusionModel};
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::nn::{bce_with_logits, Adam, Mode, Module};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches.
    pub loss: f64,
    /// Inference-mode AUC on the training set, when both classes occur.
    pub train_auc: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best monitored score.
    pub model: FusionModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Inference-mode probabilities for every post in `set`, in order.
pub fn predict_set(model: &FusionModel, set: &EncodedSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    let rows: Vec<usize> = (0..set.len()).collect();
    for chunk in rows.chunks(model.cfg.batch_size.max(1)) {
        out.extend(model.predict(&set.batch(chunk))?);
    }
    Ok(out)
}

/// Mean cross-entropy over `set` in one pass, normalizing with the set's own
/// batch statistics and without dropout.
pub fn dataset_loss(model: &FusionModel, set: &EncodedSet) -> Result<f64> {
    let rows: Vec<usize> = (0..set.len()).collect();
    let out = model.forward::<ChaCha8Rng>(&set.batch(&rows), &mut Mode::BatchStats)?;
    Ok(bce_with_logits(&out.logits, &set.targets()?).0)
}

fn auc_if_defined(model: &FusionModel, set: &EncodedSet) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    let positives = set.positives()?;
    match roc_auc(&positives, &predict_set(model, set)?) {
        Ok(a) => Ok(Some(a)),
        Err(Error::SingleClass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Batches of `batch_size`; a trailing single post joins the previous batch
/// because batch statistics are undefined for one sample.
fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Minimizes binary cross-entropy with Adam.
///
/// Posts are reshuffled every epoch from the `shuffle` substream of the
/// model seed; dropout masks come from the `dropout` substream. After each
/// epoch the validation AUC (or the training AUC when there is no usable
/// validation set) is monitored; the best epoch's weights are returned and
/// training stops after `patience` epochs without improvement.
pub fn train(mut model: FusionModel, train_set: &EncodedSet, val_set: Option<&EncodedSet>) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let targets = train_set.targets()?;
    if let Some(v) = val_set {
        v.targets()?;
    }
    let cfg = model.cfg.clone();
    let mut shuffle_rng = rng::substream(cfg.seed, "shuffle");
    let mut dropout_rng = rng::substream(cfg.seed, "dropout");
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, FusionModel)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (bi, rows) in batches(&order, cfg.batch_size).iter().enumerate() {
            let batch = train_set.batch(rows);
            let y = rows.iter().map(|&i| targets[i]).collect();
            model.zero_grad();
            let out = model.forward(&batch, &mut Mode::Train(&mut dropout_rng))?;
            let (loss, d_logits) = bce_with_logits(&out.logits, &y);
            if !loss.is_finite() {
                let max_logit = out.logits.iter().fold(0.0f64, |a, z| a.max(z.abs()));
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("loss={loss}, max |logit|={max_logit}"),
                });
            }
            model.backward(&out.cache, &d_logits);
            model.update_running(&out.cache);
            adam.step(&mut model);
            loss_sum += loss * rows.len() as f64;
            count += rows.len();
        }

        let record = EpochRecord {
            epoch,
            loss: loss_sum / count as f64,
            train_auc: auc_if_defined(&model, train_set)?,
            val_auc: match val_set {
                Some(v) => auc_if_defined(&model, v)?,
                None => None,
            },
        };
        info!(
            "variant {} epoch {epoch}: loss {:.5} train auc {:?} val auc {:?}",
            model.variant, record.loss, record.train_auc, record.val_auc
        );
        let monitored = record.val_auc.or(record.train_auc).unwrap_or(-record.loss);
        history.push(record);

        if best.as_ref().is_none_or(|(score, _, _)| monitored > *score) {
            best = Some((monitored, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                info!("no improvement for {stale} epochs; stopping");
                break;
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, 0),
    };
    Ok(TrainOutcome { model, history, best_epoch })
}

fn opt(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.6}")).unwrap_or_default()
}

/// Writes `epoch,loss,train_auc,val_auc` rows.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,loss,train_auc,val_auc\n");
    for r in history {
        let _ = writeln!(out, "{},{:.6},{},{}", r.epoch, r.loss, opt(r.train_auc), opt(r.val_auc));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::batches;

    #[test]
    fn trailing_singleton_joins_previous_batch() {
        let order: Vec<usize> = (0..17).collect();
        let b = batches(&order, 16);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 17);
        let b = batches(&order[..1], 16);
        assert_eq!(b, vec![vec![0]]);
        let b = batches(&order[..10], 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }
}
