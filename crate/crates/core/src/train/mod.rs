//! Training protocol: BCE loss, Adam, plateau schedule, AUROC early
//! stopping, checkpoints and thresholded prediction.

mod checkpoint;
mod loss;
mod optim;

use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use loss::{bce_multilabel_loss, bce_with_logits_grad, EPS as LOSS_EPS};
pub use optim::{Adam, EarlyStopping, PlateauScheduler};

use crate::data::{load_batch, AugmentationConfig, DatasetManifest};
use crate::error::{Error, Result};
use crate::labels::{label_names, loss_mask, resolve_targets, PolicyConfig, N_LABELS};
use crate::metrics::{auroc, build_report, threshold_probs, MetricsReport};
use crate::nn::Mode;
use crate::tensorfile::Tensors;
use crate::zoo::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 96,
            max_epochs: 40,
            initial_lr: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 2,
            early_stop_patience: 5,
            decision_threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            ));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!(
                "plateau_factor must be in (0, 1), got {}",
                self.plateau_factor
            ));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!(
                "decision_threshold must be in (0, 1), got {}",
                self.decision_threshold
            ));
        }
        Ok(())
    }
}

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Macro AUROC of the predictions made during the epoch's training
    /// pass; `None` when no label has both classes.
    pub train_auroc: Option<f64>,
    pub val_loss: f64,
    pub val_auroc: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Parses a JSON-lines epoch log.
pub fn read_epoch_logs(text: &str) -> Result<Vec<EpochLog>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Inputs of a training run. Image paths resolve against `data_root`.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub data_root: &'a Path,
    pub train: &'a DatasetManifest,
    pub val: &'a DatasetManifest,
    pub augmentation: &'a AugmentationConfig,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Binary targets and loss weights, one row per record.
pub fn targets_for(manifest: &DatasetManifest, policy: &PolicyConfig) -> (Array2<u8>, Array2<f64>) {
    let n = manifest.len();
    let mut targets = Array2::zeros((n, N_LABELS));
    let mut mask = Array2::zeros((n, N_LABELS));
    for (i, r) in manifest.records.iter().enumerate() {
        let t = resolve_targets(&r.labels, policy);
        let m = loss_mask(&r.labels, policy);
        for k in 0..N_LABELS {
            targets[[i, k]] = t.0[k];
            mask[[i, k]] = f64::from(m[k]);
        }
    }
    (targets, mask)
}

fn macro_auroc(probs: &Array2<f64>, targets: &Array2<u8>) -> Result<Option<f64>> {
    let mut values = Vec::new();
    for k in 0..probs.ncols() {
        if let Some(a) = auroc(&probs.column(k).to_vec(), &targets.column(k).to_vec())? {
            values.push(a);
        }
    }
    Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
}

/// Eval-mode probabilities for every record, in manifest order.
pub fn predict_probs(
    model: &mut Model,
    data_root: &Path,
    manifest: &DatasetManifest,
    augmentation: &AugmentationConfig,
    batch_size: usize,
) -> Result<Array2<f64>> {
    let n = manifest.len();
    let mut probs = Array2::zeros((n, N_LABELS));
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = load_batch(data_root, &manifest.records, chunk, augmentation, None)?;
        let p = model.forward(&x, Mode::Eval)?;
        probs
            .slice_mut(s![chunk[0]..chunk[0] + chunk.len(), ..])
            .assign(&p.mapv(f64::from));
    }
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probs: Array2<f64>,
    /// `probs > threshold`.
    pub preds: Array2<u8>,
}

pub fn predict(
    model: &mut Model,
    data_root: &Path,
    manifest: &DatasetManifest,
    augmentation: &AugmentationConfig,
    config: &TrainConfig,
) -> Result<Predictions> {
    let probs = predict_probs(model, data_root, manifest, augmentation, config.batch_size)?;
    let preds = threshold_probs(probs.view(), config.decision_threshold);
    Ok(Predictions { probs, preds })
}

/// Scores `manifest` against its resolved targets.
pub fn evaluate(
    model: &mut Model,
    data_root: &Path,
    manifest: &DatasetManifest,
    augmentation: &AugmentationConfig,
    policy: &PolicyConfig,
    config: &TrainConfig,
) -> Result<(Predictions, MetricsReport)> {
    let p = predict(model, data_root, manifest, augmentation, config)?;
    let (targets, _) = targets_for(manifest, policy);
    let name = model.arch().display_name();
    let report = build_report(
        name,
        p.probs.view(),
        p.preds.view(),
        targets.view(),
        &label_names(),
    )?;
    Ok((p, report))
}

/// Runs the training protocol and leaves the best-epoch weights in `model`.
/// `on_epoch` sees each log as soon as the epoch finishes.
pub fn train(
    model: &mut Model,
    data: &TrainData,
    policy: &PolicyConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    policy.validate()?;
    data.augmentation.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyManifest(data.train.source_path.clone()));
    }
    if data.val.is_empty() {
        return Err(Error::EmptyManifest(data.val.source_path.clone()));
    }
    let (train_t, train_mask) = targets_for(data.train, policy);
    let train_tf = train_t.mapv(f64::from);
    let (val_t, val_mask) = targets_for(data.val, policy);
    let val_tf = val_t.mapv(f64::from);
    let use_mask = policy.mask_blanks;

    let mut adam = Adam::new(config.initial_lr);
    let mut plateau = PlateauScheduler::new(config.plateau_factor, config.plateau_patience);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut lr = config.initial_lr;
    // (epoch, val AUROC, weights) of the best epoch so far
    let mut best: Option<(usize, f64, Tensors)> = None;
    let mut logs = Vec::new();
    let n = data.train.len();

    for epoch in 1..=config.max_epochs {
        adam.lr = lr;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut slot_sum = 0.0;
        let mut seen_probs = Array2::zeros((n, N_LABELS));
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let x = load_batch(
                data.data_root,
                &data.train.records,
                batch,
                data.augmentation,
                Some((config.seed, epoch)),
            )?;
            let t = train_tf.select(ndarray::Axis(0), batch);
            let m = train_mask.select(ndarray::Axis(0), batch);
            let logits = model.forward_logits(&x, Mode::Train)?;
            let (loss, grad) =
                bce_with_logits_grad(logits.view(), t.view(), use_mask.then(|| m.view()))?;
            if !loss.is_finite() {
                let bad = logits.iter().filter(|v| !v.is_finite()).count();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("loss {loss}, {bad} non-finite logits, lr {lr}"),
                });
            }
            for (row, &i) in batch.iter().enumerate() {
                for k in 0..N_LABELS {
                    seen_probs[[i, k]] = f64::from(crate::nn::sigmoid(logits[[row, k]]));
                }
            }
            let slots = if use_mask { m.sum() } else { m.len() as f64 };
            loss_sum += loss * slots;
            slot_sum += slots;
            model.zero_grad();
            model.backward_logits(&grad)?;
            adam.step(model);
        }
        let train_loss = if slot_sum > 0.0 {
            loss_sum / slot_sum
        } else {
            0.0
        };
        let train_auroc = macro_auroc(&seen_probs, &train_t)?;

        let val_probs = predict_probs(
            model,
            data.data_root,
            data.val,
            data.augmentation,
            config.batch_size,
        )?;
        let val_loss = bce_multilabel_loss(
            val_probs.view(),
            val_tf.view(),
            use_mask.then(|| val_mask.view()),
        )?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                detail: format!("validation loss {val_loss}"),
            });
        }
        let val_preds = threshold_probs(val_probs.view(), config.decision_threshold);
        let report = build_report(
            model.arch().display_name(),
            val_probs.view(),
            val_preds.view(),
            val_t.view(),
            &label_names(),
        )?;
        let val_auroc = report.overall.auroc.ok_or(Error::DegenerateValidation)?;
        let log = EpochLog {
            epoch,
            train_loss,
            train_auroc,
            val_loss,
            val_auroc,
            val_accuracy: report.overall.accuracy,
            val_f1: report.overall.f1,
            lr,
        };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_loss {val_loss:.5} val_auroc {val_auroc:.5} lr {lr:e}"
        );
        on_epoch(&log)?;
        logs.push(log);

        if stopper.observe(val_auroc) {
            best = Some((epoch, val_auroc, model.state()));
        }
        lr = plateau.step(val_loss, lr);
        if stopper.should_stop() {
            break;
        }
    }

    let (best_epoch, best_val_auroc, mut weights) = best.expect("at least one epoch ran");
    model.load_state(&weights)?;
    // same order as a checkpoint read back from disk
    weights.sort_by(|a, b| a.0.cmp(&b.0));
    let checkpoint = Checkpoint {
        model_spec: model.spec().clone(),
        train_config: config.clone(),
        policy: policy.clone(),
        augmentation: data.augmentation.clone(),
        best_epoch,
        best_val_auroc,
        label_names: label_names(),
        weights,
    };
    Ok(TrainOutcome { checkpoint, logs })
}
