//! Losses, Adam, checkpoints and the epoch loop with early stopping.

mod adam;
mod checkpoint;
mod loss;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{config_err, Error, Result};
use crate::metrics::{dice, DICE_THRESHOLD};
use crate::mps::{EnvironmentCache, Gradients, MpsModel};
use crate::patching::ravel;
use crate::segmenter::Segmenter;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Precision, FORMAT_VERSION,
};
pub use loss::{bce_loss, dice_loss, LossKind, DICE_EPS};

/// Patches per gradient-accumulation chunk. Chunks are reduced in index
/// order in deterministic mode.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-Dice improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub deterministic: bool,
    /// Global gradient L2 norm limit.
    pub clip_norm: f64,
    /// Random horizontal flips and quarter turns, each with probability 0.5.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 4,
            max_epochs: 300,
            patience: 10,
            loss: LossKind::CrossEntropy,
            seed: 0,
            deterministic: true,
            clip_norm: 1.0,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(config_err("max_epochs must be >= 1"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(config_err(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// Mutable optimisation state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam: AdamState,
    pub epoch: usize,
    pub best_val_dice: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &MpsModel, seed: u64) -> Self {
        Self {
            adam: AdamState::new(model),
            epoch: 0,
            best_val_dice: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_dice";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_dice);
    }
    out
}

pub struct FitOutcome {
    /// Parameters of the epoch with the highest validation Dice.
    pub best: Segmenter,
    /// Parameters after the last epoch that ran.
    pub last: Segmenter,
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
}

/// Passed to the per-epoch observer of [`fit_with`].
pub struct EpochReport<'a> {
    pub row: &'a HistoryRow,
    pub model: &'a Segmenter,
    pub improved: bool,
}

/// Patch-level training unit: features and labels of one patch.
struct PatchItem {
    features: Vec<f64>,
    targets: Vec<f64>,
    /// `false` for pixels in the zero padding.
    valid: Vec<bool>,
}

fn patch_items(model: &Segmenter, sample: &Sample) -> Result<Vec<PatchItem>> {
    let featurized = model.featurize(&sample.image)?;
    let (_, masks) = ravel(&sample.mask, model.config().patch_size)?;
    let lookup = featurized.grid.source_indices();
    Ok(featurized
        .features
        .into_iter()
        .zip(masks)
        .zip(lookup)
        .map(|((features, targets), src)| PatchItem {
            features,
            targets,
            valid: src.iter().map(Option::is_some).collect(),
        })
        .collect())
}

/// Joint loss over every valid pixel of `items` and its gradient with
/// respect to the parameters.
fn batch_loss_and_grad(
    mps: &MpsModel,
    items: &[PatchItem],
    loss: LossKind,
    deterministic: bool,
) -> Result<(f64, Gradients)> {
    let forwards = items
        .par_iter()
        .map(|it| mps.forward_cached(&it.features))
        .collect::<Result<Vec<(Vec<f64>, EnvironmentCache)>>>()?;

    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for (it, (z, _)) in items.iter().zip(&forwards) {
        for ((&zi, &ti), &ok) in z.iter().zip(&it.targets).zip(&it.valid) {
            if ok {
                logits.push(zi);
                targets.push(ti);
            }
        }
    }
    let (value, dlogits) = loss.evaluate(&logits, &targets)?;
    let mut upstream = Vec::with_capacity(items.len());
    let mut cursor = dlogits.into_iter();
    for it in items {
        upstream.push(
            it.valid
                .iter()
                .map(|&ok| if ok { cursor.next().unwrap() } else { 0.0 })
                .collect::<Vec<f64>>(),
        );
    }

    let chunk_grad = |k: usize| -> Result<Gradients> {
        let mut g = Gradients::zeros_like(mps);
        let end = ((k + 1) * CHUNK).min(items.len());
        for i in k * CHUNK..end {
            mps.accumulate_gradients(&items[i].features, &forwards[i].1, &upstream[i], &mut g)?;
        }
        Ok(g)
    };
    let chunks = items.len().div_ceil(CHUNK);
    let grads = if deterministic {
        let parts = (0..chunks)
            .into_par_iter()
            .map(chunk_grad)
            .collect::<Result<Vec<_>>>()?;
        let mut total = Gradients::zeros_like(mps);
        for p in &parts {
            total.add_assign(p);
        }
        total
    } else {
        (0..chunks).into_par_iter().map(chunk_grad).try_reduce(
            || Gradients::zeros_like(mps),
            |mut a, b| {
                a.add_assign(&b);
                Ok(a)
            },
        )?
    };
    Ok((value, grads))
}

/// Mean per-image loss and mean per-image Dice over `samples`.
pub fn evaluate_loss_and_dice(model: &Segmenter, samples: &[Sample], loss: LossKind) -> Result<(f64, f64)> {
    let mut total_loss = 0.0;
    let mut total_dice = 0.0;
    for s in samples {
        let logits = model.predict_logits(&s.image)?;
        let (l, _) = loss.evaluate(logits.data(), s.mask.data())?;
        let probs: Vec<f64> = logits.data().iter().map(|&z| crate::segmenter::sigmoid(z)).collect();
        total_loss += l;
        total_dice += dice(&probs, s.mask.data(), DICE_THRESHOLD)?;
    }
    let n = samples.len() as f64;
    Ok((total_loss / n, total_dice / n))
}

fn check_dataset(model: &Segmenter, samples: &[Sample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(config_err(format!("{what} set is empty")));
    }
    for s in samples {
        model
            .check_image(&s.image)
            .map_err(|e| config_err(format!("{what} sample {}: {e}", s.id)))?;
    }
    Ok(())
}

/// Trains `model` with Adam, keeping the parameters with the best
/// validation Dice.
pub fn fit(model: Segmenter, train: &[Sample], val: &[Sample], config: &TrainConfig) -> Result<FitOutcome> {
    fit_with(model, train, val, config, |_| {})
}

/// [`fit`] with a callback invoked after every epoch.
pub fn fit_with<F>(
    mut model: Segmenter,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<FitOutcome>
where
    F: FnMut(&EpochReport<'_>),
{
    config.validate()?;
    if model.config().classes != 1 {
        return Err(config_err("training supports binary masks only (classes = 1)"));
    }
    check_dataset(&model, train, "training")?;
    check_dataset(&model, val, "validation")?;

    let mut state = TrainState::new(model.mps(), config.seed);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    while state.epoch < config.max_epochs {
        state.epoch += 1;
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut items = Vec::new();
            for &i in batch {
                let sample = if config.augment {
                    let flip = state.rng.random_bool(0.5);
                    let turns = if state.rng.random_bool(0.5) {
                        state.rng.random_range(1..4)
                    } else {
                        0
                    };
                    train[i].transformed(flip, turns)
                } else {
                    train[i].clone()
                };
                items.extend(patch_items(&model, &sample)?);
            }
            let (value, grads) = batch_loss_and_grad(model.mps(), &items, config.loss, config.deterministic)?;
            let context = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {}, batch {b}: {msg}", state.epoch)),
                other => other,
            };
            if !value.is_finite() {
                return Err(context(Error::Numeric("non-finite loss".into())));
            }
            state
                .adam
                .step(model.mps_mut(), &grads, config.lr, Some(config.clip_norm))
                .map_err(context)?;
            loss_sum += value;
            batches += 1;
        }

        let (val_loss, val_dice) = evaluate_loss_and_dice(&model, val, config.loss)?;
        let row = HistoryRow {
            epoch: state.epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_dice,
        };
        let improved = val_dice > state.best_val_dice;
        if improved {
            state.best_val_dice = val_dice;
            state.best_epoch = state.epoch;
            state.epochs_since_improvement = 0;
            best = model.clone();
        } else {
            state.epochs_since_improvement += 1;
        }
        log::info!(
            "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_dice {:.4}{}",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.val_dice,
            if improved { "  *" } else { "" }
        );
        history.push(row);
        on_epoch(&EpochReport {
            row: &row,
            model: &model,
            improved,
        });
        if state.epochs_since_improvement >= config.patience {
            break;
        }
    }

    Ok(FitOutcome {
        best,
        last: model,
        history,
        best_epoch: state.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::featuremaps::LocalFeatureMap;
    use crate::mps::InitScheme;
    use crate::segmenter::ModelConfig;

    fn small_model(seed: u64) -> Segmenter {
        Segmenter::new(
            ModelConfig {
                dims: 2,
                patch_size: 4,
                bond_dim: 3,
                feature_map: LocalFeatureMap::default(),
                channels: 1,
                classes: 1,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"loss":"dice","batch_size":2}"#).unwrap();
        assert_eq!(parsed.loss, LossKind::Dice);
        assert_eq!(parsed.lr, 5e-4);
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let data = gen_synthetic(4, 16, 1, 2).unwrap();
        let cfg = TrainConfig {
            patience: 0,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let out = fit(small_model(0), &data[..2], &data[2..], &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn early_stopping_contract() {
        let data = gen_synthetic(6, 16, 2, 2).unwrap();
        let cfg = TrainConfig {
            patience: 2,
            max_epochs: 12,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let out = fit(small_model(1), &data[..4], &data[4..], &cfg).unwrap();
        assert!(out.history.len() <= cfg.max_epochs);
        let best = out.history.iter().map(|r| r.val_dice).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.history[out.best_epoch - 1].val_dice, best);
        if out.history.len() < cfg.max_epochs {
            let tail = &out.history[out.history.len() - cfg.patience..];
            assert!(tail.iter().all(|r| r.val_dice <= best));
            assert_eq!(out.history.len(), out.best_epoch + cfg.patience);
        }
        let (_, val_dice) = evaluate_loss_and_dice(&out.best, &data[4..], cfg.loss).unwrap();
        assert_eq!(val_dice, best);
    }

    #[test]
    fn rejects_inconsistent_data() {
        let data = gen_synthetic(2, 16, 3, 3).unwrap();
        let err = fit(small_model(0), &data[..1], &data[1..], &TrainConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(matches!(
            fit(small_model(0), &[], &data[1..], &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn accumulated_gradient_equals_joint_gradient() {
        // Two patches: chunked accumulation vs one backward with the summed
        // upstream of a single model evaluated on both feature sets.
        let mps = MpsModel::new(4, 2, 4, 2, &InitScheme::uniform(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items: Vec<PatchItem> = (0..2)
            .map(|_| PatchItem {
                features: (0..8).map(|_| rng.random_range(0.0..1.0)).collect(),
                targets: (0..4).map(|_| rng.random_range(0..2) as f64).collect(),
                valid: vec![true; 4],
            })
            .collect();
        let (_, acc) = batch_loss_and_grad(&mps, &items, LossKind::CrossEntropy, true).unwrap();

        let z: Vec<f64> = items.iter().flat_map(|it| mps.forward(&it.features).unwrap()).collect();
        let t: Vec<f64> = items.iter().flat_map(|it| it.targets.clone()).collect();
        let (_, dz) = bce_loss(&z, &t).unwrap();
        let mut joint = mps.backward(&items[0].features, &dz[..4]).unwrap();
        joint.add_assign(&mps.backward(&items[1].features, &dz[4..]).unwrap());
        for (a, b) in acc.0.iter().flatten().zip(joint.0.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn padded_pixels_do_not_contribute() {
        let model = small_model(5);
        let data = gen_synthetic(1, 18, 5, 2).unwrap();
        let items = patch_items(&model, &data[0]).unwrap();
        assert_eq!(items.len(), 25);
        let valid: usize = items.iter().map(|it| it.valid.iter().filter(|&&v| v).count()).sum();
        assert_eq!(valid, 18 * 18);
    }

    #[test]
    fn history_format() {
        let rows = [HistoryRow {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            val_dice: 0.75,
        }];
        assert_eq!(
            history_csv(&rows),
            "epoch,train_loss,val_loss,val_dice\n1,0.5,0.25,0.75\n"
        );
    }
}
