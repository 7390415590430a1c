use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::segmenter::sigmoid;

/// Smoothing term of the Dice loss.
pub const DICE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Dice,
}

impl LossKind {
    /// Loss and its gradient with respect to `logits`.
    pub fn evaluate(self, logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::CrossEntropy => bce_loss(logits, targets),
            LossKind::Dice => dice_loss(logits, targets),
        }
    }
}

fn check(logits: &[f64], targets: &[f64]) -> Result<()> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(dim_err(format!(
            "loss over {} logits and {} targets",
            logits.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy of `sigmoid(logits)`, in the overflow-free form
/// `max(z, 0) − z·t + ln(1 + e^{−|z|})`.
pub fn bce_loss(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(logits, targets)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| {
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - t) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// `1 − (2 Σ p·t + ε) / (Σ p + Σ t + ε)` with `p = sigmoid(logits)`, over
/// all entries jointly.
pub fn dice_loss(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(logits, targets)?;
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let inter: f64 = probs.iter().zip(targets).map(|(p, t)| p * t).sum();
    let total = probs.iter().sum::<f64>() + targets.iter().sum::<f64>() + DICE_EPS;
    let num = 2.0 * inter + DICE_EPS;
    let loss = 1.0 - num / total;
    let grad = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let dl_dp = -(2.0 * t * total - num) / (total * total);
            dl_dp * p * (1.0 - p)
        })
        .collect();
    Ok((loss, grad))
}
