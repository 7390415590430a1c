//! Dice accuracy and average precision.

use std::fmt::Write as _;

use crate::error::{dim_err, Error, Result};

/// Threshold separating foreground from background in soft predictions.
pub const DICE_THRESHOLD: f64 = 0.5;

/// `2|P ∩ G| / (|P| + |G|)` with `P = {pred ≥ threshold}` and `G = {gt = 1}`.
/// Two empty sets score 1.
pub fn dice(pred_soft: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    if pred_soft.len() != gt.len() {
        return Err(dim_err(format!(
            "dice of {} predictions against {} labels",
            pred_soft.len(),
            gt.len()
        )));
    }
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&s, &t) in pred_soft.iter().zip(gt) {
        let pos = s >= threshold;
        let truth = t >= 0.5;
        p += pos as usize;
        g += truth as usize;
        inter += (pos && truth) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Average precision `Σ_k (R_k − R_{k−1}) · P_k` over a descending-score
/// sweep where equal scores form a single step.
pub fn prauc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(dim_err(format!(
            "prauc of {} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Per-image Dice with summary statistics and pooled PRAUC.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ids: Vec<String>,
    pub dice: Vec<f64>,
    pub mean_dice: f64,
    /// Population standard deviation of `dice`.
    pub std_dice: f64,
    /// `None` when the evaluated set has no foreground pixels.
    pub prauc: Option<f64>,
}

impl EvalReport {
    pub fn new(ids: Vec<String>, dice: Vec<f64>, prauc: Option<f64>) -> Self {
        let n = dice.len().max(1) as f64;
        let mean_dice = dice.iter().sum::<f64>() / n;
        let std_dice = (dice.iter().map(|d| (d - mean_dice).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            ids,
            dice,
            mean_dice,
            std_dice,
            prauc,
        }
    }

    /// `image,dice` rows followed by `mean_dice`, `std_dice` and `prauc`
    /// summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,dice\n");
        for (id, d) in self.ids.iter().zip(&self.dice) {
            let _ = writeln!(out, "{id},{d}");
        }
        let _ = writeln!(out, "mean_dice,{}", self.mean_dice);
        let _ = writeln!(out, "std_dice,{}", self.std_dice);
        match self.prauc {
            Some(v) => {
                let _ = writeln!(out, "prauc,{v}");
            }
            None => out.push_str("prauc,\n"),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct sweep: for each distinct threshold (descending), count the
    /// predicted positives by scanning everything.
    fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let positives = labels.iter().filter(|&&l| l).count() as f64;
        let mut ap = 0.0;
        let mut prev = 0.0;
        for t in thresholds {
            let (mut tp, mut fp) = (0.0, 0.0);
            for (s, &l) in scores.iter().zip(labels) {
                if *s >= t {
                    if l {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let r = tp / positives;
            ap += (r - prev) * (tp / (tp + fp));
            prev = r;
        }
        ap
    }

    #[test]
    fn dice_hand_cases() {
        assert_eq!(dice(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], 0.5).unwrap(), 1.0);
        assert_eq!(dice(&[1.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 1.0], 0.5).unwrap(), 0.0);
        assert_eq!(dice(&[0.9, 0.6, 0.1], &[1.0, 0.0, 0.0], 0.5).unwrap(), 2.0 / 3.0);
        assert_eq!(dice(&[0.1, 0.2], &[0.0, 0.0], 0.5).unwrap(), 1.0);
        assert!(dice(&[0.1], &[0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn prauc_cases() {
        assert_eq!(prauc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        let labels = [true, false, false, true, false];
        assert_eq!(prauc(&[0.5; 5], &labels).unwrap(), 0.4);
        assert!(matches!(
            prauc(&[0.5, 0.2], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn prauc_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // coarse scores force plenty of ties
        let scores: Vec<f64> = (0..1000).map(|_| (rng.random::<f64>() * 50.0).floor() / 50.0).collect();
        let labels: Vec<bool> = scores.iter().map(|s| rng.random::<f64>() < *s).collect();
        assert_eq!(prauc(&scores, &labels).unwrap(), brute_force_ap(&scores, &labels));
    }

    #[test]
    fn report_summary() {
        let r = EvalReport::new(vec!["a".into(), "b".into()], vec![0.5, 1.0], Some(0.8));
        assert_eq!(r.mean_dice, 0.75);
        assert_eq!(r.std_dice, 0.25);
        let csv = r.to_csv();
        assert!(csv.starts_with("image,dice\na,0.5\nb,1\n"));
        assert!(csv.ends_with("prauc,0.8\n"));
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_permutation_invariant(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200), rot in 0usize..200) {
            let p: Vec<f64> = bits.iter().map(|b| b.0 as u8 as f64).collect();
            let g: Vec<f64> = bits.iter().map(|b| b.1 as u8 as f64).collect();
            let d = dice(&p, &g, 0.5).unwrap();
            prop_assert_eq!(d, dice(&g, &p, 0.5).unwrap());
            let k = rot % p.len();
            let (mut p2, mut g2) = (p.clone(), g.clone());
            p2.rotate_left(k);
            g2.rotate_left(k);
            prop_assert_eq!(d, dice(&p2, &g2, 0.5).unwrap());
        }

        #[test]
        fn prauc_rank_invariant(raw in prop::collection::vec((0u8..20, any::<bool>()), 2..300)) {
            prop_assume!(raw.iter().any(|r| r.1));
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(prauc(&scores, &labels).unwrap(), prauc(&moved, &labels).unwrap());
        }

        #[test]
        fn report_mean_matches(dices in prop::collection::vec(0.0f64..=1.0, 1..50)) {
            let ids = (0..dices.len()).map(|i| i.to_string()).collect();
            let r = EvalReport::new(ids, dices.clone(), None);
            let mean = dices.iter().sum::<f64>() / dices.len() as f64;
            prop_assert!((r.mean_dice - mean).abs() <= 1e-15);
            prop_assert!((0.0..=1.0).contains(&r.std_dice));
        }
    }
}
