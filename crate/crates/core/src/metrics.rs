//! Evaluation metrics for binary classifiers.

use crate::error::{Error, Result};

/// Fraction of examples where the sign of the logit matches the label
/// (logit >= 0 predicts the positive class).
pub fn accuracy(logits: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(logits, labels)?;
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| (z >= 0.0) == (y == 1))
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Area under the ROC curve by trapezoidal integration over the unique
/// score thresholds. Tied scores move the operating point diagonally, so
/// ties contribute half weight, matching the rank-statistic definition.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::input(format!(
            "AUC needs both classes, got {pos} positive / {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        // One threshold group: every index sharing this score flips together.
        let mut j = i;
        let (mut dtp, mut dfp) = (0u64, 0u64);
        while j < order.len() && scores[order[j]].to_bits() == scores[order[i]].to_bits() {
            if labels[order[j]] == 1 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            j += 1;
        }
        area += dfp as f64 * (tp as f64 + 0.5 * dtp as f64);
        tp += dtp;
        fp += dfp;
        i = j;
    }
    debug_assert_eq!((tp, fp), (pos as u64, neg as u64));
    Ok(area / (pos as f64 * neg as f64))
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::input("metrics need at least one example"));
    }
    if scores.len() != labels.len() {
        return Err(Error::structural(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamPurpose};

    /// Independent oracle: mean pairwise win rate, ties worth one half.
    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_hand_examples() {
        let a = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((a - 0.75).abs() < 1e-12);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap(), 0.0);
        let tied = auc(&[1.0, 1.0, 0.0, 0.0], &[1, 0, 1, 0]).unwrap();
        assert!((tied - 0.5).abs() < 1e-12);
        let constant = auc(&[3.0; 6], &[1, 0, 1, 0, 1, 0]).unwrap();
        assert!((constant - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pairwise_oracle_on_random_data() {
        let mut rng = RngStream::new(11, StreamPurpose::Sampling);
        for trial in 0..20 {
            let n = 30 + trial;
            // Quantized to force tie groups.
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.uniform() * 8.0).floor() / 8.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| (rng.uniform() < 0.4) as u8).collect();
            if labels.iter().all(|&y| y == 0) || labels.iter().all(|&y| y == 1) {
                continue;
            }
            let fast = auc(&scores, &labels).unwrap();
            let slow = pairwise_auc(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn auc_is_in_unit_interval_and_needs_both_classes() {
        let mut rng = RngStream::new(3, StreamPurpose::Sampling);
        let scores: Vec<f64> = (0..200).map(|_| rng.gaussian()).collect();
        let labels: Vec<u8> = (0..200).map(|i| (i % 3 == 0) as u8).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((0.0..=1.0).contains(&a));
        assert!(auc(&[1.0, 2.0], &[1, 1]).is_err());
        assert!(auc(&[], &[]).is_err());
        assert!(auc(&[1.0], &[1, 0]).is_err());
    }

    #[test]
    fn accuracy_counts_sign_agreement() {
        let acc = accuracy(&[1.5, -0.2, 0.0, -3.0], &[1, 0, 1, 1]).unwrap();
        assert!((acc - 0.75).abs() < 1e-12);
        assert_eq!(accuracy(&[2.0], &[1]).unwrap(), 1.0);
        assert!(accuracy(&[], &[]).is_err());
    }
}
