//! Ranking quality of predicted success probabilities.

use super::TrainError;

/// Area under the ROC curve via tie-averaged ranks (Mann-Whitney form):
/// the probability that a uniformly drawn positive outranks a uniformly
/// drawn negative, ties counting half.
///
/// Both classes must be present; a single-class label set has no ranking
/// to measure and is reported as an error rather than a default value.
pub fn auc(labels: &[f64], scores: &[f64]) -> Result<f64, TrainError> {
    if labels.len() != scores.len() {
        return Err(TrainError::Metric(format!(
            "label/score length mismatch: {} vs {}",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(TrainError::Metric(format!("non-finite score {bad}")));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::DegenerateLabels {
            positives,
            negatives,
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite"));

    // tie groups share the average of the 1-based ranks they span
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let labels = [1.0, 1.0, 0.0, 0.0];
        let scores = [0.8, 0.3, 0.5, 0.1];
        assert_eq!(auc(&labels, &scores).unwrap(), 0.75);
    }

    #[test]
    fn perfect_and_inverted_ranking() {
        let labels = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&labels, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&labels, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn all_tied_scores_give_half() {
        let labels = [1.0, 0.0, 1.0, 0.0, 0.0];
        let scores = [0.4; 5];
        assert_eq!(auc(&labels, &scores).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        let err = auc(&[1.0, 1.0], &[0.2, 0.9]).unwrap_err();
        assert!(matches!(
            err,
            TrainError::DegenerateLabels {
                positives: 2,
                negatives: 0
            }
        ));
    }

    #[test]
    fn matches_pairwise_enumeration_on_random_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let n = rng.gen_range(2..200);
            let labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            // coarse grid forces plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let pos = labels.iter().filter(|&&y| y == 1.0).count();
            if pos == 0 || pos == n {
                continue;
            }
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                if labels[i] != 1.0 {
                    continue;
                }
                for j in 0..n {
                    if labels[j] != 0.0 {
                        continue;
                    }
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
            let brute = wins / pairs;
            let fast = auc(&labels, &scores).unwrap();
            assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
        }
    }
}
