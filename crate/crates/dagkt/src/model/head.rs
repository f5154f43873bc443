//! Attention prediction head.
//!
//! A prediction event pairs a set of student states (the current state plus
//! recap states from KC-sharing history) with a set of anchors (the target
//! question embedding plus its KC embeddings). Every state–anchor inner
//! product is an interaction value; a learned diagonal bilinear form scores
//! each pair, softmax over the scores weights the values, and the sigmoid
//! of the weighted sum is the predicted probability.

use crate::autodiff::{DiffError, Tape, Var};

/// Predicts one event. `states` and `anchors` are `[1 x E]` rows;
/// `score_scale` is the `[E]` diagonal of the bilinear scoring form.
/// Returns a `[1 x 1]` probability in (0, 1).
pub fn predict_event(
    tape: &mut Tape,
    score_scale: Var,
    states: &[Var],
    anchors: &[Var],
) -> Result<Var, DiffError> {
    let s = tape.concat_rows(states)?;
    let t = tape.concat_rows(anchors)?;
    let values = tape.matmul_nt(s, t)?;
    let scaled = tape.scale_cols(s, score_scale)?;
    let scores = tape.matmul_nt(scaled, t)?;
    let n = states.len() * anchors.len();
    let values = tape.reshape(values, &[1, n])?;
    let scores = tape.reshape(scores, &[1, n])?;
    let alpha = tape.softmax_rows(scores);
    let weighted = tape.mul(alpha, values)?;
    let total = tape.sum(weighted);
    let p = tape.sigmoid(total);
    tape.reshape(p, &[1, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{sigmoid, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(tape: &mut Tape, data: Vec<f64>) -> Var {
        let n = data.len();
        tape.constant(Tensor::matrix(1, n, data).unwrap())
    }

    #[test]
    fn singleton_term_reduces_to_plain_sigmoid() {
        let mut tape = Tape::new();
        let scale = tape.constant(Tensor::vector(vec![3.0, -2.0]));
        let s = row(&mut tape, vec![0.5, -1.0]);
        let t = row(&mut tape, vec![2.0, 0.25]);
        let p = predict_event(&mut tape, scale, &[s], &[t]).unwrap();
        let want = sigmoid(0.5 * 2.0 + (-1.0) * 0.25);
        assert!((tape.value(p).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn equal_values_ignore_attention_weights() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scale = tape.constant(Tensor::randn(&[3], 1.0, &mut rng));
        let s1 = row(&mut tape, vec![1.0, 0.0, 0.0]);
        let s2 = row(&mut tape, vec![0.0, 1.0, 0.0]);
        // both anchors hit every state with the same inner product 0.7
        let t1 = row(&mut tape, vec![0.7, 0.7, 0.0]);
        let t2 = row(&mut tape, vec![0.7, 0.7, 5.0]);
        let p = predict_event(&mut tape, scale, &[s1, s2], &[t1, t2]).unwrap();
        assert!((tape.value(p).data()[0] - sigmoid(0.7)).abs() < 1e-12);
    }

    #[test]
    fn two_terms_match_hand_softmax_arithmetic() {
        let mut tape = Tape::new();
        let scale = tape.constant(Tensor::vector(vec![2.0, 0.5]));
        let s = row(&mut tape, vec![1.0, -0.5]);
        let t1 = row(&mut tape, vec![0.8, 0.4]);
        let t2 = row(&mut tape, vec![-0.2, 1.0]);
        let p = predict_event(&mut tape, scale, &[s], &[t1, t2]).unwrap();

        let v1: f64 = 1.0 * 0.8 + (-0.5) * 0.4;
        let v2: f64 = 1.0 * (-0.2) + (-0.5) * 1.0;
        let sc1: f64 = 1.0 * 2.0 * 0.8 + (-0.5) * 0.5 * 0.4;
        let sc2: f64 = 1.0 * 2.0 * (-0.2) + (-0.5) * 0.5 * 1.0;
        let m = sc1.max(sc2);
        let (e1, e2) = ((sc1 - m).exp(), (sc2 - m).exp());
        let (a1, a2) = (e1 / (e1 + e2), e2 / (e1 + e2));
        let want = sigmoid(a1 * v1 + a2 * v2);
        assert!((tape.value(p).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn anchor_order_does_not_change_the_prediction() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scale = tape.constant(Tensor::randn(&[4], 1.0, &mut rng));
        let states: Vec<Var> = (0..2)
            .map(|_| {
                let t = Tensor::randn(&[1, 4], 1.0, &mut rng);
                tape.constant(t)
            })
            .collect();
        let anchors: Vec<Var> = (0..3)
            .map(|_| {
                let t = Tensor::randn(&[1, 4], 1.0, &mut rng);
                tape.constant(t)
            })
            .collect();
        let p = predict_event(&mut tape, scale, &states, &anchors).unwrap();
        let shuffled = vec![anchors[2], anchors[0], anchors[1]];
        let q = predict_event(&mut tape, scale, &states, &shuffled).unwrap();
        assert!((tape.value(p).data()[0] - tape.value(q).data()[0]).abs() < 1e-12);
    }

    #[test]
    fn prediction_stays_in_open_interval() {
        let mut tape = Tape::new();
        let scale = tape.constant(Tensor::vector(vec![1.0]));
        for sign in [1.0, -1.0] {
            let s = row(&mut tape, vec![5.0]);
            let t = row(&mut tape, vec![sign * 5.0]);
            let p = predict_event(&mut tape, scale, &[s], &[t]).unwrap();
            let v = tape.value(p).data()[0];
            assert!(v > 0.0 && v < 1.0, "sign {sign}: {v}");
        }
    }
}
