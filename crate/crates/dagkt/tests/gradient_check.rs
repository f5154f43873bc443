//! Central finite-difference validation of every differentiable primitive.
//!
//! The graph builder runs once for the analytic pass and twice per input
//! element for the numeric pass, so builders must be pure functions of
//! their inputs. Inputs are chosen away from non-differentiable points
//! (relu at zero, the cross-entropy clamp boundary).

use dagkt::autodiff::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn check_grads(name: &str, inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.scalar_value(loss)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= H;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let ana = analytic[i].data()[k];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-3);
            assert!(
                rel < TOL,
                "{name}: input {i} element {k}: analytic {ana} vs numeric {num} (rel {rel:.3e})"
            );
        }
    }
}

/// Weights each output element differently before reducing, so transposition
/// or permutation bugs cannot cancel out in the scalar loss.
fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
    let n = tape.value(y).numel();
    let w: Vec<f64> = (0..n).map(|k| 0.3 + 0.17 * k as f64).collect();
    let shape = tape.value(y).shape().to_vec();
    let wv = tape.constant(Tensor::new(shape, w).unwrap());
    let prod = tape.mul(y, wv).unwrap();
    tape.sum(prod)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn grad_add_sub_mul() {
    let mut r = rng(1);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[3, 4], 1.0, &mut r);
    check_grads("add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
    check_grads("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
    check_grads("mul", &[a, b], |t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_add_bias_and_scalar() {
    let mut r = rng(2);
    let x = Tensor::randn(&[4, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3], 1.0, &mut r);
    check_grads("add_bias", &[x.clone(), b], |t, v| {
        let y = t.add_bias(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
    let s = Tensor::scalar(0.7);
    check_grads("add_scalar", &[x, s], |t, v| {
        let y = t.add_scalar(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_scale_cols() {
    let mut r = rng(3);
    let x = Tensor::randn(&[4, 3], 1.0, &mut r);
    let s = Tensor::randn(&[3], 1.0, &mut r);
    check_grads("scale_cols", &[x, s], |t, v| {
        let y = t.scale_cols(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_matmul_both_orientations() {
    let mut r = rng(4);
    let a = Tensor::randn(&[3, 5], 1.0, &mut r);
    let b = Tensor::randn(&[5, 2], 1.0, &mut r);
    check_grads("matmul", &[a, b], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
    let a = Tensor::randn(&[3, 5], 1.0, &mut r);
    let bt = Tensor::randn(&[2, 5], 1.0, &mut r);
    check_grads("matmul_nt", &[a, bt], |t, v| {
        let y = t.matmul_nt(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_concat() {
    let mut r = rng(5);
    let a = Tensor::randn(&[3, 2], 1.0, &mut r);
    let b = Tensor::randn(&[3, 4], 1.0, &mut r);
    check_grads("concat_cols", &[a, b], |t, v| {
        let y = t.concat_cols(&[v[0], v[1]]).unwrap();
        weighted_sum(t, y)
    });
    let a = Tensor::randn(&[2, 3], 1.0, &mut r);
    let b = Tensor::randn(&[4, 3], 1.0, &mut r);
    check_grads("concat_rows", &[a, b], |t, v| {
        let y = t.concat_rows(&[v[0], v[1]]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_gather_with_repeated_rows() {
    let mut r = rng(6);
    let table = Tensor::randn(&[5, 3], 1.0, &mut r);
    check_grads("gather_rows", &[table], |t, v| {
        let y = t.gather_rows(v[0], &[4, 0, 4, 2]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_group_mean_with_overlapping_groups() {
    let mut r = rng(7);
    let src = Tensor::randn(&[5, 3], 1.0, &mut r);
    check_grads("group_mean_rows", &[src], |t, v| {
        let y = t
            .group_mean_rows(v[0], &[vec![0, 1], vec![1, 2, 3], vec![4]])
            .unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_nonlinearities() {
    // relu inputs kept away from the kink at zero
    let x = Tensor::vector(vec![-1.3, -0.4, 0.2, 0.9, 2.1, -2.4]);
    check_grads("relu", &[x], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y)
    });
    let mut r = rng(8);
    let x = Tensor::randn(&[2, 4], 1.0, &mut r);
    check_grads("tanh", &[x.clone()], |t, v| {
        let y = t.tanh(v[0]);
        weighted_sum(t, y)
    });
    check_grads("sigmoid", &[x], |t, v| {
        let y = t.sigmoid(v[0]);
        weighted_sum(t, y)
    });
}

#[test]
fn grad_softmax_rows() {
    let mut r = rng(9);
    let x = Tensor::randn(&[3, 4], 1.0, &mut r);
    check_grads("softmax_rows", &[x], |t, v| {
        let y = t.softmax_rows(v[0]);
        weighted_sum(t, y)
    });
}

#[test]
fn grad_dropout_fixed_mask() {
    // mask is a pure function of the seed, so rebuilt tapes in the numeric
    // pass see the same mask and the difference quotient is valid
    let mut r = rng(10);
    let x = Tensor::randn(&[4, 4], 1.0, &mut r);
    check_grads("dropout", &[x], |t, v| {
        let y = t.dropout(v[0], 0.7, true, 123).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_reductions_and_square() {
    let mut r = rng(11);
    let x = Tensor::randn(&[3, 3], 1.0, &mut r);
    check_grads("sum", &[x.clone()], |t, v| t.sum(v[0]));
    check_grads("mean", &[x.clone()], |t, v| t.mean(v[0]));
    check_grads("square", &[x], |t, v| {
        let y = t.square(v[0]);
        weighted_sum(t, y)
    });
}

#[test]
fn grad_binary_cross_entropy() {
    // probabilities kept inside the clamp interval
    let p = Tensor::vector(vec![0.12, 0.5, 0.83, 0.31]);
    let labels = Tensor::vector(vec![0.0, 1.0, 1.0, 0.0]);
    check_grads("bce", &[p], move |t, v| {
        let y = t.binary_cross_entropy(v[0], &labels).unwrap();
        t.sum(y)
    });
}

#[test]
fn grad_reshape() {
    let mut r = rng(12);
    let x = Tensor::randn(&[2, 6], 1.0, &mut r);
    check_grads("reshape", &[x], |t, v| {
        let y = t.reshape(v[0], &[3, 4]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_two_layer_network_end_to_end() {
    // sigmoid(relu(x W1 + b1) W2 + b2) against binary labels; biases start
    // positive so no relu preactivation sits near zero
    let mut r = rng(13);
    let x = Tensor::randn(&[4, 3], 1.0, &mut r);
    let w1 = Tensor::randn(&[3, 5], 0.6, &mut r);
    let b1 = Tensor::filled(&[5], 0.5);
    let w2 = Tensor::randn(&[5, 1], 0.6, &mut r);
    let b2 = Tensor::filled(&[1], 0.1);
    let labels = Tensor::matrix(4, 1, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    check_grads("mlp", &[x, w1, b1, w2, b2], move |t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let h = t.add_bias(h, v[2]).unwrap();
        let h = t.relu(h);
        let o = t.matmul(h, v[3]).unwrap();
        let o = t.add_bias(o, v[4]).unwrap();
        let p = t.sigmoid(o);
        let l = t.binary_cross_entropy(p, &labels).unwrap();
        t.sum(l)
    });
}

#[test]
fn grad_shared_weight_across_steps() {
    // the same weight leaf feeds two chained steps; accumulation across
    // reuses must match the total derivative
    let mut r = rng(14);
    let h0 = Tensor::randn(&[2, 3], 0.8, &mut r);
    let w = Tensor::randn(&[3, 3], 0.6, &mut r);
    check_grads("weight_reuse", &[h0, w], |t, v| {
        let s1 = t.matmul(v[0], v[1]).unwrap();
        let s1 = t.tanh(s1);
        let s2 = t.matmul(s1, v[1]).unwrap();
        let s2 = t.tanh(s2);
        weighted_sum(t, s2)
    });
}

#[test]
fn grad_gated_recurrence_like_cell() {
    // one step of a gated cell: c' = f*c + i*g, h = o*tanh(c'); exercises
    // mul chains, sigmoid gates and concat under one loss
    let mut r = rng(15);
    let x = Tensor::randn(&[2, 3], 0.8, &mut r);
    let h = Tensor::randn(&[2, 4], 0.8, &mut r);
    let c = Tensor::randn(&[2, 4], 0.8, &mut r);
    let w = Tensor::randn(&[7, 16], 0.4, &mut r);
    let b = Tensor::filled(&[16], 0.2);
    check_grads("gated_cell", &[x, h, c, w, b], |t, v| {
        let xh = t.concat_cols(&[v[0], v[1]]).unwrap();
        let z = t.matmul(xh, v[3]).unwrap();
        let z = t.add_bias(z, v[4]).unwrap();
        let zi = t.gather_cols_range(z, 0, 4).unwrap();
        let zf = t.gather_cols_range(z, 4, 8).unwrap();
        let zo = t.gather_cols_range(z, 8, 12).unwrap();
        let zg = t.gather_cols_range(z, 12, 16).unwrap();
        let i = t.sigmoid(zi);
        let f = t.sigmoid(zf);
        let o = t.sigmoid(zo);
        let g = t.tanh(zg);
        let fc = t.mul(f, v[2]).unwrap();
        let ig = t.mul(i, g).unwrap();
        let c2 = t.add(fc, ig).unwrap();
        let tc = t.tanh(c2);
        let hn = t.mul(o, tc).unwrap();
        weighted_sum(t, hn)
    });
}

// ---- whole-network checks ------------------------------------------------

use dagkt::autodiff::finite_difference_report;
use dagkt::graph::{build_graph, compute_attempts, compute_difficulty};
use dagkt::model::{DagktModel, Mode, ModelConfig, ResolvedSeq};
use dagkt::train::{batch_loss, generate_synthetic, SynthSpec};

fn fd_corpus(seed: u64) -> (DagktModel, Vec<ResolvedSeq>) {
    let spec = SynthSpec {
        n_students: 4,
        n_questions: 6,
        n_kcs: 3,
        kcs_per_question: 1,
        seq_len: 5,
        planted_pairs: 1,
        seed,
        ..SynthSpec::default()
    };
    let (seqs, _) = generate_synthetic(&spec).unwrap();
    let graph = build_graph(&seqs, 0.7, 0.01, 3).unwrap();
    let difficulty = compute_difficulty(&seqs);
    let attempts = compute_attempts(&seqs);
    let config = ModelConfig {
        embed_dim: 4,
        gcn_layers: 1,
        gcn_question_neighbors: 2,
        gcn_skill_neighbors: 2,
        lstm_layer_sizes: vec![5, 4],
        recap_count: 2,
        related_skill_count: 2,
        ..ModelConfig::default()
    };
    let model = DagktModel::init(config, &graph, seed).unwrap();
    let resolved = model
        .resolve(&seqs, Some(&difficulty), Some(&attempts))
        .unwrap();
    (model, resolved)
}

fn full_model_loss(model: &DagktModel, resolved: &[ResolvedSeq], seed: u64) -> f64 {
    let batch: Vec<&ResolvedSeq> = resolved.iter().collect();
    let mut tape = Tape::new();
    let out = model
        .forward_batch(
            &mut tape,
            &batch,
            Mode::Train {
                sample_seed: seed,
                dropout_seed: seed ^ 0x9e37,
            },
        )
        .unwrap();
    let loss = batch_loss(&mut tape, &out).unwrap();
    tape.scalar_value(loss)
}

/// Every trainable coordinate of the assembled network, against central
/// differences, across 20 seeded rebuilds of model and data.
#[test]
fn grad_full_network_matches_finite_difference() {
    let started = std::time::Instant::now();
    for seed in 0..20u64 {
        let (mut model, resolved) = fd_corpus(seed);
        let batch: Vec<&ResolvedSeq> = resolved.iter().collect();
        let mut tape = Tape::new();
        let out = model
            .forward_batch(
                &mut tape,
                &batch,
                Mode::Train {
                    sample_seed: seed,
                    dropout_seed: seed ^ 0x9e37,
                },
            )
            .unwrap();
        let loss = batch_loss(&mut tape, &out).unwrap();
        model.store.zero_grads();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut model.store);

        // scratch carries the analytic grads; each probe copies its
        // perturbed values back into the model and re-runs the loss
        let mut scratch = model.store.clone();
        let model_cell = std::cell::RefCell::new(model);
        let report = finite_difference_report(
            &mut scratch,
            |s| {
                let mut m = model_cell.borrow_mut();
                for p in s.iter() {
                    let id = m.store.id(&p.name).unwrap();
                    m.store.value_mut(id).data_mut().copy_from_slice(p.value.data());
                }
                full_model_loss(&m, &resolved, seed)
            },
            1e-5,
        );
        assert!(
            report.worst < 1e-4,
            "seed {seed}: worst {:.3e} at {}[{}]",
            report.worst,
            report.worst_param,
            report.worst_index
        );
        assert!(report.checked > 500, "only {} coords", report.checked);
    }
    assert!(
        started.elapsed() < std::time::Duration::from_secs(60),
        "took {:?}",
        started.elapsed()
    );
}
