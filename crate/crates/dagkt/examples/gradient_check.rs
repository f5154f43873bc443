//! Verifies reverse-mode gradients against central finite differences for a
//! small two-layer network with a sigmoid cross-entropy loss.
//!
//! Run with: cargo run --example gradient_check

use dagkt::autodiff::{finite_difference_report, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    store.register("w1", Tensor::randn(&[4, 6], 0.5, &mut rng))?;
    store.register("b1", Tensor::zeros(&[1, 6]))?;
    store.register("w2", Tensor::randn(&[6, 1], 0.5, &mut rng))?;
    store.register("b2", Tensor::zeros(&[1, 1]))?;

    let inputs = Tensor::randn(&[8, 4], 1.0, &mut rng);
    let labels = Tensor::matrix(8, 1, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0])?;

    // forward pass as a pure function of the store, reused for every probe
    let run = |store: &ParamStore, tape: &mut Tape| -> Var {
        let w1 = tape.param(store, store.id("w1").unwrap());
        let b1 = tape.param(store, store.id("b1").unwrap());
        let w2 = tape.param(store, store.id("w2").unwrap());
        let b2 = tape.param(store, store.id("b2").unwrap());
        let x = tape.constant(inputs.clone());
        let h = tape.matmul(x, w1).unwrap();
        let h = tape.add_bias(h, b1).unwrap();
        let h = tape.tanh(h);
        let z = tape.matmul(h, w2).unwrap();
        let z = tape.add_bias(z, b2).unwrap();
        let p = tape.sigmoid(z);
        let per_event = tape.binary_cross_entropy(p, &labels).unwrap();
        tape.sum(per_event)
    };

    // analytic pass fills store.grad for every parameter
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = run(&store, &mut tape);
    println!("loss = {:.6}", tape.scalar_value(loss));
    tape.backward(loss)?;
    tape.accumulate_param_grads(&mut store);

    let report = finite_difference_report(
        &mut store,
        |probed| {
            let mut tape = Tape::new();
            let loss = run(probed, &mut tape);
            tape.scalar_value(loss)
        },
        1e-5,
    );
    println!(
        "checked {} coordinates, worst relative error {:.3e} at {}[{}]",
        report.checked, report.worst, report.worst_param, report.worst_index
    );
    assert!(report.worst < 1e-4);
    println!("gradients agree with finite differences");
    Ok(())
}
