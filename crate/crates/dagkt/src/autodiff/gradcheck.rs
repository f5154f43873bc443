//! Central-difference verification of analytic gradients.
//!
//! The caller computes a loss and fills parameter gradients by backward
//! accumulation, then hands over a closure that re-evaluates the same loss
//! from current parameter values. Every coordinate is perturbed both ways
//! and compared against the stored gradient.

use super::store::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error seen across all coordinates.
    pub worst: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error with an absolute floor so near-zero gradients do not
/// inflate the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Compares stored gradients against central differences of `loss`.
/// `loss` must be a pure function of the parameter values (fixed data,
/// fixed seeds) or the comparison is meaningless.
pub fn finite_difference_report<F>(store: &mut ParamStore, mut loss: F, h: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        worst: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let id = store.id(&name).expect("iterating existing params");
        let numel = store.value(id).numel();
        for j in 0..numel {
            let x = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = x + h;
            let f_plus = loss(store);
            store.value_mut(id).data_mut()[j] = x - h;
            let f_minus = loss(store);
            store.value_mut(id).data_mut()[j] = x;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let analytic = store.grad(id).data()[j];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.worst {
                report.worst = err;
                report.worst_param = name.clone();
                report.worst_index = j;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn quadratic_loss_checks_out() {
        let mut store = ParamStore::new();
        let id = store
            .register("w", Tensor::vector(vec![1.5, -2.0, 0.25]))
            .unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);

        let report = finite_difference_report(
            &mut store,
            |s| s.value(s.id("w").unwrap()).data().iter().map(|v| v * v).sum(),
            1e-5,
        );
        assert_eq!(report.checked, 3);
        assert!(report.worst < 1e-8, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::vector(vec![2.0])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);
        // sabotage: double the stored gradient
        let g = store.grad(id).data()[0];
        store.add_grad(id, &Tensor::vector(vec![g]));

        let report = finite_difference_report(
            &mut store,
            |s| {
                let v = s.value(s.id("w").unwrap()).data()[0];
                v * v
            },
            1e-5,
        );
        assert!(report.worst > 0.4, "{report:?}");
    }
}
