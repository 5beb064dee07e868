//! Finite-difference verification of tape gradients.

use rand::Rng;

use crate::error::Result;
use crate::param::{Gradients, ParamStore};
use crate::tape::{Tape, Var};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.relative_error < self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(forward: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    Ok(tape.scalar(loss))
}

/// Runs `forward` once with differentiation and compares the resulting
/// gradients against central differences on up to `samples_per_param`
/// randomly chosen coordinates of every parameter. `forward` must be
/// deterministic.
pub fn grad_check<F, R>(
    forward: F,
    store: &mut ParamStore,
    tolerance: f64,
    samples_per_param: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    compare_gradients(forward, store, &grads, tolerance, samples_per_param, rng)
}

/// Compares supplied gradients against central differences.
pub fn compare_gradients<F, R>(
    forward: F,
    store: &mut ParamStore,
    grads: &Gradients,
    tolerance: f64,
    samples_per_param: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    R: Rng + ?Sized,
{
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut entries = Vec::new();
    for id in ids {
        let analytic_all = grads.get_or_zero(store, id);
        let (rows, cols) = store.value(id).dim();
        let total = rows * cols;
        let coords: Vec<usize> = if total <= samples_per_param {
            (0..total).collect()
        } else {
            rand::seq::index::sample(rng, total, samples_per_param).into_vec()
        };
        for flat in coords {
            let idx = (flat / cols, flat % cols);
            let original = store.value(id)[idx];
            store.get_mut(id).value[idx] = original + FD_STEP;
            let plus = evaluate(&forward, store)?;
            store.get_mut(id).value[idx] = original - FD_STEP;
            let minus = evaluate(&forward, store)?;
            store.get_mut(id).value[idx] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = analytic_all[idx];
            entries.push(GradCheckEntry {
                param: store.get(id).name.clone(),
                index: idx,
                analytic,
                numeric,
                relative_error: relative_error(analytic, numeric),
            });
        }
    }
    Ok(GradCheckReport { entries, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_setup() -> (ParamStore, Linear) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 3, 2, &mut rng);
        for p in store.iter_mut() {
            p.value.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        (store, lin)
    }

    fn linear_loss(lin: Linear) -> impl Fn(&mut Tape, &ParamStore) -> Result<Var> {
        move |tape, store| {
            let x = tape.constant(ndarray::array![[0.5, -1.5, 2.0], [1.0, 0.25, -0.75]]);
            let y = lin.forward(tape, store, x)?;
            Ok(tape.sum_all(y))
        }
    }

    #[test]
    fn linear_model_is_essentially_exact() {
        let (mut store, lin) = linear_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = grad_check(linear_loss(lin), &mut store, 1e-9, 16, &mut rng).unwrap();
        assert!(report.passed(), "max err {}", report.max_relative_error());
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (mut store, lin) = linear_setup();
        let mut tape = Tape::new();
        let loss = linear_loss(lin)(&mut tape, &store).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        grads.0.get_mut(&lin.weight).unwrap()[[1, 0]] += 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report =
            compare_gradients(linear_loss(lin), &mut store, &grads, 1e-4, 16, &mut rng).unwrap();
        assert!(!report.passed());
    }
}
