use rayon::prelude::*;

use crate::error::Result;
use crate::param::Gradients;

/// Evaluates `f` on every item (in parallel) and returns the mean loss
/// and mean gradients. Results are combined in item order, so the sum
/// is bit-identical for any thread count.
pub fn mean_gradients<T, F>(items: &[T], f: F) -> Result<(f64, Gradients)>
where
    T: Sync,
    F: Fn(usize, &T) -> Result<(f64, Gradients)> + Sync,
{
    let parts: Vec<Result<(f64, Gradients)>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect();
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    let n = items.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}
