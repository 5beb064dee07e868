//! Mini-batch Adam training with per-epoch validation, best-snapshot
//! retention and early stopping, shared by every trainable model.

use cptag_nn::rng::substream;
use cptag_nn::{Adam, Gradients, ParamStore};
use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_macro_pr_auc: Option<f64>,
}

/// Everything a batch loss closure needs besides the parameters.
pub struct BatchContext<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub items: &'a [usize],
    /// Dropout stream for this batch.
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
}

/// Runs the loop over `num_items` training items. `batch_loss` returns
/// the mean loss of a batch and its gradients; `validate` returns the
/// validation macro PR-AUC, or `None` when undefined, in which case the
/// negated training loss selects the snapshot.
pub fn train_loop<L, V>(
    name: &str,
    store: &mut ParamStore,
    num_items: usize,
    hyper: &TrainHyper,
    mut batch_loss: L,
    mut validate: V,
) -> Result<TrainOutcome>
where
    L: FnMut(&ParamStore, BatchContext<'_>) -> Result<(f64, Gradients)>,
    V: FnMut(&ParamStore) -> Result<Option<f64>>,
{
    if num_items == 0 {
        return Err(Error::EmptyInput(format!("{name}: empty training set")));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidRecord("batch size must be positive".into()));
    }
    let adam = Adam::new(hyper.lr);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Array2<f64>>)> = None;
    let mut stale = 0;
    for epoch in 0..hyper.max_epochs {
        let mut order: Vec<usize> = (0..num_items).collect();
        order.shuffle(&mut substream(hyper.seed, &format!("{name}/shuffle"), &[epoch as u64]));
        let mut total = 0.0;
        for (b, items) in order.chunks(hyper.batch_size).enumerate() {
            let ctx = BatchContext {
                epoch,
                batch: b,
                items,
                rng: substream(hyper.seed, &format!("{name}/dropout"), &[epoch as u64, b as u64]),
            };
            let (loss, grads) = batch_loss(store, ctx)?;
            total += loss * items.len() as f64;
            store.accumulate(&grads);
            adam.step(store);
        }
        let train_loss = total / num_items as f64;
        let val = validate(store)?;
        info!("{name} epoch {epoch}: train loss {train_loss:.6}, validation macro PR-AUC {val:?}");
        history.push(HistoryRow {
            epoch,
            train_loss,
            validation_macro_pr_auc: val,
        });
        let score = val.unwrap_or(-train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, store.iter().map(|(_, p)| p.value.clone()).collect()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, values)) => {
            for (p, v) in store.iter_mut().zip(values) {
                p.value = v;
            }
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome { history, best_epoch })
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,train_loss,validation_macro_pr_auc\n");
    for r in history {
        let val = r.validation_macro_pr_auc.map_or_else(String::new, |v| format!("{v:.6}"));
        out.push_str(&format!("{},{:.6},{}\n", r.epoch, r.train_loss, val));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cptag_nn::Tape;
    use ndarray::array;

    fn quadratic_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", array![[0.0]]);
        s
    }

    fn squared_error(store: &ParamStore, target: f64) -> Result<(f64, Gradients)> {
        let id = store.id("w")?;
        let mut t = Tape::new();
        let w = t.param(store, id);
        let d = t.add_scalar(w, -target);
        let sq = t.mul(d, d)?;
        let loss = t.sum_all(sq);
        let value = t.scalar(loss);
        Ok((value, t.backward(loss)?))
    }

    fn hyper(max_epochs: usize, patience: usize) -> TrainHyper {
        TrainHyper {
            lr: 0.1,
            batch_size: 2,
            max_epochs,
            patience,
            seed: 7,
        }
    }

    #[test]
    fn restores_best_epoch_after_patience() {
        let mut store = quadratic_store();
        // validation improves for two epochs and then only degrades
        let scores = [0.5, 0.9, 0.8, 0.7, 0.6, 0.5];
        let mut epoch = 0;
        let mut snapshots = vec![];
        let out = train_loop(
            "t",
            &mut store,
            4,
            &hyper(6, 2),
            |s, _| squared_error(s, 3.0),
            |s| {
                snapshots.push(s.value(s.id("w").unwrap())[[0, 0]]);
                epoch += 1;
                Ok(Some(scores[epoch - 1]))
            },
        )
        .unwrap();
        assert_eq!(out.history.len(), 4);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(store.value(store.id("w").unwrap())[[0, 0]], snapshots[1]);
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let run = || {
            let mut store = quadratic_store();
            let mut seen = vec![];
            let out = train_loop(
                "t",
                &mut store,
                5,
                &hyper(3, 5),
                |s, ctx| {
                    seen.extend_from_slice(ctx.items);
                    squared_error(s, 1.0)
                },
                |_| Ok(None),
            )
            .unwrap();
            (out.history, seen)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut store = quadratic_store();
        let r = train_loop("t", &mut store, 0, &hyper(1, 1), |s, _| squared_error(s, 0.0), |_| Ok(None));
        assert!(matches!(r, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let csv = history_csv(&[HistoryRow {
            epoch: 0,
            train_loss: 0.5,
            validation_macro_pr_auc: None,
        }]);
        assert_eq!(csv, "epoch,train_loss,validation_macro_pr_auc\n0,0.500000,\n");
    }
}
