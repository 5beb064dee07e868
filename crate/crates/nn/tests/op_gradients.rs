use cptag_nn::{grad_check, Checkpoint, Mode, ParamStore, Result, Storage, Tape, Var};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

/// Checks `op` applied to parameters `a` (and `b`) through a random
/// linear probe of its output.
fn check_op(name: &str, shapes: &[(usize, usize)], op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| store.add(format!("p{i}"), random(&mut rng, r, c)))
            .collect();
        let probe_seed = rng.gen::<u64>();
        let forward = |t: &mut Tape, s: &ParamStore| -> Result<Var> {
            let vars: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
            let out = op(t, &vars)?;
            let (r, c) = t.shape(out);
            let probe = random(&mut ChaCha8Rng::seed_from_u64(probe_seed), r, c);
            let p = t.constant(probe);
            let prod = t.mul(out, p)?;
            Ok(t.sum_all(prod))
        };
        let report = grad_check(forward, &mut store, TOL, 50, &mut rng).unwrap();
        assert!(report.passed(), "{name} seed {seed}: max rel err {}", report.max_relative_error());
    }
}

#[test]
fn elementwise_and_linear_ops() {
    check_op("matmul", &[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]));
    check_op("matmul_t", &[(3, 4), (2, 4)], |t, v| t.matmul_t(v[0], v[1]));
    check_op("add", &[(2, 3), (2, 3)], |t, v| t.add(v[0], v[1]));
    check_op("add_row", &[(4, 3), (1, 3)], |t, v| t.add_row(v[0], v[1]));
    check_op("sub", &[(2, 3), (2, 3)], |t, v| t.sub(v[0], v[1]));
    check_op("mul", &[(2, 3), (2, 3)], |t, v| t.mul(v[0], v[1]));
    check_op("scale", &[(2, 3)], |t, v| Ok(t.scale(v[0], -1.7)));
    check_op("add_scalar", &[(2, 3)], |t, v| Ok(t.add_scalar(v[0], 0.3)));
    check_op("tanh", &[(2, 3)], |t, v| Ok(t.tanh(v[0])));
    check_op("sigmoid", &[(2, 3)], |t, v| Ok(t.sigmoid(v[0])));
    check_op("relu", &[(2, 3)], |t, v| Ok(t.relu(v[0])));
    check_op("gelu", &[(2, 3)], |t, v| Ok(t.gelu(v[0])));
}

#[test]
fn structural_ops() {
    check_op("softmax_rows", &[(3, 4)], |t, v| Ok(t.softmax_rows(v[0])));
    check_op("softmax_rows_masked", &[(2, 4)], |t, v| {
        Ok(t.softmax_rows_masked(v[0], Some(&[true, false, true, true])))
    });
    check_op("concat_cols", &[(2, 3), (2, 2)], |t, v| t.concat_cols(&[v[0], v[1]]));
    check_op("concat_rows", &[(2, 3), (1, 3)], |t, v| t.concat_rows(&[v[0], v[1]]));
    check_op("slice_cols", &[(2, 5)], |t, v| t.slice_cols(v[0], 1, 4));
    check_op("slice_rows", &[(5, 2)], |t, v| t.slice_rows(v[0], 1, 3));
    check_op("gather_rows", &[(4, 3)], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1]));
    check_op("scatter_add_rows", &[(4, 3)], |t, v| t.scatter_add_rows(v[0], &[2, 0, 2, 1], 3));
    check_op("segment_sum", &[(4, 3)], |t, v| t.segment_sum(v[0], &[0, 3, 3, 1], &[1, 1, 0, 2], 3));
    check_op("add_scaled_row", &[(3, 2), (1, 2)], |t, v| t.add_scaled_row(v[0], v[1], &[2.0, 0.0, -1.0]));
    check_op("scale_rows", &[(3, 2)], |t, v| t.scale_rows(v[0], &[0.5, -2.0, 1.0]));
    check_op("mean_rows", &[(3, 2)], |t, v| Ok(t.mean_rows(v[0])));
    check_op("layer_norm", &[(3, 4), (1, 4), (1, 4)], |t, v| t.layer_norm(v[0], v[1], v[2]));
    check_op("dropout", &[(3, 4)], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        t.dropout(v[0], 0.3, Mode::Train, &mut rng)
    });
}

#[test]
fn bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let id = store.add("logits", random(&mut rng, 2, 3));
    let labels = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let forward = |t: &mut Tape, s: &ParamStore| -> Result<Var> {
        let x = t.param(s, id);
        let p = t.sigmoid(x);
        t.bce_loss(p, &labels)
    };
    let report = grad_check(forward, &mut store, TOL, 10, &mut rng).unwrap();
    assert!(report.passed(), "{}", report.max_relative_error());
}

#[test]
fn checkpoint_reload_reproduces_forward_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, 4, 3));
    let x = random(&mut rng, 2, 4);
    let run = |s: &ParamStore| {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let wv = t.param(s, w);
        let y = t.matmul(xv, wv).unwrap();
        let y = t.sigmoid(y);
        t.value(y).clone()
    };
    let before = run(&store);
    let ckpt = Checkpoint::from_store(&store, [0; 32], String::new(), Storage::F64);
    let mut restored = store.clone();
    restored.get_mut(w).value.fill(0.0);
    Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap().restore_into(&mut restored).unwrap();
    assert_eq!(run(&restored), before);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
        let mut t = Tape::new();
        let x = t.row(&values);
        let y = t.softmax_rows(x);
        let v = t.value(y);
        prop_assert!(v.iter().all(|&p| p >= 0.0));
        prop_assert!((v.sum() - 1.0).abs() < 1e-12);
    }
}
