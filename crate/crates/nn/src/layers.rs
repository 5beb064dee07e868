//! Standard layers built from tape operations.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Mode, Tape, Var};

/// Fully-connected layer computing `x·W + b` for row-major inputs.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.xavier(format!("{name}.weight"), input, output, rng),
            bias: store.zeros(format!("{name}.bias"), 1, output),
        }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            weight: store.id(&format!("{name}.weight"))?,
            bias: store.id(&format!("{name}.bias"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), ndarray::Array2::ones((1, dim))),
            bias: store.zeros(format!("{name}.bias"), 1, dim),
        }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            gain: store.id(&format!("{name}.gain"))?,
            bias: store.id(&format!("{name}.bias"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h~ = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
///
/// Each row of `x`/`h` is an independent cell application.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_z: store.xavier(format!("{name}.w_z"), input, hidden, rng),
            w_r: store.xavier(format!("{name}.w_r"), input, hidden, rng),
            w_h: store.xavier(format!("{name}.w_h"), input, hidden, rng),
            u_z: store.xavier(format!("{name}.u_z"), hidden, hidden, rng),
            u_r: store.xavier(format!("{name}.u_r"), hidden, hidden, rng),
            u_h: store.xavier(format!("{name}.u_h"), hidden, hidden, rng),
            b_z: store.zeros(format!("{name}.b_z"), 1, hidden),
            b_r: store.zeros(format!("{name}.b_r"), 1, hidden),
            b_h: store.zeros(format!("{name}.b_h"), 1, hidden),
        }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        let id = |s: &str| store.id(&format!("{name}.{s}"));
        Ok(Self {
            w_z: id("w_z")?,
            w_r: id("w_r")?,
            w_h: id("w_h")?,
            u_z: id("u_z")?,
            u_r: id("u_r")?,
            u_h: id("u_h")?,
            b_z: id("b_z")?,
            b_r: id("b_r")?,
            b_h: id("b_h")?,
        })
    }

    fn gate(
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: Var,
        w: ParamId,
        u: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let (w, u, b) = (tape.param(store, w), tape.param(store, u), tape.param(store, b));
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let sum = tape.add(xw, hu)?;
        tape.add_row(sum, b)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let z_pre = Self::gate(tape, store, x, h, self.w_z, self.u_z, self.b_z)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = Self::gate(tape, store, x, h, self.w_r, self.u_r, self.b_r)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h)?;
        let cand_pre = Self::gate(tape, store, x, rh, self.w_h, self.u_h, self.b_h)?;
        let cand = tape.tanh(cand_pre);
        // h + z ⊙ (h~ - h)
        let delta = tape.sub(cand, h)?;
        let gated = tape.mul(z, delta)?;
        tape.add(h, gated)
    }
}

/// Dropout, fully-connected and sigmoid layers mapping a representation
/// to independent per-tag probabilities.
#[derive(Debug, Clone, Copy)]
pub struct TagPredictor {
    pub dropout_rate: f64,
    pub linear: Linear,
}

impl TagPredictor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        tags: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NnError::InvalidDropout(dropout_rate));
        }
        Ok(Self {
            dropout_rate,
            linear: Linear::new(store, name, input, tags, rng),
        })
    }

    pub fn from_store(store: &ParamStore, name: &str, dropout_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NnError::InvalidDropout(dropout_rate));
        }
        Ok(Self {
            dropout_rate,
            linear: Linear::from_store(store, name)?,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let dropped = tape.dropout(x, self.dropout_rate, mode, rng)?;
        let logits = self.linear.forward(tape, store, dropped)?;
        Ok(tape.sigmoid(logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_gru(store: &mut ParamStore, dim: usize) -> GruCell {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(store, "gru", dim, dim, &mut rng);
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        cell
    }

    #[test]
    fn zero_gru_halves_state() {
        let mut store = ParamStore::new();
        let cell = zero_gru(&mut store, 3);
        let mut t = Tape::new();
        let x = t.row(&[0.3, -1.0, 2.0]);
        let h = t.row(&[1.0, -4.0, 0.25]);
        let out = cell.forward(&mut t, &store, x, h).unwrap();
        assert_eq!(t.value(out), &array![[0.5, -2.0, 0.125]]);

        let h0 = t.zeros(1, 3);
        let out = cell.forward(&mut t, &store, x, h0).unwrap();
        assert_eq!(t.value(out), &Array2::<f64>::zeros((1, 3)));
    }

    /// Scalar step-by-step GRU evaluation for a 2-dim state.
    fn gru_scalar(store: &ParamStore, cell: &GruCell, x: [f64; 2], h: [f64; 2]) -> [f64; 2] {
        let m = |id: ParamId| store.value(id).clone();
        let (wz, wr, wh) = (m(cell.w_z), m(cell.w_r), m(cell.w_h));
        let (uz, ur, uh) = (m(cell.u_z), m(cell.u_r), m(cell.u_h));
        let (bz, br, bh) = (m(cell.b_z), m(cell.b_r), m(cell.b_h));
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut out = [0.0; 2];
        let mut r = [0.0; 2];
        for j in 0..2 {
            let mut acc = br[[0, j]];
            for i in 0..2 {
                acc += x[i] * wr[[i, j]] + h[i] * ur[[i, j]];
            }
            r[j] = sig(acc);
        }
        for j in 0..2 {
            let mut zacc = bz[[0, j]];
            let mut hacc = bh[[0, j]];
            for i in 0..2 {
                zacc += x[i] * wz[[i, j]] + h[i] * uz[[i, j]];
                hacc += x[i] * wh[[i, j]] + r[i] * h[i] * uh[[i, j]];
            }
            let z = sig(zacc);
            let cand = hacc.tanh();
            out[j] = (1.0 - z) * h[j] + z * cand;
        }
        out
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 2, &mut rng);
        for p in store.iter_mut() {
            p.value.mapv_inplace(|_| rng.gen_range(-0.8..0.8));
        }
        let x = [0.7, -0.2];
        let h = [-0.4, 0.9];
        let mut t = Tape::new();
        let xv = t.row(&x);
        let hv = t.row(&h);
        let out = cell.forward(&mut t, &store, xv, hv).unwrap();
        let expected = gru_scalar(&store, &cell, x, h);
        for j in 0..2 {
            assert!((t.value(out)[[0, j]] - expected[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn gru_rejects_mismatched_input() {
        let mut store = ParamStore::new();
        let cell = zero_gru(&mut store, 3);
        let mut t = Tape::new();
        let x = t.row(&[0.3, -1.0]);
        let h = t.row(&[1.0, -4.0, 0.25]);
        assert!(cell.forward(&mut t, &store, x, h).is_err());
    }

    #[test]
    fn tag_predictor_zero_weights_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let tp = TagPredictor::new(&mut store, "head", 4, 3, 0.2, &mut rng).unwrap();
        store.get_mut(tp.linear.weight).value.fill(0.0);
        let mut t = Tape::new();
        let x = t.row(&[1.0, 2.0, 3.0, 4.0]);
        let p = tp.forward(&mut t, &store, x, Mode::Eval, &mut rng).unwrap();
        assert!(t.value(p).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn tag_predictor_dropout_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let tp = TagPredictor::new(&mut store, "head", 16, 3, 0.5, &mut rng).unwrap();
        let input: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |mode: Mode, seed: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut t = Tape::new();
            let x = t.row(&input);
            let p = tp.forward(&mut t, &store, x, mode, &mut r).unwrap();
            t.value(p).clone()
        };
        assert_eq!(run(Mode::Eval, 1), run(Mode::Eval, 2));
        assert_ne!(run(Mode::Train, 1), run(Mode::Train, 2));
        assert!(TagPredictor::new(&mut store, "bad", 4, 3, 1.0, &mut rng).is_err());
    }
}
