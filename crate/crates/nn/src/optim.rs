use crate::param::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of every parameter from its
    /// accumulated gradient. Gradients are zeroed afterwards.
    pub fn step(&self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
            p.grad.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", array![[value]]);
        s
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let adam = Adam::new(1e-3);
        for g in [2.5, -0.01] {
            let mut s = single(1.0);
            s.iter_mut().next().unwrap().grad[[0, 0]] = g;
            adam.step(&mut s);
            let p = s.iter().next().unwrap().1;
            let delta = p.value[[0, 0]] - 1.0;
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-8, "{delta}");
            assert_eq!(p.step, 1);
            assert_eq!(p.grad[[0, 0]], 0.0);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let adam = Adam::new(0.1);
        let mut s = single(0.75);
        for _ in 0..5 {
            adam.step(&mut s);
        }
        assert_eq!(s.iter().next().unwrap().1.value[[0, 0]], 0.75);
    }

    #[test]
    fn constant_gradient_second_step_is_lr() {
        // With a constant gradient, m_hat = g and v_hat = g^2 at every
        // step, so each delta is lr * |g| / (|g| + eps).
        let lr = 1e-3;
        let g = 0.3;
        let adam = Adam::new(lr);
        let mut s = single(0.0);
        let mut prev = 0.0;
        let mut deltas = vec![];
        for _ in 0..2 {
            s.iter_mut().next().unwrap().grad[[0, 0]] = g;
            adam.step(&mut s);
            let now = s.iter().next().unwrap().1.value[[0, 0]];
            deltas.push(now - prev);
            prev = now;
        }
        let expected = lr * g / (g + 1e-8);
        assert!((deltas[1].abs() - lr).abs() < 1e-6);
        assert!((deltas[1].abs() - expected).abs() < 1e-15);
    }
}
