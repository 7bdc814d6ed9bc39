//! Bias-corrected Adam.

use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: store.zero_grads(), v: store.zero_grads() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Tensors with `trainable[i] == false` keep both
    /// their values and their moment estimates.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], trainable: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            if !trainable[i] {
                continue;
            }
            let data = &mut store.tensor_mut(id).data;
            for j in 0..data.len() {
                let g = grads[i][j];
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i][j] / c1;
                let vh = self.v[i][j] / c2;
                data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", 1, 3, vec![0.5, -1.0, 2.0]);
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(&s, 3e-4);
        for _ in 0..5 {
            adam.step(&mut s, &[vec![0.0; 3]], &[true]);
        }
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store();
        let mut adam = Adam::new(&s, 3e-4);
        adam.step(&mut s, &[vec![1.0, 1.0, -1.0]], &[true]);
        // Δ = −lr·g/(|g| + ε)
        let expect = 3e-4 / (1.0 + 1e-8);
        let d = &s.tensor(s.find("w").unwrap()).data;
        assert!((d[0] - (0.5 - expect)).abs() < 1e-15);
        assert!((d[2] - (2.0 + expect)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut s = store();
        let mut adam = Adam::new(&s, 1e-3);
        let id = s.find("w").unwrap();
        let g = [vec![0.0, 4.0, 0.0]];
        for _ in 0..500 {
            adam.step(&mut s, &g, &[true]);
        }
        let before = s.tensor(id).data[1];
        adam.step(&mut s, &g, &[true]);
        let step = before - s.tensor(id).data[1];
        assert!((step - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let mut s = store();
        s.add("frozen", 1, 1, vec![1.0]);
        let mut adam = Adam::new(&s, 0.1);
        adam.step(&mut s, &[vec![1.0; 3], vec![1.0]], &[true, false]);
        assert_eq!(s.tensor(s.find("frozen").unwrap()).data, vec![1.0]);
    }
}
