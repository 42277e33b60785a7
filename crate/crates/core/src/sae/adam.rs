// SPDX-License-Identifier: MIT OR Apache-2.0

/// Adam with bias-corrected moments. One instance owns the moment buffers
/// for any number of parameter tensors; call [`Adam::begin_step`] once per
/// optimizer step and then [`Adam::update`] for every tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update tensor `slot` in place from its gradient.
    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        debug_assert!(self.t > 0, "begin_step must precede update");
        let m = &mut self.first[slot];
        let v = &mut self.second[slot];
        debug_assert_eq!(m.len(), params.len());
        debug_assert_eq!(grads.len(), params.len());
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias correction makes the first step exactly lr * sign(g) (up to eps)
        let mut adam = Adam::new(0.1, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.begin_step();
        adam.update(0, &mut p, &[4.0, -0.01, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-4);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(0.05, &[2]);
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            adam.begin_step();
            adam.update(0, &mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
        assert!((p[1] + 0.5).abs() < 1e-3);
    }
}
