//! Adam with bias correction. One instance per parameter group so the
//! alternating feature/structure updates keep independent moment estimates.

use crate::mat::Mat;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Classic L2 coupling: decay is added to the gradient before the moments.
    pub weight_decay: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// One update over a fixed parameter group. The group's order and shapes
    /// must not change between calls.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[&Mat]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.shape(), g.shape());
            let pd = p.as_mut_slice();
            for i in 0..pd.len() {
                let grad = g.as_slice()[i] + self.weight_decay * pd[i];
                let mi = self.beta1 * m.as_slice()[i] + (1.0 - self.beta1) * grad;
                let vi = self.beta2 * v.as_slice()[i] + (1.0 - self.beta2) * grad * grad;
                m.as_mut_slice()[i] = mi;
                v.as_mut_slice()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut opt = Adam::new(0.1);
        let mut p = Mat::scalar(1.0);
        let g = Mat::scalar(0.5);
        opt.step(&mut [&mut p], &[&g]);
        assert_abs_diff_eq!(p.scalar_value(), 1.0 - 0.1, epsilon = 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut opt = Adam::new(0.05);
        let mut p = Mat::scalar(3.0);
        for _ in 0..2000 {
            let g = Mat::scalar(2.0 * (p.scalar_value() - 1.25));
            opt.step(&mut [&mut p], &[&g]);
        }
        assert_abs_diff_eq!(p.scalar_value(), 1.25, epsilon = 1e-4);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut opt = Adam::new(0.01);
            let mut p = Mat::from_vec(1, 2, vec![0.4, -0.7]);
            for i in 0..50 {
                let g = Mat::from_vec(1, 2, vec![(i as f64).sin(), p.get(0, 1)]);
                opt.step(&mut [&mut p], &[&g]);
            }
            p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
