//! Adam with bias-corrected moment estimates.

use super::mlp::Float;

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update over a list of parameter tensors and matching gradients.
    /// The tensor list must keep the same shapes across calls.
    pub fn step(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = F::from_f64(self.beta1).unwrap();
        let b2 = F::from_f64(self.beta2).unwrap();
        let one = F::one();
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.t)).unwrap();
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.t)).unwrap();
        let lr = F::from_f64(self.lr).unwrap();
        let eps = F::from_f64(self.eps).unwrap();
        let wd = F::from_f64(self.weight_decay).unwrap();
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let grad = g[i] + wd * p[i];
                m[i] = b1 * m[i] + (one - b1) * grad;
                v[i] = b2 * v[i] + (one - b2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written out from the textbook recurrence.
    fn reference(theta0: f64, grads: impl Fn(f64) -> f64, steps: usize) -> Vec<f64> {
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = grads(theta);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            theta -= lr * mh / (vh.sqrt() + eps);
            out.push(theta);
        }
        out
    }

    #[test]
    fn matches_scalar_reference() {
        let grad = |x: f64| 2.0 * (x - 3.0);
        let expected = reference(0.5, grad, 50);
        let mut opt: Adam<f64> = Adam::new(0.01, 0.9, 0.999, 1e-8, 0.0);
        let mut theta = [0.5f64];
        for want in expected {
            let g = [grad(theta[0])];
            opt.step(&mut [&mut theta], &[&g]);
            assert!((theta[0] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt: Adam<f32> = Adam::new(0.1, 0.9, 0.999, 1e-8, 0.0);
        let mut p = [1.0f32, -1.0];
        opt.step(&mut [&mut p], &[&[4.0, -0.5]]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}
