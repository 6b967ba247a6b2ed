use crate::real::Real;

/// Adaptive-moment optimizer with weight decay applied directly to the
/// parameters rather than through the gradient.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamW {
    pub fn new(n_params: usize, weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; n_params], v: vec![0.0; n_params], steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for k in 0..params.len() {
            let g = grad[k].to_f64_lossy();
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            let mut p = params[k].to_f64_lossy();
            p -= lr * self.weight_decay * p;
            p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            params[k] = T::lit(p);
        }
    }
}
