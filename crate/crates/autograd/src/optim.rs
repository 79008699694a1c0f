use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Adam optimizer state for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let p = params.get_mut(id).data_mut();
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
