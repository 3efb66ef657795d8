//! AdamW with decoupled weight decay.

use ndarray::ArrayD;

use super::params::ParamSet;

pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let m = params
            .iter()
            .map(|p| ArrayD::zeros(p.value.raw_dim()))
            .collect();
        let v = params
            .iter()
            .map(|p| ArrayD::zeros(p.value.raw_dim()))
            .collect();
        AdamW {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update. `grads[i]` pairs with the i-th parameter of `params`;
    /// parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<ArrayD<f64>>]) {
        assert_eq!(grads.len(), params.len(), "grad/param count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, id) in params.ids().enumerate().map(|(i, id)| (i, id)) {
            let Some(g) = &grads[i] else { continue };
            let theta = params.value_mut(id);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let ts = theta.as_slice_mut().unwrap();
            let ms = m.as_slice_mut().unwrap();
            let vs = v.as_slice_mut().unwrap();
            let gs = g.as_slice().unwrap();
            for j in 0..ts.len() {
                ts[j] *= 1.0 - self.lr * self.weight_decay;
                ms[j] = self.beta1 * ms[j] + (1.0 - self.beta1) * gs[j];
                vs[j] = self.beta2 * vs[j] + (1.0 - self.beta2) * gs[j] * gs[j];
                let m_hat = ms[j] / bc1;
                let v_hat = vs[j] / bc2;
                ts[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn state(&self) -> (u64, &[ArrayD<f64>], &[ArrayD<f64>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore_state(&mut self, t: u64, m: Vec<ArrayD<f64>>, v: Vec<ArrayD<f64>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
