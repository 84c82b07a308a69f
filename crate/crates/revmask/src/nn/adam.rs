//! Adam optimizer with per-tensor first/second moment state.

use std::collections::BTreeMap;

/// Minimizes by default; callers ascending an objective negate the
/// gradients they feed in.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Advance the shared step counter; call once per optimizer step,
    /// before the per-tensor updates of that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, name: &str, param: &mut [f32], grad: &[f32]) {
        assert_eq!(param.len(), grad.len(), "adam tensor length for {name}");
        assert!(self.t > 0, "begin_step before update");
        let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; param.len()]);
        let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; param.len()]);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Moment tensors for checkpointing, in deterministic name order.
    pub fn export_state(&self) -> (u64, Vec<(String, Vec<f32>, Vec<f32>)>) {
        let mut out = Vec::new();
        for (name, m) in &self.m {
            let v = self.v.get(name).expect("paired moment");
            out.push((name.clone(), m.clone(), v.clone()));
        }
        (self.t, out)
    }

    pub fn restore_state(&mut self, t: u64, state: Vec<(String, Vec<f32>, Vec<f32>)>) {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (name, m, v) in state {
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // with bias correction, |update| == lr on step 1 (eps aside)
        let mut adam = Adam::new(0.1, 0.9);
        let mut p = vec![1.0f32, -1.0];
        adam.begin_step();
        adam.update("p", &mut p, &[0.5, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-5, "{p:?}");
        assert!((p[1] + 0.9).abs() < 1e-5, "{p:?}");
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(0.05, 0.9);
        let mut p = vec![3.0f32];
        for _ in 0..500 {
            let g = vec![2.0 * p[0]];
            adam.begin_step();
            adam.update("p", &mut p, &g);
        }
        assert!(p[0].abs() < 1e-2, "did not converge: {}", p[0]);
    }

    #[test]
    fn state_round_trip_reproduces_trajectory() {
        let mut a = Adam::new(0.01, 0.9);
        let mut pa = vec![1.0f32, 2.0];
        for _ in 0..5 {
            a.begin_step();
            let g: Vec<f32> = pa.iter().map(|x| x * 0.3).collect();
            a.update("p", &mut pa, &g);
        }
        let (t, st) = a.export_state();
        let mut b = Adam::new(0.01, 0.9);
        b.restore_state(t, st);
        let mut pb = pa.clone();
        for _ in 0..5 {
            a.begin_step();
            b.begin_step();
            let ga: Vec<f32> = pa.iter().map(|x| x * 0.3).collect();
            let gb: Vec<f32> = pb.iter().map(|x| x * 0.3).collect();
            a.update("p", &mut pa, &ga);
            b.update("p", &mut pb, &gb);
        }
        assert_eq!(pa, pb);
    }
}
