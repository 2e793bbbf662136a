//! Adam with the inverse-square-root warmup schedule.

use super::params::ParamSet;
use ndarray::Array2;
use std::collections::BTreeMap;

/// Optimizer state: per-parameter moment estimates plus the schedule
/// constants. The learning rate is
/// lr_mult * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5),
/// which rises linearly for `warmup` steps and then decays; its peak is
/// exactly at step = warmup.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: u64,
    pub d_model: usize,
    pub lr_mult: f64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl AdamState {
    pub fn new(d_model: usize, warmup: u64, lr_mult: f64) -> AdamState {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup: warmup.max(1),
            d_model,
            lr_mult,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup as f64;
        self.lr_mult * (self.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }

    /// One update over every parameter. Parameters without a gradient
    /// entry are treated as zero-gradient (their moments still decay, but
    /// with zero-initialized moments that leaves them unchanged).
    pub fn apply(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Array2<f64>>) {
        self.step += 1;
        let lr = self.lr(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let zero = Array2::zeros(p.dim());
            let g = grads.get(name).unwrap_or(&zero);
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(p.dim()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(p.dim()));
            *m *= self.beta1;
            *m += &(g * (1.0 - self.beta1));
            *v *= self.beta2;
            *v += &(g.mapv(|x| x * x) * (1.0 - self.beta2));
            for ((pv, &mv), &vv) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = ParamSet::new();
        params.insert("w", arr2(&[[1.5, -0.5]]));
        let before = params.get("w").unwrap().clone();
        let mut adam = AdamState::new(64, 100, 1.0);
        adam.apply(&mut params, &BTreeMap::new());
        adam.apply(&mut params, &BTreeMap::new());
        assert_eq!(params.get("w").unwrap(), &before);
    }

    #[test]
    fn lr_peaks_exactly_at_warmup() {
        let adam = AdamState::new(512, 4000, 1.0);
        let peak = adam.lr(4000);
        assert!(peak > adam.lr(3999));
        assert!(peak > adam.lr(4001));
        for s in [1u64, 10, 500, 3999, 4000, 4001, 20000] {
            assert!(adam.lr(s) <= peak + 1e-18, "lr({s}) above peak");
        }
        let expect = (512f64).powf(-0.5) * (4000f64).powf(-0.5);
        assert!((peak - expect).abs() < 1e-15);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let mut params = ParamSet::new();
        params.insert("w", arr2(&[[2.0]]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), arr2(&[[0.25]]));
        let mut adam = AdamState::new(4, 10, 1.0);
        adam.apply(&mut params, &grads);
        // After one step the bias-corrected moments are exactly g and g^2.
        let lr = adam.lr(1);
        let expect = 2.0 - lr * 0.25 / (0.25f64 + 1e-9);
        assert!((params.get("w").unwrap()[[0, 0]] - expect).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut params = ParamSet::new();
            params.insert("w", arr2(&[[1.0, 2.0], [3.0, 4.0]]));
            let mut adam = AdamState::new(8, 5, 0.7);
            for step in 0..20 {
                let mut grads = BTreeMap::new();
                grads.insert(
                    "w".to_string(),
                    arr2(&[[0.1 * step as f64, -0.2], [0.3, 0.01 * step as f64]]),
                );
                adam.apply(&mut params, &grads);
            }
            params.get("w").unwrap().clone()
        };
        assert_eq!(run(), run());
    }
}
