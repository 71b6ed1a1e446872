//! AdamW with decoupled weight decay.

use super::TrainError;
use crate::models::Param;
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F: Float> {
    pub cfg: AdamWConfig,
    /// Completed updates.
    pub step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(cfg: AdamWConfig, params: &[Param<F>]) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.value.numel()]).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros() }
    }

    /// One update at learning rate `lr`: `p ← p − lr·wd·p` for decayed tensors, then
    /// `p ← p − lr·m̂ / (√v̂ + eps)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [Param<F>], grads: &[Vec<F>], lr: f64) -> Result<(), TrainError> {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        for (p, g) in params.iter().zip(grads) {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(TrainError::NonFinite(format!(
                    "gradient of {} at index {i} is {:?} (step {})",
                    p.name,
                    g[i],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let decay = if p.decay { lr * c.weight_decay } else { 0.0 };
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.to_f64_lossy();
                let m1 = c.beta1 * mi.to_f64_lossy() + (1.0 - c.beta1) * gi;
                let v1 = c.beta2 * vi.to_f64_lossy() + (1.0 - c.beta2) * gi * gi;
                *mi = F::from_f64_lossy(m1);
                *vi = F::from_f64_lossy(v1);
                let x = w.to_f64_lossy();
                let delta = decay * x + lr * (m1 / bc1) / ((v1 / bc2).sqrt() + c.eps);
                // Skipping exact-zero updates keeps signed zeros intact.
                if delta != 0.0 {
                    *w = F::from_f64_lossy(x - delta);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(v: Vec<f64>, decay: bool) -> Param<f64> {
        Param { name: "p".into(), value: Tensor::from_vec([v.len()], v).unwrap(), decay }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = vec![param(vec![0.5, -0.5], false)];
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &ps);
        opt.step(&mut ps, &[vec![1.0, 1.0]], cfg.lr).unwrap();
        for (x, x0) in ps[0].value.data().iter().zip([0.5, -0.5]) {
            assert!((x0 - x - 0.001).abs() < 1e-10);
        }
    }

    #[test]
    fn pure_decay_is_decoupled() {
        let mut ps = vec![param(vec![1.0], true)];
        let cfg = AdamWConfig { weight_decay: 0.1, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &ps);
        opt.step(&mut ps, &[vec![0.0]], cfg.lr).unwrap();
        assert!((ps[0].value.data()[0] - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_bit_identical_and_nan_aborts() {
        let mut ps = vec![param(vec![0.3, -0.0, 7.0], true)];
        let before = ps.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), &ps);
        opt.step(&mut ps, &[vec![1.0, -2.0, 3.0]], 0.0).unwrap();
        let bits = |p: &[Param<f64>]| p[0].value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ps), bits(&before));
        assert!(matches!(
            opt.step(&mut ps, &[vec![f64::NAN, 0.0, 0.0]], 0.001),
            Err(TrainError::NonFinite(_))
        ));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = vec![param(vec![1.0, 1.0], true)];
        let cfg = AdamWConfig { lr: 0.01, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &ps);
        let mut last = f64::INFINITY;
        for i in 0..200 {
            let g: Vec<f64> = ps[0].value.data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut ps, &[g], cfg.lr).unwrap();
            let norm = ps[0].value.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            if i < 50 {
                assert!(norm < last);
            }
            last = norm;
        }
        assert!(last < 0.5, "{last}");
    }
}
