use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// AdamW with decoupled weight decay. One moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (k, &gk) in g.data().iter().enumerate() {
                pd[k] *= 1.0 - c.lr * c.weight_decay;
                md[k] = c.beta1 * md[k] + (1.0 - c.beta1) * gk;
                vd[k] = c.beta2 * vd[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = md[k] / bc1;
                let vhat = vd[k] / bc2;
                pd[k] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let orig = p.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, [&p]);
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[Tensor::zeros(2, 2)]).unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(opt.steps_taken(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias correction restores mhat = vhat = 1,
        // so the update is lr / (1 + eps).
        let mut p = Tensor::scalar(0.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, [&p]);
        opt.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.item() - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Tensor::from_rows(&[&[0.3, -0.7]]);
            let mut opt = AdamW::new(AdamWConfig::default(), [&p]);
            for i in 0..20 {
                let g = Tensor::from_rows(&[&[(i as f64).sin(), p.data()[0] * 2.0]]);
                opt.step(&mut [&mut p], &[g]).unwrap();
            }
            p
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut p = Tensor::zeros(2, 2);
        let mut opt = AdamW::new(AdamWConfig::default(), [&p]);
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).is_err());
    }
}
