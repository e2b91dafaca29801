use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, t: usize, lr: f64) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("adam step counter starts at 1".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract("parameter, gradient and state counts differ".into()));
    }
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        p.expect_same_shape(g, "adam_step")?;
        let (pd, gd) = (p.data_mut(), g.data());
        for (((pv, &gv), mv), vv) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
            *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
            *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::new(&[2], vec![1.0, -2.0]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for t in 1..=5 {
            adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, t, 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new(&p);
        let lr = 1e-3;
        let mut prev = 0.0;
        for t in 1..=500 {
            adam_step(&mut p, &[Tensor::scalar(3.0)], &mut s, t, lr).unwrap();
            let now = p[0].item();
            if t > 100 {
                assert!(((prev - now) - lr).abs() < 1e-6 * lr, "step {t}: {}", prev - now);
            }
            prev = now;
        }
    }

    #[test]
    fn rejects_step_zero() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Tensor::scalar(1.0)], &mut s, 0, 0.1).is_err());
    }
}
