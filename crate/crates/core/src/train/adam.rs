use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Every gradient is checked before anything is modified, so a non-finite
    /// gradient leaves both parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} moments, {} params, {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let f = T::from_f64_lossy;
        let (b1, b2, eps) = (f(BETA1), f(BETA2), f(EPSILON));
        let (one_b1, one_b2) = (f(1.0 - BETA1), f(1.0 - BETA2));
        let (lr, bc1, bc2) = (f(lr), f(bc1), f(bc2));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((theta, &g), (m, v)) in it {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&[&p]);
        s.step(&mut [&mut p], &[scalar(1.0)], 1e-3).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Tensor::from_fn(vec![2, 3], |i| i as f64);
        let before = p.clone();
        let mut s = AdamState::new(&[&p]);
        for _ in 0..5 {
            s.step(&mut [&mut p], &[Tensor::zeros(vec![2, 3])], 1e-2).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn moments_decay_in_closed_form() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&[&p]);
        s.step(&mut [&mut p], &[scalar(3.0)], 1e-3).unwrap();
        s.step(&mut [&mut p], &[scalar(0.0)], 1e-3).unwrap();
        let m = s.m[0].data()[0];
        let v = s.v[0].data()[0];
        assert!((m - BETA1 * (1.0 - BETA1) * 3.0).abs() < 1e-15);
        assert!((v - BETA2 * (1.0 - BETA2) * 9.0).abs() < 1e-15);
        // second-step update uses m / (1 - b1^2)
        let m_hat = m / (1.0 - BETA1 * BETA1);
        assert!(m_hat > 0.0 && s.v[0].data()[0] >= 0.0);
    }

    #[test]
    fn parameters_are_independent() {
        let mut a = scalar(1.0);
        let mut b = scalar(1.0);
        let mut s = AdamState::new(&[&a, &b]);
        s.step(&mut [&mut a, &mut b], &[scalar(2.0), scalar(0.0)], 0.1).unwrap();
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data()[0], 1.0);
    }

    #[test]
    fn nan_gradient_rejected_untouched() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&[&p]);
        let err = s.step(&mut [&mut p], &[scalar(f64::NAN)], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn clip() {
        let mut g = vec![scalar(3.0), scalar(4.0)];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut g = vec![scalar(0.3)];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g[0].data()[0], 0.3);
    }
}
