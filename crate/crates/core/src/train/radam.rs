//! Rectified Adam.

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

/// Length below which the variance estimate is treated as unreliable.
pub const RHO_THRESHOLD: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RadamConfig {
    fn default() -> Self {
        RadamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for each parameter tensor, by position.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

/// What a step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub t: u64,
    pub rho: f64,
    pub rectified: bool,
}

/// `ρ_∞ = 2/(1 − β₂) − 1`.
pub fn rho_inf(beta2: f64) -> f64 {
    2.0 / (1.0 - beta2) - 1.0
}

/// Approximate length of the simple moving average at step `t` (1-based).
pub fn rho_t(beta2: f64, t: u64) -> f64 {
    let b2t = beta2.powi(t as i32);
    rho_inf(beta2) - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// Variance rectification factor; only meaningful when `rho_t > 4`.
pub fn rectification(beta2: f64, rho: f64) -> f64 {
    let inf = rho_inf(beta2);
    (((rho - 4.0) * (rho - 2.0) * inf) / ((inf - 4.0) * (inf - 2.0) * rho)).sqrt()
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self
    where
        T: 'a,
    {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimizerState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// Whether the *next* step would take the rectified branch.
    pub fn next_is_rectified(&self, beta2: f64) -> bool {
        rho_t(beta2, self.t + 1) > RHO_THRESHOLD
    }
}

/// One update of `params` in place.
///
/// Gradients are checked before anything is touched, so a non-finite gradient
/// leaves both the parameters and the state unchanged.
pub fn radam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &RadamConfig,
) -> Result<StepInfo> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Invalid(format!(
            "radam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "radam gradient",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
    }

    state.t += 1;
    let t = state.t;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let rho = rho_t(b2, t);
    let rectified = rho > RHO_THRESHOLD;
    let r = if rectified { rectification(b2, rho) } else { 0.0 };

    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let (pd, gd) = (p.data_mut(), g.data());
        for (((theta, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
            let gi = gi.f64();
            let mn = b1 * mi.f64() + (1.0 - b1) * gi;
            let vn = b2 * vi.f64() + (1.0 - b2) * gi * gi;
            *mi = T::of(mn);
            *vi = T::of(vn);
            let m_hat = mn / bc1;
            let step = if rectified {
                cfg.lr * r * m_hat / ((vn / bc2).sqrt() + cfg.eps)
            } else {
                cfg.lr * m_hat
            };
            *theta = T::of(theta.f64() - step);
        }
    }
    Ok(StepInfo { t, rho, rectified })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_unrectified() {
        assert!((rho_t(0.999, 1) - 1.0).abs() < 1e-9);
        let state = OptimizerState::<f64>::new([&Tensor::zeros(&[1])]);
        assert!(!state.next_is_rectified(0.999));
    }

    #[test]
    fn zero_gradients_leave_parameters_alone() {
        let mut p = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let orig = p.clone();
        let mut state = OptimizerState::new([&p]);
        let cfg = RadamConfig {
            lr: 0.1,
            ..Default::default()
        };
        for _ in 0..12 {
            radam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut state, &cfg).unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(state.t, 12);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = Tensor::<f32>::ones(&[2]);
        let mut state = OptimizerState::new([&p]);
        let bad = Tensor::from_f64(&[2], &[1.0, f64::NAN]).unwrap();
        let err = radam_step(&mut [&mut p], &[bad], &mut state, &RadamConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(state.t, 0);
        assert_eq!(p, Tensor::ones(&[2]));
        assert_eq!(state.m[0], Tensor::zeros(&[2]));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = Tensor::<f64>::ones(&[2]);
        let mut state = OptimizerState::new([&p]);
        assert!(radam_step(&mut [&mut p], &[Tensor::ones(&[3])], &mut state, &RadamConfig::default()).is_err());
    }
}
