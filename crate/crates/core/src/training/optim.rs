//! Mini-batch AdaGrad with momentum.

use crate::error::{Error, Result};
use crate::neural::{Module, Real, Tensor};

pub const EPSILON: f64 = 1e-8;

/// Per element: `acc += g²`, `vel = μ·vel + lr·g/(√acc + ε)`, `w −= vel`.
#[derive(Clone, Debug)]
pub struct AdaGradMomentum<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    acc: Vec<Tensor<T>>,
    vel: Vec<Tensor<T>>,
}

impl<T: Real> AdaGradMomentum<T> {
    pub fn new<M: Module<T>>(model: &M, learning_rate: f64, momentum: f64) -> Self {
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.value.shape().to_vec()).collect();
        Self {
            learning_rate,
            momentum,
            acc: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            vel: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor<T>] {
        &self.acc
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.vel
    }

    /// Applies one update and zeroes the gradients. A non-finite gradient
    /// aborts before any parameter is touched.
    pub fn step<M: Module<T>>(&mut self, model: &mut M) -> Result<()> {
        let mut bad = None;
        model.visit_params(&mut |p| {
            if bad.is_none() && !p.grad.is_finite() {
                bad = Some(p.name.clone());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Numerical(format!("non-finite gradient in `{name}`")));
        }
        let lr = T::lit(self.learning_rate);
        let mu = T::lit(self.momentum);
        let eps = T::lit(EPSILON);
        let mut i = 0;
        let (acc, vel) = (&mut self.acc, &mut self.vel);
        model.visit_params_mut(&mut |p| {
            let a = acc[i].data_mut();
            let v = vel[i].data_mut();
            let w = p.value.data_mut();
            for (k, g) in p.grad.data_mut().iter_mut().enumerate() {
                a[k] += *g * *g;
                let adj = *g / (a[k].sqrt() + eps);
                v[k] = mu * v[k] + lr * adj;
                w[k] -= v[k];
                *g = T::zero();
            }
            i += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Param;

    struct Scalar(Param<f64>);

    impl Module<f64> for Scalar {
        fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<f64>)) {
            f(&self.0)
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.0)
        }
    }

    fn scalar(w: f64) -> Scalar {
        Scalar(Param::new("w", Tensor::from_vec(&[1], vec![w]).unwrap()))
    }

    #[test]
    fn first_step_closed_form() {
        let mut m = scalar(0.0);
        let mut opt = AdaGradMomentum::new(&m, 0.02, 0.9);
        m.0.grad.data_mut()[0] = 1.0;
        opt.step(&mut m).unwrap();
        assert!((m.0.value.data()[0] + 0.02).abs() < 1e-9);
        assert_eq!(m.0.grad.data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut m = scalar(1.0);
        let mut opt = AdaGradMomentum::new(&m, 0.02, 0.9);
        m.0.grad.data_mut()[0] = 1.0;
        opt.step(&mut m).unwrap();
        let w1 = m.0.value.data()[0];
        let v1 = opt.velocities()[0].data()[0];
        opt.step(&mut m).unwrap();
        assert!((opt.velocities()[0].data()[0] - 0.9 * v1).abs() < 1e-15);
        assert!((m.0.value.data()[0] - (w1 - 0.9 * v1)).abs() < 1e-15);

        let mut fresh = scalar(3.0);
        let mut opt = AdaGradMomentum::new(&fresh, 0.02, 0.9);
        opt.step(&mut fresh).unwrap();
        assert_eq!(fresh.0.value.data()[0], 3.0);
    }

    fn run_quadratic(lr: f64) -> f64 {
        let mut m = scalar(5.0);
        let mut opt = AdaGradMomentum::new(&m, lr, 0.9);
        let (mut w, mut acc, mut vel) = (5.0f64, 0.0f64, 0.0f64);
        let mut last_acc = 0.0;
        for _ in 0..100 {
            let g = m.0.value.data()[0];
            m.0.grad.data_mut()[0] = g;
            opt.step(&mut m).unwrap();
            let a = opt.accumulators()[0].data()[0];
            assert!(a >= last_acc);
            last_acc = a;

            acc += w * w;
            vel = 0.9 * vel + lr * w / (acc.sqrt() + 1e-8);
            w -= vel;
        }
        assert!((m.0.value.data()[0] - w).abs() < 1e-12);
        w
    }

    #[test]
    fn converges_on_quadratic() {
        assert!(run_quadratic(0.1).abs() < 0.5);
        // The accumulator shrinks steps fast enough that lr = 0.02 is still on its way.
        let slow = run_quadratic(0.02);
        assert!(slow > 0.5 && slow < 5.0, "{slow}");
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut m = scalar(1.0);
        let mut opt = AdaGradMomentum::new(&m, 0.02, 0.9);
        m.0.grad.data_mut()[0] = f64::NAN;
        assert!(matches!(opt.step(&mut m), Err(Error::Numerical(_))));
        assert_eq!(m.0.value.data()[0], 1.0);
    }
}
