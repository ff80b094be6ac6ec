use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Real> Adam<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every unfrozen parameter holding a gradient.
    /// Gradients are left in place; zero them before the next backward pass.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for (i, p) in store.params_mut().enumerate() {
            if self.moments.len() <= i {
                self.moments.resize(i + 1, None);
            }
            if p.frozen {
                continue;
            }
            let Some(grad) = &p.grad else { continue };
            let (m, v) = self.moments[i].get_or_insert_with(|| {
                let shape = p.value.shape().to_vec();
                (Tensor::zeros(shape.clone()), Tensor::zeros(shape))
            });
            let it = p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &g), (m, v)) in it {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
