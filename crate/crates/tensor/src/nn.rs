//! Parameterised layers built on graph primitives.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::init;
use crate::params::{BufferId, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Affine map over the last axis: `y = x Wᵀ + b`, with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_param(
            format!("{name}.weight"),
            init::uniform_fan_in([out_dim, in_dim], in_dim, rng),
        )?;
        let bias = if bias {
            Some(store.add_param(
                format!("{name}.bias"),
                init::uniform_fan_in([out_dim], in_dim, rng),
            )?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.in_dim) {
            return Err(TensorError::mismatch("linear", &shape, &[self.out_dim, self.in_dim]));
        }
        let w = g.param(self.weight);
        let mut y = g.matmul_nt(x, w)?;
        if let Some(b) = self.bias {
            let b = g.param(b);
            y = g.add(y, b)?;
        }
        Ok(y)
    }
}

/// 2-D convolution layer with square kernels.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.add_param(
            format!("{name}.weight"),
            init::kaiming_normal([out_ch, in_ch, kernel, kernel], fan_in, rng),
        )?;
        let bias = if bias {
            Some(store.add_param(format!("{name}.bias"), Tensor::zeros([out_ch]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Batch normalisation over NCHW with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones([channels]))?,
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros([channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros([channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones([channels]))?,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        })
    }

    /// With `batch_stats`, normalises by the batch and queues a running
    /// average update; otherwise uses the running estimates.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, batch_stats: bool) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let rm = g.buffer(self.running_mean);
        let rv = g.buffer(self.running_var);
        if !batch_stats {
            return g.batch_norm_eval(x, gamma, beta, rm.data(), rv.data(), self.eps);
        }
        let (y, mean, var) = g.batch_norm_train(x, gamma, beta, self.eps)?;
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        let blend = |old: &Tensor<T>, new: &[T]| {
            let data = old.data().iter().zip(new).map(|(&o, &n)| keep * o + m * n).collect();
            Tensor::new(old.shape().to_vec(), data).expect("same shape")
        };
        let (new_mean, new_var) = (blend(rm, &mean), blend(rv, &var));
        g.update_buffer(self.running_mean, new_mean);
        g.update_buffer(self.running_var, new_var);
        Ok(y)
    }
}

/// Layer normalisation over the last axis, with optional affine parameters.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Some(store.add_param(format!("{name}.gamma"), Tensor::ones([dim]))?),
            beta: Some(store.add_param(format!("{name}.beta"), Tensor::zeros([dim]))?),
            eps: Self::EPS,
        })
    }

    /// Pure standardisation: zero mean, unit variance rows.
    pub fn plain() -> Self {
        Self {
            gamma: None,
            beta: None,
            eps: Self::EPS,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = self.gamma.map(|p| g.param(p));
        let beta = self.beta.map(|p| g.param(p));
        g.layer_norm(x, gamma, beta, self.eps)
    }
}
