use rand::Rng;

use super::ops::{self, LayerNormCache};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything that owns trainable tensors.
pub trait Module {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Stable parameter names, in the same order as [`Module::params`].
    fn param_names(&self) -> Vec<String>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Affine map `x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::xavier_uniform(input, output, rng),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn zeroed(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::add(&ops::matmul(x, &self.weight)?, &self.bias)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let (gx, gw) = ops::matmul_backward(x, &self.weight, grad)?;
        self.weight.accumulate_grad(gw.data())?;
        let mut gb = vec![0.0; self.bias.cols()];
        for i in 0..grad.rows() {
            for (o, g) in gb.iter_mut().zip(grad.row(i)) {
                *o += g;
            }
        }
        self.bias.accumulate_grad(&gb)?;
        Ok(gx)
    }
}

/// Learnable layer normalization over the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            scale: Tensor::filled(1, dim, 1.0),
            shift: Tensor::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        ops::layer_norm(x, &self.scale, &self.shift, ops::LAYER_NORM_EPS)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, grad: &Tensor) -> Result<Tensor> {
        let (gx, gs, gb) = ops::layer_norm_backward(cache, &self.scale, grad);
        self.scale.accumulate_grad(gs.data())?;
        self.shift.accumulate_grad(gb.data())?;
        Ok(gx)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Inputs and pre-activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

impl Mlp {
    /// `sizes = [in, hidden..., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeroed(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Linear::zeroed(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Linear::output_dim));
        s
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                ops::relu(&z)
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn backward(&mut self, cache: &MlpCache, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g = ops::relu_backward(&cache.pre[i], &g);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }
}

/// Sinusoidal embedding: entries `2i` and `2i+1` are `sin` and `cos` of
/// `t / 10000^(2i/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Tensor {
    let mut out = vec![0.0; dim];
    for i in 0..dim.div_ceil(2) {
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        let arg = t as f64 * freq;
        out[2 * i] = arg.sin();
        if 2 * i + 1 < dim {
            out[2 * i + 1] = arg.cos();
        }
    }
    Tensor::row_vector(out)
}

/// Copies values from `src` into `dst` parameter by parameter.
pub fn copy_params<M: Module>(dst: &mut M, src: &M) -> Result<()> {
    let srcs = src.params();
    for (d, s) in dst.params_mut().into_iter().zip(srcs) {
        if d.shape() != s.shape() {
            return Err(Error::Shape {
                op: "copy_params",
                left: d.shape().to_vec(),
                right: s.shape().to_vec(),
            });
        }
        d.data_mut().copy_from_slice(s.data());
    }
    Ok(())
}
