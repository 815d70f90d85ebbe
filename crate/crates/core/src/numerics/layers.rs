use rand::Rng;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = x·W + b` with `W: in×out` and `b: out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of one dense layer: parameters and layer input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.cols()] {
            return Err(Error::shape("Dense::new", weight.shape(), bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    /// He-style uniform initialization, `U(-√(6/fan_in), √(6/fan_in))`, zero bias.
    pub fn he_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            weight: Tensor::from_vec(&[fan_in, fan_out], data).expect("sized above"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dense_forward(x, &self.weight, &self.bias)
    }

    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<LayerGrad> {
        dense_backward(x, &self.weight, upstream)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.len() != weight.cols() {
        return Err(Error::shape("dense_forward", weight.shape(), bias.shape()));
    }
    let mut out = matmul(x, weight).map_err(|_| Error::shape("dense_forward", x.shape(), weight.shape()))?;
    let b = bias.data();
    for i in 0..out.rows() {
        for (o, bv) in out.row_mut(i).iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(out)
}

pub fn dense_backward(x: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<LayerGrad> {
    if upstream.rows() != x.rows() || upstream.cols() != weight.cols() {
        return Err(Error::shape("dense_backward", x.shape(), upstream.shape()));
    }
    Ok(LayerGrad {
        weight: matmul_tn(x, upstream)?,
        bias: upstream.sum_rows(),
        input: matmul_nt(upstream, weight)?,
    })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Multiplies `upstream` by the indicator `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(Error::shape("relu_backward", x.shape(), upstream.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}
