use rand::Rng;

use crate::error::Result;
use crate::numeric::{Graph, Tensor, Var};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
fn glorot<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| limit * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Tensor::new(shape, data)
        .expect("finite init")
        .with_requires_grad(true)
}

/// Fully connected layer computing `x W + b` on `(batch, in)` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot(vec![inputs, outputs], inputs, outputs, rng),
            bias: Tensor::zeros(vec![outputs]).with_requires_grad(true),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let h = g.matmul(x, vars[0])?;
        g.add_row(h, vars[1])
    }
}

/// Square-kernel convolution with zero padding `kernel / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let area = kernel * kernel;
        Self {
            weight: glorot(
                vec![out_channels, in_channels, kernel, kernel],
                in_channels * area,
                out_channels * area,
                rng,
            ),
            bias: Tensor::zeros(vec![out_channels]).with_requires_grad(true),
            stride,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn padding(&self) -> usize {
        self.kernel() / 2
    }

    /// Spatial output size for an input of side `size`.
    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding() - self.kernel()) / self.stride + 1
    }

    pub(crate) fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, vars[0], vars[1], self.stride, self.padding())
    }
}
