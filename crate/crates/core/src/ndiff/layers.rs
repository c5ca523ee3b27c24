use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ops;
use super::tensor::Tensor;
use crate::error::Result;

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| dist.sample(rng))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Anything that owns [`Param`]s under stable names.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel;
        Conv1d {
            weight: Param::new(uniform_init(&[c_out, c_in, kernel], fan_in, rng)),
            bias: Param::new(uniform_init(&[c_out], fan_in, rng)),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv1d(
            x,
            &self.weight.value,
            Some(&self.bias.value),
            self.stride,
            self.padding,
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let g = ops::conv1d_backward(x, &self.weight.value, grad_out, self.stride, self.padding)?;
        self.weight.grad.add_assign(&g.weight);
        self.bias.grad.add_assign(&g.bias);
        Ok(g.input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose1d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel / stride.max(1);
        ConvTranspose1d {
            weight: Param::new(uniform_init(&[c_in, c_out, kernel], fan_in, rng)),
            bias: Param::new(uniform_init(&[c_out], fan_in, rng)),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv_transpose1d(
            x,
            &self.weight.value,
            Some(&self.bias.value),
            self.stride,
            self.padding,
        )
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let g = ops::conv_transpose1d_backward(
            x,
            &self.weight.value,
            grad_out,
            self.stride,
            self.padding,
        )?;
        self.weight.grad.add_assign(&g.weight);
        self.bias.grad.add_assign(&g.bias);
        Ok(g.input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::new(uniform_init(&[n_out, n_in], n_in, rng)),
            bias: Param::new(uniform_init(&[n_out], n_in, rng)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (gx, gw, gb) = ops::linear_backward(x, &self.weight.value, grad_out)?;
        self.weight.grad.add_assign(&gw);
        self.bias.grad.add_assign(&gb);
        Ok(gx)
    }
}

macro_rules! weight_bias_params {
    ($t:ty) => {
        impl Parameterized for $t {
            fn params(&self) -> Vec<(String, &Param)> {
                vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
            }

            fn params_mut(&mut self) -> Vec<&mut Param> {
                vec![&mut self.weight, &mut self.bias]
            }
        }
    };
}

weight_bias_params!(Conv1d);
weight_bias_params!(ConvTranspose1d);
weight_bias_params!(Linear);
