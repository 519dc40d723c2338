//! Stateful layers: parameters plus the per-pass caches their backward needs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Parameter, Scalar, TensorBase};

/// Fan-in-scaled uniform init, identical draw order for every element type.
fn init_uniform<E: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> TensorBase<E> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| E::of_f64(rng.gen_range(-limit..limit)))
        .collect();
    TensorBase::new(shape.to_vec(), data).unwrap()
}

pub struct Conv2d<E: Scalar> {
    pub weight: Parameter<E>,
    pub bias: Parameter<E>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<TensorBase<E>>,
}

impl<E: Scalar> Conv2d<E> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                init_uniform(&[c_out, c_in, kernel, kernel], fan_in, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), init_uniform(&[c_out], fan_in, rng)),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &TensorBase<E>, train: bool) -> Result<TensorBase<E>> {
        let out = ops::conv2d_forward(input, &self.weight.value, &self.bias.value, self.stride, self.padding)?;
        if train {
            self.cache = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &TensorBase<E>) -> Result<TensorBase<E>> {
        let input = self.cache.take().ok_or_else(|| {
            Error::MissingGradient(format!("{}: backward without forward", self.weight.name))
        })?;
        let (gx, gw, gb) =
            ops::conv2d_backward(&input, &self.weight.value, self.stride, self.padding, grad_out)?;
        accumulate(&mut self.weight.grad, &gw);
        accumulate(&mut self.bias.grad, &gb);
        Ok(gx)
    }
}

pub struct BatchNorm2d<E: Scalar> {
    pub gamma: Parameter<E>,
    pub beta: Parameter<E>,
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<ops::BnCache<E>>,
}

impl<E: Scalar> BatchNorm2d<E> {
    pub fn new(name: &str, channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), TensorBase::full(&[channels], E::one())),
            beta: Parameter::new(format!("{name}.beta"), TensorBase::zeros(&[channels])),
            running_mean: vec![E::zero(); channels],
            running_var: vec![E::one(); channels],
            eps,
            momentum,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &TensorBase<E>, train: bool) -> Result<TensorBase<E>> {
        if train {
            let (out, cache) = ops::batch_norm2d_train(
                input,
                &self.gamma.value,
                &self.beta.value,
                &mut self.running_mean,
                &mut self.running_var,
                self.eps,
                self.momentum,
            )?;
            self.cache = Some(cache);
            Ok(out)
        } else {
            ops::batch_norm2d_eval(
                input,
                &self.gamma.value,
                &self.beta.value,
                &self.running_mean,
                &self.running_var,
                self.eps,
            )
        }
    }

    pub fn backward(&mut self, grad_out: &TensorBase<E>) -> Result<TensorBase<E>> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::MissingGradient(format!("{}: backward without forward", self.gamma.name))
        })?;
        let (gx, ggamma, gbeta) = ops::batch_norm2d_backward(&cache, &self.gamma.value, grad_out)?;
        accumulate(&mut self.gamma.grad, &ggamma);
        accumulate(&mut self.beta.grad, &gbeta);
        Ok(gx)
    }
}

pub struct Linear<E: Scalar> {
    pub weight: Parameter<E>,
    pub bias: Parameter<E>,
    cache: Option<TensorBase<E>>,
}

impl<E: Scalar> Linear<E> {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                init_uniform(&[d_out, d_in], d_in, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), init_uniform(&[d_out], d_in, rng)),
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &TensorBase<E>, train: bool) -> Result<TensorBase<E>> {
        let out = ops::linear_forward(input, &self.weight.value, &self.bias.value)?;
        if train {
            self.cache = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &TensorBase<E>) -> Result<TensorBase<E>> {
        let input = self.cache.take().ok_or_else(|| {
            Error::MissingGradient(format!("{}: backward without forward", self.weight.name))
        })?;
        let (gx, gw, gb) = ops::linear_backward(&input, &self.weight.value, grad_out)?;
        accumulate(&mut self.weight.grad, &gw);
        accumulate(&mut self.bias.grad, &gb);
        Ok(gx)
    }
}

fn accumulate<E: Scalar>(grad: &mut TensorBase<E>, delta: &TensorBase<E>) {
    for (g, &d) in grad.data_mut().iter_mut().zip(delta.data()) {
        *g = *g + d;
    }
}
