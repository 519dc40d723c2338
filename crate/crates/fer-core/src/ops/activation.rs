//! Elementwise activations.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBase};

pub fn relu_forward<E: Scalar>(input: &TensorBase<E>) -> TensorBase<E> {
    input.map(|v| if v > E::zero() { v } else { E::zero() })
}

/// Masks the upstream gradient by the sign of the saved pre-activation.
pub fn relu_backward<E: Scalar>(
    input: &TensorBase<E>,
    grad_out: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    check_same(input, grad_out, "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > E::zero() { g } else { E::zero() })
        .collect();
    TensorBase::new(input.shape().to_vec(), data)
}

pub fn sigmoid_forward<E: Scalar>(input: &TensorBase<E>) -> TensorBase<E> {
    input.map(|v| {
        let x = v.into_f64();
        // Branch on sign to avoid overflow in exp.
        let s = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        E::of_f64(s)
    })
}

/// Backward in terms of the saved output: s * (1 - s).
pub fn sigmoid_backward<E: Scalar>(
    output: &TensorBase<E>,
    grad_out: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    check_same(output, grad_out, "sigmoid_backward")?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| {
            let s = s.into_f64();
            E::of_f64(g.into_f64() * s * (1.0 - s))
        })
        .collect();
    TensorBase::new(output.shape().to_vec(), data)
}

/// Elementwise sum of two same-shape tensors.
pub fn add<E: Scalar>(a: &TensorBase<E>, b: &TensorBase<E>) -> Result<TensorBase<E>> {
    check_same(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    TensorBase::new(a.shape().to_vec(), data)
}

fn check_same<E: Scalar>(
    a: &TensorBase<E>,
    b: &TensorBase<E>,
    op: &'static str,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}
