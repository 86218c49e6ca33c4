//! Pointwise activations with explicit backward passes.
//!
//! ReLU/LeakyReLU cache the input sign via the input tensor itself; tanh and
//! sigmoid cache their output (their derivatives are functions of the output).

use super::{Elem, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    /// Negative slope 0.2.
    LeakyRelu,
    Tanh,
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn forward<T: Elem>(act: Act, x: &Tensor<T>) -> Tensor<T> {
    let slope = T::from_f(LEAKY_SLOPE);
    match act {
        Act::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Act::LeakyRelu => x.map(|v| if v > T::zero() { v } else { v * slope }),
        Act::Tanh => x.map(|v| v.tanh()),
        Act::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
    }
}

/// dL/dx given dL/dy. `ref_tensor` is the input for (Leaky)ReLU and the
/// *output* for tanh/sigmoid.
pub fn backward<T: Elem>(act: Act, ref_tensor: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    assert_eq!(ref_tensor.shape(), dy.shape(), "activation backward shapes");
    let slope = T::from_f(LEAKY_SLOPE);
    let data = ref_tensor
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&r, &g)| match act {
            Act::Relu => {
                if r > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Act::LeakyRelu => {
                if r > T::zero() {
                    g
                } else {
                    g * slope
                }
            }
            Act::Tanh => g * (T::one() - r * r),
            Act::Sigmoid => g * r * (T::one() - r),
        })
        .collect();
    Tensor::from_vec(dy.shape(), data)
}
