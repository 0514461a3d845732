use serde::{Deserialize, Serialize};

use crate::tensor::{Element, Tensor};

/// Elementwise functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unary {
    Sigmoid,
    /// Exact form `x·Φ(x)` with the Gaussian CDF.
    Gelu,
    Relu,
    /// Square root; its derivative at 0 is taken as 0.
    Sqrt,
}

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    // Both branches avoid exp overflow.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn std_normal_cdf<T: Element>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn std_normal_pdf<T: Element>(x: T) -> T {
    T::lit(0.398_942_280_401_432_7) * (T::lit(-0.5) * x * x).exp()
}

impl Unary {
    #[inline]
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Gelu => x * std_normal_cdf(x),
            Unary::Relu => x.max(T::zero()),
            Unary::Sqrt => x.sqrt(),
        }
    }

    /// Derivative given the input `x` and the forward output `y`.
    #[inline]
    pub(crate) fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Sqrt => {
                if y > T::zero() {
                    T::lit(0.5) / y
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Applies `func` to every element.
pub fn pointwise_map<T: Element>(input: &Tensor<T>, func: Unary) -> Tensor<T> {
    input.map(|v| func.apply(v))
}
