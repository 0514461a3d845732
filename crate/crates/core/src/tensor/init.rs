//! Seeded parameter initialization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::Result;

/// How a parameter tensor is filled at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `±sqrt(6 / fan_in)` (Kaiming, fan-in mode, ReLU gain).
    KaimingUniform { fan_in: usize },
}

impl Init {
    pub fn materialize<T: Element, R: Rng>(self, shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
        match self {
            Init::Zeros => Tensor::zeros(shape.to_vec()),
            Init::Ones => Tensor::full(shape.to_vec(), T::one()),
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-bound..bound)))
            }
        }
    }
}
