//! Quaternion neural networks for sequence models.
//!
//! The crate provides quaternion algebra ([`Quaternion`], [`QTensor`]), a
//! reverse-mode autodiff tape, quaternion layers whose linear maps are
//! Hamilton products, a quaternion attention model for sentence pairs, a
//! quaternion transformer, synthetic tasks, and a training harness.

pub mod autodiff;
pub mod error;
pub mod layers;
pub mod optim;
pub mod qatt;
pub mod qtensor;
pub mod quaternion;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod transformer;
pub mod verify;

pub use error::{Error, Result};
pub use qtensor::QTensor;
pub use quaternion::Quaternion;
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/algebra.md")]
    pub struct Algebra;
    #[doc = include_str!("../../../book/src/layers.md")]
    pub struct Layers;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/qatt.md")]
    pub struct Qatt;
    #[doc = include_str!("../../../book/src/transformer.md")]
    pub struct Transformer;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/verification.md")]
    pub struct Verification;
}
