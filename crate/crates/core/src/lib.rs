//! Minimax active learning.
//!
//! An encoder and a cosine-prototype classifier play an entropy game on the
//! unlabeled pool through a gradient reversal layer, while a discriminator
//! learns to tell labeled from unlabeled features. Unlabeled samples that
//! look least labeled and sit farthest from every prototype are sent to the
//! oracle. Everything runs on a small reverse-mode autodiff tape over
//! `ndarray` matrices in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod networks;
pub mod objectives;
pub mod pools;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
