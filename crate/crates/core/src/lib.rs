//! Unsupervised multimodal clustering.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod cluster;
pub mod contrastive;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod selection;
pub mod trainer;

pub use error::{Result, UmcError};
