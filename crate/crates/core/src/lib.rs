//! Core algorithms for cavity-to-wall transfer segmentation of thin 3D
//! structures: volume geometry, reverse-mode autodiff, a ResNeXt-encoder
//! 3D U-Net, progressive-unfreezing training, surface metrics, and a
//! synthetic phantom generator.
//!
//! Everything in this crate is pure computation over in-memory data. File
//! formats, dataset layout, and the CLI live in the companion `c2w-tune`
//! crate, which is the only place that touches the filesystem.

#![cfg_attr(not(test), no_std)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod real;
pub mod train;
pub mod volume;

pub use real::Real;
pub use volume::{Mask3, RoiSpec, Volume3};
