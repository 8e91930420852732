//! Disk formats, run configuration, and pipeline orchestration on top of
//! [`c2w_core`]. The `c2w-tune` binary in this crate drives the full
//! cavity-to-wall workflow: phantom generation, ROI localization, cavity
//! pre-training, wall fine-tuning, a from-scratch baseline, prediction, and
//! evaluation.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod logfile;
pub mod mvol;
pub mod pipeline;
