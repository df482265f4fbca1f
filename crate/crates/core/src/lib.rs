//! Self-supervised GAN generator pruning.
//!
//! A frozen dense teacher generator and a pretrained discriminator
//! supervise a pruned student generator through consistency losses that
//! compare the two generators' loss terms. Alongside the main method, the
//! crate ships a registry of baseline compression recipes, a training
//! engine, and FID/PSNR/SSIM evaluation.

pub mod adversarial;
pub mod checkpoint;
pub mod config;
pub mod consistency;
pub mod data;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod extractor;
pub mod metrics;
pub mod metrics_log;
pub mod models;
pub mod network_io;
pub mod pruning;
pub mod report;
pub mod schedule;
pub mod seeding;
pub mod strategy;

pub use error::{Error, ErrorCategory, Result};
