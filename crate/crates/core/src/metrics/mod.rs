pub mod fid;
pub mod image_quality;
pub mod sparsity;

pub use fid::{feature_stats, frechet_distance, FrechetStats, StatsAccumulator};
pub use image_quality::{psnr, ssim};
pub use sparsity::{sparsity_report, LayerSparsity, SparsityReport};
