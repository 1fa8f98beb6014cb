//! Scan sources: KITTI-style files on disk and procedural scenes.

pub mod kitti;
mod synthetic;

pub use synthetic::{
    generate_synthetic, neighbor_lists, ScanRole, SyntheticConfig, SyntheticDataset, SyntheticScan,
};
