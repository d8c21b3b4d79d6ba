//! Unsupervised segmentation of 3D volumes from jointly learned patch representations.
//!
//! Phase one alternates agglomerative clustering of CNN patch features with
//! CNN training on the resulting cluster labels ([`jule`]). Phase two runs
//! k-means over features of a dense patch grid and projects the cluster
//! labels back onto the volume ([`segmenter`]).

pub mod cluster;
pub mod config;
pub mod jule;
pub mod net3d;
pub mod sampler;
pub mod segmenter;
pub mod volume;
