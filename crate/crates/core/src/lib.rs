//! k-space artifact synthesis and Wasserstein-guided unsupervised domain
//! adaptation for multi-class image quality classification.

pub mod data;
pub mod grad;
pub mod kspace;
pub mod io;
pub mod metrics;
pub mod nets;
pub mod train;
pub mod seed;
