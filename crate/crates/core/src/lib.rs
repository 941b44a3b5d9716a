//! Spatial state-space mixing via a convection–diffusion–reaction PDE solved
//! in the Fourier domain.

pub mod bench;
pub mod block;
pub mod config;
pub mod error;
pub mod grad;
pub mod grid;
pub mod linalg;
pub mod operator;
pub mod oracle;
pub mod rng;
pub mod spectral;
pub mod verify;
pub mod viz;

pub use error::{Error, Result};
pub use grid::{hermitian_symmetry_check, make_frequency_grid, FeatureMap, FrequencyGrid, Shape, SpectrumMap};
pub use linalg::{mat_exp, mat_exp_frechet, spectral_abscissa, ComplexMatrix, RealMatrix};
pub use operator::{
    embed_symbol, evolution_symbol, green_symbol, kernel_image, pde_ssm_forward, Ablation, EmbedParams, Mode,
    PdeParams, TermFlags,
};
pub use spectral::{dft2, idft2};
