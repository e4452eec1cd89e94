//! Generalized singular value shrinkage (GSVS) for complex volumetric
//! multi-measurement data.
//!
//! The crate propagates channel noise through a linear (SENSE-type)
//! reconstruction, simulates the noise singular-value distribution of every
//! patch, and denoises each patch's Casorati matrix with the Frobenius-optimal
//! shrinker for that distribution.
//!
//! Singular values throughout are those of `A / sqrt(N)` for an `M x N`
//! matrix `A`, both for data and for simulated noise.

pub mod cvol;
pub mod error;
pub mod esd;
pub mod estimators;
pub mod fourier;
pub mod linalg;
pub mod patch;
pub mod pipeline;
pub mod recon;
pub mod shrink;
pub mod synth;
pub mod volume;

pub use error::{GsvsError, Result};
pub use esd::{d_transform, mp_quantile, simulate_esd, EsdModel, EsdOptions, MpLaw};
pub use linalg::{CMatrix, C64};
pub use patch::{assemble_patches, extract_casorati, CasoratiMatrix, PatchTable, WeightScheme};
pub use pipeline::{
    denoise, denoise_interleaved, estimate_gamma, DenoiseConfig, GammaChoice, GammaScan,
    InterleavedMode, PhaseModel, RecoveryReport,
};
pub use recon::{NoiseModel, PatchCovariance};
pub use shrink::{recover_matrix, shrink_frobenius, truncate_hard, Rule, ShrinkOutcome};
pub use synth::{make_phantom, make_spiked, psnr, PhantomSpec, SpikedSpec};
pub use volume::ComplexVolumeSet;
