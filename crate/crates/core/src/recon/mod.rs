//! Synthetic multi-coil encoding, SENSE reconstruction and propagation of
//! channel noise to patch covariances.

mod encoding;
mod noise;

pub use encoding::{
    apply_spectral_filter, channel_kspace_noise, correlated_channel_cov, encode_volume,
    sense_reconstruct, synthetic_sensitivities, white_kspace_noise, whiten_channels, Case,
    Encoding, EncodingModel, EncodingSpec, KSpace, KVolume, PartialFourier, PfKind, SenseOperator,
};
pub use noise::{
    filter_matrix, propagate_noise, unwhiten_patch_blocks, whiten_patch, whiten_patch_blocks,
    CovBlock, NoiseModel, PatchCovariance, SpatialCovariance, Whitened, WHITEN_RIDGE,
};
