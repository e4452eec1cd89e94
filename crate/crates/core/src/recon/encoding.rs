//! Synthetic Cartesian multi-coil encoding and SENSE unfolding.
//!
//! Only the phase-encode axis is transformed; the remaining axes are left in
//! image space since their unitary DFTs cancel between encoding and
//! reconstruction. Undersampling by `U` keeps k-space lines `k = U*j`, and
//! those lines are scaled by `sqrt(U)` so that the aliased coil images are
//! `sum_u s(q_u) x(q_u)` and the unfolding covariance is `(S^H S)^-1` per
//! aliased group, directly comparable with full sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::fourier::{
    dft_along_axis, for_each_line, other_axes, signed_harmonic, strides, Direction,
};
use crate::linalg::{cholesky_lower, complex_normal, lower_inverse, CMatrix, C64};
use crate::volume::{validate_grid, voxel_coords, ComplexVolumeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Full,
    Under,
    Half,
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfKind {
    ZeroFill,
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialFourier {
    /// Acquired fraction of the phase-encode spectrum, in [0.5, 1].
    pub fraction: f64,
    pub filter: PfKind,
    /// Skip the high positive lines instead of the low negative ones.
    #[serde(default)]
    pub flipped: bool,
}

impl PartialFourier {
    /// Spectral weights on a `p`-point axis, in FFT bin order.
    pub fn weights(&self, p: usize) -> Result<Vec<f64>> {
        if !(0.5..=1.0).contains(&self.fraction) {
            return Err(GsvsError::invalid(format!(
                "partial Fourier fraction must lie in [0.5, 1], got {}",
                self.fraction
            )));
        }
        let half = (p / 2) as i64;
        let n_skip = p as i64 - (self.fraction * p as f64).round() as i64;
        let k0 = half - n_skip;
        Ok((0..p)
            .map(|k| {
                let mut kc = signed_harmonic(k, p);
                if self.flipped {
                    kc = -kc - 1;
                }
                let acquired = kc >= -half + n_skip;
                match self.filter {
                    PfKind::ZeroFill => f64::from(u8::from(acquired)),
                    PfKind::Ramp if kc > k0 => 2.0,
                    PfKind::Ramp if kc < -k0 => 0.0,
                    PfKind::Ramp => 1.0 + kc as f64 / (k0 + 1) as f64,
                }
            })
            .collect())
    }
}

/// Acquisition parameters of one encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoding {
    #[serde(default = "default_pe_axis")]
    pub pe_axis: usize,
    #[serde(default = "one")]
    pub undersampling: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_fourier: Option<PartialFourier>,
}

fn default_pe_axis() -> usize {
    1
}

fn one() -> usize {
    1
}

impl Default for Encoding {
    fn default() -> Self {
        Self {
            pe_axis: default_pe_axis(),
            undersampling: 1,
            partial_fourier: None,
        }
    }
}

impl Encoding {
    fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if self.pe_axis > 2 {
            return Err(GsvsError::invalid(format!(
                "phase-encode axis {} out of range",
                self.pe_axis
            )));
        }
        let p = dims[self.pe_axis];
        if self.undersampling == 0 || p % self.undersampling != 0 {
            return Err(GsvsError::invalid(format!(
                "undersampling {} must divide the phase-encode size {p}",
                self.undersampling
            )));
        }
        if let Some(pf) = &self.partial_fourier {
            pf.weights(p)?;
        }
        Ok(())
    }

    /// Grid of the acquired (undersampled) hybrid-space data.
    pub fn reduced_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        let mut d = dims;
        d[self.pe_axis] /= self.undersampling;
        d
    }
}

/// Coil sensitivities, channel noise covariance and per-volume encodings.
#[derive(Debug, Clone)]
pub struct EncodingModel {
    dims: [usize; 3],
    spacing: [f64; 3],
    sensitivities: Vec<Vec<C64>>,
    channel_cov: CMatrix,
    encodings: Vec<Encoding>,
    schedule: Option<Vec<usize>>,
}

impl EncodingModel {
    /// `schedule[n]` is the (zero-based) encoding of volume `n`; it must be
    /// given whenever more than one encoding is present.
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        sensitivities: Vec<Vec<C64>>,
        channel_cov: CMatrix,
        encodings: Vec<Encoding>,
        schedule: Option<Vec<usize>>,
    ) -> Result<Self> {
        validate_grid(dims, spacing)?;
        let q: usize = dims.iter().product();
        let c = sensitivities.len();
        if c == 0 {
            return Err(GsvsError::invalid("at least one coil is required"));
        }
        if sensitivities.iter().any(|s| s.len() != q) {
            return Err(GsvsError::DimensionMismatch(
                "sensitivity map size differs from the grid".into(),
            ));
        }
        if sensitivities
            .iter()
            .flatten()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(GsvsError::invalid(
                "sensitivities contain non-finite values",
            ));
        }
        if channel_cov.shape() != (c, c) {
            return Err(GsvsError::DimensionMismatch(format!(
                "channel covariance is {:?}, expected {c}x{c}",
                channel_cov.shape()
            )));
        }
        if !crate::linalg::is_hermitian(&channel_cov, 1e-12) {
            return Err(GsvsError::invalid("channel covariance is not Hermitian"));
        }
        if cholesky_lower(&channel_cov).is_none() {
            return Err(GsvsError::Decomposition(
                "channel covariance is not positive definite".into(),
            ));
        }
        if encodings.is_empty() {
            return Err(GsvsError::invalid("at least one encoding is required"));
        }
        for e in &encodings {
            e.validate(dims)?;
        }
        match &schedule {
            Some(s) => {
                if s.is_empty() {
                    return Err(GsvsError::invalid("schedule is empty"));
                }
                for a in 0..encodings.len() {
                    if !s.contains(&a) {
                        return Err(GsvsError::invalid(format!(
                            "encoding {a} never appears in the schedule"
                        )));
                    }
                }
                if let Some(bad) = s.iter().find(|&&a| a >= encodings.len()) {
                    return Err(GsvsError::invalid(format!(
                        "schedule refers to unknown encoding {bad}"
                    )));
                }
            }
            None if encodings.len() > 1 => {
                return Err(GsvsError::invalid(
                    "several encodings need a volume schedule",
                ));
            }
            None => {}
        }
        Ok(Self {
            dims,
            spacing,
            sensitivities,
            channel_cov,
            encodings,
            schedule,
        })
    }

    pub fn case(&self) -> Case {
        if self.schedule.is_some() {
            Case::Inter
        } else if self.encodings[0].partial_fourier.is_some() {
            Case::Half
        } else if self.encodings[0].undersampling > 1 {
            Case::Under
        } else {
            Case::Full
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn n_coils(&self) -> usize {
        self.sensitivities.len()
    }

    pub fn sensitivities(&self) -> &[Vec<C64>] {
        &self.sensitivities
    }

    pub fn channel_cov(&self) -> &CMatrix {
        &self.channel_cov
    }

    pub fn encodings(&self) -> &[Encoding] {
        &self.encodings
    }

    pub fn schedule(&self) -> Option<&[usize]> {
        self.schedule.as_deref()
    }

    /// Encoding index used for volume `n` of an `n_volumes` acquisition.
    pub fn encoding_of(&self, n: usize) -> usize {
        self.schedule.as_ref().map_or(0, |s| s[n])
    }

    pub fn check_volume_count(&self, n_volumes: usize) -> Result<()> {
        match &self.schedule {
            Some(s) if s.len() != n_volumes => Err(GsvsError::DimensionMismatch(format!(
                "schedule covers {} volumes, data has {n_volumes}",
                s.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Channel whitening `L^-1` with `L L^H = Lambda_z`.
    pub fn channel_whitener(&self) -> Result<CMatrix> {
        let l = cholesky_lower(&self.channel_cov).ok_or_else(|| {
            GsvsError::Decomposition("channel covariance is not positive definite".into())
        })?;
        lower_inverse(&l)
    }

    /// Sensitivities after channel whitening.
    pub fn whitened_sensitivities(&self) -> Result<Vec<Vec<C64>>> {
        let w = self.channel_whitener()?;
        Ok(mix_channels(&w, &self.sensitivities))
    }
}

fn mix_channels(w: &CMatrix, chans: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let c = chans.len();
    let len = chans[0].len();
    let mut out = vec![vec![C64::new(0.0, 0.0); len]; c];
    for (i, o) in out.iter_mut().enumerate() {
        for j in 0..c {
            let wij = w[(i, j)];
            if wij == C64::new(0.0, 0.0) {
                continue;
            }
            for (dst, src) in o.iter_mut().zip(&chans[j]) {
                *dst += wij * src;
            }
        }
    }
    out
}

/// Multi-coil hybrid-space samples of one volume on its reduced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KVolume {
    pub dims: [usize; 3],
    pub coils: Vec<Vec<C64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSpace {
    pub volumes: Vec<KVolume>,
}

impl KSpace {
    pub fn add(&self, other: &KSpace) -> Result<KSpace> {
        if self.volumes.len() != other.volumes.len() {
            return Err(GsvsError::DimensionMismatch(
                "k-space volume counts differ".into(),
            ));
        }
        let mut out = self.clone();
        for (a, b) in out.volumes.iter_mut().zip(&other.volumes) {
            if a.dims != b.dims || a.coils.len() != b.coils.len() {
                return Err(GsvsError::DimensionMismatch("k-space grids differ".into()));
            }
            for (ca, cb) in a.coils.iter_mut().zip(&b.coils) {
                ca.iter_mut().zip(cb).for_each(|(x, y)| *x += y);
            }
        }
        Ok(out)
    }
}

/// Apply the channel whitening `Upsilon_z` to every sample; returns the
/// whitened data and the whitened sensitivities.
pub fn whiten_channels(z: &KSpace, model: &EncodingModel) -> Result<(KSpace, Vec<Vec<C64>>)> {
    let w = model.channel_whitener()?;
    let volumes = z
        .volumes
        .iter()
        .map(|v| {
            if v.coils.len() != model.n_coils() {
                return Err(GsvsError::DimensionMismatch(format!(
                    "{} coil channels, model has {}",
                    v.coils.len(),
                    model.n_coils()
                )));
            }
            Ok(KVolume {
                dims: v.dims,
                coils: mix_channels(&w, &v.coils),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((KSpace { volumes }, mix_channels(&w, &model.sensitivities)))
}

/// Noise-free samples of one volume under encoding `a`, using the given
/// sensitivities (raw for physical data, whitened for whitened data).
pub fn encode_volume(
    model: &EncodingModel,
    sens: &[Vec<C64>],
    x: &[C64],
    a: usize,
) -> Result<KVolume> {
    let dims = model.dims;
    let q: usize = dims.iter().product();
    if x.len() != q {
        return Err(GsvsError::DimensionMismatch(
            "volume size differs from the encoding grid".into(),
        ));
    }
    let enc = model
        .encodings
        .get(a)
        .ok_or_else(|| GsvsError::invalid(format!("unknown encoding {a}")))?;
    let axis = enc.pe_axis;
    let u = enc.undersampling;
    let rdims = enc.reduced_dims(dims);
    let rq: usize = rdims.iter().product();
    let st = strides(dims);
    let rst = strides(rdims);
    let gain = (u as f64).sqrt();
    let coils = sens
        .iter()
        .map(|s| {
            let mut img: Vec<C64> = s.iter().zip(x).map(|(a, b)| a * b).collect();
            dft_along_axis(&mut img, dims, axis, Direction::Forward);
            let mut out = vec![C64::new(0.0, 0.0); rq];
            for (r, o) in out.iter_mut().enumerate() {
                let c = voxel_coords(rdims, r);
                let mut full = c;
                full[axis] = c[axis] * u;
                let idx = full[0] * st[0] + full[1] * st[1] + full[2] * st[2];
                *o = img[idx] * gain;
            }
            debug_assert_eq!(rst[0], 1);
            out
        })
        .collect();
    Ok(KVolume { dims: rdims, coils })
}

/// Unit-variance white channel noise on each volume's reduced grid.
pub fn white_kspace_noise<R: Rng + ?Sized>(
    model: &EncodingModel,
    n_volumes: usize,
    rng: &mut R,
) -> KSpace {
    let volumes = (0..n_volumes)
        .map(|n| {
            let rdims = model.encodings[model.encoding_of(n)].reduced_dims(model.dims);
            let rq: usize = rdims.iter().product();
            let coils = (0..model.n_coils())
                .map(|_| (0..rq).map(|_| complex_normal(rng)).collect())
                .collect();
            KVolume { dims: rdims, coils }
        })
        .collect();
    KSpace { volumes }
}

/// Channel noise with covariance `Lambda_z` (unwhitened).
pub fn channel_kspace_noise<R: Rng + ?Sized>(
    model: &EncodingModel,
    n_volumes: usize,
    rng: &mut R,
) -> Result<KSpace> {
    let l = cholesky_lower(&model.channel_cov).ok_or_else(|| {
        GsvsError::Decomposition("channel covariance is not positive definite".into())
    })?;
    let white = white_kspace_noise(model, n_volumes, rng);
    Ok(KSpace {
        volumes: white
            .volumes
            .into_iter()
            .map(|v| KVolume {
                dims: v.dims,
                coils: mix_channels(&l, &v.coils),
            })
            .collect(),
    })
}

/// Per-encoding unfolding operators, precomputed from whitened sensitivities.
#[derive(Debug, Clone)]
pub struct SenseOperator {
    pub(crate) dims: [usize; 3],
    pub(crate) encodings: Vec<UnfoldPlan>,
    pub(crate) schedule: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub(crate) struct UnfoldPlan {
    pub(crate) encoding: Encoding,
    /// Per aliased group (line-major, then position in the reduced line):
    /// the unmixing matrix `(A^H A)^-1 A^H` and the covariance `(A^H A)^-1`.
    pub(crate) unmix: Vec<CMatrix>,
    pub(crate) group_cov: Vec<CMatrix>,
    /// Phase-encode spectral filter (partial Fourier), if any.
    pub(crate) filter: Option<Vec<f64>>,
}

impl UnfoldPlan {
    /// Voxel indices of aliased group `g`.
    pub(crate) fn group_voxels(&self, dims: [usize; 3], g: usize) -> Vec<usize> {
        let axis = self.encoding.pe_axis;
        let u = self.encoding.undersampling;
        let k = dims[axis] / u;
        let (line, p) = (g / k, g % k);
        let start = line_start(dims, axis, line);
        let s = strides(dims)[axis];
        (0..u).map(|j| start + (p + j * k) * s).collect()
    }
}

/// Linear index of the first voxel of line `line` along `axis`, with lines
/// numbered as in [`for_each_line`].
pub(crate) fn line_start(dims: [usize; 3], axis: usize, line: usize) -> usize {
    let (a, b) = other_axes(axis);
    let st = strides(dims);
    (line % dims[a]) * st[a] + (line / dims[a]) * st[b]
}

/// Line number and position along the line of voxel `q`.
pub(crate) fn line_of(dims: [usize; 3], axis: usize, q: usize) -> (usize, usize) {
    let c = voxel_coords(dims, q);
    let (a, b) = other_axes(axis);
    (c[a] + dims[a] * c[b], c[axis])
}

impl SenseOperator {
    pub fn new(model: &EncodingModel) -> Result<Self> {
        let sens = model.whitened_sensitivities()?;
        let dims = model.dims;
        let c = model.n_coils();
        let encodings = model
            .encodings
            .iter()
            .map(|enc| {
                let axis = enc.pe_axis;
                let u = enc.undersampling;
                let p = dims[axis];
                let k = p / u;
                let s = strides(dims)[axis];
                let n_lines = dims.iter().product::<usize>() / p;
                let mut unmix = Vec::with_capacity(n_lines * k);
                let mut group_cov = Vec::with_capacity(n_lines * k);
                for line in 0..n_lines {
                    let start = line_start(dims, axis, line);
                    for pos in 0..k {
                        let voxels: Vec<usize> =
                            (0..u).map(|j| start + (pos + j * k) * s).collect();
                        let a = CMatrix::from_fn(c, u, |ci, j| sens[ci][voxels[j]]);
                        let normal = a.adjoint() * &a;
                        let l = cholesky_lower(&normal).ok_or_else(|| {
                            GsvsError::IllConditionedEncoding {
                                group: voxels.clone(),
                            }
                        })?;
                        let linv = lower_inverse(&l)?;
                        let cov = linv.adjoint() * &linv;
                        unmix.push(&cov * a.adjoint());
                        group_cov.push(cov);
                    }
                }
                let filter = enc.partial_fourier.map(|pf| pf.weights(p)).transpose()?;
                Ok(UnfoldPlan {
                    encoding: *enc,
                    unmix,
                    group_cov,
                    filter,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            encodings,
            schedule: model.schedule.clone(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn encoding_of(&self, n: usize) -> usize {
        self.schedule.as_ref().map_or(0, |s| s[n])
    }

    /// Unfold one whitened volume acquired with encoding `a`.
    pub fn reconstruct_volume(&self, kv: &KVolume, a: usize) -> Result<Vec<C64>> {
        let plan = &self.encodings[a];
        let enc = plan.encoding;
        let rdims = enc.reduced_dims(self.dims);
        if kv.dims != rdims {
            return Err(GsvsError::DimensionMismatch(format!(
                "k-space grid {:?}, encoding expects {rdims:?}",
                kv.dims
            )));
        }
        let c = plan.unmix.first().map_or(0, |m| m.ncols());
        if kv.coils.len() != c {
            return Err(GsvsError::DimensionMismatch(format!(
                "{} coils, operator has {c}",
                kv.coils.len()
            )));
        }
        let axis = enc.pe_axis;
        let u = enc.undersampling;
        let k = rdims[axis];
        let aliased: Vec<Vec<C64>> = kv
            .coils
            .iter()
            .map(|z| {
                let mut img = z.clone();
                dft_along_axis(&mut img, rdims, axis, Direction::Inverse);
                img
            })
            .collect();
        let q: usize = self.dims.iter().product();
        let mut x = vec![C64::new(0.0, 0.0); q];
        let s_full = strides(self.dims)[axis];
        let mut g = 0;
        let mut rhs = vec![C64::new(0.0, 0.0); c];
        for_each_line(rdims, axis, |rstart, rstride| {
            let line = g / k;
            let full_start = line_start(self.dims, axis, line);
            for pos in 0..k {
                for (ci, r) in rhs.iter_mut().enumerate() {
                    *r = aliased[ci][rstart + pos * rstride];
                }
                let m = &plan.unmix[g];
                for j in 0..u {
                    let mut acc = C64::new(0.0, 0.0);
                    for (ci, r) in rhs.iter().enumerate() {
                        acc += m[(j, ci)] * r;
                    }
                    x[full_start + (pos + j * k) * s_full] = acc;
                }
                g += 1;
            }
        });
        if let Some(w) = &plan.filter {
            apply_spectral_filter(&mut x, self.dims, axis, w);
        }
        Ok(x)
    }
}

/// `x <- F^H diag(w) F x` along `axis`.
pub fn apply_spectral_filter(x: &mut [C64], dims: [usize; 3], axis: usize, w: &[f64]) {
    dft_along_axis(x, dims, axis, Direction::Forward);
    let st = strides(dims)[axis];
    for_each_line(dims, axis, |start, _| {
        for (k, wk) in w.iter().enumerate() {
            x[start + k * st] *= wk;
        }
    });
    dft_along_axis(x, dims, axis, Direction::Inverse);
}

/// SENSE reconstruction of whitened k-space, one volume per k-space volume.
pub fn sense_reconstruct(
    z: &KSpace,
    op: &SenseOperator,
    spacing: [f64; 3],
) -> Result<ComplexVolumeSet> {
    if let Some(s) = &op.schedule {
        if s.len() != z.volumes.len() {
            return Err(GsvsError::DimensionMismatch(format!(
                "schedule covers {} volumes, k-space has {}",
                s.len(),
                z.volumes.len()
            )));
        }
    }
    let mut data = Vec::with_capacity(z.volumes.len() * op.dims.iter().product::<usize>());
    for (n, kv) in z.volumes.iter().enumerate() {
        data.extend(op.reconstruct_volume(kv, op.encoding_of(n))?);
    }
    ComplexVolumeSet::new(op.dims, spacing, z.volumes.len(), data)
}

/// Gaussian coil profiles centred on a ring around the FOV, each with its own
/// constant phase and a mild linear phase.
pub fn synthetic_sensitivities(dims: [usize; 3], n_coils: usize) -> Vec<Vec<C64>> {
    let q: usize = dims.iter().product();
    let norm = |i: usize, a: usize| {
        if dims[a] > 1 {
            2.0 * i as f64 / (dims[a] - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    (0..n_coils)
        .map(|c| {
            let theta = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
            let (cx, cy) = (1.2 * theta.cos(), 1.2 * theta.sin());
            (0..q)
                .map(|v| {
                    let p = voxel_coords(dims, v);
                    let (x, y, z) = (norm(p[0], 0), norm(p[1], 1), norm(p[2], 2));
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2) + 0.25 * z * z;
                    let mag = (-d2 / 2.0).exp();
                    C64::from_polar(mag, theta + 0.3 * (x * theta.sin() - y * theta.cos()))
                })
                .collect()
        })
        .collect()
}

/// Channel covariance with correlation `rho^|i-j|` and unit variances.
pub fn correlated_channel_cov(n_coils: usize, rho: f64) -> CMatrix {
    CMatrix::from_fn(n_coils, n_coils, |i, j| {
        C64::new(rho.powi((i as i32 - j as i32).abs()), 0.0)
    })
}

/// Serializable description of a synthetic acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing_mm: [f64; 3],
    #[serde(default = "default_coils")]
    pub coils: usize,
    #[serde(default)]
    pub coil_correlation: f64,
    #[serde(default = "default_encodings")]
    pub encodings: Vec<Encoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<usize>>,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

fn default_coils() -> usize {
    4
}

fn default_encodings() -> Vec<Encoding> {
    vec![Encoding::default()]
}

impl EncodingSpec {
    pub fn build(&self) -> Result<EncodingModel> {
        if !(0.0..1.0).contains(&self.coil_correlation.abs()) {
            return Err(GsvsError::invalid("coil correlation must lie in (-1, 1)"));
        }
        EncodingModel::new(
            self.dims,
            self.spacing_mm,
            synthetic_sensitivities(self.dims, self.coils),
            correlated_channel_cov(self.coils, self.coil_correlation),
            self.encodings.clone(),
            self.schedule.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_coil(dims: [usize; 3], enc: Encoding) -> EncodingModel {
        let q = dims.iter().product();
        EncodingModel::new(
            dims,
            [1.0; 3],
            vec![vec![C64::new(1.0, 0.0); q]],
            CMatrix::identity(1, 1),
            vec![enc],
            None,
        )
        .unwrap()
    }

    #[test]
    fn full_single_coil_round_trip() {
        let dims = [4, 6, 2];
        let m = single_coil(dims, Encoding::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<C64> = (0..48).map(|_| complex_normal(&mut rng)).collect();
        let z = KSpace {
            volumes: vec![encode_volume(&m, m.sensitivities(), &x, 0).unwrap()],
        };
        let op = SenseOperator::new(&m).unwrap();
        let y = sense_reconstruct(&z, &op, [1.0; 3]).unwrap();
        for (a, b) in y.data().iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_fill_weights() {
        let pf = PartialFourier {
            fraction: 0.75,
            filter: PfKind::ZeroFill,
            flipped: false,
        };
        let w = pf.weights(16).unwrap();
        // harmonics -8..-5 are skipped
        let skipped: Vec<i64> = (0..16)
            .filter(|&k| w[k] == 0.0)
            .map(|k| signed_harmonic(k, 16))
            .collect();
        assert_eq!(skipped, vec![-8, -7, -6, -5]);
        let flipped = PartialFourier {
            flipped: true,
            ..pf
        }
        .weights(16)
        .unwrap();
        let skipped: Vec<i64> = (0..16)
            .filter(|&k| flipped[k] == 0.0)
            .map(|k| signed_harmonic(k, 16))
            .collect();
        assert_eq!(skipped, vec![4, 5, 6, 7]);
        let ramp = PartialFourier {
            filter: PfKind::Ramp,
            ..pf
        }
        .weights(16)
        .unwrap();
        assert!(ramp.iter().all(|&g| (0.0..=2.0).contains(&g)));
        assert_eq!(ramp[0], 1.0);
    }

    #[test]
    fn orthogonal_coils_unfold_exactly() {
        let dims = [1, 4, 1];
        let s0 = vec![
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ];
        let s1 = vec![
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
        ];
        let enc = Encoding {
            pe_axis: 1,
            undersampling: 2,
            partial_fourier: None,
        };
        let m = EncodingModel::new(
            dims,
            [1.0; 3],
            vec![s0, s1],
            CMatrix::identity(2, 2),
            vec![enc],
            None,
        )
        .unwrap();
        let x = vec![
            C64::new(1.0, 2.0),
            C64::new(-3.0, 0.5),
            C64::new(0.25, 0.0),
            C64::new(0.0, -1.0),
        ];
        let z = KSpace {
            volumes: vec![encode_volume(&m, m.sensitivities(), &x, 0).unwrap()],
        };
        let y = sense_reconstruct(&z, &SenseOperator::new(&m).unwrap(), [1.0; 3]).unwrap();
        for (a, b) in y.data().iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn collinear_coils_are_ill_conditioned() {
        let dims = [1, 4, 1];
        let s = vec![C64::new(1.0, 0.0); 4];
        let enc = Encoding {
            pe_axis: 1,
            undersampling: 2,
            partial_fourier: None,
        };
        let m = EncodingModel::new(
            dims,
            [1.0; 3],
            vec![s.clone(), s],
            CMatrix::identity(2, 2),
            vec![enc],
            None,
        )
        .unwrap();
        match SenseOperator::new(&m) {
            Err(GsvsError::IllConditionedEncoding { group }) => assert_eq!(group, vec![0, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_channel_whitening() {
        let dims = [2, 2, 1];
        let q = 4;
        let m = EncodingModel::new(
            dims,
            [1.0; 3],
            vec![vec![C64::new(1.0, 0.0); q]],
            CMatrix::from_element(1, 1, C64::new(4.0, 0.0)),
            vec![Encoding::default()],
            None,
        )
        .unwrap();
        let z = KSpace {
            volumes: vec![KVolume {
                dims,
                coils: vec![vec![C64::new(2.0, -4.0); q]],
            }],
        };
        let (w, s) = whiten_channels(&z, &m).unwrap();
        assert_eq!(w.volumes[0].coils[0][0], C64::new(1.0, -2.0));
        assert_eq!(s[0][0], C64::new(0.5, 0.0));
    }

    #[test]
    fn schedule_rules() {
        let dims = [2, 4, 1];
        let q = 8;
        let mk = |encs: Vec<Encoding>, sched: Option<Vec<usize>>| {
            EncodingModel::new(
                dims,
                [1.0; 3],
                vec![vec![C64::new(1.0, 0.0); q]],
                CMatrix::identity(1, 1),
                encs,
                sched,
            )
        };
        let e = Encoding::default();
        assert!(mk(vec![e, e], None).is_err());
        assert!(mk(vec![e, e], Some(vec![0, 0])).is_err());
        assert!(mk(vec![e, e], Some(vec![0, 2])).is_err());
        assert_eq!(
            mk(vec![e, e], Some(vec![1, 0, 1])).unwrap().case(),
            Case::Inter
        );
        let bad = Encoding {
            undersampling: 3,
            ..e
        };
        assert!(mk(vec![bad], None).is_err());
    }
}
