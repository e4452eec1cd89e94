//! Reconstructed-noise covariance: propagation, patch marginals, whitening
//! and on-disk form.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::encoding::{
    line_of, line_start, Case, Encoding, EncodingModel, PartialFourier, SenseOperator, UnfoldPlan,
};
use crate::cvol::{read_cvol, write_cvol};
use crate::error::{GsvsError, Result};
use crate::fourier::strides;
use crate::linalg::{cholesky_lower, is_hermitian, lower_inverse, CMatrix, C64};
use crate::patch::{CasoratiMatrix, PatchTable};
use crate::volume::{validate_grid, ComplexVolumeSet};

/// Spatial covariance of one encoding's reconstructed noise. Voxels on
/// different phase-encode lines are uncorrelated in every variant.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialCovariance {
    /// Independent voxels with the given variances.
    Diagonal { variances: Vec<f64> },
    /// Correlation only inside aliased groups; `groups[line * K + pos]` is the
    /// `U x U` covariance of voxels `pos, pos + K, ...` on that line.
    Overlap {
        axis: usize,
        undersampling: usize,
        groups: Vec<CMatrix>,
    },
    /// Dense `P x P` covariance per phase-encode line.
    Lines { axis: usize, blocks: Vec<CMatrix> },
}

impl SpatialCovariance {
    fn validate(&self, dims: [usize; 3]) -> Result<()> {
        let q: usize = dims.iter().product();
        let check_axis = |axis: usize| {
            if axis > 2 {
                Err(GsvsError::invalid(format!("axis {axis} out of range")))
            } else {
                Ok(())
            }
        };
        match self {
            SpatialCovariance::Diagonal { variances } => {
                if variances.len() != q {
                    return Err(GsvsError::DimensionMismatch(
                        "variance map size differs from the grid".into(),
                    ));
                }
                if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(GsvsError::invalid(
                        "variances must be finite and non-negative",
                    ));
                }
            }
            SpatialCovariance::Overlap {
                axis,
                undersampling,
                groups,
            } => {
                check_axis(*axis)?;
                let u = *undersampling;
                if u == 0 || dims[*axis] % u != 0 || groups.len() * u != q {
                    return Err(GsvsError::DimensionMismatch(
                        "overlap groups do not tile the grid".into(),
                    ));
                }
                if groups
                    .iter()
                    .any(|g| g.shape() != (u, u) || !is_hermitian(g, 1e-9))
                {
                    return Err(GsvsError::invalid(
                        "overlap covariances must be Hermitian U x U",
                    ));
                }
            }
            SpatialCovariance::Lines { axis, blocks } => {
                check_axis(*axis)?;
                let p = dims[*axis];
                if blocks.len() * p != q {
                    return Err(GsvsError::DimensionMismatch(
                        "line blocks do not tile the grid".into(),
                    ));
                }
                if blocks
                    .iter()
                    .any(|b| b.shape() != (p, p) || !is_hermitian(b, 1e-9))
                {
                    return Err(GsvsError::invalid(
                        "line covariances must be Hermitian P x P",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Covariance between voxels `i` and `j`.
    pub fn entry(&self, dims: [usize; 3], i: usize, j: usize) -> C64 {
        match self {
            SpatialCovariance::Diagonal { variances } => {
                if i == j {
                    C64::new(variances[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            SpatialCovariance::Overlap {
                axis,
                undersampling,
                groups,
            } => {
                let k = dims[*axis] / undersampling;
                let (li, pi) = line_of(dims, *axis, i);
                let (lj, pj) = line_of(dims, *axis, j);
                if li != lj || pi % k != pj % k {
                    return C64::new(0.0, 0.0);
                }
                groups[li * k + pi % k][(pi / k, pj / k)]
            }
            SpatialCovariance::Lines { axis, blocks } => {
                let (li, pi) = line_of(dims, *axis, i);
                let (lj, pj) = line_of(dims, *axis, j);
                if li != lj {
                    return C64::new(0.0, 0.0);
                }
                blocks[li][(pi, pj)]
            }
        }
    }

    /// Marginal covariance of the listed voxels.
    pub fn restrict(&self, dims: [usize; 3], voxels: &[usize]) -> CMatrix {
        let m = voxels.len();
        let mut s = CMatrix::zeros(m, m);
        for a in 0..m {
            s[(a, a)] = self.entry(dims, voxels[a], voxels[a]);
            if matches!(self, SpatialCovariance::Diagonal { .. }) {
                continue;
            }
            for b in a + 1..m {
                let v = self.entry(dims, voxels[a], voxels[b]);
                s[(a, b)] = v;
                s[(b, a)] = v.conj();
            }
        }
        s
    }

    pub fn variance(&self, dims: [usize; 3], q: usize) -> f64 {
        self.entry(dims, q, q).re
    }

    fn scaled(&self, c: f64) -> Self {
        match self {
            SpatialCovariance::Diagonal { variances } => SpatialCovariance::Diagonal {
                variances: variances.iter().map(|v| v * c).collect(),
            },
            SpatialCovariance::Overlap {
                axis,
                undersampling,
                groups,
            } => SpatialCovariance::Overlap {
                axis: *axis,
                undersampling: *undersampling,
                groups: groups.iter().map(|g| g * C64::new(c, 0.0)).collect(),
            },
            SpatialCovariance::Lines { axis, blocks } => SpatialCovariance::Lines {
                axis: *axis,
                blocks: blocks.iter().map(|b| b * C64::new(c, 0.0)).collect(),
            },
        }
    }

    fn stationary_case(&self) -> Case {
        match self {
            SpatialCovariance::Diagonal { .. } => Case::Full,
            SpatialCovariance::Overlap { .. } => Case::Under,
            SpatialCovariance::Lines { .. } => Case::Half,
        }
    }
}

/// Reconstructed noise covariance: one spatial covariance per encoding and,
/// for interleaved acquisitions, the volume-to-encoding schedule. Volumes
/// are mutually independent.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    case: Case,
    dims: [usize; 3],
    spacing: [f64; 3],
    encodings: Vec<SpatialCovariance>,
    acquisition: Vec<Option<Encoding>>,
    schedule: Option<Vec<usize>>,
}

/// Covariance of a patch's rows for one group of volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct CovBlock {
    pub sigma: CMatrix,
    pub volumes: Vec<usize>,
}

/// Patch noise covariance: the volume sets of the blocks partition `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCovariance {
    pub blocks: Vec<CovBlock>,
}

impl PatchCovariance {
    pub fn stationary(sigma: CMatrix, n_volumes: usize) -> Self {
        Self {
            blocks: vec![CovBlock {
                sigma,
                volumes: (0..n_volumes).collect(),
            }],
        }
    }

    pub fn patch_size(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.sigma.nrows())
    }

    pub fn n_volumes(&self) -> usize {
        self.blocks.iter().map(|b| b.volumes.len()).sum()
    }

    /// `Some(c)` if every block equals `c * I` for one common `c`.
    pub fn common_white_level(&self) -> Option<f64> {
        let first = self.blocks.first()?;
        let c = first.sigma[(0, 0)].re;
        for b in &self.blocks {
            let m = b.sigma.nrows();
            for i in 0..m {
                for j in 0..m {
                    let want = if i == j { c } else { 0.0 };
                    if b.sigma[(i, j)] != C64::new(want, 0.0) {
                        return None;
                    }
                }
            }
        }
        Some(c)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| CovBlock {
                    sigma: &b.sigma * C64::new(c, 0.0),
                    volumes: b.volumes.clone(),
                })
                .collect(),
        }
    }

    /// Mean diagonal entry, weighted by block size.
    pub fn mean_variance(&self) -> f64 {
        let n = self.n_volumes().max(1) as f64;
        let m = self.patch_size().max(1) as f64;
        self.blocks
            .iter()
            .map(|b| b.sigma.diagonal().iter().map(|z| z.re).sum::<f64>() * b.volumes.len() as f64)
            .sum::<f64>()
            / (n * m)
    }
}

impl NoiseModel {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        encodings: Vec<SpatialCovariance>,
        schedule: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = encodings.len();
        Self::with_acquisition(dims, spacing, encodings, vec![None; n], schedule)
    }

    fn with_acquisition(
        dims: [usize; 3],
        spacing: [f64; 3],
        encodings: Vec<SpatialCovariance>,
        acquisition: Vec<Option<Encoding>>,
        schedule: Option<Vec<usize>>,
    ) -> Result<Self> {
        validate_grid(dims, spacing)?;
        if encodings.is_empty() {
            return Err(GsvsError::invalid(
                "noise model needs at least one encoding",
            ));
        }
        for e in &encodings {
            e.validate(dims)?;
        }
        match &schedule {
            Some(s) => {
                if let Some(bad) = s.iter().find(|&&a| a >= encodings.len()) {
                    return Err(GsvsError::invalid(format!(
                        "schedule refers to unknown encoding {bad}"
                    )));
                }
                if (0..encodings.len()).any(|a| !s.contains(&a)) {
                    return Err(GsvsError::invalid(
                        "every encoding must appear in the schedule",
                    ));
                }
            }
            None if encodings.len() > 1 => {
                return Err(GsvsError::invalid(
                    "several encodings need a volume schedule",
                ));
            }
            None => {}
        }
        let case = if schedule.is_some() {
            Case::Inter
        } else {
            encodings[0].stationary_case()
        };
        Ok(Self {
            case,
            dims,
            spacing,
            encodings,
            acquisition,
            schedule,
        })
    }

    /// White noise of variance `sigma2` at every voxel.
    pub fn white(dims: [usize; 3], spacing: [f64; 3], sigma2: f64) -> Result<Self> {
        let q = dims.iter().product();
        Self::new(
            dims,
            spacing,
            vec![SpatialCovariance::Diagonal {
                variances: vec![sigma2; q],
            }],
            None,
        )
    }

    pub fn zero(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::white(dims, spacing, 0.0)
    }

    pub fn case(&self) -> Case {
        self.case
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn encodings(&self) -> &[SpatialCovariance] {
        &self.encodings
    }

    pub fn schedule(&self) -> Option<&[usize]> {
        self.schedule.as_deref()
    }

    pub fn n_encodings(&self) -> usize {
        self.encodings.len()
    }

    /// Volumes acquired with encoding `a`.
    pub fn volumes_of(&self, a: usize, n_volumes: usize) -> Vec<usize> {
        match &self.schedule {
            Some(s) => (0..s.len()).filter(|&n| s[n] == a).collect(),
            None if a == 0 => (0..n_volumes).collect(),
            None => Vec::new(),
        }
    }

    pub fn check_volume_count(&self, n_volumes: usize) -> Result<()> {
        match &self.schedule {
            Some(s) if s.len() != n_volumes => Err(GsvsError::DimensionMismatch(format!(
                "noise schedule covers {} volumes, data has {n_volumes}",
                s.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Same structure with every covariance multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            encodings: self.encodings.iter().map(|e| e.scaled(c)).collect(),
            ..self.clone()
        }
    }

    /// Stationary model of a single encoding, as used when each encoding's
    /// volumes are processed separately.
    pub fn restrict_to_encoding(&self, a: usize) -> Result<Self> {
        let e = self
            .encodings
            .get(a)
            .ok_or_else(|| GsvsError::invalid(format!("unknown encoding {a}")))?;
        Self::with_acquisition(
            self.dims,
            self.spacing,
            vec![e.clone()],
            vec![self.acquisition[a]],
            None,
        )
    }

    /// Per-voxel noise variance of encoding `a`.
    pub fn variance_map(&self, a: usize) -> Vec<f64> {
        let q = self.dims.iter().product();
        (0..q)
            .map(|v| self.encodings[a].variance(self.dims, v))
            .collect()
    }

    /// Marginal covariance of a patch: one block per encoding present.
    pub fn local_covariance(
        &self,
        table: &PatchTable,
        patch_id: usize,
        n_volumes: usize,
    ) -> Result<PatchCovariance> {
        if table.dims() != self.dims {
            return Err(GsvsError::DimensionMismatch(format!(
                "patch grid {:?} differs from noise grid {:?}",
                table.dims(),
                self.dims
            )));
        }
        if patch_id >= table.len() {
            return Err(GsvsError::invalid(format!("patch {patch_id} out of range")));
        }
        self.check_volume_count(n_volumes)?;
        let members = table.members(patch_id);
        let blocks = (0..self.encodings.len())
            .map(|a| CovBlock {
                sigma: self.encodings[a].restrict(self.dims, members),
                volumes: self.volumes_of(a, n_volumes),
            })
            .filter(|b| !b.volumes.is_empty())
            .collect();
        Ok(PatchCovariance { blocks })
    }
}

/// Analytic covariance of SENSE-reconstructed unit white channel noise.
pub fn propagate_noise(model: &EncodingModel) -> Result<NoiseModel> {
    let op = SenseOperator::new(model)?;
    let dims = model.dims();
    let encodings = op
        .encodings
        .iter()
        .map(|plan| spatial_from_plan(dims, plan))
        .collect::<Result<Vec<_>>>()?;
    let acquisition = model.encodings().iter().copied().map(Some).collect();
    NoiseModel::with_acquisition(
        dims,
        model.spacing(),
        encodings,
        acquisition,
        model.schedule().map(<[usize]>::to_vec),
    )
}

fn spatial_from_plan(dims: [usize; 3], plan: &UnfoldPlan) -> Result<SpatialCovariance> {
    let axis = plan.encoding.pe_axis;
    let u = plan.encoding.undersampling;
    let p = dims[axis];
    let k = p / u;
    match &plan.filter {
        None if u == 1 => {
            let q = dims.iter().product();
            let mut variances = vec![0.0; q];
            for (g, cov) in plan.group_cov.iter().enumerate() {
                variances[plan.group_voxels(dims, g)[0]] = cov[(0, 0)].re;
            }
            Ok(SpatialCovariance::Diagonal { variances })
        }
        None => Ok(SpatialCovariance::Overlap {
            axis,
            undersampling: u,
            groups: plan.group_cov.clone(),
        }),
        Some(w) => {
            let g = filter_matrix(w);
            let n_lines = plan.group_cov.len() / k;
            let blocks = (0..n_lines)
                .map(|line| {
                    let mut b = CMatrix::zeros(p, p);
                    for pos in 0..k {
                        let cov = &plan.group_cov[line * k + pos];
                        for j in 0..u {
                            for l in 0..u {
                                b[(pos + j * k, pos + l * k)] = cov[(j, l)];
                            }
                        }
                    }
                    let mut s = &g * b * g.adjoint();
                    symmetrize(&mut s);
                    s
                })
                .collect();
            Ok(SpatialCovariance::Lines { axis, blocks })
        }
    }
}

/// `F^H diag(w) F` for the unitary `P`-point DFT.
pub fn filter_matrix(w: &[f64]) -> CMatrix {
    let p = w.len();
    let mut kernel = vec![C64::new(0.0, 0.0); p];
    for (d, kv) in kernel.iter_mut().enumerate() {
        for (k, wk) in w.iter().enumerate() {
            let ang = 2.0 * std::f64::consts::PI * ((k * d) % p) as f64 / p as f64;
            *kv += C64::from_polar(*wk, ang);
        }
        *kv /= p as f64;
    }
    CMatrix::from_fn(p, p, |i, j| kernel[(i + p - j) % p])
}

fn symmetrize(s: &mut CMatrix) {
    let n = s.nrows();
    for i in 0..n {
        s[(i, i)].im = 0.0;
        for j in i + 1..n {
            let v = (s[(i, j)] + s[(j, i)].conj()) * 0.5;
            s[(i, j)] = v;
            s[(j, i)] = v.conj();
        }
    }
}

/// Result of row whitening `Y -> Upsilon_M Y`.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub matrix: CMatrix,
    /// `Upsilon_M = L^-1` with `L L^H = Sigma_M` (possibly ridge-regularized).
    pub whitener: CMatrix,
    /// `L`, the inverse of the whitener, used to map estimates back.
    pub unwhitener: CMatrix,
    pub regularized: bool,
}

pub const WHITEN_RIDGE: f64 = 1e-8;

fn whitening_factor(sigma: &CMatrix) -> Result<(CMatrix, bool)> {
    if let Some(l) = cholesky_lower(sigma) {
        return Ok((l, false));
    }
    let m = sigma.nrows();
    let tr: f64 = sigma.diagonal().iter().map(|z| z.re).sum();
    if !(tr > 0.0) {
        return Err(GsvsError::Domain("cannot whiten a zero covariance".into()));
    }
    let ridge = WHITEN_RIDGE * tr / m as f64;
    let reg = sigma + CMatrix::identity(m, m) * C64::new(ridge, 0.0);
    cholesky_lower(&reg)
        .map(|l| (l, true))
        .ok_or_else(|| GsvsError::Decomposition("covariance not positive semidefinite".into()))
}

/// Whiten the rows of `y` so that its row noise covariance becomes identity.
pub fn whiten_patch(y: &CMatrix, sigma: &CMatrix) -> Result<Whitened> {
    if sigma.shape() != (y.nrows(), y.nrows()) {
        return Err(GsvsError::DimensionMismatch(format!(
            "covariance {:?} for a patch with {} rows",
            sigma.shape(),
            y.nrows()
        )));
    }
    let (l, regularized) = whitening_factor(sigma)?;
    let whitener = lower_inverse(&l)?;
    Ok(Whitened {
        matrix: &whitener * y,
        whitener,
        unwhitener: l,
        regularized,
    })
}

/// Block-wise whitening: the columns of each volume block are whitened with
/// that block's own covariance.
pub fn whiten_patch_blocks(
    y: &CasoratiMatrix,
    cov: &PatchCovariance,
) -> Result<(CMatrix, Vec<Whitened>, bool)> {
    let mut out = y.entries.clone();
    let mut parts = Vec::with_capacity(cov.blocks.len());
    let mut flagged = false;
    for b in &cov.blocks {
        let cols = CMatrix::from_fn(y.entries.nrows(), b.volumes.len(), |i, j| {
            y.entries[(i, b.volumes[j])]
        });
        let w = whiten_patch(&cols, &b.sigma)?;
        flagged |= w.regularized;
        for (j, &n) in b.volumes.iter().enumerate() {
            out.set_column(n, &w.matrix.column(j));
        }
        parts.push(w);
    }
    Ok((out, parts, flagged))
}

/// Undo [`whiten_patch_blocks`] on an estimate.
pub fn unwhiten_patch_blocks(x: &CMatrix, cov: &PatchCovariance, parts: &[Whitened]) -> CMatrix {
    let mut out = x.clone();
    for (b, w) in cov.blocks.iter().zip(parts) {
        let cols = CMatrix::from_fn(x.nrows(), b.volumes.len(), |i, j| x[(i, b.volumes[j])]);
        let back = &w.unwhitener * cols;
        for (j, &n) in b.volumes.iter().enumerate() {
            out.set_column(n, &back.column(j));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CovKind {
    Diagonal,
    Overlap,
    Lines,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodingEntry {
    covariance: CovKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pe_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    undersampling: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partial_fourier: Option<PartialFourier>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDescriptor {
    case: Case,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<Vec<usize>>,
    encodings: Vec<EncodingEntry>,
}

fn sibling(base: &Path, name: &str) -> PathBuf {
    base.parent()
        .map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

impl NoiseModel {
    /// Write the JSON descriptor to `path` plus one auxiliary array per
    /// encoding next to it: a CVOL variance map (diagonal), a CVOL
    /// `[U, U, groups]` stack (overlap) or a coordinate-list binary of the
    /// non-zero covariance entries (lines).
    pub fn save(&self, path: &Path) -> Result<()> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("noise")
            .to_string();
        let mut entries = Vec::new();
        for (a, e) in self.encodings.iter().enumerate() {
            let acq = self.acquisition[a];
            let (covariance, name) = match e {
                SpatialCovariance::Diagonal { variances } => {
                    let name = format!("{stem}.enc{a}.json");
                    crate::cvol::write_real_map(
                        &sibling(path, &name),
                        self.dims,
                        self.spacing,
                        variances,
                    )?;
                    (CovKind::Diagonal, name)
                }
                SpatialCovariance::Overlap {
                    undersampling,
                    groups,
                    ..
                } => {
                    let name = format!("{stem}.enc{a}.json");
                    let u = *undersampling;
                    let mut data = Vec::with_capacity(u * u * groups.len());
                    for g in groups {
                        for c in 0..u {
                            for r in 0..u {
                                data.push(g[(r, c)]);
                            }
                        }
                    }
                    let vols = ComplexVolumeSet::new([u, u, groups.len()], [1.0; 3], 1, data)?;
                    write_cvol(&sibling(path, &name), &vols, None)?;
                    (CovKind::Overlap, name)
                }
                SpatialCovariance::Lines { axis, blocks } => {
                    let name = format!("{stem}.enc{a}.coo");
                    write_coo(&sibling(path, &name), self.dims, *axis, blocks)?;
                    (CovKind::Lines, name)
                }
            };
            let (pe_axis, undersampling) = match e {
                SpatialCovariance::Diagonal { .. } => {
                    (acq.map(|x| x.pe_axis), acq.map(|x| x.undersampling))
                }
                SpatialCovariance::Overlap {
                    axis,
                    undersampling,
                    ..
                } => (Some(*axis), Some(*undersampling)),
                SpatialCovariance::Lines { axis, .. } => {
                    (Some(*axis), acq.map(|x| x.undersampling))
                }
            };
            entries.push(EncodingEntry {
                covariance,
                pe_axis,
                undersampling,
                partial_fourier: acq.and_then(|x| x.partial_fourier),
                file: name,
            });
        }
        let desc = NoiseDescriptor {
            case: self.case,
            dims: self.dims,
            spacing_mm: self.spacing,
            schedule: self.schedule.clone(),
            encodings: entries,
        };
        fs::write(path, serde_json::to_string_pretty(&desc)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let desc: NoiseDescriptor = serde_json::from_str(&text)
            .map_err(|e| GsvsError::Format(format!("{}: {e}", path.display())))?;
        let dims = desc.dims;
        let mut encodings = Vec::new();
        let mut acquisition = Vec::new();
        for e in &desc.encodings {
            let aux = sibling(path, &e.file);
            let cov = match e.covariance {
                CovKind::Diagonal => {
                    let (v, _) = read_cvol(&aux)?;
                    if v.dims() != dims || v.n_volumes() != 1 {
                        return Err(GsvsError::DimensionMismatch(format!(
                            "{} does not match the grid",
                            aux.display()
                        )));
                    }
                    SpatialCovariance::Diagonal {
                        variances: v.data().iter().map(|z| z.re).collect(),
                    }
                }
                CovKind::Overlap => {
                    let axis = e
                        .pe_axis
                        .ok_or_else(|| GsvsError::Format("overlap entry without pe_axis".into()))?;
                    let (v, _) = read_cvol(&aux)?;
                    let [u, u2, n] = v.dims();
                    if u != u2 || Some(u) != e.undersampling {
                        return Err(GsvsError::Format(format!(
                            "{} is not a stack of U x U matrices",
                            aux.display()
                        )));
                    }
                    let groups = (0..n)
                        .map(|g| {
                            CMatrix::from_column_slice(u, u, &v.data()[g * u * u..(g + 1) * u * u])
                        })
                        .collect();
                    SpatialCovariance::Overlap {
                        axis,
                        undersampling: u,
                        groups,
                    }
                }
                CovKind::Lines => {
                    let axis = e
                        .pe_axis
                        .ok_or_else(|| GsvsError::Format("lines entry without pe_axis".into()))?;
                    SpatialCovariance::Lines {
                        axis,
                        blocks: read_coo(&aux, dims, axis)?,
                    }
                }
            };
            encodings.push(cov);
            acquisition.push(e.pe_axis.map(|pe_axis| Encoding {
                pe_axis,
                undersampling: e.undersampling.unwrap_or(1),
                partial_fourier: e.partial_fourier,
            }));
        }
        let nm =
            Self::with_acquisition(dims, desc.spacing_mm, encodings, acquisition, desc.schedule)?;
        if nm.case != desc.case {
            return Err(GsvsError::Format(format!(
                "descriptor case {:?} inconsistent with its covariances ({:?})",
                desc.case, nm.case
            )));
        }
        Ok(nm)
    }
}

/// Coordinate list of `(u32 row, u32 col, f32 re, f32 im)` records with
/// global voxel indices.
fn write_coo(path: &Path, dims: [usize; 3], axis: usize, blocks: &[CMatrix]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let s = strides(dims)[axis];
    for (line, b) in blocks.iter().enumerate() {
        let start = line_start(dims, axis, line);
        for c in 0..b.ncols() {
            for r in 0..b.nrows() {
                let v = b[(r, c)];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                w.write_all(&((start + r * s) as u32).to_le_bytes())?;
                w.write_all(&((start + c * s) as u32).to_le_bytes())?;
                w.write_all(&(v.re as f32).to_le_bytes())?;
                w.write_all(&(v.im as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_coo(path: &Path, dims: [usize; 3], axis: usize) -> Result<Vec<CMatrix>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(GsvsError::Format(format!(
            "{} is not a whole number of records",
            path.display()
        )));
    }
    let q: usize = dims.iter().product();
    let p = dims[axis];
    let mut blocks = vec![CMatrix::zeros(p, p); q / p];
    for rec in bytes.chunks_exact(16) {
        let word = |i: usize| [rec[i], rec[i + 1], rec[i + 2], rec[i + 3]];
        let row = u32::from_le_bytes(word(0)) as usize;
        let col = u32::from_le_bytes(word(4)) as usize;
        let v = C64::new(
            f32::from_le_bytes(word(8)) as f64,
            f32::from_le_bytes(word(12)) as f64,
        );
        if row >= q || col >= q {
            return Err(GsvsError::Format(format!(
                "voxel index out of range in {}",
                path.display()
            )));
        }
        let (lr, pr) = line_of(dims, axis, row);
        let (lc, pc) = line_of(dims, axis, col);
        if lr != lc {
            return Err(GsvsError::Format(format!(
                "entry couples different lines in {}",
                path.display()
            )));
        }
        blocks[lr][(pr, pc)] = v;
    }
    blocks.iter_mut().for_each(symmetrize);
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::encoding::{PartialFourier, PfKind};

    fn unit_model(dims: [usize; 3], sens: Vec<Vec<C64>>, enc: Encoding) -> EncodingModel {
        let c = sens.len();
        EncodingModel::new(
            dims,
            [1.0; 3],
            sens,
            CMatrix::identity(c, c),
            vec![enc],
            None,
        )
        .unwrap()
    }

    #[test]
    fn full_unit_sensitivity_is_unit_variance() {
        let dims = [3, 4, 2];
        let nm = propagate_noise(&unit_model(
            dims,
            vec![vec![C64::new(1.0, 0.0); 24]],
            Encoding::default(),
        ))
        .unwrap();
        assert_eq!(nm.case(), Case::Full);
        assert!(nm.variance_map(0).iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_under_is_identity() {
        let dims = [1, 4, 1];
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let sens = vec![vec![one, one, zero, zero], vec![zero, zero, one, one]];
        let enc = Encoding {
            pe_axis: 1,
            undersampling: 2,
            partial_fourier: None,
        };
        let nm = propagate_noise(&unit_model(dims, sens, enc)).unwrap();
        let SpatialCovariance::Overlap { groups, .. } = &nm.encodings()[0] else {
            panic!()
        };
        for g in groups {
            assert!((g - CMatrix::identity(2, 2)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_fill_matrix_is_projector() {
        let pf = PartialFourier {
            fraction: 0.75,
            filter: PfKind::ZeroFill,
            flipped: false,
        };
        let g = filter_matrix(&pf.weights(8).unwrap());
        assert!((&g * &g - &g).norm() < 1e-12);
        assert!((g.adjoint() - &g).norm() < 1e-12);
    }

    #[test]
    fn whitening_examples() {
        let y = CMatrix::from_row_slice(2, 1, &[C64::new(1.0, 0.0), C64::new(2.0, 0.0)]);
        let w = whiten_patch(&y, &CMatrix::identity(2, 2)).unwrap();
        assert_eq!(w.matrix, y);
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(4.0, 0.0),
        ]));
        let w = whiten_patch(&y, &d).unwrap();
        assert!((w.matrix[(1, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(!w.regularized);
        let singular = CMatrix::from_element(2, 2, C64::new(1.0, 0.0));
        assert!(whiten_patch(&y, &singular).unwrap().regularized);
    }

    #[test]
    fn white_patch_covariance() {
        let nm = NoiseModel::white([5, 5, 5], [1.0; 3], 2.5).unwrap();
        let t = PatchTable::build([5, 5, 5], [1.0; 3], 7, 2).unwrap();
        let pc = nm.local_covariance(&t, 3, 10).unwrap();
        assert_eq!(pc.blocks.len(), 1);
        assert_eq!(pc.common_white_level(), Some(2.5));
        assert_eq!(pc.blocks[0].volumes, (0..10).collect::<Vec<_>>());
    }
}
