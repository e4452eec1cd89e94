//! Spherical patch geometry, Casorati extraction and weighted assembly.

use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::linalg::{CMatrix, C64};
use crate::volume::{linear_index, validate_grid, voxel_coords, ComplexVolumeSet};

/// Sliding spherical patches: each center owns the `M` nearest in-FOV voxels
/// (Euclidean distance in mm, ties by ascending linear index).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTable {
    dims: [usize; 3],
    spacing: [f64; 3],
    stride: usize,
    patch_size: usize,
    centers: Vec<usize>,
    members: Vec<Vec<usize>>,
    distances: Vec<Vec<f64>>,
    lattice_len: usize,
}

/// Offsets of a ball, sorted by (squared distance, linear offset).
struct Ball {
    radius: f64,
    offsets: Vec<([i64; 3], f64)>,
}

impl Ball {
    fn new(dims: [usize; 3], spacing: [f64; 3], radius: f64) -> Self {
        let reach = |a: usize| ((radius / spacing[a]).floor() as i64).min(dims[a] as i64 - 1);
        let (rx, ry, rz) = (reach(0), reach(1), reach(2));
        let (x, y) = (dims[0] as i64, dims[1] as i64);
        let mut offsets = Vec::new();
        for dz in -rz..=rz {
            for dy in -ry..=ry {
                for dx in -rx..=rx {
                    let d2 = sq(dx as f64 * spacing[0])
                        + sq(dy as f64 * spacing[1])
                        + sq(dz as f64 * spacing[2]);
                    if d2 <= radius * radius {
                        offsets.push(([dx, dy, dz], d2));
                    }
                }
            }
        }
        let lin = |o: &[i64; 3]| o[0] + x * (o[1] + y * o[2]);
        offsets.sort_by(|a, b| a.1.total_cmp(&b.1).then(lin(&a.0).cmp(&lin(&b.0))));
        Self { radius, offsets }
    }

    /// Nearest `m` in-FOV voxels around `center`, or `None` if the ball is too small.
    fn nearest(&self, dims: [usize; 3], center: usize, m: usize) -> Option<(Vec<usize>, Vec<f64>)> {
        let c = voxel_coords(dims, center);
        let mut members = Vec::with_capacity(m);
        let mut dist = Vec::with_capacity(m);
        for (o, d2) in &self.offsets {
            let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
            if (0..3).all(|a| p[a] >= 0 && p[a] < dims[a] as i64) {
                members.push(linear_index(
                    dims,
                    [p[0] as usize, p[1] as usize, p[2] as usize],
                ));
                dist.push(d2.sqrt());
                if members.len() == m {
                    return Some((members, dist));
                }
            }
        }
        None
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Radius (mm) of a sphere holding `m` voxels of the given size.
pub fn equivalent_radius(m: usize, spacing: [f64; 3]) -> f64 {
    let vol = spacing[0] * spacing[1] * spacing[2];
    (3.0 * m as f64 * vol / (4.0 * std::f64::consts::PI)).cbrt()
}

impl PatchTable {
    /// Table on a stride-`T` lattice, extended with extra centers until every
    /// voxel belongs to some patch.
    pub fn build(
        dims: [usize; 3],
        spacing: [f64; 3],
        patch_size: usize,
        stride: usize,
    ) -> Result<Self> {
        Self::build_inner(dims, spacing, patch_size, stride, true)
    }

    /// Lattice centers only, without coverage repair. Used for spectra-only
    /// scans where assembly never happens.
    pub fn build_lattice(
        dims: [usize; 3],
        spacing: [f64; 3],
        patch_size: usize,
        stride: usize,
    ) -> Result<Self> {
        Self::build_inner(dims, spacing, patch_size, stride, false)
    }

    fn build_inner(
        dims: [usize; 3],
        spacing: [f64; 3],
        m: usize,
        stride: usize,
        repair: bool,
    ) -> Result<Self> {
        validate_grid(dims, spacing)?;
        let q = dims.iter().product::<usize>();
        if m == 0 || m > q {
            return Err(GsvsError::invalid(format!(
                "patch size {m} must lie in 1..={q}"
            )));
        }
        if stride == 0 {
            return Err(GsvsError::invalid("patch stride must be positive"));
        }
        let max_sp = spacing.iter().copied().fold(0.0, f64::max);
        let mut balls = vec![Ball::new(
            dims,
            spacing,
            1.5 * equivalent_radius(m, spacing) + max_sp,
        )];

        let mut table = Self {
            dims,
            spacing,
            stride,
            patch_size: m,
            centers: Vec::new(),
            members: Vec::new(),
            distances: Vec::new(),
            lattice_len: 0,
        };
        let mut add = |table: &mut Self, center: usize| {
            let mut k = 0;
            loop {
                if k == balls.len() {
                    let r = 2.0 * balls[k - 1].radius;
                    balls.push(Ball::new(dims, spacing, r));
                }
                if let Some((mem, dist)) = balls[k].nearest(dims, center, m) {
                    table.centers.push(center);
                    table.members.push(mem);
                    table.distances.push(dist);
                    return;
                }
                k += 1;
            }
        };
        for z in (0..dims[2]).step_by(stride) {
            for y in (0..dims[1]).step_by(stride) {
                for x in (0..dims[0]).step_by(stride) {
                    add(&mut table, linear_index(dims, [x, y, z]));
                }
            }
        }
        table.lattice_len = table.centers.len();
        if repair {
            let mut covered = vec![false; q];
            for mem in &table.members {
                mem.iter().for_each(|&v| covered[v] = true);
            }
            for v in 0..q {
                if !covered[v] {
                    add(&mut table, v);
                    let last = table.members.last().expect("just pushed");
                    last.iter().for_each(|&u| covered[u] = true);
                }
            }
        }
        Ok(table)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Number of centers that came from the regular lattice (the rest were
    /// appended to restore coverage).
    pub fn lattice_len(&self) -> usize {
        self.lattice_len
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    pub fn members(&self, patch_id: usize) -> &[usize] {
        &self.members[patch_id]
    }

    /// Distances (mm) of the members to the patch center, non-decreasing.
    pub fn distances(&self, patch_id: usize) -> &[f64] {
        &self.distances[patch_id]
    }

    /// Aspect ratio `M / N` for `n_volumes` measurements.
    pub fn aspect(&self, n_volumes: usize) -> f64 {
        self.patch_size as f64 / n_volumes as f64
    }

    pub fn equivalent_radius(&self) -> f64 {
        equivalent_radius(self.patch_size, self.spacing)
    }

    /// Number of patches covering each voxel.
    pub fn coverage(&self) -> Vec<usize> {
        let mut c = vec![0; self.dims.iter().product()];
        for mem in &self.members {
            mem.iter().for_each(|&v| c[v] += 1);
        }
        c
    }
}

/// Voxels along rows, volumes along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CasoratiMatrix {
    pub entries: CMatrix,
    pub center: usize,
    pub patch_id: usize,
}

pub fn extract_casorati(
    vols: &ComplexVolumeSet,
    table: &PatchTable,
    patch_id: usize,
) -> Result<CasoratiMatrix> {
    if patch_id >= table.len() {
        return Err(GsvsError::invalid(format!(
            "patch {patch_id} out of range ({} patches)",
            table.len()
        )));
    }
    if vols.dims() != table.dims() {
        return Err(GsvsError::DimensionMismatch(format!(
            "volume grid {:?} does not match patch table grid {:?}",
            vols.dims(),
            table.dims()
        )));
    }
    let members = table.members(patch_id);
    let n = vols.n_volumes();
    let entries = CMatrix::from_fn(members.len(), n, |m, k| vols.get(members[m], k));
    Ok(CasoratiMatrix {
        entries,
        center: table.centers()[patch_id],
        patch_id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightScheme {
    Uniform,
    InverseVariance,
    Gaussian { sigma_mm: f64 },
}

impl WeightScheme {
    /// Gaussian weights with sigma equal to half the equivalent patch radius.
    pub fn gaussian_for(table: &PatchTable) -> Self {
        WeightScheme::Gaussian {
            sigma_mm: table.equivalent_radius() / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::Gaussian { sigma_mm } if !(sigma_mm > 0.0 && sigma_mm.is_finite()) => {
                Err(GsvsError::invalid(format!(
                    "gaussian sigma must be positive, got {sigma_mm}"
                )))
            }
            _ => Ok(()),
        }
    }
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Streaming form of [`assemble_patches`]: estimates are accumulated as they
/// are added, so callers control the summation order.
#[derive(Debug, Clone)]
pub struct Assembler<'a> {
    table: &'a PatchTable,
    scheme: WeightScheme,
    n_volumes: usize,
    acc: Vec<C64>,
    wsum: Vec<f64>,
}

impl<'a> Assembler<'a> {
    pub fn new(table: &'a PatchTable, scheme: WeightScheme, n_volumes: usize) -> Result<Self> {
        scheme.validate()?;
        let q: usize = table.dims().iter().product();
        Ok(Self {
            table,
            scheme,
            n_volumes,
            acc: vec![C64::new(0.0, 0.0); q * n_volumes],
            wsum: vec![0.0; q],
        })
    }

    /// Add one estimate; `variance` is required for inverse-variance weights.
    pub fn add(&mut self, est: &CasoratiMatrix, variance: Option<f64>) -> Result<()> {
        let table = self.table;
        if est.patch_id >= table.len() {
            return Err(GsvsError::invalid(format!(
                "estimate refers to unknown patch {}",
                est.patch_id
            )));
        }
        let members = table.members(est.patch_id);
        let n = self.n_volumes;
        if est.entries.nrows() != members.len() || est.entries.ncols() != n {
            return Err(GsvsError::DimensionMismatch(format!(
                "estimate for patch {} is {}x{}, expected {}x{n}",
                est.patch_id,
                est.entries.nrows(),
                est.entries.ncols(),
                members.len()
            )));
        }
        let patch_w = match self.scheme {
            WeightScheme::InverseVariance => {
                let v = variance.ok_or_else(|| {
                    GsvsError::invalid("inverse-variance weights need per-patch variances")
                })?;
                1.0 / v.max(VARIANCE_FLOOR)
            }
            _ => 1.0,
        };
        let dist = table.distances(est.patch_id);
        let q = self.wsum.len();
        for (m, &voxel) in members.iter().enumerate() {
            let w = match self.scheme {
                WeightScheme::Gaussian { sigma_mm } => {
                    (-dist[m] * dist[m] / (2.0 * sigma_mm * sigma_mm)).exp()
                }
                _ => patch_w,
            };
            self.wsum[voxel] += w;
            for k in 0..n {
                self.acc[voxel + q * k] += est.entries[(m, k)] * w;
            }
        }
        Ok(())
    }

    /// Normalize by the accumulated weights.
    pub fn finish(mut self) -> Result<ComplexVolumeSet> {
        let q = self.wsum.len();
        for (voxel, &w) in self.wsum.iter().enumerate() {
            if !(w > 0.0) {
                return Err(GsvsError::Internal(format!(
                    "voxel {voxel} received no assembly weight"
                )));
            }
            for k in 0..self.n_volumes {
                self.acc[voxel + q * k] /= w;
            }
        }
        ComplexVolumeSet::new(
            self.table.dims(),
            self.table.spacing(),
            self.n_volumes,
            self.acc,
        )
    }
}

/// Weighted average of overlapping patch estimates, normalized per voxel so
/// the weights sum to one. Accumulation runs in ascending `patch_id` order
/// so the result does not depend on the order of `estimates`.
pub fn assemble_patches(
    estimates: &[CasoratiMatrix],
    table: &PatchTable,
    scheme: WeightScheme,
    per_patch_variance: Option<&[f64]>,
) -> Result<ComplexVolumeSet> {
    let Some(first) = estimates.first() else {
        return Err(GsvsError::invalid("no patch estimates to assemble"));
    };
    if let Some(v) = per_patch_variance {
        if v.len() != estimates.len() {
            return Err(GsvsError::DimensionMismatch(format!(
                "{} variances for {} estimates",
                v.len(),
                estimates.len()
            )));
        }
    }
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by_key(|&i| estimates[i].patch_id);
    let mut asm = Assembler::new(table, scheme, first.entries.ncols())?;
    for &i in &order {
        asm.add(&estimates[i], per_patch_variance.map(|v| v[i]))?;
    }
    asm.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_patches() {
        let t = PatchTable::build([3, 3, 3], [1.0; 3], 1, 1).unwrap();
        assert_eq!(t.len(), 27);
        for k in 0..27 {
            assert_eq!(t.members(k), &[t.centers()[k]]);
        }
    }

    #[test]
    fn unit_ball_is_center_plus_faces() {
        let t = PatchTable::build([5, 5, 5], [1.0; 3], 7, 1).unwrap();
        let c = linear_index([5, 5, 5], [2, 2, 2]);
        let k = t.centers().iter().position(|&x| x == c).unwrap();
        let mut got = t.members(k).to_vec();
        assert_eq!(got[0], c);
        got.sort();
        let mut want = vec![c, c - 1, c + 1, c - 5, c + 5, c - 25, c + 25];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PatchTable::build([2, 2, 2], [1.0; 3], 9, 1).is_err());
        assert!(PatchTable::build([2, 2, 2], [1.0; 3], 0, 1).is_err());
        assert!(PatchTable::build([2, 2, 2], [1.0; 3], 2, 0).is_err());
    }

    #[test]
    fn stride_lattice_is_repaired() {
        let t = PatchTable::build([5, 4, 3], [1.0, 1.0, 2.5], 2, 3).unwrap();
        assert!(t.len() > t.lattice_len());
        assert!(t.coverage().iter().all(|&c| c > 0));
        let lattice = PatchTable::build_lattice([5, 4, 3], [1.0, 1.0, 2.5], 2, 3).unwrap();
        assert_eq!(lattice.len(), lattice.lattice_len());
        assert_eq!(lattice.len(), 2 * 2 * 1);
    }

    #[test]
    fn uniform_average_of_two_patches() {
        let t = PatchTable::build([2, 1, 1], [1.0; 3], 2, 1).unwrap();
        assert_eq!(t.len(), 2);
        let e0 = CasoratiMatrix {
            entries: CMatrix::zeros(2, 1),
            center: t.centers()[0],
            patch_id: 0,
        };
        let e1 = CasoratiMatrix {
            entries: CMatrix::from_element(2, 1, C64::new(2.0, 0.0)),
            center: t.centers()[1],
            patch_id: 1,
        };
        let out = assemble_patches(&[e1, e0], &t, WeightScheme::Uniform, None).unwrap();
        assert_eq!(out.get(0, 0), C64::new(1.0, 0.0));
        assert_eq!(out.get(1, 0), C64::new(1.0, 0.0));
    }

    #[test]
    fn inverse_variance_requires_variances() {
        let t = PatchTable::build([2, 1, 1], [1.0; 3], 1, 1).unwrap();
        let e: Vec<_> = (0..2)
            .map(|k| CasoratiMatrix {
                entries: CMatrix::zeros(1, 1),
                center: t.centers()[k],
                patch_id: k,
            })
            .collect();
        assert!(assemble_patches(&e, &t, WeightScheme::InverseVariance, None).is_err());
        assert!(assemble_patches(&e, &t, WeightScheme::InverseVariance, Some(&[0.0, 1.0])).is_ok());
        assert!(assemble_patches(&e, &t, WeightScheme::Gaussian { sigma_mm: 0.0 }, None).is_err());
    }

    #[test]
    fn uncovered_voxel_is_internal_error() {
        let t = PatchTable::build([2, 1, 1], [1.0; 3], 1, 1).unwrap();
        let e = CasoratiMatrix {
            entries: CMatrix::zeros(1, 1),
            center: t.centers()[0],
            patch_id: 0,
        };
        assert!(matches!(
            assemble_patches(&[e], &t, WeightScheme::Uniform, None),
            Err(GsvsError::Internal(_))
        ));
    }
}
