//! Complex multi-volume container on a shared 3-D grid.

use crate::error::{GsvsError, Result};
use crate::linalg::C64;

/// `N` complex volumes sharing one grid. Data is stored x-fastest with the
/// volume index slowest: `data[x + X*(y + Y*(z + Z*n))]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolumeSet {
    dims: [usize; 3],
    spacing: [f64; 3],
    n_volumes: usize,
    data: Vec<C64>,
}

impl ComplexVolumeSet {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        n_volumes: usize,
        data: Vec<C64>,
    ) -> Result<Self> {
        validate_grid(dims, spacing)?;
        if n_volumes == 0 {
            return Err(GsvsError::invalid("volume set needs at least one volume"));
        }
        let expected = dims.iter().product::<usize>() * n_volumes;
        if data.len() != expected {
            return Err(GsvsError::DimensionMismatch(format!(
                "data length {} does not match {}x{}x{}x{} = {expected}",
                data.len(),
                dims[0],
                dims[1],
                dims[2],
                n_volumes
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(GsvsError::invalid("volume data contains non-finite values"));
        }
        Ok(Self {
            dims,
            spacing,
            n_volumes,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], n_volumes: usize) -> Result<Self> {
        let len = dims.iter().product::<usize>() * n_volumes;
        Self::new(dims, spacing, n_volumes, vec![C64::new(0.0, 0.0); len])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn n_volumes(&self) -> usize {
        self.n_volumes
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, voxel: usize, volume: usize) -> C64 {
        self.data[voxel + self.n_voxels() * volume]
    }

    #[inline]
    pub fn set(&mut self, voxel: usize, volume: usize, value: C64) {
        let q = self.n_voxels();
        self.data[voxel + q * volume] = value;
    }

    pub fn volume(&self, n: usize) -> &[C64] {
        let q = self.n_voxels();
        &self.data[n * q..(n + 1) * q]
    }

    pub fn volume_mut(&mut self, n: usize) -> &mut [C64] {
        let q = self.n_voxels();
        &mut self.data[n * q..(n + 1) * q]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.dims == other.dims && self.n_volumes == other.n_volumes
    }

    /// New set holding the listed volumes, in the given order.
    pub fn select_volumes(&self, volumes: &[usize]) -> Result<Self> {
        if let Some(&bad) = volumes.iter().find(|&&n| n >= self.n_volumes) {
            return Err(GsvsError::invalid(format!(
                "volume index {bad} out of range"
            )));
        }
        let mut data = Vec::with_capacity(volumes.len() * self.n_voxels());
        for &n in volumes {
            data.extend_from_slice(self.volume(n));
        }
        Self::new(self.dims, self.spacing, volumes.len(), data)
    }

    /// Write the volumes of `part` into positions `volumes` of `self`.
    pub fn scatter_volumes(&mut self, part: &Self, volumes: &[usize]) -> Result<()> {
        if part.dims != self.dims || part.n_volumes != volumes.len() {
            return Err(GsvsError::DimensionMismatch(
                "scatter target does not match".into(),
            ));
        }
        for (k, &n) in volumes.iter().enumerate() {
            self.volume_mut(n).copy_from_slice(part.volume(k));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= factor);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(GsvsError::DimensionMismatch(
                "cannot add volume sets on different grids".into(),
            ));
        }
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(out)
    }
}

pub(crate) fn validate_grid(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(GsvsError::invalid(format!(
            "grid dimensions must be positive, got {dims:?}"
        )));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(GsvsError::invalid(format!(
            "voxel spacing must be positive, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Voxel coordinates of linear index `q`.
#[inline]
pub fn voxel_coords(dims: [usize; 3], q: usize) -> [usize; 3] {
    let x = q % dims[0];
    let y = (q / dims[0]) % dims[1];
    let z = q / (dims[0] * dims[1]);
    [x, y, z]
}

#[inline]
pub fn linear_index(dims: [usize; 3], c: [usize; 3]) -> usize {
    c[0] + dims[0] * (c[1] + dims[1] * c[2])
}
