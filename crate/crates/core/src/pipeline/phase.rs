//! Per-slice linear phase: estimation from the 2-D DFT peak, removal and
//! restoration.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::fourier::{dft_along_axis, signed_harmonic, Direction};
use crate::linalg::C64;
use crate::volume::ComplexVolumeSet;

/// Linear phase `2 pi (kx x / X + ky y / Y) + offset` for every (slice,
/// volume), indexed `z + Z * n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    pub dims: [usize; 3],
    pub n_volumes: usize,
    /// Integer harmonics (cycles per FOV) along x and y.
    pub ramps: Vec<[i64; 2]>,
    /// Offsets in (-pi, pi].
    pub offsets: Vec<f64>,
    /// Slices that were identically zero.
    pub flagged: Vec<bool>,
}

impl PhaseModel {
    pub fn trivial(dims: [usize; 3], n_volumes: usize) -> Self {
        let s = dims[2] * n_volumes;
        Self {
            dims,
            n_volumes,
            ramps: vec![[0, 0]; s],
            offsets: vec![0.0; s],
            flagged: vec![false; s],
        }
    }

    pub fn n_flagged(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    /// Unit phasor at in-plane position `(x, y)` of slice `s`.
    fn phasor(&self, s: usize, x: usize, y: usize) -> C64 {
        let [kx, ky] = self.ramps[s];
        let [nx, ny, _] = self.dims;
        let fx = (kx * x as i64).rem_euclid(nx as i64) as f64 / nx as f64;
        let fy = (ky * y as i64).rem_euclid(ny as i64) as f64 / ny as f64;
        C64::from_polar(1.0, 2.0 * PI * (fx + fy) + self.offsets[s])
    }

    fn apply(&self, vols: &ComplexVolumeSet, conjugate: bool) -> Result<ComplexVolumeSet> {
        if vols.dims() != self.dims || vols.n_volumes() != self.n_volumes {
            return Err(GsvsError::DimensionMismatch(
                "phase model does not match the volumes".into(),
            ));
        }
        let [nx, ny, nz] = self.dims;
        let mut out = vols.clone();
        let data = out.data_mut();
        for n in 0..self.n_volumes {
            for z in 0..nz {
                let s = z + nz * n;
                if self.ramps[s] == [0, 0] && self.offsets[s] == 0.0 {
                    continue;
                }
                for y in 0..ny {
                    for x in 0..nx {
                        let mut p = self.phasor(s, x, y);
                        if conjugate {
                            p = p.conj();
                        }
                        data[x + nx * (y + ny * (z + nz * n))] *= p;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Per slice and volume, the harmonic of the largest 2-D DFT magnitude and
/// the phase of that coefficient. All harmonics, DC included, are searched;
/// ties go to the first bin in x-fastest order.
pub fn estimate_linear_phase(vols: &ComplexVolumeSet) -> PhaseModel {
    let [nx, ny, nz] = vols.dims();
    let n_vol = vols.n_volumes();
    let mut model = PhaseModel::trivial(vols.dims(), n_vol);
    let plane = nx * ny;
    let mut buf = vec![C64::new(0.0, 0.0); plane];
    for n in 0..n_vol {
        let v = vols.volume(n);
        for z in 0..nz {
            let s = z + nz * n;
            buf.copy_from_slice(&v[z * plane..(z + 1) * plane]);
            if buf.iter().all(|c| *c == C64::new(0.0, 0.0)) {
                model.flagged[s] = true;
                continue;
            }
            dft_along_axis(&mut buf, [nx, ny, 1], 0, Direction::Forward);
            dft_along_axis(&mut buf, [nx, ny, 1], 1, Direction::Forward);
            let mut best = 0;
            for (k, c) in buf.iter().enumerate() {
                if c.norm_sqr() > buf[best].norm_sqr() {
                    best = k;
                }
            }
            model.ramps[s] = [
                signed_harmonic(best % nx, nx),
                signed_harmonic(best / nx, ny),
            ];
            let mut phi = buf[best].arg();
            if phi <= -PI {
                phi = PI;
            }
            model.offsets[s] = phi;
        }
    }
    model
}

/// Multiply by the conjugate phase (`Phi^H y`).
pub fn demodulate(vols: &ComplexVolumeSet, phase: &PhaseModel) -> Result<ComplexVolumeSet> {
    phase.apply(vols, true)
}

/// Multiply by the phase (`Phi x`).
pub fn remodulate(vols: &ComplexVolumeSet, phase: &PhaseModel) -> Result<ComplexVolumeSet> {
    phase.apply(vols, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> C64) -> ComplexVolumeSet {
        let data = (0..dims.iter().product::<usize>())
            .map(|q| {
                let c = crate::volume::voxel_coords(dims, q);
                f(c[0], c[1], c[2])
            })
            .collect();
        ComplexVolumeSet::new(dims, [1.0; 3], 1, data).unwrap()
    }

    #[test]
    fn real_positive_image_has_zero_phase() {
        let v = image([8, 6, 2], |x, y, _| {
            C64::new(1.0 + (x * y) as f64 * 0.1, 0.0)
        });
        let p = estimate_linear_phase(&v);
        assert!(p.ramps.iter().all(|r| *r == [0, 0]));
        assert!(p.offsets.iter().all(|o| o.abs() < 1e-12));
    }

    #[test]
    fn grid_aligned_ramp_is_exact() {
        let dims = [16, 8, 1];
        let v = image(dims, |x, y, _| {
            let mag = 1.0 + 0.3 * ((x + 2 * y) as f64).cos();
            C64::from_polar(mag, 2.0 * PI * 3.0 * x as f64 / 16.0 + PI / 4.0)
        });
        let p = estimate_linear_phase(&v);
        assert_eq!(p.ramps[0], [3, 0]);
        assert!((p.offsets[0] - PI / 4.0).abs() < 1e-12);
        let d = demodulate(&v, &p).unwrap();
        assert!(d.data().iter().all(|z| z.im.abs() < 1e-12 && z.re > 0.0));
        let back = remodulate(&d, &p).unwrap();
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_slice_is_flagged() {
        let v = image([4, 4, 2], |_, _, z| C64::new(z as f64, 0.0));
        let p = estimate_linear_phase(&v);
        assert_eq!(p.flagged, vec![true, false]);
        assert_eq!(p.ramps[0], [0, 0]);
        assert_eq!(p.offsets[0], 0.0);
    }

    #[test]
    fn trivial_model_is_identity() {
        let v = image([3, 3, 3], |x, y, z| C64::new(x as f64, (y * z) as f64));
        assert_eq!(
            demodulate(&v, &PhaseModel::trivial([3, 3, 3], 1)).unwrap(),
            v
        );
    }
}
