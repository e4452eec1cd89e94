//! Ground-truth generators: spiked matrices, low-rank phantoms with optional
//! phase corruption and reconstructed noise, and PSNR.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::esd::dense_noise;
use crate::linalg::{complex_normal, haar_columns, CMatrix, C64};
use crate::pipeline::PhaseModel;
use crate::recon::{
    propagate_noise, sense_reconstruct, white_kspace_noise, EncodingSpec, NoiseModel,
    PatchCovariance, SenseOperator,
};
use crate::volume::{voxel_coords, ComplexVolumeSet};

/// Row covariance of the noise in a spiked matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpikedNoise {
    White {
        sigma2: f64,
    },
    /// Independent rows with the given variances.
    Rows {
        variances: Vec<f64>,
    },
    /// Arbitrary block covariance (not serializable).
    #[serde(skip)]
    Blocks(PatchCovariance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikedSpec {
    pub m: usize,
    pub n: usize,
    /// Signal singular values of `X / sqrt(N)`, positive and descending.
    pub spike_values: Vec<f64>,
    pub noise: SpikedNoise,
    #[serde(default)]
    pub seed: u64,
}

impl SpikedSpec {
    pub fn rank(&self) -> usize {
        self.spike_values.len()
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(GsvsError::invalid(
                "spiked matrix needs positive dimensions",
            ));
        }
        if self.rank() > self.m.min(self.n) {
            return Err(GsvsError::invalid(format!(
                "rank {} exceeds min(M, N)",
                self.rank()
            )));
        }
        if self
            .spike_values
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(GsvsError::invalid("spike values must be positive"));
        }
        if self.spike_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(GsvsError::invalid("spike values must be descending"));
        }
        match &self.noise {
            SpikedNoise::White { sigma2 } if !(*sigma2 >= 0.0) => {
                Err(GsvsError::invalid("noise variance must be non-negative"))
            }
            SpikedNoise::Rows { variances }
                if variances.len() != self.m || variances.iter().any(|v| !(*v >= 0.0)) =>
            {
                Err(GsvsError::invalid(
                    "row variances must be M non-negative values",
                ))
            }
            SpikedNoise::Blocks(c) if c.patch_size() != self.m || c.n_volumes() != self.n => Err(
                GsvsError::DimensionMismatch("block covariance does not match M x N".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// `X = sum_r eta_r sqrt(N) u_r v_r^H` with Haar factors and `Y = X + W`.
pub fn make_spiked(spec: &SpikedSpec) -> Result<(CMatrix, CMatrix)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, n, r) = (spec.m, spec.n, spec.rank());
    let u = haar_columns(m, r, &mut rng);
    let v = haar_columns(n, r, &mut rng);
    let mut x = CMatrix::zeros(m, n);
    for k in 0..r {
        let s = C64::new(spec.spike_values[k] * (n as f64).sqrt(), 0.0);
        x += u.column(k) * v.column(k).adjoint() * s;
    }
    let w = match &spec.noise {
        SpikedNoise::White { sigma2 } => {
            let s = sigma2.sqrt();
            CMatrix::from_fn(m, n, |_, _| complex_normal(&mut rng) * s)
        }
        SpikedNoise::Rows { variances } => {
            let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
            let mut w = CMatrix::zeros(m, n);
            for j in 0..n {
                for i in 0..m {
                    w[(i, j)] = complex_normal(&mut rng) * sd[i];
                }
            }
            w
        }
        SpikedNoise::Blocks(cov) => dense_noise(cov, 1, &mut rng),
    };
    let y = &x + w;
    Ok((x, y))
}

/// Almost-sure limit of the observed singular value for a signal value `x`
/// in white noise of variance `sigma2`; the bulk edge below the threshold.
pub fn bbp_observed(x: f64, gamma: f64, sigma2: f64) -> f64 {
    let s = sigma2.sqrt();
    let t = (x / s).powi(2);
    if t <= gamma.sqrt() {
        return s * (1.0 + gamma.sqrt());
    }
    s * ((t + 1.0) * (t + gamma) / t).sqrt()
}

/// Signal value whose observed limit is `y`; `None` at or below the edge.
pub fn bbp_signal(y: f64, gamma: f64, sigma2: f64) -> Option<f64> {
    let s = y * y / sigma2;
    let b = s - 1.0 - gamma;
    let disc = b * b - 4.0 * gamma;
    if y <= sigma2.sqrt() * (1.0 + gamma.sqrt()) || disc < 0.0 {
        return None;
    }
    let t = (b + disc.sqrt()) / 2.0;
    Some((t * sigma2).sqrt())
}

/// Noise injected into a phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomNoise {
    None,
    White {
        sigma: f64,
    },
    /// White channel noise reconstructed through a synthetic acquisition,
    /// multiplied by `scale`.
    Reconstructed {
        encoding: EncodingSpec,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Random per-slice linear phase corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseCorruption {
    /// Ramps are drawn uniformly from `-max_harmonic..=max_harmonic` per axis.
    pub max_harmonic: i64,
    /// Random offsets in (-pi, pi].
    #[serde(default = "yes")]
    pub offsets: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing_mm: [f64; 3],
    pub n_volumes: usize,
    /// True rank per concentric shell, innermost first.
    pub region_ranks: Vec<usize>,
    #[serde(default = "one")]
    pub intensity: f64,
    #[serde(default)]
    pub phase: Option<PhaseCorruption>,
    pub noise: PhantomNoise,
    #[serde(default)]
    pub seed: u64,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub truth: ComplexVolumeSet,
    pub noisy: ComplexVolumeSet,
    /// Applied phase corruption, if any.
    pub phase: Option<PhaseModel>,
    /// Covariance of the injected noise.
    pub noise_model: NoiseModel,
    /// Region index per voxel.
    pub regions: Vec<usize>,
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        crate::volume::validate_grid(self.dims, self.spacing_mm)?;
        if self.n_volumes == 0 {
            return Err(GsvsError::invalid("phantom needs at least one volume"));
        }
        if self.region_ranks.is_empty()
            || self
                .region_ranks
                .iter()
                .any(|&r| r == 0 || r > self.n_volumes)
        {
            return Err(GsvsError::invalid("region ranks must lie in 1..=N"));
        }
        if !(self.intensity > 0.0 && self.intensity.is_finite()) {
            return Err(GsvsError::invalid("intensity must be positive"));
        }
        if let Some(p) = self.phase {
            if p.max_harmonic < 0 {
                return Err(GsvsError::invalid("max harmonic must be non-negative"));
            }
        }
        match &self.noise {
            PhantomNoise::White { sigma } if !(*sigma >= 0.0) => {
                Err(GsvsError::invalid("noise sigma must be non-negative"))
            }
            PhantomNoise::Reconstructed { encoding, scale } => {
                if encoding.dims != self.dims {
                    return Err(GsvsError::DimensionMismatch(
                        "encoding grid differs from phantom grid".into(),
                    ));
                }
                if !(*scale >= 0.0) {
                    return Err(GsvsError::invalid("noise scale must be non-negative"));
                }
                if let Some(s) = &encoding.schedule {
                    if s.len() != self.n_volumes {
                        return Err(GsvsError::DimensionMismatch(format!(
                            "schedule covers {} volumes, phantom has {}",
                            s.len(),
                            self.n_volumes
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Concentric ellipsoidal shells of equal radial width; the last region
/// takes everything outside the inscribed ellipsoid.
pub fn phantom_regions(dims: [usize; 3], n_regions: usize) -> Vec<usize> {
    let q: usize = dims.iter().product();
    (0..q)
        .map(|v| {
            let c = voxel_coords(dims, v);
            let rho2: f64 = (0..3)
                .filter(|&a| dims[a] > 1)
                .map(|a| {
                    let h = dims[a] as f64 / 2.0;
                    ((c[a] as f64 + 0.5 - h) / h).powi(2)
                })
                .sum();
            ((rho2.sqrt() * n_regions as f64) as usize).min(n_regions - 1)
        })
        .collect()
}

/// Region-wise low-rank volumes: each region mixes `rank` smooth spatial
/// maps with decays `exp(-b_n d)` over the measurement axis.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.dims;
    let q: usize = dims.iter().product();
    let n = spec.n_volumes;
    let regions = phantom_regions(dims, spec.region_ranks.len());
    let b: Vec<f64> = (0..n)
        .map(|k| {
            if n > 1 {
                3.0 * k as f64 / (n - 1) as f64
            } else {
                0.0
            }
        })
        .collect();

    let mut truth = vec![C64::new(0.0, 0.0); q * n];
    for (reg, &rank) in spec.region_ranks.iter().enumerate() {
        for r in 0..rank {
            let weight = spec.intensity / (1.0 + r as f64);
            let decay: f64 = rng.random_range(0.05..1.5);
            let freq = [
                rng.random_range(0..3) as f64,
                rng.random_range(0..3) as f64,
                rng.random_range(0..2) as f64,
            ];
            let shift: f64 = rng.random_range(0.0..2.0 * PI);
            let meas: Vec<f64> = b.iter().map(|bn| (-bn * decay).exp()).collect();
            for v in (0..q).filter(|&v| regions[v] == reg) {
                let c = voxel_coords(dims, v);
                let arg: f64 = (0..3)
                    .map(|a| freq[a] * c[a] as f64 / dims[a] as f64)
                    .sum::<f64>()
                    * 2.0
                    * PI
                    + shift;
                let amp = weight * (0.7 + 0.3 * arg.cos());
                for k in 0..n {
                    truth[v + q * k] += C64::new(amp * meas[k], 0.0);
                }
            }
        }
    }
    let mut truth = ComplexVolumeSet::new(dims, spec.spacing_mm, n, truth)?;

    let phase = spec.phase.map(|p| {
        let mut model = PhaseModel::trivial(dims, n);
        for s in 0..dims[2] * n {
            let h = p.max_harmonic;
            model.ramps[s] = [rng.random_range(-h..=h), rng.random_range(-h..=h)];
            if p.offsets {
                let o: f64 = rng.random_range(-PI..PI);
                model.offsets[s] = if o <= -PI { PI } else { o };
            }
        }
        model
    });
    if let Some(p) = &phase {
        truth = crate::pipeline::remodulate(&truth, p)?;
    }

    let (noise, noise_model) = match &spec.noise {
        PhantomNoise::None => (None, NoiseModel::zero(dims, spec.spacing_mm)?),
        PhantomNoise::White { sigma } => {
            let data = (0..q * n)
                .map(|_| complex_normal(&mut rng) * *sigma)
                .collect();
            (
                Some(ComplexVolumeSet::new(dims, spec.spacing_mm, n, data)?),
                NoiseModel::white(dims, spec.spacing_mm, sigma * sigma)?,
            )
        }
        PhantomNoise::Reconstructed { encoding, scale } => {
            let model = EncodingSpec {
                spacing_mm: spec.spacing_mm,
                ..encoding.clone()
            }
            .build()?;
            let op = SenseOperator::new(&model)?;
            let z = white_kspace_noise(&model, n, &mut rng);
            let w = sense_reconstruct(&z, &op, spec.spacing_mm)?.scaled(C64::new(*scale, 0.0));
            (Some(w), propagate_noise(&model)?.scaled(scale * scale))
        }
    };
    let noisy = match noise {
        Some(w) => truth.add(&w)?,
        None => truth.clone(),
    };
    Ok(Phantom {
        truth,
        noisy,
        phase,
        noise_model,
        regions,
    })
}

/// PSNR value; `capped` marks an exact match reported at [`PSNR_CAP_DB`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    pub capped: bool,
}

pub const PSNR_CAP_DB: f64 = 300.0;

/// `10 log10(peak^2 / MSE)` with the peak magnitude of `truth` and the mean
/// squared complex deviation.
pub fn psnr(estimate: &ComplexVolumeSet, truth: &ComplexVolumeSet) -> Result<Psnr> {
    if !estimate.same_grid(truth) || estimate.n_volumes() != truth.n_volumes() {
        return Err(GsvsError::DimensionMismatch(
            "estimate and truth differ in shape".into(),
        ));
    }
    let peak2 = truth
        .data()
        .iter()
        .map(|z| z.norm_sqr())
        .fold(0.0, f64::max);
    if peak2 == 0.0 {
        return Err(GsvsError::invalid("truth is identically zero"));
    }
    let mse = estimate
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / truth.data().len() as f64;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            capped: true,
        });
    }
    let db = 10.0 * (peak2 / mse).log10();
    Ok(if db > PSNR_CAP_DB {
        Psnr {
            db: PSNR_CAP_DB,
            capped: true,
        }
    } else {
        Psnr { db, capped: false }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rank_is_pure_noise() {
        let spec = SpikedSpec {
            m: 5,
            n: 7,
            spike_values: vec![],
            noise: SpikedNoise::White { sigma2: 1.0 },
            seed: 3,
        };
        let (x, y) = make_spiked(&spec).unwrap();
        assert_eq!(x, CMatrix::zeros(5, 7));
        assert!(y.norm() > 0.0);
    }

    #[test]
    fn spikes_are_signal_values() {
        let spec = SpikedSpec {
            m: 6,
            n: 9,
            spike_values: vec![2.0, 0.5],
            noise: SpikedNoise::White { sigma2: 0.0 },
            seed: 1,
        };
        let (x, y) = make_spiked(&spec).unwrap();
        assert_eq!(x, y);
        let s = crate::linalg::singular_values_desc(&x);
        assert!((s[0] / 3.0 - 2.0).abs() < 1e-12 && (s[1] / 3.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bbp_round_trip() {
        let y = bbp_observed(2.0, 0.5, 1.5);
        assert!((bbp_signal(y, 0.5, 1.5).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(bbp_observed(0.1, 0.25, 1.0), 1.5);
        assert!(bbp_signal(1.4, 0.25, 1.0).is_none());
    }

    #[test]
    fn psnr_closed_forms() {
        let t = ComplexVolumeSet::new(
            [2, 1, 1],
            [1.0; 3],
            1,
            vec![C64::new(1.0, 0.0), C64::new(0.5, 0.0)],
        )
        .unwrap();
        assert_eq!(
            psnr(&t, &t).unwrap(),
            Psnr {
                db: PSNR_CAP_DB,
                capped: true
            }
        );
        let c = C64::new(0.1, 0.0);
        let e = ComplexVolumeSet::new(
            [2, 1, 1],
            [1.0; 3],
            1,
            t.data().iter().map(|z| z + c).collect(),
        )
        .unwrap();
        assert!((psnr(&e, &t).unwrap().db - 20.0).abs() < 1e-9);
        let z = ComplexVolumeSet::zeros([2, 1, 1], [1.0; 3], 1).unwrap();
        assert!(psnr(&t, &z).is_err());
    }

    #[test]
    fn noiseless_phantom_matches_truth() {
        let spec = PhantomSpec {
            dims: [8, 8, 4],
            spacing_mm: [1.0; 3],
            n_volumes: 6,
            region_ranks: vec![1, 2],
            intensity: 1.0,
            phase: None,
            noise: PhantomNoise::None,
            seed: 2,
        };
        let p = make_phantom(&spec).unwrap();
        assert_eq!(p.truth, p.noisy);
        assert_eq!(make_phantom(&spec).unwrap().noisy, p.noisy);
    }
}
