//! End-to-end denoising: demodulation, patch-size selection, per-patch
//! recovery, assembly and remodulation.

mod engine;
mod gamma;
mod phase;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gamma::{
    default_candidates, estimate_gamma, estimate_gamma_with, GammaScan, ScanOptions,
    DEFAULT_SCAN_STRIDE,
};
pub use phase::{demodulate, estimate_linear_phase, remodulate, PhaseModel};

use crate::error::{GsvsError, Result};
use crate::esd::EsdOptions;
use crate::patch::{Assembler, PatchTable, WeightScheme};
use crate::recon::NoiseModel;
use crate::shrink::Rule;
use crate::volume::ComplexVolumeSet;
use engine::{Job, Settings, BATCH};

pub const DEFAULT_STRIDE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaChoice {
    Fixed(f64),
    Scan {
        #[serde(default = "default_candidates")]
        candidates: Vec<f64>,
        #[serde(default = "default_scan_stride")]
        stride: usize,
    },
}

fn default_scan_stride() -> usize {
    DEFAULT_SCAN_STRIDE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Uniform,
    InverseVariance,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    pub gamma: GammaChoice,
    #[serde(default = "default_rule")]
    pub rule: Rule,
    #[serde(default = "default_weights")]
    pub weights: WeightKind,
    /// Gaussian weight width; half the equivalent patch radius when unset.
    #[serde(default)]
    pub gaussian_sigma_mm: Option<f64>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub esd: EsdOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub phase_correction: bool,
    /// Whiten each patch with its noise covariance before recovery.
    #[serde(default)]
    pub whitened: bool,
    /// Share one simulated ESD between patches with equal covariance.
    #[serde(default = "yes")]
    pub esd_cache: bool,
}

fn default_rule() -> Rule {
    Rule::Shrink
}

fn default_weights() -> WeightKind {
    WeightKind::InverseVariance
}

fn default_stride() -> usize {
    DEFAULT_STRIDE
}

fn yes() -> bool {
    true
}

impl DenoiseConfig {
    pub fn fixed(gamma: f64) -> Self {
        Self {
            gamma: GammaChoice::Fixed(gamma),
            rule: default_rule(),
            weights: default_weights(),
            gaussian_sigma_mm: None,
            stride: DEFAULT_STRIDE,
            esd: EsdOptions::default(),
            seed: 0,
            phase_correction: true,
            whitened: false,
            esd_cache: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.gamma {
            GammaChoice::Fixed(g) if !(*g > 0.0 && g.is_finite()) => {
                return Err(GsvsError::invalid(format!(
                    "gamma must be positive, got {g}"
                )));
            }
            GammaChoice::Scan { candidates, stride } => {
                if candidates.is_empty() || *stride == 0 {
                    return Err(GsvsError::invalid(
                        "gamma scan needs candidates and a positive stride",
                    ));
                }
                if let Some(g) = candidates.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
                    return Err(GsvsError::invalid(format!(
                        "gamma candidates must lie in (0, 1), got {g}"
                    )));
                }
            }
            _ => {}
        }
        if self.stride == 0 {
            return Err(GsvsError::invalid("stride must be positive"));
        }
        if self.esd.oversample == 0 {
            return Err(GsvsError::invalid("ESD oversampling must be positive"));
        }
        if let Some(s) = self.gaussian_sigma_mm {
            WeightScheme::Gaussian { sigma_mm: s }.validate()?;
        }
        Ok(())
    }

    fn settings(&self) -> Settings {
        Settings {
            rule: self.rule,
            esd: self.esd,
            seed: self.seed,
            cache: self.esd_cache,
            whitened: self.whitened,
        }
    }

    fn scheme(&self, table: &PatchTable) -> WeightScheme {
        match self.weights {
            WeightKind::Uniform => WeightScheme::Uniform,
            WeightKind::InverseVariance => WeightScheme::InverseVariance,
            WeightKind::Gaussian => match self.gaussian_sigma_mm {
                Some(sigma_mm) => WeightScheme::Gaussian { sigma_mm },
                None => WeightScheme::gaussian_for(table),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    /// Linear index of the patch center.
    pub center: usize,
    pub rank: usize,
    /// Predicted loss; `None` when no component was detected.
    pub amse: Option<f64>,
    /// Energy of the estimate, `sum shrunk^2`.
    pub energy: f64,
    /// Bulk-width noise level estimate (`M <= N` only).
    pub sigma_exp2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterleavedMode {
    Spe,
    Jpe,
}

/// Outcome of one encoding's separate recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingReport {
    pub encoding: usize,
    pub volumes: Vec<usize>,
    /// Fewer than two volumes: copied through unchanged.
    pub passed_through: bool,
    pub report: Option<RecoveryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_volumes: usize,
    pub gamma: f64,
    pub patch_size: usize,
    pub stride: usize,
    pub patches: Vec<PatchRecord>,
    pub ramse_global: Option<f64>,
    pub amse_total: f64,
    pub energy_total: f64,
    pub detected_patches: usize,
    /// Distinct simulated ESDs when the cache is on.
    pub unique_esds: Option<usize>,
    /// Patches whose covariance needed a ridge before whitening.
    pub regularized_patches: usize,
    pub phase_flagged_slices: usize,
    pub gamma_scan: Option<GammaScan>,
    /// Per-encoding parts of a separate interleaved run; `patches` is empty
    /// and the totals pool the parts weighted by volume count.
    pub encodings: Vec<EncodingReport>,
}

/// Per-voxel report maps: each voxel averages the values of the patches
/// covering it. Undetected patches count as rank 0 and loss 0.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMaps {
    pub rank: Vec<f64>,
    pub rank_percent: Vec<f64>,
    pub amse: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl RecoveryReport {
    /// `sum amse / sum energy` over detected patches, recomputed from the
    /// records (or from the pooled parts).
    pub fn recompute_ramse(&self) -> Option<f64> {
        let (a, e) = self.pooled_totals();
        (e > 0.0).then(|| a / e)
    }

    fn pooled_totals(&self) -> (f64, f64) {
        if self.encodings.is_empty() {
            let mut a = 0.0;
            let mut e = 0.0;
            for r in &self.patches {
                if let Some(x) = r.amse {
                    a += x;
                    e += r.energy;
                }
            }
            return (a, e);
        }
        let mut a = 0.0;
        let mut e = 0.0;
        for part in &self.encodings {
            if let Some(r) = &part.report {
                let (pa, pe) = r.pooled_totals();
                a += r.n_volumes as f64 * pa;
                e += r.n_volumes as f64 * pe;
            }
        }
        (a, e)
    }

    fn finalize_totals(&mut self) {
        let (a, e) = self.pooled_totals();
        self.amse_total = a;
        self.energy_total = e;
        self.ramse_global = (e > 0.0).then(|| a / e);
    }

    pub fn voxel_maps(&self) -> Result<VoxelMaps> {
        let q: usize = self.dims.iter().product();
        if !self.encodings.is_empty() {
            let mut rank = vec![0.0; q];
            let mut amse = vec![0.0; q];
            let mut sigma_sum = vec![0.0; q];
            let mut sigma_parts = 0usize;
            for part in self.encodings.iter().filter_map(|p| p.report.as_ref()) {
                let m = part.voxel_maps()?;
                for v in 0..q {
                    rank[v] += m.rank[v];
                    amse[v] += m.amse[v];
                }
                if let Some(s) = m.sigma {
                    sigma_parts += 1;
                    sigma_sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                }
            }
            let sigma = (sigma_parts > 0)
                .then(|| sigma_sum.iter().map(|s| s / sigma_parts as f64).collect());
            let rank_percent = rank
                .iter()
                .map(|r| 100.0 * r / self.n_volumes as f64)
                .collect();
            return Ok(VoxelMaps {
                rank,
                rank_percent,
                amse,
                sigma,
            });
        }
        let table = PatchTable::build(self.dims, self.spacing, self.patch_size, self.stride)?;
        if table.len() != self.patches.len() {
            return Err(GsvsError::Internal(
                "report does not match its patch table".into(),
            ));
        }
        let mut count = vec![0.0_f64; q];
        let mut rank = vec![0.0; q];
        let mut amse = vec![0.0; q];
        let has_sigma = self.patches.iter().any(|r| r.sigma_exp2.is_some());
        let mut sigma = vec![0.0; q];
        for (p, rec) in self.patches.iter().enumerate() {
            for &v in table.members(p) {
                count[v] += 1.0;
                rank[v] += rec.rank as f64;
                amse[v] += rec.amse.unwrap_or(0.0);
                sigma[v] += rec.sigma_exp2.unwrap_or(0.0);
            }
        }
        for v in 0..q {
            let c = count[v].max(1.0);
            rank[v] /= c;
            amse[v] /= c;
            sigma[v] /= c;
        }
        let rank_percent = rank
            .iter()
            .map(|r| 100.0 * r / self.n_volumes as f64)
            .collect();
        Ok(VoxelMaps {
            rank,
            rank_percent,
            amse,
            sigma: has_sigma.then_some(sigma),
        })
    }
}

fn check_inputs(vols: &ComplexVolumeSet, noise: &NoiseModel) -> Result<()> {
    if vols.dims() != noise.dims() {
        return Err(GsvsError::DimensionMismatch(format!(
            "volumes {:?} and noise model {:?} differ",
            vols.dims(),
            noise.dims()
        )));
    }
    noise.check_volume_count(vols.n_volumes())
}

/// Denoise `vols` whose reconstruction noise is described by `noise`.
/// The input is not modified.
pub fn denoise(
    vols: &ComplexVolumeSet,
    noise: &NoiseModel,
    cfg: &DenoiseConfig,
) -> Result<(ComplexVolumeSet, RecoveryReport)> {
    cfg.validate()?;
    check_inputs(vols, noise)?;
    let phase = if cfg.phase_correction {
        estimate_linear_phase(vols)
    } else {
        PhaseModel::trivial(vols.dims(), vols.n_volumes())
    };
    let work = if cfg.phase_correction {
        demodulate(vols, &phase)?
    } else {
        vols.clone()
    };
    let (x, mut report) = denoise_demodulated(&work, noise, cfg)?;
    report.phase_flagged_slices = phase.n_flagged();
    let out = if cfg.phase_correction {
        remodulate(&x, &phase)?
    } else {
        x
    };
    Ok((out, report))
}

fn denoise_demodulated(
    vols: &ComplexVolumeSet,
    noise: &NoiseModel,
    cfg: &DenoiseConfig,
) -> Result<(ComplexVolumeSet, RecoveryReport)> {
    let n = vols.n_volumes();
    let (gamma, scan) = match &cfg.gamma {
        GammaChoice::Fixed(g) => (*g, None),
        GammaChoice::Scan { candidates, stride } => {
            let opts = ScanOptions {
                stride: *stride,
                esd: cfg.esd,
                seed: cfg.seed,
                esd_cache: cfg.esd_cache,
                whitened: cfg.whitened,
            };
            let s = estimate_gamma_with(vols, noise, candidates, &opts)?;
            (s.chosen, Some(s))
        }
    };
    let m = ((gamma * n as f64).round() as usize).max(1);
    let table = PatchTable::build(vols.dims(), vols.spacing(), m, cfg.stride)?;
    let scheme = cfg.scheme(&table);
    let job = Job {
        vols,
        noise,
        table: &table,
        settings: cfg.settings(),
    };
    let plan = job.plan()?;
    let mut asm = Assembler::new(&table, scheme, n)?;
    let mut patches = Vec::with_capacity(table.len());
    let mut regularized = 0;
    let mut start = 0;
    while start < table.len() {
        let end = (start + BATCH).min(table.len());
        let batch = (start..end)
            .into_par_iter()
            .map(|p| job.run_patch(&plan, p, false))
            .collect::<Result<Vec<_>>>()?;
        for r in batch {
            let est = r
                .estimate
                .as_ref()
                .ok_or_else(|| GsvsError::Internal("missing patch estimate".into()))?;
            asm.add(est, Some(r.weight_variance))?;
            regularized += usize::from(r.regularized);
            patches.push(r.record);
        }
        start = end;
    }
    let x = asm.finish()?;
    let mut report = RecoveryReport {
        dims: vols.dims(),
        spacing: vols.spacing(),
        n_volumes: n,
        gamma,
        patch_size: m,
        stride: cfg.stride,
        detected_patches: patches.iter().filter(|r| r.amse.is_some()).count(),
        patches,
        ramse_global: None,
        amse_total: 0.0,
        energy_total: 0.0,
        unique_esds: plan.unique_count(),
        regularized_patches: regularized,
        phase_flagged_slices: 0,
        gamma_scan: scan,
        encodings: Vec::new(),
    };
    report.finalize_totals();
    Ok((x, report))
}

/// Denoise interleaved data either per encoding (`Spe`, each with its own
/// stationary covariance) or jointly with the block covariance (`Jpe`).
/// Phase correction, when enabled, is applied once to the whole set.
pub fn denoise_interleaved(
    vols: &ComplexVolumeSet,
    noise: &NoiseModel,
    mode: InterleavedMode,
    cfg: &DenoiseConfig,
) -> Result<(ComplexVolumeSet, RecoveryReport)> {
    if noise.schedule().is_none() {
        return Err(GsvsError::MissingSchedule(
            "interleaved denoising needs a volume schedule".into(),
        ));
    }
    if mode == InterleavedMode::Jpe {
        return denoise(vols, noise, cfg);
    }
    cfg.validate()?;
    check_inputs(vols, noise)?;
    let n = vols.n_volumes();
    let phase = if cfg.phase_correction {
        estimate_linear_phase(vols)
    } else {
        PhaseModel::trivial(vols.dims(), n)
    };
    let work = if cfg.phase_correction {
        demodulate(vols, &phase)?
    } else {
        vols.clone()
    };
    let mut out = work.clone();
    let mut parts = Vec::new();
    for a in 0..noise.n_encodings() {
        let volumes = noise.volumes_of(a, n);
        if volumes.is_empty() {
            continue;
        }
        if volumes.len() < 2 {
            parts.push(EncodingReport {
                encoding: a,
                volumes,
                passed_through: true,
                report: None,
            });
            continue;
        }
        let sub = work.select_volumes(&volumes)?;
        let sub_noise = noise.restrict_to_encoding(a)?;
        let sub_cfg = DenoiseConfig {
            seed: cfg.seed ^ a as u64,
            ..cfg.clone()
        };
        let (x, r) = denoise_demodulated(&sub, &sub_noise, &sub_cfg)?;
        out.scatter_volumes(&x, &volumes)?;
        parts.push(EncodingReport {
            encoding: a,
            volumes,
            passed_through: false,
            report: Some(r),
        });
    }
    let first = parts.iter().find_map(|p| p.report.as_ref());
    let mut report = RecoveryReport {
        dims: vols.dims(),
        spacing: vols.spacing(),
        n_volumes: n,
        gamma: first.map_or(0.0, |r| r.gamma),
        patch_size: first.map_or(0, |r| r.patch_size),
        stride: cfg.stride,
        patches: Vec::new(),
        ramse_global: None,
        amse_total: 0.0,
        energy_total: 0.0,
        detected_patches: parts
            .iter()
            .filter_map(|p| p.report.as_ref())
            .map(|r| r.detected_patches)
            .sum(),
        unique_esds: parts
            .iter()
            .filter_map(|p| p.report.as_ref())
            .map(|r| r.unique_esds)
            .sum(),
        regularized_patches: parts
            .iter()
            .filter_map(|p| p.report.as_ref())
            .map(|r| r.regularized_patches)
            .sum(),
        phase_flagged_slices: phase.n_flagged(),
        gamma_scan: None,
        encodings: parts,
    };
    report.finalize_totals();
    let out = if cfg.phase_correction {
        remodulate(&out, &phase)?
    } else {
        out
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn cfg(g: f64) -> DenoiseConfig {
        DenoiseConfig {
            esd: EsdOptions {
                oversample: 2,
                ..EsdOptions::default()
            },
            ..DenoiseConfig::fixed(g)
        }
    }

    fn rank_one(dims: [usize; 3], n: usize) -> ComplexVolumeSet {
        let q: usize = dims.iter().product();
        let data = (0..q * n)
            .map(|i| {
                let (v, k) = (i % q, i / q);
                C64::new(1.0 + (v % 7) as f64, 0.3 * (v % 3) as f64)
                    * C64::new(1.0 + 0.1 * k as f64, 0.0)
            })
            .collect();
        ComplexVolumeSet::new(dims, [1.0; 3], n, data).unwrap()
    }

    #[test]
    fn noiseless_identity() {
        let v = rank_one([6, 6, 4], 8);
        let noise = NoiseModel::zero(v.dims(), v.spacing()).unwrap();
        let (x, r) = denoise(&v, &noise, &cfg(0.5)).unwrap();
        for (a, b) in x.data().iter().zip(v.data()) {
            assert!((a - b).norm() < 1e-8);
        }
        assert_eq!(r.recompute_ramse(), r.ramse_global);
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let c = cfg(0.4);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<DenoiseConfig>(&s).unwrap(), c);
        let min: DenoiseConfig = serde_json::from_str(r#"{"gamma":{"scan":{}}}"#).unwrap();
        assert_eq!(
            min.gamma,
            GammaChoice::Scan {
                candidates: default_candidates(),
                stride: 6
            }
        );
        assert!(
            serde_json::from_str::<DenoiseConfig>(r#"{"gamma":{"fixed":0.5},"bogus":1}"#).is_err()
        );
    }

    #[test]
    fn spe_requires_schedule() {
        let v = rank_one([4, 4, 2], 4);
        let noise = NoiseModel::white(v.dims(), v.spacing(), 1.0).unwrap();
        let e = denoise_interleaved(&v, &noise, InterleavedMode::Spe, &cfg(0.5)).unwrap_err();
        assert!(matches!(e, GsvsError::MissingSchedule(_)));
    }

    #[test]
    fn default_grid() {
        let g = default_candidates();
        assert_eq!(g.len(), 14);
        assert!((g[0] - 0.3).abs() < 1e-12 && (g[13] - 0.95).abs() < 1e-12);
    }
}
