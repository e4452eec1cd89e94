//! Patch-size selection by minimum predicted relative error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{Job, Settings};
use crate::error::{GsvsError, Result};
use crate::esd::EsdOptions;
use crate::patch::PatchTable;
use crate::recon::NoiseModel;
use crate::shrink::Rule;
use crate::volume::ComplexVolumeSet;

pub const DEFAULT_SCAN_STRIDE: usize = 6;

/// `0.30, 0.35, ..., 0.95`.
pub fn default_candidates() -> Vec<f64> {
    (6..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScan {
    /// Candidates that were evaluated, ascending.
    pub candidates: Vec<f64>,
    /// Patch size `round(gamma N)` per candidate.
    pub patch_sizes: Vec<usize>,
    /// Predicted relative error per candidate; `None` when no patch had a
    /// detected component.
    pub ramse: Vec<Option<f64>>,
    pub chosen: f64,
    pub stride: usize,
    /// No candidate detected any signal; `chosen` is the smallest candidate.
    pub no_signal: bool,
    /// Candidates dropped because their patch size was below 2.
    pub skipped: Vec<f64>,
}

impl GammaScan {
    /// CSV with one row per evaluated candidate.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gamma,patch_size,ramse\n");
        for (i, g) in self.candidates.iter().enumerate() {
            let r = self.ramse[i].map_or(String::new(), |v| format!("{v:.12e}"));
            s.push_str(&format!("{g},{},{r}\n", self.patch_sizes[i]));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub stride: usize,
    pub esd: EsdOptions,
    pub seed: u64,
    pub esd_cache: bool,
    pub whitened: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            stride: DEFAULT_SCAN_STRIDE,
            esd: EsdOptions::default(),
            seed: 0,
            esd_cache: true,
            whitened: false,
        }
    }
}

/// Scan with default ESD settings.
pub fn estimate_gamma(
    vols: &ComplexVolumeSet,
    noise: &NoiseModel,
    candidates: &[f64],
    stride: usize,
    seed: u64,
) -> Result<GammaScan> {
    estimate_gamma_with(
        vols,
        noise,
        candidates,
        &ScanOptions {
            stride,
            seed,
            ..ScanOptions::default()
        },
    )
}

/// For each candidate, evaluate the shrinkage risk estimate on the spectra
/// of a strided patch lattice and keep the candidate with the lowest ratio
/// of summed risk to summed estimated energy.
pub fn estimate_gamma_with(
    vols: &ComplexVolumeSet,
    noise: &NoiseModel,
    candidates: &[f64],
    opts: &ScanOptions,
) -> Result<GammaScan> {
    if candidates.is_empty() {
        return Err(GsvsError::invalid("no gamma candidates"));
    }
    if let Some(g) = candidates.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        return Err(GsvsError::invalid(format!(
            "gamma candidates must lie in (0, 1), got {g}"
        )));
    }
    if opts.stride == 0 {
        return Err(GsvsError::invalid("scan stride must be positive"));
    }
    if vols.dims() != noise.dims() {
        return Err(GsvsError::DimensionMismatch(format!(
            "volumes {:?} and noise model {:?} differ",
            vols.dims(),
            noise.dims()
        )));
    }
    noise.check_volume_count(vols.n_volumes())?;
    let n = vols.n_volumes();
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let settings = Settings {
        rule: Rule::Shrink,
        esd: opts.esd,
        seed: opts.seed,
        cache: opts.esd_cache,
        whitened: opts.whitened,
    };
    let mut scan = GammaScan {
        candidates: Vec::new(),
        patch_sizes: Vec::new(),
        ramse: Vec::new(),
        chosen: 0.0,
        stride: opts.stride,
        no_signal: false,
        skipped: Vec::new(),
    };
    for &g in &sorted {
        let m = (g * n as f64).round() as usize;
        if m < 2 {
            scan.skipped.push(g);
            continue;
        }
        let table = PatchTable::build_lattice(vols.dims(), vols.spacing(), m, opts.stride)?;
        let job = Job {
            vols,
            noise,
            table: &table,
            settings,
        };
        let plan = job.plan()?;
        let records = (0..table.len())
            .into_par_iter()
            .map(|p| job.run_patch(&plan, p, true).map(|r| r.record))
            .collect::<Result<Vec<_>>>()?;
        let (mut amse, mut energy) = (0.0, 0.0);
        for r in &records {
            if let Some(a) = r.amse {
                amse += a;
                energy += r.energy;
            }
        }
        scan.candidates.push(g);
        scan.patch_sizes.push(m);
        scan.ramse.push((energy > 0.0).then(|| amse / energy));
    }
    if scan.candidates.is_empty() {
        return Err(GsvsError::invalid(format!(
            "every gamma candidate gives a patch size below 2 for N={n}"
        )));
    }
    let best = scan
        .ramse
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|v| (i, v)))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, b)) if b <= v => acc,
            _ => Some((i, v)),
        });
    match best {
        Some((i, _)) => scan.chosen = scan.candidates[i],
        None => {
            scan.no_signal = true;
            scan.chosen = scan.candidates[0];
        }
    }
    Ok(scan)
}
