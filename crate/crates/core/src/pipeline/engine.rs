//! Per-patch recovery shared by denoising and the patch-size scan.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::PatchRecord;
use crate::error::{GsvsError, Result};
use crate::esd::{d_transform, simulate_esd, EsdModel, EsdOptions};
use crate::estimators::{eigs_from_values, estimate_noise_exp, ExpVariant};
use crate::linalg::{svd_desc, CMatrix, C64};
use crate::patch::{extract_casorati, CasoratiMatrix, PatchTable};
use crate::recon::{
    unwhiten_patch_blocks, whiten_patch_blocks, CovBlock, NoiseModel, PatchCovariance,
};
use crate::shrink::{
    shrink_frobenius, truncate_hard, Cutoff, Rule, ShrinkOutcome, SpectralDecomposition,
};
use crate::volume::ComplexVolumeSet;

/// Patches processed per parallel batch before their estimates are folded
/// into the output.
pub(crate) const BATCH: usize = 256;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub rule: Rule,
    pub esd: EsdOptions,
    pub seed: u64,
    pub cache: bool,
    pub whitened: bool,
}

pub(crate) struct Job<'a> {
    pub vols: &'a ComplexVolumeSet,
    pub noise: &'a NoiseModel,
    pub table: &'a PatchTable,
    pub settings: Settings,
}

pub(crate) struct PatchResult {
    pub record: PatchRecord,
    pub estimate: Option<CasoratiMatrix>,
    /// Variance used for inverse-variance assembly weights.
    pub weight_variance: f64,
    pub regularized: bool,
}

/// ESDs shared between patches with equal quantized covariances.
pub(crate) enum EsdPlan {
    Cached {
        index: Vec<usize>,
        models: Vec<EsdModel>,
    },
    PerPatch,
}

impl EsdPlan {
    pub fn unique_count(&self) -> Option<usize> {
        match self {
            EsdPlan::Cached { models, .. } => Some(models.len()),
            EsdPlan::PerPatch => None,
        }
    }
}

impl Job<'_> {
    fn n_volumes(&self) -> usize {
        self.vols.n_volumes()
    }

    /// Covariance that drives the ESD: identity blocks in the whitened domain.
    fn esd_covariance(&self, patch_id: usize) -> Result<PatchCovariance> {
        let pc = self
            .noise
            .local_covariance(self.table, patch_id, self.n_volumes())?;
        if !self.settings.whitened {
            return Ok(pc);
        }
        let m = pc.patch_size();
        Ok(PatchCovariance {
            blocks: pc
                .blocks
                .into_iter()
                .map(|b| CovBlock {
                    sigma: CMatrix::identity(m, m),
                    volumes: b.volumes,
                })
                .collect(),
        })
    }

    fn patch_seed(&self, patch_id: usize) -> u64 {
        self.settings.seed ^ patch_id as u64
    }

    /// Group patches by covariance key; each group is simulated once, seeded
    /// by its lowest patch id.
    pub fn plan(&self) -> Result<EsdPlan> {
        if !self.settings.cache {
            return Ok(EsdPlan::PerPatch);
        }
        let keys: Vec<[u8; 32]> = (0..self.table.len())
            .into_par_iter()
            .map(|p| self.esd_covariance(p).map(|c| covariance_key(&c)))
            .collect::<Result<_>>()?;
        let mut groups: BTreeMap<[u8; 32], usize> = BTreeMap::new();
        let mut reps = Vec::new();
        let index = keys
            .iter()
            .enumerate()
            .map(|(p, k)| {
                *groups.entry(*k).or_insert_with(|| {
                    reps.push(p);
                    reps.len() - 1
                })
            })
            .collect();
        let models = reps
            .par_iter()
            .map(|&p| {
                let cov = self.esd_covariance(p)?;
                simulate_esd(&cov, &self.settings.esd, self.patch_seed(p))
            })
            .collect::<Result<_>>()?;
        Ok(EsdPlan::Cached { index, models })
    }

    fn esd<'p>(&self, plan: &'p EsdPlan, patch_id: usize) -> Result<Cow<'p, EsdModel>> {
        match plan {
            EsdPlan::Cached { index, models } => Ok(Cow::Borrowed(&models[index[patch_id]])),
            EsdPlan::PerPatch => {
                let cov = self.esd_covariance(patch_id)?;
                Ok(Cow::Owned(simulate_esd(
                    &cov,
                    &self.settings.esd,
                    self.patch_seed(patch_id),
                )?))
            }
        }
    }

    /// Recover one patch. With `spectra_only` no estimate is synthesized.
    pub fn run_patch(
        &self,
        plan: &EsdPlan,
        patch_id: usize,
        spectra_only: bool,
    ) -> Result<PatchResult> {
        self.run_patch_inner(plan, patch_id, spectra_only)
            .map_err(|e| with_patch(e, patch_id))
    }

    fn run_patch_inner(
        &self,
        plan: &EsdPlan,
        patch_id: usize,
        spectra_only: bool,
    ) -> Result<PatchResult> {
        let y = extract_casorati(self.vols, self.table, patch_id)?;
        let esd = self.esd(plan, patch_id)?;
        let n = self.n_volumes();
        let (work, parts, regularized) = if self.settings.whitened {
            let cov = self.noise.local_covariance(self.table, patch_id, n)?;
            let (w, parts, flag) = whiten_patch_blocks(&y, &cov)?;
            (w, Some((cov, parts)), flag)
        } else {
            (y.entries.clone(), None, false)
        };
        if work.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(GsvsError::Numerical {
                patch: patch_id,
                reason: "non-finite entries".into(),
            });
        }
        let (values, outcome, estimate) = if spectra_only {
            let (_, s, _) = svd_desc(&work).ok_or_else(|| GsvsError::Numerical {
                patch: patch_id,
                reason: "SVD did not converge".into(),
            })?;
            let values: Vec<f64> = s.into_iter().map(|s| s / (n as f64).sqrt()).collect();
            let outcome = apply_rule(self.settings.rule, &values, &esd);
            (values, outcome, None)
        } else {
            let dec = SpectralDecomposition::new(&work).ok_or_else(|| GsvsError::Numerical {
                patch: patch_id,
                reason: "SVD did not converge".into(),
            })?;
            let outcome = apply_rule(self.settings.rule, &dec.values, &esd);
            let mut x = dec.synthesize(&outcome.shrunk);
            if let Some((cov, parts)) = &parts {
                x = unwhiten_patch_blocks(&x, cov, parts);
            }
            let est = CasoratiMatrix {
                entries: x,
                center: y.center,
                patch_id,
            };
            (dec.values, outcome, Some(est))
        };
        let m = work.nrows();
        let sigma_exp2 = if m >= 2 && m <= n {
            estimate_noise_exp(&eigs_from_values(&values, m), n, ExpVariant::Exp2)
                .ok()
                .map(|e| e.sigma2.max(0.0).sqrt())
        } else {
            None
        };
        let detected = !outcome.undetected();
        let weight_variance = if detected {
            outcome.amse_terms.iter().map(|t| t.max(0.0)).sum()
        } else {
            undetected_variance(&esd)
        };
        let record = PatchRecord {
            center: y.center,
            rank: outcome.rank,
            amse: if detected { outcome.amse } else { None },
            energy: if detected { outcome.energy() } else { 0.0 },
            sigma_exp2,
        };
        Ok(PatchResult {
            record,
            estimate,
            weight_variance,
            regularized,
        })
    }
}

fn apply_rule(rule: Rule, values: &[f64], esd: &EsdModel) -> ShrinkOutcome {
    match rule {
        Rule::Shrink => shrink_frobenius(values, esd),
        Rule::Truncate => truncate_hard(values, Cutoff::Edge(esd)),
    }
}

/// Loss proxy for patches with no detected component: `1 / D` just above
/// the edge, the squared strength of the weakest detectable signal.
fn undetected_variance(esd: &EsdModel) -> f64 {
    let x = esd.detection_edge().max(f64::MIN_POSITIVE) * (1.0 + 1e-6);
    match d_transform(x, esd) {
        Ok((d, _)) if d > 0.0 && d.is_finite() => 1.0 / d,
        _ => x * x,
    }
}

fn with_patch(e: GsvsError, patch: usize) -> GsvsError {
    match e {
        GsvsError::Decomposition(reason)
        | GsvsError::Domain(reason)
        | GsvsError::Internal(reason) => GsvsError::Numerical { patch, reason },
        other => other,
    }
}

/// Digest of a patch covariance with entries quantized to three significant
/// digits of its largest variance, plus the volume layout of its blocks.
pub(crate) fn covariance_key(pc: &PatchCovariance) -> [u8; 32] {
    let mut h = Sha256::new();
    let dmax = pc
        .blocks
        .iter()
        .flat_map(|b| b.sigma.diagonal().iter().map(|z| z.re).collect::<Vec<_>>())
        .fold(0.0_f64, f64::max);
    h.update((pc.blocks.len() as u64).to_le_bytes());
    h.update((pc.patch_size() as u64).to_le_bytes());
    if dmax > 0.0 {
        let exp = dmax.log10().floor() as i32 - 2;
        let mant = (dmax / 10f64.powi(exp)).round() as i64;
        h.update(exp.to_le_bytes());
        h.update(mant.to_le_bytes());
    } else {
        h.update(b"zero");
    }
    for b in &pc.blocks {
        h.update((b.volumes.len() as u64).to_le_bytes());
        for &v in &b.volumes {
            h.update((v as u64).to_le_bytes());
        }
        if dmax > 0.0 {
            for z in b.sigma.iter() {
                let q = |x: f64| ((x / dmax) * 1000.0).round() as i64;
                let zz: C64 = *z;
                h.update(q(zz.re).to_le_bytes());
                h.update(q(zz.im).to_le_bytes());
            }
        }
    }
    h.finalize().into()
}
