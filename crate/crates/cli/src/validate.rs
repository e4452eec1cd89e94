//! Noise validation: reconstruct pure channel noise, whiten every patch with
//! its propagated covariance and estimate the remaining noise level, which
//! should be 1 for a correct model.

use gsvs::estimators::{eigs_from_values, estimate_noise_exp, estimate_noise_med, ExpVariant};
use gsvs::linalg::gram_singular_values;
use gsvs::patch::{extract_casorati, PatchTable};
use gsvs::recon::{
    propagate_noise, sense_reconstruct, white_kspace_noise, whiten_patch, EncodingSpec,
    SenseOperator,
};
use gsvs::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ValidateRun;

/// Noise level estimates (standard deviations) of one whitened patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatchEstimate {
    pub encoding: usize,
    pub patch: usize,
    pub center: usize,
    pub exp1: f64,
    pub exp2: f64,
    pub med: f64,
    /// Root mean square of the whitened entries.
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodingSummary {
    pub encoding: usize,
    pub patches: usize,
    pub regularized: usize,
    pub median_exp1: f64,
    pub median_exp2: f64,
    pub median_med: f64,
    pub median_model: f64,
}

impl EncodingSummary {
    pub fn medians(&self) -> [(&'static str, f64); 4] {
        [
            ("exp1", self.median_exp1),
            ("exp2", self.median_exp2),
            ("med", self.median_med),
            ("model", self.median_model),
        ]
    }
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    0.5 * (v[(k - 1) / 2] + v[k / 2])
}

/// Estimates for every patch of every encoding, in encoding then patch order.
pub fn run_validation(run: &ValidateRun) -> Result<(Vec<PatchEstimate>, Vec<EncodingSummary>)> {
    let spec = &run.encoding;
    let (n, m) = (run.draws, run.patch_size);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (a, enc) in spec.encodings.iter().enumerate() {
        let model = EncodingSpec {
            encodings: vec![*enc],
            schedule: None,
            ..spec.clone()
        }
        .build()?;
        let noise = propagate_noise(&model)?;
        let op = SenseOperator::new(&model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ a as u64);
        let z = white_kspace_noise(&model, n, &mut rng);
        let x = sense_reconstruct(&z, &op, spec.spacing_mm)?;
        let table = PatchTable::build(spec.dims, spec.spacing_mm, m, run.stride)?;
        let gamma = m as f64 / n as f64;
        let part = (0..table.len())
            .into_par_iter()
            .map(|p| -> Result<(PatchEstimate, bool)> {
                let y = extract_casorati(&x, &table, p)?;
                let cov = noise.local_covariance(&table, p, n)?;
                let w = whiten_patch(&y.entries, &cov.blocks[0].sigma)?;
                let values: Vec<f64> = gram_singular_values(&w.matrix)
                    .iter()
                    .map(|s| s / (n as f64).sqrt())
                    .collect();
                let eigs = eigs_from_values(&values, m);
                let mean = eigs.iter().sum::<f64>() / m as f64;
                Ok((
                    PatchEstimate {
                        encoding: a,
                        patch: p,
                        center: y.center,
                        exp1: estimate_noise_exp(&eigs, n, ExpVariant::Exp1)?
                            .sigma2
                            .sqrt(),
                        exp2: estimate_noise_exp(&eigs, n, ExpVariant::Exp2)?
                            .sigma2
                            .sqrt(),
                        med: estimate_noise_med(&eigs, gamma)?.sqrt(),
                        model: mean.sqrt(),
                    },
                    w.regularized,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let pick = |f: fn(&PatchEstimate) -> f64| -> f64 {
            median(&part.iter().map(|(e, _)| f(e)).collect::<Vec<_>>())
        };
        summaries.push(EncodingSummary {
            encoding: a,
            patches: part.len(),
            regularized: part.iter().filter(|(_, r)| *r).count(),
            median_exp1: pick(|e| e.exp1),
            median_exp2: pick(|e| e.exp2),
            median_med: pick(|e| e.med),
            median_model: pick(|e| e.model),
        });
        rows.extend(part.into_iter().map(|(e, _)| e));
    }
    Ok((rows, summaries))
}

pub fn to_csv(rows: &[PatchEstimate]) -> String {
    let mut s = String::from("encoding,patch,center,exp1,exp2,med,model\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.9},{:.9},{:.9},{:.9}\n",
            r.encoding, r.patch, r.center, r.exp1, r.exp2, r.med, r.model
        ));
    }
    s
}
