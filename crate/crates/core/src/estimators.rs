//! Data-driven noise level estimators from the eigenvalues of `Y Y^H / N`.

use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::esd::{mp_quantile, MpLaw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpVariant {
    /// Width of the bulk scaled with `sqrt(N)`.
    Exp1,
    /// Width of the bulk scaled with `sqrt(N - R)`.
    Exp2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpEstimate {
    pub sigma2: f64,
    pub rank: usize,
    /// No candidate rank met the stopping rule; `rank` is `M - 1`.
    pub saturated: bool,
}

/// Candidate variance `sigma~^2(R)` for `R` signal components.
pub fn exp_candidate(eigs: &[f64], r: usize, n: usize, variant: ExpVariant) -> f64 {
    let m = eigs.len();
    let width = eigs[r] - eigs[m - 1];
    let cols = match variant {
        ExpVariant::Exp1 => n as f64,
        ExpVariant::Exp2 => (n - r) as f64,
    };
    cols.sqrt() * width / (4.0 * ((m - r) as f64).sqrt())
}

/// Bulk-width estimator with the rank chosen as the smallest `R` for which
/// the remaining eigenvalue mass reaches `(M - R) sigma~^2(R)`.
pub fn estimate_noise_exp(eigs: &[f64], n: usize, variant: ExpVariant) -> Result<ExpEstimate> {
    let m = eigs.len();
    validate(eigs, n)?;
    let mut tail: f64 = eigs.iter().sum();
    for r in 0..m {
        let s2 = exp_candidate(eigs, r, n, variant);
        if tail >= (m - r) as f64 * s2 {
            return Ok(ExpEstimate {
                sigma2: s2,
                rank: r,
                saturated: false,
            });
        }
        tail -= eigs[r];
    }
    let r = m - 1;
    Ok(ExpEstimate {
        sigma2: exp_candidate(eigs, r, n, variant),
        rank: r,
        saturated: true,
    })
}

/// Median estimator: the eigenvalue at descending position `ceil(M/2)`
/// divided by the unit-variance MP median for aspect `gamma`.
pub fn estimate_noise_med(eigs: &[f64], gamma: f64) -> Result<f64> {
    if eigs.is_empty() {
        return Err(GsvsError::invalid("no eigenvalues"));
    }
    if eigs.windows(2).any(|w| w[0] < w[1]) {
        return Err(GsvsError::invalid("eigenvalues must be sorted descending"));
    }
    let idx = eigs.len().div_ceil(2) - 1;
    let median = mp_quantile(&MpLaw::new(gamma, 1.0)?, 0.5)?;
    Ok(eigs[idx] / median)
}

fn validate(eigs: &[f64], n: usize) -> Result<()> {
    let m = eigs.len();
    if m < 2 {
        return Err(GsvsError::invalid("need at least two eigenvalues"));
    }
    if m > n {
        return Err(GsvsError::invalid(format!(
            "estimator needs M <= N, got M={m}, N={n}"
        )));
    }
    if eigs.windows(2).any(|w| w[0] < w[1]) {
        return Err(GsvsError::invalid("eigenvalues must be sorted descending"));
    }
    Ok(())
}

/// Eigenvalues of `Y Y^H / N` from the singular values of `Y / sqrt(N)`,
/// padded with zeros to `M` entries.
pub fn eigs_from_values(values: &[f64], m: usize) -> Vec<f64> {
    let mut e: Vec<f64> = values.iter().map(|v| v * v).collect();
    e.resize(m, 0.0);
    e
}
