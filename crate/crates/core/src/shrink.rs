//! Per-matrix recovery: SVD, Frobenius-optimal shrinkage, hard truncation
//! and asymptotic risk estimates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::esd::{d_transform, EsdModel};
use crate::linalg::{svd_desc, CMatrix, C64};
use crate::patch::CasoratiMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Shrink,
    Truncate,
}

/// `Y / sqrt(N) = V diag(values) Vt^H` with values descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub left: CMatrix,
    pub right: CMatrix,
    pub values: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn new(y: &CMatrix) -> Option<Self> {
        let n = y.ncols().max(1) as f64;
        let (left, s, right) = svd_desc(y)?;
        let values = s.into_iter().map(|x| x / n.sqrt()).collect();
        Some(Self {
            left,
            right,
            values,
        })
    }

    /// `sqrt(N) * V diag(shrunk) Vt^H`, skipping zero components.
    pub fn synthesize(&self, shrunk: &[f64]) -> CMatrix {
        let n = self.right.nrows();
        let keep: Vec<usize> = (0..shrunk.len()).filter(|&r| shrunk[r] != 0.0).collect();
        if keep.is_empty() {
            return CMatrix::zeros(self.left.nrows(), n);
        }
        let v = self.left.select_columns(&keep);
        let w = self.right.select_columns(&keep);
        let d = DVector::from_iterator(
            keep.len(),
            keep.iter()
                .map(|&r| C64::new(shrunk[r] * (n as f64).sqrt(), 0.0)),
        );
        v * CMatrix::from_diagonal(&d) * w.adjoint()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkOutcome {
    /// Estimated signal singular values, one per observed value.
    pub shrunk: Vec<f64>,
    pub rank: usize,
    /// Asymptotic loss estimate; `None` when no component was detected or
    /// no spectrum was available to evaluate it.
    pub amse: Option<f64>,
    /// Per-component loss terms for the detected components (unfloored).
    pub amse_terms: Vec<f64>,
    /// Indices of the detected components.
    pub components: Vec<usize>,
}

impl ShrinkOutcome {
    /// Energy of the estimate, `sum shrunk^2`.
    pub fn energy(&self) -> f64 {
        self.shrunk.iter().map(|x| x * x).sum()
    }

    pub fn undetected(&self) -> bool {
        self.components.is_empty()
    }
}

/// Optimal Frobenius shrinker `-2 D(y) / D'(y)`, zero at or below the edge.
pub fn optimal_shrinker(y: f64, esd: &EsdModel) -> f64 {
    if !esd.is_detected(y) {
        return 0.0;
    }
    match d_transform(y, esd) {
        Ok((d, dd)) if dd < 0.0 => (-2.0 * d / dd).max(0.0),
        _ => 0.0,
    }
}

fn detected(values: &[f64], esd: &EsdModel) -> Vec<usize> {
    (0..values.len())
        .filter(|&r| esd.is_detected(values[r]))
        .collect()
}

pub fn shrink_frobenius(values: &[f64], esd: &EsdModel) -> ShrinkOutcome {
    let shrunk: Vec<f64> = values.iter().map(|&y| optimal_shrinker(y, esd)).collect();
    let components: Vec<usize> = detected(values, esd)
        .into_iter()
        .filter(|&r| shrunk[r] > 0.0)
        .collect();
    let (amse, amse_terms) = amse_frobenius(values, &shrunk, &components, esd);
    ShrinkOutcome {
        rank: components.len(),
        shrunk,
        amse,
        amse_terms,
        components,
    }
}

/// Where hard truncation cuts the spectrum.
#[derive(Debug, Clone, Copy)]
pub enum Cutoff<'a> {
    Edge(&'a EsdModel),
    Rank(usize),
}

/// Keep observed values above the cutoff unchanged and zero the rest.
pub fn truncate_hard(values: &[f64], cutoff: Cutoff<'_>) -> ShrinkOutcome {
    let components: Vec<usize> = match cutoff {
        Cutoff::Edge(esd) => detected(values, esd),
        Cutoff::Rank(r) => (0..r.min(values.len()))
            .filter(|&i| values[i] > 0.0)
            .collect(),
    };
    let mut shrunk = vec![0.0; values.len()];
    components.iter().for_each(|&r| shrunk[r] = values[r]);
    let (amse, amse_terms) = match cutoff {
        Cutoff::Edge(esd) => amse_frobenius(values, &shrunk, &components, esd),
        Cutoff::Rank(_) => (None, Vec::new()),
    };
    ShrinkOutcome {
        rank: components.len(),
        shrunk,
        amse,
        amse_terms,
        components,
    }
}

/// Asymptotic loss of the estimate `shrunk` on the listed components:
/// `sum 1/D(y) + s^2 - 2 s s*(y)` with `s*` the optimal shrinker, which
/// reduces to `1/D(y) - s^2` for the optimal rule. Empty component sets
/// return `None`.
pub fn amse_frobenius(
    values: &[f64],
    shrunk: &[f64],
    components: &[usize],
    esd: &EsdModel,
) -> (Option<f64>, Vec<f64>) {
    if components.is_empty() {
        return (None, Vec::new());
    }
    let terms: Vec<f64> = components
        .iter()
        .map(|&r| {
            let y = values[r];
            let s = shrunk[r];
            match d_transform(y, esd) {
                Ok((d, dd)) => {
                    let opt = -2.0 * d / dd;
                    1.0 / d + s * s - 2.0 * s * opt
                }
                Err(_) => 0.0,
            }
        })
        .collect();
    (Some(terms.iter().sum()), terms)
}

/// Denoise one Casorati matrix; the estimate is returned in data units.
pub fn recover_matrix(
    y: &CasoratiMatrix,
    esd: &EsdModel,
    rule: Rule,
) -> Result<(CMatrix, ShrinkOutcome)> {
    if y.entries
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(GsvsError::Numerical {
            patch: y.patch_id,
            reason: "non-finite entries".into(),
        });
    }
    let dec = SpectralDecomposition::new(&y.entries).ok_or_else(|| GsvsError::Numerical {
        patch: y.patch_id,
        reason: "SVD did not converge".into(),
    })?;
    let outcome = match rule {
        Rule::Shrink => shrink_frobenius(&dec.values, esd),
        Rule::Truncate => truncate_hard(&dec.values, Cutoff::Edge(esd)),
    };
    Ok((dec.synthesize(&outcome.shrunk), outcome))
}
