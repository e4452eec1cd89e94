//! Noise singular-value distributions: Monte Carlo simulation per patch
//! covariance, the Marchenko-Pastur reference law and the D-transform.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::linalg::{
    complex_normal, gram_singular_values, psd_factor, tridiagonal_eigenvalues, CMatrix, C64,
};
use crate::recon::PatchCovariance;

/// Relative margin above the largest atom below which the D-transform is
/// not evaluated.
pub const EDGE_GUARD: f64 = 1e-6;

/// Simulated noise spectrum for an `M x N` patch: the `B*M` singular values
/// of a `BM x BN` noise matrix divided by `sqrt(BN)`, sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EsdModel {
    atoms: Vec<f64>,
    aspect: f64,
    oversample: usize,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsdOptions {
    /// Oversampling factor `B`.
    #[serde(default = "default_b")]
    pub oversample: usize,
    /// Largest admissible number of entries `BM * BN`.
    #[serde(default = "default_cap")]
    pub max_entries: usize,
    /// Always draw the dense Gaussian matrix, even for white covariances.
    #[serde(default)]
    pub force_dense: bool,
}

fn default_b() -> usize {
    10
}

fn default_cap() -> usize {
    50_000_000
}

impl Default for EsdOptions {
    fn default() -> Self {
        Self {
            oversample: default_b(),
            max_entries: default_cap(),
            force_dense: false,
        }
    }
}

impl EsdModel {
    /// Build from arbitrary non-negative atoms (sorted internally).
    pub fn from_atoms(
        mut atoms: Vec<f64>,
        aspect: f64,
        oversample: usize,
        seed: u64,
    ) -> Result<Self> {
        if atoms.is_empty() {
            return Err(GsvsError::invalid("an ESD needs at least one atom"));
        }
        if atoms.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(GsvsError::invalid(
                "ESD atoms must be finite and non-negative",
            ));
        }
        if !(aspect > 0.0 && aspect.is_finite()) {
            return Err(GsvsError::invalid(format!(
                "aspect ratio must be positive, got {aspect}"
            )));
        }
        atoms.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            atoms,
            aspect,
            oversample,
            seed,
        })
    }

    /// Noise-free spectrum: `m` zero atoms.
    pub fn noiseless(m: usize, aspect: f64) -> Self {
        Self {
            atoms: vec![0.0; m.max(1)],
            aspect,
            oversample: 1,
            seed: 0,
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn support_upper(&self) -> f64 {
        self.atoms[0]
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Detection threshold: observed values must exceed this to be kept.
    pub fn detection_edge(&self) -> f64 {
        self.support_upper() * (1.0 + EDGE_GUARD)
    }

    pub fn is_detected(&self, y: f64) -> bool {
        y > self.detection_edge() && y > 0.0
    }

    /// Copy with every atom multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            atoms: self.atoms.iter().map(|a| a * s).collect(),
            ..self.clone()
        }
    }
}

/// Simulate the noise spectrum of an `M x N` patch with row covariance
/// `cov` (one block per group of volumes).
pub fn simulate_esd(cov: &PatchCovariance, opts: &EsdOptions, seed: u64) -> Result<EsdModel> {
    let m = cov.patch_size();
    let n = cov.n_volumes();
    let b = opts.oversample;
    if b == 0 {
        return Err(GsvsError::invalid("oversampling factor must be at least 1"));
    }
    if m == 0 || n == 0 {
        return Err(GsvsError::invalid("empty patch covariance"));
    }
    let (bm, bn) = (b * m, b * n);
    let entries = bm
        .checked_mul(bn)
        .ok_or_else(|| GsvsError::ResourceLimit("ESD matrix size overflows".into()))?;
    if entries > opts.max_entries {
        return Err(GsvsError::ResourceLimit(format!(
            "ESD matrix {bm}x{bn} exceeds the cap of {} entries",
            opts.max_entries
        )));
    }
    let aspect = m as f64 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (bn as f64).sqrt();
    let mut atoms = match cov.common_white_level() {
        Some(c) if !opts.force_dense => {
            let sv = white_singular_values(bm, bn, &mut rng)?;
            let s = c.max(0.0).sqrt() * scale;
            sv.into_iter().map(|x| x * s).collect::<Vec<_>>()
        }
        _ => {
            let w = dense_noise(cov, b, &mut rng);
            gram_singular_values(&w)
                .into_iter()
                .map(|x| x * scale)
                .collect()
        }
    };
    atoms.resize(bm, 0.0);
    EsdModel::from_atoms(atoms, aspect, b, seed)
}

/// Singular values of an `m x n` matrix of i.i.d. CN(0, 1) entries, drawn
/// through its bidiagonal (chi-distributed) model.
fn white_singular_values(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let (m, n) = if m <= n { (m, n) } else { (n, m) };
    let chi = |dof: usize, rng: &mut ChaCha8Rng| -> f64 {
        if dof == 0 {
            return 0.0;
        }
        let d = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        (d.sample(rng) / 2.0).sqrt()
    };
    let d: Vec<f64> = (0..m).map(|i| chi(2 * (n - i), rng)).collect();
    let e: Vec<f64> = (0..m.saturating_sub(1))
        .map(|i| chi(2 * (m - 1 - i), rng))
        .collect();
    let diag: Vec<f64> = (0..m)
        .map(|i| d[i] * d[i] + if i > 0 { e[i - 1] * e[i - 1] } else { 0.0 })
        .collect();
    let off: Vec<f64> = (0..m.saturating_sub(1)).map(|i| d[i] * e[i]).collect();
    Ok(tridiagonal_eigenvalues(&diag, &off)?
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect())
}

/// Gaussian matrix made of `B x B` tiles of `M x N` noise; column `j` uses the
/// covariance factor of the block that owns volume `j mod N`.
pub(crate) fn dense_noise<R: rand::Rng + ?Sized>(
    cov: &PatchCovariance,
    b: usize,
    rng: &mut R,
) -> CMatrix {
    let m = cov.patch_size();
    let n = cov.n_volumes();
    let factors: Vec<CMatrix> = cov
        .blocks
        .iter()
        .map(|blk| psd_factor(&blk.sigma))
        .collect();
    let mut owner = vec![0; n];
    for (k, blk) in cov.blocks.iter().enumerate() {
        blk.volumes.iter().for_each(|&v| owner[v] = k);
    }
    let mut w = CMatrix::zeros(b * m, b * n);
    let mut g = vec![C64::new(0.0, 0.0); m];
    for j in 0..b * n {
        let f = &factors[owner[j % n]];
        for tile in 0..b {
            g.iter_mut().for_each(|x| *x = complex_normal(rng));
            for r in 0..m {
                w[(tile * m + r, j)] = g.iter().enumerate().map(|(c, gc)| f[(r, c)] * gc).sum();
            }
        }
    }
    w
}

/// `(D(x), D'(x))` of the simulated spectrum at `x` above the support.
pub fn d_transform(x: f64, esd: &EsdModel) -> Result<(f64, f64)> {
    if !(x > esd.detection_edge()) || !(x > 0.0) || !x.is_finite() {
        return Err(GsvsError::Domain(format!(
            "D-transform evaluated at {x}, support ends at {}",
            esd.support_upper()
        )));
    }
    let g = esd.aspect;
    let inv = 1.0 / esd.atoms.len() as f64;
    let (mut phi, mut dphi) = (0.0, 0.0);
    let x2 = x * x;
    for &a in &esd.atoms {
        let a2 = a * a;
        let den = x2 - a2;
        phi += x / den;
        dphi -= (x2 + a2) / (den * den);
    }
    phi *= inv;
    dphi *= inv;
    let psi = g * phi + (1.0 - g) / x;
    let dpsi = g * dphi - (1.0 - g) / x2;
    Ok((phi * psi, dphi * psi + phi * dpsi))
}

/// Marchenko-Pastur law of the squared singular values of `A / sqrt(N)`
/// for an `M x N` matrix with i.i.d. entries of variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpLaw {
    aspect: f64,
    sigma2: f64,
}

impl MpLaw {
    pub fn new(aspect: f64, sigma2: f64) -> Result<Self> {
        if !(aspect > 0.0 && aspect <= 1.0) {
            return Err(GsvsError::invalid(format!(
                "aspect ratio must lie in (0, 1], got {aspect}"
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(GsvsError::invalid(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        Ok(Self { aspect, sigma2 })
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Support `[a, b]` of the squared values.
    pub fn support(&self) -> (f64, f64) {
        let s = self.aspect.sqrt();
        (
            self.sigma2 * (1.0 - s).powi(2),
            self.sigma2 * (1.0 + s).powi(2),
        )
    }

    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a || x >= b {
            return 0.0;
        }
        ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * self.aspect * self.sigma2 * x)
    }

    /// CDF written in the angle `x = c + r cos(theta)`, which removes the
    /// square-root endpoint behaviour of the density.
    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        let theta = ((x - c) / r).clamp(-1.0, 1.0).acos();
        let k = r * r / (2.0 * std::f64::consts::PI * self.aspect * self.sigma2);
        // sin^2 / (c + r cos) = (1 - cos) / r when the lower edge is 0
        let square = a <= 1e-14 * b;
        let f = |t: f64| {
            if square {
                k * (1.0 - t.cos()) / r
            } else {
                let s = t.sin();
                k * s * s / (c + r * t.cos())
            }
        };
        adaptive_simpson(&f, theta, std::f64::consts::PI, 1e-13, 50).clamp(0.0, 1.0)
    }
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || !delta.is_finite() || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Quantile of the squared-value MP law, by bisection on the CDF to an
/// absolute tolerance of 1e-8. `p = 0` and `p = 1` return the support edges.
pub fn mp_quantile(law: &MpLaw, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GsvsError::invalid(format!(
            "quantile level must lie in [0, 1], got {p}"
        )));
    }
    let (a, b) = law.support();
    if b - a <= 1e-12 * law.sigma2 {
        return Ok(law.sigma2);
    }
    if p == 0.0 {
        return Ok(a);
    }
    if p == 1.0 {
        return Ok(b);
    }
    let (mut lo, mut hi) = (a, b);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if law.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EsdHeader {
    aspect: f64,
    oversample: usize,
    seed: u64,
    n_atoms: usize,
    support_upper: f64,
    file: String,
}

impl EsdModel {
    /// Write JSON metadata to `path` and the atoms as little-endian `f64`
    /// next to it (extension `bin`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let bin = path.with_extension("bin");
        let header = EsdHeader {
            aspect: self.aspect,
            oversample: self.oversample,
            seed: self.seed,
            n_atoms: self.atoms.len(),
            support_upper: self.support_upper(),
            file: bin
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string(),
        };
        let bytes: Vec<u8> = self.atoms.iter().flat_map(|a| a.to_le_bytes()).collect();
        fs::write(&bin, bytes)?;
        fs::write(path, serde_json::to_string_pretty(&header)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: EsdHeader = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| GsvsError::Format(format!("{}: {e}", path.display())))?;
        let bin = path
            .parent()
            .map_or_else(|| header.file.clone().into(), |d| d.join(&header.file));
        let bytes = fs::read(&bin)?;
        if bytes.len() != header.n_atoms * 8 {
            return Err(GsvsError::DimensionMismatch(format!(
                "{} holds {} bytes for {} atoms",
                bin.display(),
                bytes.len(),
                header.n_atoms
            )));
        }
        let atoms = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_atoms(atoms, header.aspect, header.oversample, header.seed)
    }
}
