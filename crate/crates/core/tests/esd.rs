use gsvs::esd::{d_transform, mp_quantile, simulate_esd, EsdModel, EsdOptions, MpLaw};
use gsvs::linalg::{complex_normal_matrix, CMatrix, C64};
use gsvs::recon::{CovBlock, PatchCovariance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn white(m: usize, n: usize, c: f64) -> PatchCovariance {
    PatchCovariance::stationary(CMatrix::identity(m, m) * C64::new(c, 0.0), n)
}

fn opts(b: usize, dense: bool) -> EsdOptions {
    EsdOptions {
        oversample: b,
        force_dense: dense,
        ..EsdOptions::default()
    }
}

fn random_spd(m: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = complex_normal_matrix(m, m, &mut rng);
    (&g * g.adjoint()) / C64::new(m as f64, 0.0) + CMatrix::identity(m, m) * C64::new(0.2, 0.0)
}

/// Expectation of `g(lambda)` under the unit-variance MP law with ratio
/// `gamma <= 1`, by the substitution `lambda = c + h cos(theta)` which
/// removes the square-root endpoints.
fn mp_expect(gamma: f64, g: impl Fn(f64) -> f64) -> f64 {
    let a = (1.0 - gamma.sqrt()).powi(2);
    let b = (1.0 + gamma.sqrt()).powi(2);
    let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
    let k = 20_000;
    (0..k)
        .map(|i| {
            let th = PI * (i as f64 + 0.5) / k as f64;
            let l = c + h * th.cos();
            g(l) * h * h * th.sin().powi(2) / (2.0 * PI * gamma * l)
        })
        .sum::<f64>()
        * PI
        / k as f64
}

fn mp_cdf(gamma: f64, x: f64) -> f64 {
    mp_expect(gamma, |l| f64::from(u8::from(l <= x)))
}

fn ks_against(atoms: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sq: Vec<f64> = atoms.iter().map(|a| a * a).collect();
    sq.sort_by(f64::total_cmp);
    let n = sq.len() as f64;
    sq.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn edge_matches_mp_for_white_noise() {
    for (m, n) in [(50, 200), (100, 200), (200, 200)] {
        let gamma = m as f64 / n as f64;
        let esd = simulate_esd(&white(m, n, 1.0), &opts(10, false), 1).unwrap();
        let edge = 1.0 + gamma.sqrt();
        let rel = (esd.support_upper() - edge).abs() / edge;
        assert!(
            rel < 0.03,
            "gamma {gamma}: {} vs {edge}",
            esd.support_upper()
        );
    }
}

#[test]
fn scaled_white_edge() {
    let esd = simulate_esd(&white(25, 100, 4.0), &opts(10, false), 2).unwrap();
    assert!((esd.support_upper() - 3.0).abs() / 3.0 < 0.03);
    let esd = simulate_esd(&white(25, 100, 4.0), &opts(10, true), 2).unwrap();
    assert!((esd.support_upper() - 3.0).abs() / 3.0 < 0.03);
}

#[test]
fn square_white_spectrum_spans_zero_to_two() {
    let esd = simulate_esd(&white(100, 100, 1.0), &opts(20, false), 3).unwrap();
    assert!((esd.support_upper() - 2.0).abs() < 0.06);
    assert!(*esd.atoms().last().unwrap() < 0.01);
}

#[test]
fn fast_path_matches_mp_law() {
    let esd = simulate_esd(&white(200, 400, 1.0), &opts(20, false), 4).unwrap();
    assert!(esd.atoms().len() >= 4000);
    let ks = ks_against(esd.atoms(), |x| mp_cdf(0.5, x));
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn dense_path_matches_mp_law() {
    let esd = simulate_esd(&white(40, 80, 1.0), &opts(10, true), 5).unwrap();
    let ks = ks_against(esd.atoms(), |x| mp_cdf(0.5, x));
    // one-sample KS critical value at alpha = 0.01 for 400 atoms
    assert!(ks < 1.63 / 20.0, "KS {ks}");
}

#[test]
fn fast_and_dense_paths_agree() {
    let a = simulate_esd(&white(50, 100, 2.0), &opts(8, false), 6).unwrap();
    let b = simulate_esd(&white(50, 100, 2.0), &opts(8, true), 7).unwrap();
    let ks = ks_two_sample(a.atoms(), b.atoms());
    assert!(ks < 1.63 * (2.0_f64 / 400.0).sqrt(), "KS {ks}");
}

#[test]
fn library_mp_quantiles_match_quadrature() {
    for gamma in [0.1, 0.5, 1.0] {
        let law = MpLaw::new(gamma, 1.0).unwrap();
        for p in [0.1, 0.5, 0.9] {
            let x = mp_quantile(&law, p).unwrap();
            assert!((mp_cdf(gamma, x) - p).abs() < 1e-3, "gamma {gamma} p {p}");
        }
    }
}

#[test]
fn mp_median_matches_large_simulation() {
    let esd = simulate_esd(&white(200, 200, 1.0), &opts(10, false), 8).unwrap();
    let mut eig: Vec<f64> = esd.atoms().iter().map(|a| a * a).collect();
    eig.sort_by(f64::total_cmp);
    let emp = 0.5 * (eig[999] + eig[1000]);
    let med = mp_quantile(&MpLaw::new(1.0, 1.0).unwrap(), 0.5).unwrap();
    assert!((emp - med).abs() / med < 0.01, "{emp} vs {med}");
}

#[test]
fn d_transform_matches_mp_quadrature() {
    let gamma: f64 = 0.5;
    let esd = simulate_esd(&white(100, 200, 1.0), &opts(10, false), 9).unwrap();
    let edge = 1.0 + gamma.sqrt();
    for k in 0..10 {
        let x = edge * (1.1 + 0.2 * k as f64);
        let phi = mp_expect(gamma, |l| x / (x * x - l));
        let want = phi * (gamma * phi + (1.0 - gamma) / x);
        let (d, _) = d_transform(x, &esd).unwrap();
        assert!((d - want).abs() / want < 0.01, "x {x}: {d} vs {want}");
    }
}

#[test]
fn derivative_matches_finite_differences() {
    let esd = simulate_esd(&white(50, 100, 1.0), &opts(10, false), 10).unwrap();
    let x = 2.0 * esd.support_upper();
    let h = 1e-5 * x;
    let (_, dd) = d_transform(x, &esd).unwrap();
    let fd =
        (d_transform(x + h, &esd).unwrap().0 - d_transform(x - h, &esd).unwrap().0) / (2.0 * h);
    assert!((dd - fd).abs() / dd.abs() < 1e-5);

    let esd = simulate_esd(
        &PatchCovariance::stationary(random_spd(12, 1), 30),
        &opts(10, true),
        11,
    )
    .unwrap();
    for f in [1.2, 1.5, 3.0] {
        let x = f * esd.support_upper();
        let h = 1e-5 * x;
        let (_, dd) = d_transform(x, &esd).unwrap();
        let fd =
            (d_transform(x + h, &esd).unwrap().0 - d_transform(x - h, &esd).unwrap().0) / (2.0 * h);
        assert!((dd - fd).abs() / dd.abs() < 1e-4, "x {x}");
    }
}

#[test]
fn d_transform_positive_and_decreasing_above_edge() {
    let covs = [
        white(30, 60, 1.0),
        PatchCovariance::stationary(random_spd(10, 2), 40),
        PatchCovariance {
            blocks: vec![
                CovBlock {
                    sigma: random_spd(8, 3),
                    volumes: (0..10).collect(),
                },
                CovBlock {
                    sigma: random_spd(8, 4),
                    volumes: (10..16).collect(),
                },
            ],
        },
    ];
    for (i, cov) in covs.iter().enumerate() {
        let esd = simulate_esd(cov, &opts(10, false), 12 + i as u64).unwrap();
        let e = esd.support_upper();
        let mut prev = f64::INFINITY;
        for k in 1..=100 {
            let x = e * (1.0 + 0.03 * k as f64);
            let (d, dd) = d_transform(x, &esd).unwrap();
            assert!(d > 0.0 && dd < 0.0 && d < prev, "case {i} at {x}");
            prev = d;
        }
        let big = 1e4 * e;
        let tail = d_transform(big, &esd).unwrap().0 * big * big;
        assert!((tail - 1.0).abs() < 1e-6);
    }
}

#[test]
fn scale_equivariance_with_shared_seed() {
    let c = 3.7;
    for (cov, dense) in [
        (white(20, 50, 1.0), false),
        (PatchCovariance::stationary(random_spd(15, 5), 25), true),
    ] {
        let a = simulate_esd(&cov, &opts(6, dense), 13).unwrap();
        let b = simulate_esd(&cov.scaled(c), &opts(6, dense), 13).unwrap();
        let s = c.sqrt();
        for (x, y) in a.atoms().iter().zip(b.atoms()) {
            assert!((y - s * x).abs() <= 1e-10 * (s * x).max(1.0));
        }
        for f in [1.3, 2.0, 5.0] {
            let x = f * a.support_upper();
            let (da, _) = d_transform(x, &a).unwrap();
            let (db, _) = d_transform(s * x, &b).unwrap();
            assert!((db - da / c).abs() / (da / c) < 1e-10);
        }
    }
}

#[test]
fn zero_covariance_is_noiseless() {
    let esd = simulate_esd(&white(10, 20, 0.0), &opts(4, false), 0).unwrap();
    assert!(esd.atoms().iter().all(|&a| a == 0.0));
    let x = 1.7;
    let (d, dd) = d_transform(x, &esd).unwrap();
    assert!((d - 1.0 / (x * x)).abs() < 1e-14);
    assert!((dd + 2.0 / x.powi(3)).abs() < 1e-14);
}

#[test]
fn dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let esd = simulate_esd(&white(16, 32, 1.0), &opts(10, false), 14).unwrap();
    let path = dir.path().join("esd.json");
    esd.save(&path).unwrap();
    assert_eq!(EsdModel::load(&path).unwrap(), esd);
}

#[test]
fn simulation_is_reproducible() {
    let cov = PatchCovariance::stationary(random_spd(9, 6), 18);
    let a = simulate_esd(&cov, &opts(5, false), 99).unwrap();
    let b = simulate_esd(&cov, &opts(5, false), 99).unwrap();
    assert_eq!(a, b);
}
