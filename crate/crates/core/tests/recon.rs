use gsvs::linalg::{cholesky_lower, complex_normal_matrix, is_hermitian, CMatrix, C64};
use gsvs::patch::PatchTable;
use gsvs::recon::*;
use gsvs::volume::linear_index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(dims: [usize; 3], encodings: Vec<Encoding>, schedule: Option<Vec<usize>>) -> EncodingSpec {
    EncodingSpec {
        dims,
        spacing_mm: [1.0; 3],
        coils: 4,
        coil_correlation: 0.3,
        encodings,
        schedule,
    }
}

fn under(u: usize) -> Encoding {
    Encoding {
        undersampling: u,
        ..Encoding::default()
    }
}

fn half(fraction: f64, filter: PfKind) -> Encoding {
    Encoding {
        partial_fourier: Some(PartialFourier {
            fraction,
            filter,
            flipped: false,
        }),
        ..Encoding::default()
    }
}

fn patch_near(table: &PatchTable, dims: [usize; 3], c: [usize; 3]) -> usize {
    let target = linear_index(dims, c);
    table
        .centers()
        .iter()
        .position(|&q| q == target)
        .expect("no patch at the requested center")
}

/// Sample covariance of one patch over `draws` independent noise-only
/// reconstructions of the (single-encoding) model.
fn mc_patch_cov(model: &EncodingModel, members: &[usize], draws: usize, seed: u64) -> CMatrix {
    let op = SenseOperator::new(model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = members.len();
    let mut acc = CMatrix::zeros(m, m);
    let batch = 500;
    let mut done = 0;
    while done < draws {
        let n = batch.min(draws - done);
        let z = white_kspace_noise(model, n, &mut rng);
        let x = sense_reconstruct(&z, &op, model.spacing()).unwrap();
        for v in 0..n {
            let vol = x.volume(v);
            let col = CMatrix::from_fn(m, 1, |i, _| vol[members[i]]);
            acc += &col * col.adjoint();
        }
        done += n;
    }
    acc / C64::new(draws as f64, 0.0)
}

fn rel_frobenius(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm()
}

fn check_propagation(enc: Encoding, center: [usize; 3]) {
    let dims = [16, 16, 1];
    let model = spec(dims, vec![enc], None).build().unwrap();
    let noise = propagate_noise(&model).unwrap();
    let table = PatchTable::build(dims, [1.0; 3], 6, 1).unwrap();
    let id = patch_near(&table, dims, center);
    let analytic = &noise.local_covariance(&table, id, 1).unwrap().blocks[0].sigma;
    let mc = mc_patch_cov(&model, table.members(id), 10_000, 11);
    let err = rel_frobenius(&mc, analytic);
    assert!(err < 0.05, "{:?}: relative error {err}", noise.case());
}

#[test]
fn full_matches_monte_carlo() {
    check_propagation(Encoding::default(), [8, 8, 0]);
}

#[test]
fn under_matches_monte_carlo() {
    check_propagation(under(2), [3, 7, 0]);
}

#[test]
fn half_zero_fill_matches_monte_carlo() {
    check_propagation(half(0.75, PfKind::ZeroFill), [8, 8, 0]);
}

#[test]
fn half_ramp_matches_monte_carlo() {
    check_propagation(half(0.75, PfKind::Ramp), [5, 10, 0]);
}

#[test]
fn under_patch_has_one_aliased_pair() {
    let dims = [4, 4, 1];
    let model = spec(dims, vec![under(2)], None).build().unwrap();
    let noise = propagate_noise(&model).unwrap();
    let table = PatchTable::build(dims, [1.0; 3], 5, 1).unwrap();
    let id = patch_near(&table, dims, [1, 1, 0]);
    let sigma = &noise.local_covariance(&table, id, 1).unwrap().blocks[0].sigma;
    let mut pairs = 0;
    for i in 0..5 {
        for j in i + 1..5 {
            if sigma[(i, j)].norm() > 1e-12 {
                assert!((sigma[(i, j)] - sigma[(j, i)].conj()).norm() < 1e-12);
                pairs += 1;
            }
        }
    }
    assert_eq!(pairs, 1);
}

#[test]
fn full_and_under_patches_are_diagonal_without_partners() {
    let dims = [16, 16, 1];
    let table = PatchTable::build(dims, [1.0; 3], 5, 2).unwrap();
    for enc in [Encoding::default(), under(2)] {
        let noise = propagate_noise(&spec(dims, vec![enc], None).build().unwrap()).unwrap();
        for id in 0..table.len() {
            let s = &noise.local_covariance(&table, id, 1).unwrap().blocks[0].sigma;
            let off: f64 = (0..5)
                .flat_map(|i| (0..5).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| s[(i, j)].norm())
                .sum();
            assert!(off < 1e-12, "patch {id}");
        }
    }
}

#[test]
fn emitted_covariances_are_hermitian_psd() {
    let dims = [16, 16, 1];
    let table = PatchTable::build(dims, [1.0; 3], 7, 3).unwrap();
    let cases = vec![
        (vec![Encoding::default()], None),
        (vec![under(2)], None),
        (vec![under(4)], None),
        (vec![half(0.625, PfKind::Ramp)], None),
        (
            vec![Encoding::default(), under(2), half(0.75, PfKind::ZeroFill)],
            Some(vec![0, 1, 2, 0, 1, 2]),
        ),
    ];
    for (encs, schedule) in cases {
        let n = schedule.as_ref().map_or(1, Vec::len);
        let noise = propagate_noise(&spec(dims, encs, schedule).build().unwrap()).unwrap();
        for id in 0..table.len() {
            for b in noise.local_covariance(&table, id, n).unwrap().blocks {
                assert!(is_hermitian(&b.sigma, 1e-12));
                let ridge = 1e-10 * b.sigma.trace().re.max(1.0);
                let shifted = &b.sigma + CMatrix::identity(7, 7) * C64::new(ridge, 0.0);
                assert!(cholesky_lower(&shifted).is_some(), "patch {id} not PSD");
            }
        }
    }
}

#[test]
fn inter_blocks_partition_volumes() {
    let dims = [8, 8, 1];
    let schedule = vec![0, 1, 1, 0, 0, 1, 0];
    let model = spec(
        dims,
        vec![Encoding::default(), under(2)],
        Some(schedule.clone()),
    )
    .build()
    .unwrap();
    let noise = propagate_noise(&model).unwrap();
    let table = PatchTable::build(dims, [1.0; 3], 5, 2).unwrap();
    let pc = noise.local_covariance(&table, 0, schedule.len()).unwrap();
    assert_eq!(pc.blocks.len(), 2);
    let mut all: Vec<usize> = pc.blocks.iter().flat_map(|b| b.volumes.clone()).collect();
    all.sort_unstable();
    assert_eq!(all, (0..schedule.len()).collect::<Vec<_>>());
    for (a, b) in pc.blocks.iter().enumerate() {
        assert!(b.volumes.iter().all(|&n| schedule[n] == a));
    }
}

/// Dense encoding matrix built column by column from the forward model.
fn explicit_encoding(model: &EncodingModel) -> CMatrix {
    let q: usize = model.dims().iter().product();
    let mut cols = Vec::with_capacity(q);
    for v in 0..q {
        let mut e = vec![C64::new(0.0, 0.0); q];
        e[v] = C64::new(1.0, 0.0);
        let kv = encode_volume(model, model.sensitivities(), &e, 0).unwrap();
        cols.push(kv.coils.concat());
    }
    CMatrix::from_fn(cols[0].len(), q, |i, j| cols[j][i])
}

#[test]
fn sense_matches_explicit_least_squares() {
    let dims = [8, 8, 1];
    let model = spec(dims, vec![under(2)], None).build().unwrap();
    let q = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = complex_normal_matrix(q, 1, &mut rng);
    let mut z = encode_volume(&model, model.sensitivities(), x.as_slice(), 0).unwrap();
    let noise = channel_kspace_noise(&model, 1, &mut rng).unwrap();
    z = KSpace { volumes: vec![z] }
        .add(&noise)
        .unwrap()
        .volumes
        .remove(0);

    let (zw, _) = whiten_channels(
        &KSpace {
            volumes: vec![z.clone()],
        },
        &model,
    )
    .unwrap();
    let op = SenseOperator::new(&model).unwrap();
    let got = sense_reconstruct(&zw, &op, [1.0; 3]).unwrap();

    // generalized least squares with the channel covariance on the raw data
    let e = explicit_encoding(&model);
    let rq = z.coils[0].len();
    let lambda = model.channel_cov();
    let lam_inv = lambda.clone().try_inverse().unwrap();
    let c = model.n_coils();
    let w = CMatrix::from_fn(c * rq, c * rq, |i, j| {
        if i % rq == j % rq {
            lam_inv[(i / rq, j / rq)]
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let zvec = CMatrix::from_column_slice(c * rq, 1, &z.coils.concat());
    let normal = e.adjoint() * &w * &e;
    let rhs = e.adjoint() * &w * zvec;
    let want = normal.cholesky().unwrap().solve(&rhs);
    let err = (0..q)
        .map(|i| (got.data()[i] - want[i]).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-10, "max deviation {err}");
}

#[test]
fn reconstruction_is_linear() {
    let dims = [8, 16, 2];
    let model = spec(dims, vec![half(0.75, PfKind::Ramp)], None)
        .build()
        .unwrap();
    let op = SenseOperator::new(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z1 = white_kspace_noise(&model, 2, &mut rng);
    let z2 = white_kspace_noise(&model, 2, &mut rng);
    let sum = sense_reconstruct(&z1.add(&z2).unwrap(), &op, [1.0; 3]).unwrap();
    let a = sense_reconstruct(&z1, &op, [1.0; 3]).unwrap();
    let b = sense_reconstruct(&z2, &op, [1.0; 3]).unwrap();
    let err = sum
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(s, (x, y))| (s - x - y).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-10);
}

#[test]
fn channel_whitening_decorrelates() {
    let dims = [8, 8, 1];
    let model = EncodingModel::new(
        dims,
        [1.0; 3],
        synthetic_sensitivities(dims, 2),
        correlated_channel_cov(2, 0.5),
        vec![Encoding::default()],
        None,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = channel_kspace_noise(&model, 1600, &mut rng).unwrap();
    let (w, _) = whiten_channels(&z, &model).unwrap();
    let mut cov = CMatrix::zeros(2, 2);
    let mut count = 0.0;
    for v in &w.volumes {
        for i in 0..v.coils[0].len() {
            let s = CMatrix::from_fn(2, 1, |c, _| v.coils[c][i]);
            cov += &s * s.adjoint();
            count += 1.0;
        }
    }
    assert!(count >= 1e5);
    cov /= C64::new(count, 0.0);
    let dev = (cov - CMatrix::identity(2, 2)).camax();
    assert!(dev < 0.02, "deviation {dev}");
}

#[test]
fn patch_whitening_gives_identity_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = 4;
    let g = complex_normal_matrix(m, m, &mut rng);
    let sigma = &g * g.adjoint() + CMatrix::identity(m, m) * C64::new(0.5, 0.0);
    let l = cholesky_lower(&sigma).unwrap();
    let draws = 100_000;
    let noise = &l * complex_normal_matrix(m, draws, &mut rng);
    let w = whiten_patch(&noise, &sigma).unwrap();
    assert!(!w.regularized);
    let cov = &w.matrix * w.matrix.adjoint() / C64::new(draws as f64, 0.0);
    let dev = (cov - CMatrix::identity(m, m)).camax();
    assert!(dev < 0.03, "deviation {dev}");
}

#[test]
fn noise_model_survives_save_and_load() {
    let dims = [8, 8, 2];
    let dir = tempfile::tempdir().unwrap();
    for encs in [
        vec![Encoding::default()],
        vec![under(2)],
        vec![half(0.75, PfKind::ZeroFill)],
    ] {
        let noise = propagate_noise(&spec(dims, encs, None).build().unwrap()).unwrap();
        let path = dir.path().join("noise.json");
        noise.save(&path).unwrap();
        let back = NoiseModel::load(&path).unwrap();
        assert_eq!(back.case(), noise.case());
        let table = PatchTable::build(dims, [1.0; 3], 6, 2).unwrap();
        for id in 0..table.len() {
            let a = &noise.local_covariance(&table, id, 1).unwrap().blocks[0].sigma;
            let b = &back.local_covariance(&table, id, 1).unwrap().blocks[0].sigma;
            assert!(rel_frobenius(b, a) < 1e-6);
        }
    }
}
