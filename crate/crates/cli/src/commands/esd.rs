use gsvs::patch::PatchTable;
use gsvs::recon::PatchCovariance;
use gsvs::volume::linear_index;
use gsvs::{simulate_esd, CMatrix, NoiseModel, C64};

use super::located;
use crate::args::EsdArgs;
use crate::config::{check_threads, load, require, EsdRun, EsdSource};
use crate::output::{with_threads, Staging};
use crate::{CliResult, Failure};

pub fn resolve(a: &EsdArgs) -> CliResult<EsdRun> {
    let mut run = match &a.common.config {
        Some(p) => load::<EsdRun>(p)?,
        None => {
            let (m, n) = match (a.patch_size, a.volumes) {
                (Some(m), Some(n)) => (m, n),
                _ => {
                    return Err(Failure::usage(
                        "esd needs --patch-size and --volumes (or a config)",
                    ))
                }
            };
            let source = match &a.noise {
                Some(noise) => {
                    let c = a
                        .center
                        .as_deref()
                        .ok_or_else(|| Failure::usage("--noise needs --center x,y,z"))?;
                    let center: [usize; 3] = c
                        .try_into()
                        .map_err(|_| Failure::usage("--center takes three coordinates"))?;
                    EsdSource::Model {
                        noise: noise.clone(),
                        center,
                        patch_size: m,
                        volumes: n,
                    }
                }
                None => EsdSource::White {
                    patch_size: m,
                    volumes: n,
                    sigma2: a.sigma2.unwrap_or(1.0),
                },
            };
            EsdRun {
                source,
                esd: Default::default(),
                seed: 0,
                output: None,
                threads: None,
            }
        }
    };
    if let Some(p) = &a.output {
        run.output = Some(p.clone());
    }
    if let Some(b) = a.oversample_b {
        run.esd.oversample = b;
    }
    if a.force_dense {
        run.esd.force_dense = true;
    }
    if let Some(s) = a.common.seed {
        run.seed = s;
    }
    if a.common.threads.is_some() {
        run.threads = a.common.threads;
    }
    if run.esd.oversample == 0 {
        return Err(Failure::usage("oversampling must be positive"));
    }
    check_threads(run.threads)?;
    require(&run.output, "output")?;
    Ok(run)
}

fn covariance(source: &EsdSource) -> CliResult<PatchCovariance> {
    match source {
        EsdSource::White {
            patch_size,
            volumes,
            sigma2,
        } => {
            if *patch_size == 0 || *volumes == 0 || !(*sigma2 >= 0.0) {
                return Err(Failure::usage(
                    "white source needs positive sizes and a non-negative variance",
                ));
            }
            Ok(PatchCovariance::stationary(
                CMatrix::identity(*patch_size, *patch_size) * C64::new(*sigma2, 0.0),
                *volumes,
            ))
        }
        EsdSource::Model {
            noise,
            center,
            patch_size,
            volumes,
        } => {
            let model = NoiseModel::load(noise).map_err(|e| located(e, noise))?;
            let dims = model.dims();
            if (0..3).any(|k| center[k] >= dims[k]) {
                return Err(Failure::Dimension(format!(
                    "center {center:?} outside the grid {dims:?}"
                )));
            }
            let table = PatchTable::build(dims, model.spacing(), *patch_size, 1)?;
            let target = linear_index(dims, *center);
            let id = table
                .centers()
                .iter()
                .position(|&c| c == target)
                .ok_or_else(|| Failure::Compute("no patch at the requested center".into()))?;
            Ok(model.local_covariance(&table, id, *volumes)?)
        }
    }
}

pub fn run(a: EsdArgs) -> CliResult<()> {
    let run = resolve(&a)?;
    let output = require(&run.output, "output")?;
    let cov = covariance(&run.source)?;
    let esd = with_threads(run.threads, || Ok(simulate_esd(&cov, &run.esd, run.seed)?))?;
    let (stage, name) = Staging::for_file(output)?;
    esd.save(&stage.path(&name))?;
    stage.commit()?;
    println!(
        "{} atoms, upper support edge {:.6}",
        esd.atoms().len(),
        esd.support_upper()
    );
    Ok(())
}
