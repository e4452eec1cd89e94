use std::path::PathBuf;

use gsvs::cvol::{write_cvol, write_real_map};
use gsvs::synth::{make_phantom, PhantomNoise};

use crate::args::SimulateArgs;
use crate::config::{check_threads, load, SimulateRun};
use crate::output::{with_threads, Staging};
use crate::{CliResult, Failure};

pub fn resolve(a: &SimulateArgs) -> CliResult<SimulateRun> {
    let path = a
        .common
        .config
        .as_ref()
        .ok_or_else(|| Failure::usage("simulate needs --config with a phantom spec"))?;
    let mut run: SimulateRun = load(path)?;
    if let Some(p) = &a.output {
        run.output = Some(p.clone());
    }
    if let Some(s) = a.common.seed {
        run.phantom.seed = s;
    }
    if a.common.threads.is_some() {
        run.threads = a.common.threads;
    }
    check_threads(run.threads)?;
    Ok(run)
}

/// Writes `noisy`, `truth` and `regions` CVOLs, the noise model `noise.json`
/// and, for corrupted phantoms, the applied `phase.json`.
pub fn run(a: SimulateArgs) -> CliResult<()> {
    let run = resolve(&a)?;
    let out = run.output.clone().unwrap_or_else(|| PathBuf::from("."));
    let p = with_threads(run.threads, || Ok(make_phantom(&run.phantom)?))?;
    let schedule = match &run.phantom.noise {
        PhantomNoise::Reconstructed { encoding, .. } => encoding.schedule.clone(),
        _ => None,
    };
    let stage = Staging::new(&out)?;
    write_cvol(&stage.path("noisy.json"), &p.noisy, schedule.as_deref())?;
    write_cvol(&stage.path("truth.json"), &p.truth, schedule.as_deref())?;
    let regions: Vec<f64> = p.regions.iter().map(|&r| r as f64).collect();
    write_real_map(
        &stage.path("regions.json"),
        p.truth.dims(),
        p.truth.spacing(),
        &regions,
    )?;
    p.noise_model.save(&stage.path("noise.json"))?;
    if let Some(phase) = &p.phase {
        stage.write_json("phase.json", phase)?;
    }
    stage.write_json(
        "phantom.json",
        &SimulateRun {
            threads: None,
            output: None,
            ..run.clone()
        },
    )?;
    stage.commit()?;
    println!(
        "wrote phantom {:?} x {} volumes to {}",
        p.truth.dims(),
        p.truth.n_volumes(),
        out.display()
    );
    Ok(())
}
