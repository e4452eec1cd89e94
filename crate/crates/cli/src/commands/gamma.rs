use gsvs::pipeline::{demodulate, estimate_gamma_with, estimate_linear_phase, ScanOptions};
use gsvs::GammaScan;
use serde::Serialize;

use super::read_inputs;
use crate::args::GammaArgs;
use crate::config::{check_threads, load_or_default, require, GammaRun};
use crate::output::{sibling_name, with_threads, Staging};
use crate::{CliResult, Failure};

pub fn resolve(a: &GammaArgs) -> CliResult<GammaRun> {
    let mut run: GammaRun = load_or_default(a.common.config.as_ref())?;
    if let Some(p) = &a.input {
        run.input = Some(p.clone());
    }
    if let Some(p) = &a.noise {
        run.noise = Some(p.clone());
    }
    if let Some(p) = &a.output {
        run.output = Some(p.clone());
    }
    if let Some(c) = &a.candidates {
        run.candidates = c.clone();
    }
    if let Some(s) = a.stride_gamma {
        run.stride = s;
    }
    if let Some(b) = a.oversample_b {
        run.esd.oversample = b;
    }
    if let Some(s) = a.common.seed {
        run.seed = s;
    }
    if a.no_phase_correction {
        run.phase_correction = false;
    }
    if a.whitened {
        run.whitened = true;
    }
    if a.common.threads.is_some() {
        run.threads = a.common.threads;
    }
    if run.candidates.is_empty() || run.candidates.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
        return Err(Failure::usage(
            "gamma candidates must be non-empty and lie in (0, 1)",
        ));
    }
    if run.stride == 0 || run.esd.oversample == 0 {
        return Err(Failure::usage("stride and oversampling must be positive"));
    }
    check_threads(run.threads)?;
    require(&run.input, "input")?;
    require(&run.noise, "noise")?;
    require(&run.output, "output")?;
    Ok(run)
}

#[derive(Serialize)]
struct ScanFile<'a> {
    /// `ok` or `no_detectable_signal`.
    status: &'static str,
    config: &'a GammaRun,
    scan: &'a GammaScan,
}

pub fn run(a: GammaArgs) -> CliResult<()> {
    let run = resolve(&a)?;
    let output = require(&run.output, "output")?;
    let (vols, noise, _) =
        read_inputs(require(&run.input, "input")?, require(&run.noise, "noise")?)?;
    let scan = with_threads(run.threads, || {
        let work = if run.phase_correction {
            demodulate(&vols, &estimate_linear_phase(&vols))?
        } else {
            vols.clone()
        };
        let opts = ScanOptions {
            stride: run.stride,
            esd: run.esd,
            seed: run.seed,
            esd_cache: run.esd_cache,
            whitened: run.whitened,
        };
        Ok(estimate_gamma_with(&work, &noise, &run.candidates, &opts)?)
    })?;
    let status = if scan.no_signal {
        "no_detectable_signal"
    } else {
        "ok"
    };
    let (stage, name) = Staging::for_file(output)?;
    let embedded = GammaRun {
        threads: None,
        ..run.clone()
    };
    stage.write_json(
        &name,
        &ScanFile {
            status,
            config: &embedded,
            scan: &scan,
        },
    )?;
    stage.write_text(&sibling_name(output, "csv"), &scan.to_csv())?;
    stage.commit()?;
    for g in &scan.skipped {
        eprintln!("warning: gamma {g} skipped, patch size below 2");
    }
    if scan.no_signal {
        println!(
            "no detectable signal; falling back to gamma {}",
            scan.chosen
        );
    } else {
        println!("chosen gamma {}", scan.chosen);
    }
    Ok(())
}
