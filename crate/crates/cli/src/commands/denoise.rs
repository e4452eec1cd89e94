use gsvs::cvol::{write_cvol, write_real_map};
use gsvs::pipeline::{default_candidates, DEFAULT_SCAN_STRIDE};
use gsvs::{denoise, denoise_interleaved, GammaChoice, InterleavedMode, RecoveryReport, Rule};
use serde::Serialize;

use super::read_inputs;
use crate::args::{DenoiseArgs, ModeArg, RuleArg, WeightsArg};
use crate::config::{check_threads, load_or_default, require, DenoiseRun};
use crate::output::{sibling_name, with_threads, Staging};
use crate::{CliResult, Failure};
use gsvs::pipeline::WeightKind;

/// Merge the config file and flags into one validated run description.
pub fn resolve(a: &DenoiseArgs) -> CliResult<DenoiseRun> {
    let mut run: DenoiseRun = load_or_default(a.common.config.as_ref())?;
    let cfg = &mut run.denoise;
    if let Some(p) = &a.input {
        run.input = Some(p.clone());
    }
    if let Some(p) = &a.noise {
        run.noise = Some(p.clone());
    }
    if let Some(p) = &a.output {
        run.output = Some(p.clone());
    }
    if let Some(g) = a.gamma {
        if a.candidates.is_some() || a.stride_gamma.is_some() {
            return Err(Failure::usage(
                "--candidates and --stride-gamma only apply to a gamma scan",
            ));
        }
        cfg.gamma = GammaChoice::Fixed(g);
    } else if a.scan_gamma || a.candidates.is_some() || a.stride_gamma.is_some() {
        let (mut candidates, mut stride) = match &cfg.gamma {
            GammaChoice::Scan { candidates, stride } => (candidates.clone(), *stride),
            GammaChoice::Fixed(_) => (default_candidates(), DEFAULT_SCAN_STRIDE),
        };
        if let Some(c) = &a.candidates {
            candidates = c.clone();
        }
        if let Some(s) = a.stride_gamma {
            stride = s;
        }
        cfg.gamma = GammaChoice::Scan { candidates, stride };
    }
    if let Some(r) = a.rule {
        cfg.rule = match r {
            RuleArg::Shrink => Rule::Shrink,
            RuleArg::Truncate => Rule::Truncate,
        };
    }
    if let Some(w) = a.weights {
        cfg.weights = match w {
            WeightsArg::Uniform => WeightKind::Uniform,
            WeightsArg::Invvar => WeightKind::InverseVariance,
            WeightsArg::Gaussian => WeightKind::Gaussian,
        };
    }
    if a.gaussian_sigma.is_some() {
        cfg.gaussian_sigma_mm = a.gaussian_sigma;
    }
    if a.no_phase_correction {
        cfg.phase_correction = false;
    }
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    if let Some(b) = a.oversample_b {
        cfg.esd.oversample = b;
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if a.whitened {
        cfg.whitened = true;
    }
    if a.no_esd_cache {
        cfg.esd_cache = false;
    }
    if let Some(m) = a.mode {
        run.mode = Some(match m {
            ModeArg::Spe => InterleavedMode::Spe,
            ModeArg::Jpe => InterleavedMode::Jpe,
        });
    }
    if a.common.threads.is_some() {
        run.threads = a.common.threads;
    }
    run.denoise.validate()?;
    check_threads(run.threads)?;
    require(&run.input, "input")?;
    require(&run.noise, "noise")?;
    require(&run.output, "output")?;
    Ok(run)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    tool: &'static str,
    version: &'static str,
    /// Resolved run config; the worker count is left out because it does
    /// not affect the result.
    config: &'a DenoiseRun,
    report: &'a RecoveryReport,
}

pub fn run(a: DenoiseArgs) -> CliResult<()> {
    let run = resolve(&a)?;
    let (input, noise_path, output) = (
        require(&run.input, "input")?,
        require(&run.noise, "noise")?,
        require(&run.output, "output")?,
    );
    let (vols, noise, schedule) = read_inputs(input, noise_path)?;
    if run.mode.is_some() && noise.schedule().is_none() {
        return Err(Failure::Schedule(
            "interleaved processing needs a noise model with a volume schedule".into(),
        ));
    }
    let cfg = &run.denoise;
    let (x, report) = with_threads(run.threads, || {
        Ok(match run.mode {
            Some(mode) => denoise_interleaved(&vols, &noise, mode, cfg)?,
            None => denoise(&vols, &noise, cfg)?,
        })
    })?;

    let (stage, name) = Staging::for_file(output)?;
    write_cvol(&stage.path(&name), &x, schedule.as_deref())?;
    let embedded = DenoiseRun {
        threads: None,
        ..run.clone()
    };
    stage.write_json(
        &sibling_name(output, "report.json"),
        &ReportFile {
            tool: "gsvs",
            version: env!("CARGO_PKG_VERSION"),
            config: &embedded,
            report: &report,
        },
    )?;
    let maps = report.voxel_maps()?;
    let mut layers = vec![
        ("rank", maps.rank),
        ("rank_percent", maps.rank_percent),
        ("amse", maps.amse),
    ];
    if let Some(s) = maps.sigma {
        layers.push(("sigma", s));
    }
    for (label, values) in layers {
        let p = stage.path(&sibling_name(output, &format!("{label}.json")));
        write_real_map(&p, vols.dims(), vols.spacing(), &values)?;
    }
    stage.commit()?;
    let ramse = report
        .ramse_global
        .map_or("n/a".to_string(), |r| format!("{r:.6e}"));
    println!(
        "denoised {} volumes, gamma {} (M={}), {} of {} patches detected, RAMSE {ramse}",
        report.n_volumes,
        report.gamma,
        report.patch_size,
        report.detected_patches,
        report.patches.len().max(
            report
                .encodings
                .iter()
                .filter_map(|e| e.report.as_ref())
                .map(|r| r.patches.len())
                .sum()
        ),
    );
    Ok(())
}
