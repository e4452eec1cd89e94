use std::path::PathBuf;

use serde::Serialize;

use crate::args::ValidateArgs;
use crate::config::{check_threads, load_or_default, ValidateRun};
use crate::output::{sibling_name, with_threads, Staging};
use crate::validate::{run_validation, to_csv, EncodingSummary};
use crate::{CliResult, Failure};

pub fn resolve(a: &ValidateArgs) -> CliResult<ValidateRun> {
    let mut run: ValidateRun = load_or_default(a.common.config.as_ref())?;
    if let Some(p) = &a.output {
        run.output = Some(p.clone());
    }
    if let Some(d) = a.draws {
        run.draws = d;
    }
    if let Some(m) = a.patch_size {
        run.patch_size = m;
    }
    if let Some(s) = a.stride {
        run.stride = s;
    }
    if let Some(s) = a.common.seed {
        run.seed = s;
    }
    if a.common.threads.is_some() {
        run.threads = a.common.threads;
    }
    run.validate()?;
    check_threads(run.threads)?;
    Ok(run)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    passed: bool,
    config: &'a ValidateRun,
    encodings: &'a [EncodingSummary],
}

pub fn run(a: ValidateArgs) -> CliResult<()> {
    let run = resolve(&a)?;
    let output = run
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("validate_noise.csv"));
    let (rows, summaries) = with_threads(run.threads, || Ok(run_validation(&run)?))?;
    let [lo, hi] = run.bounds;
    let mut failures = Vec::new();
    for s in &summaries {
        let line: Vec<String> = s
            .medians()
            .iter()
            .map(|(k, v)| format!("{k} {v:.4}"))
            .collect();
        println!(
            "encoding {}: {} patches, {}",
            s.encoding,
            s.patches,
            line.join(", ")
        );
        for (k, v) in s.medians() {
            if !(v >= lo && v <= hi) {
                failures.push(format!("encoding {} {k} median {v:.4}", s.encoding));
            }
        }
    }
    let (stage, name) = Staging::for_file(&output)?;
    stage.write_text(&name, &to_csv(&rows))?;
    stage.write_json(
        &sibling_name(&output, "json"),
        &SummaryFile {
            passed: failures.is_empty(),
            config: &ValidateRun {
                threads: None,
                ..run.clone()
            },
            encodings: &summaries,
        },
    )?;
    stage.commit()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "outside [{lo}, {hi}]: {}",
            failures.join("; ")
        )))
    }
}
