pub mod denoise;
pub mod esd;
pub mod gamma;
pub mod simulate;
pub mod validate;

use std::path::Path;

use gsvs::cvol::read_cvol;
use gsvs::{ComplexVolumeSet, NoiseModel};

use crate::{CliResult, Failure};

/// Read the input volumes and noise model and reconcile their schedules.
pub(crate) fn read_inputs(
    input: &Path,
    noise: &Path,
) -> CliResult<(ComplexVolumeSet, NoiseModel, Option<Vec<usize>>)> {
    let (vols, schedule) = read_cvol(input).map_err(|e| located(e, input))?;
    let model = NoiseModel::load(noise).map_err(|e| located(e, noise))?;
    if vols.dims() != model.dims() {
        return Err(Failure::Dimension(format!(
            "volumes {:?} and noise model {:?} differ",
            vols.dims(),
            model.dims()
        )));
    }
    if let (Some(a), Some(b)) = (&schedule, model.schedule()) {
        if a.as_slice() != b {
            return Err(Failure::Dimension(
                "input schedule differs from the noise model schedule".into(),
            ));
        }
    }
    let schedule = schedule.or_else(|| model.schedule().map(<[usize]>::to_vec));
    model.check_volume_count(vols.n_volumes())?;
    Ok((vols, model, schedule))
}

/// Prefix I/O errors with the offending path.
pub(crate) fn located(e: gsvs::GsvsError, path: &Path) -> Failure {
    match e {
        gsvs::GsvsError::Io(io) => Failure::usage(format!("{}: {io}", path.display())),
        other => other.into(),
    }
}
