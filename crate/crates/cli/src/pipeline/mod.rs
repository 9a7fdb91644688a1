mod charge;
mod fields;
mod parity;
mod reproduce;
mod spectrum;

use std::path::Path;

pub use charge::{
    charge_pipeline, cmd_charge_pipeline, power_law_fit, ChargeReport, PowerLawReport, TemperatureReport,
};
pub use fields::{cmd_fields, fields_pipeline, FieldsReport, ReciprocityPoint, VolumeRow};
pub use parity::{cmd_parity_pipeline, parity_pipeline, ParityReport};
pub use reproduce::{cmd_reproduce, ReproduceReport, SummaryRow};
pub use spectrum::{cmd_spectrum, spectrum_pipeline, SpectrumReport};

use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::{Artifacts, RunManifest};

/// A command's typed report together with the manifest it sealed.
#[derive(Debug, Clone)]
pub struct Outcome<T> {
    pub report: T,
    pub manifest: RunManifest,
}

/// Runs `f` as a named stage: its files are attributed to `name` and its
/// result is recorded in the manifest.
pub(crate) fn stage<T>(art: &mut Artifacts, name: &str, f: impl FnOnce(&mut Artifacts) -> Result<T>) -> Result<T> {
    art.begin(name);
    let r = f(art);
    art.finish(name, r.as_ref().map(|_| ()).map_err(|e| e.to_string()));
    r
}

/// Single-pipeline command: run, then seal the manifest whether or not the
/// pipeline succeeded, so partial outputs are marked.
pub(crate) fn single<T>(
    command: &str,
    cfg: &RunConfig,
    out: &Path,
    f: impl FnOnce(&RunConfig, &mut Artifacts) -> Result<T>,
) -> Result<Outcome<T>> {
    let eff = cfg.effective();
    let mut art = Artifacts::create(out)?;
    let r = f(&eff, &mut art);
    let manifest = art.seal(command, cfg)?;
    r.map(|report| Outcome { report, manifest })
}
