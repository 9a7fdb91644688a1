use std::path::Path;

use chargenoise::io::spectrum_to_csv;
use chargenoise::spectrum::{parity_bands, spectrum_scan, uniform_grid, ParityBands, TransmonParams};
use serde::{Deserialize, Serialize};

use super::{single, stage, Outcome};
use crate::config::{RunConfig, SpectrumSection};
use crate::error::{Result, StageExt};
use crate::manifest::Artifacts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub params: TransmonParams,
    pub n_cut: usize,
    /// GHz.
    pub convergence_delta: f64,
    /// Adjacent transitions `m -> m+1`.
    pub bands: Vec<ParityBands>,
    /// Peak-to-peak 0-1 frequency variation with offset charge, Hz.
    pub f01_spread_hz: f64,
    /// Dispersion strictly grows with transition index.
    pub hierarchy: bool,
}

pub fn spectrum_pipeline(sec: &SpectrumSection, art: &mut Artifacts) -> Result<SpectrumReport> {
    stage(art, "spectrum/scan", |art| {
        let params = TransmonParams::new(sec.e_j, sec.e_c).stage("spectrum/scan")?;
        let table =
            spectrum_scan(&params, &uniform_grid(sec.grid_points), sec.max_level, sec.n_cut).stage("spectrum/scan")?;
        let bands = (0..sec.max_level)
            .map(|m| parity_bands(&table, m, m + 1))
            .collect::<chargenoise::Result<Vec<_>>>()
            .stage("spectrum/scan")?;
        art.write("spectrum.csv", spectrum_to_csv(&table).as_bytes())?;
        let report = SpectrumReport {
            params,
            n_cut: sec.n_cut,
            convergence_delta: table.convergence_delta,
            f01_spread_hz: bands.first().map_or(0.0, |b| 2.0 * b.eps * 1e9),
            hierarchy: bands.windows(2).all(|w| w[0].eps < w[1].eps),
            bands,
        };
        art.write_json("parity_bands.json", &report)?;
        Ok(report)
    })
}

pub fn cmd_spectrum(cfg: &RunConfig, out: &Path) -> Result<Outcome<SpectrumReport>> {
    single("spectrum", cfg, out, |c, art| spectrum_pipeline(&c.spectrum, art))
}
