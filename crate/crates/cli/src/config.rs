//! JSON run configuration. Every section has defaults, so `{}` is a valid
//! config. Seeds live only at the top level; each stage derives its own
//! stream from it.

use std::path::{Path, PathBuf};

use chargenoise::classify::SelectionConfig;
use chargenoise::fields::DeviceGeometryConfig;
use chargenoise::spectrum::{TransmonParams, DEFAULT_N_CUT};
use chargenoise::synth::{ChargeEnvConfig, IqClusterModel};
use chargenoise::Execution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CHARGENOISE_OUT";
pub const DEFAULT_OUT: &str = "chargenoise-out";
/// Duration divisor applied by `--quick`.
pub const QUICK_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// `error`, `warn`, `info`, `debug` or `trace`.
    pub verbosity: String,
    pub quick: bool,
    pub execution: Execution,
    pub spectrum: SpectrumSection,
    pub parity: ParitySection,
    pub charge: ChargeSection,
    pub fields: FieldsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: None,
            verbosity: "warn".into(),
            quick: false,
            execution: Execution::default(),
            spectrum: SpectrumSection::default(),
            parity: ParitySection::default(),
            charge: ChargeSection::default(),
            fields: FieldsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// GHz.
    pub e_j: f64,
    /// GHz.
    pub e_c: f64,
    pub n_cut: usize,
    /// Gate-charge points over `[0, 1]`; must be `4m + 1` so that 0.25 and
    /// 0.5 are on the grid.
    pub grid_points: usize,
    pub max_level: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        let p = TransmonParams::tantalum_device();
        SpectrumSection { e_j: p.e_j, e_c: p.e_c, n_cut: DEFAULT_N_CUT, grid_points: 101, max_level: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParitySection {
    /// Planted mean time between flips, s.
    pub dwell_time: f64,
    /// Time per even/odd probe pair, s.
    pub duty_cycle: f64,
    pub duration: f64,
    /// Width of the default quadrant clusters.
    pub cluster_sigma: f64,
    /// Readout relaxation 2 -> 1 of the default clusters.
    pub relax_21: f64,
    /// Full cluster model; overrides `cluster_sigma` and `relax_21`.
    pub clusters: Option<IqClusterModel>,
    pub gmm_samples: usize,
    pub gmm_restarts: usize,
    pub hmm_restarts: usize,
    pub hmm_max_iter: usize,
    pub psd_segment_len: usize,
    /// Upper edge of the Lorentzian fit band, Hz.
    pub fit_f_max: f64,
    pub write_shots: bool,
}

impl Default for ParitySection {
    fn default() -> Self {
        ParitySection {
            dwell_time: 5.9e-3,
            duty_cycle: 50e-6,
            duration: 60.0,
            cluster_sigma: 0.55,
            relax_21: 0.1,
            clusters: None,
            gmm_samples: 60_000,
            gmm_restarts: 2,
            hmm_restarts: 2,
            hmm_max_iter: 300,
            psd_segment_len: 16_384,
            fit_f_max: 5000.0,
            write_shots: true,
        }
    }
}

impl ParitySection {
    pub fn cluster_model(&self) -> IqClusterModel {
        self.clusters.clone().unwrap_or_else(|| IqClusterModel::quadrants(self.cluster_sigma, self.relax_21))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargeSection {
    pub offsets: Vec<f64>,
    pub neighbor_rate: f64,
    pub reference_temperature: f64,
    pub temperature_exponent: f64,
    pub next_nearest_weight: f64,
    pub scramble_rate: f64,
    pub temperatures: Vec<f64>,
    pub sample_interval: f64,
    pub duration: f64,
    pub noise_sigma: f64,
    /// Largest mixture order tried by model selection.
    pub max_order: usize,
    /// Fixes the number of configurations and skips selection.
    pub order: Option<usize>,
    pub selection_samples: usize,
    pub selection_restarts: usize,
    pub offset_noise: PowerLawSection,
    pub frequency_noise: PowerLawSection,
}

impl Default for ChargeSection {
    fn default() -> Self {
        let e = ChargeEnvConfig::default();
        ChargeSection {
            offsets: e.offsets,
            neighbor_rate: e.neighbor_rate,
            reference_temperature: e.reference_temperature,
            temperature_exponent: e.temperature_exponent,
            next_nearest_weight: e.next_nearest_weight,
            scramble_rate: e.scramble_rate,
            temperatures: e.temperatures,
            sample_interval: e.sample_interval,
            duration: e.duration,
            noise_sigma: e.noise_sigma,
            max_order: 19,
            order: None,
            selection_samples: 3000,
            selection_restarts: 4,
            offset_noise: PowerLawSection { alpha: 1.94, amplitude: 1.11e-6, dt: 10.0, samples: 25_200 },
            frequency_noise: PowerLawSection { alpha: 2.06, amplitude: 7.4e5, dt: 1.0, samples: 25_200 },
        }
    }
}

impl ChargeSection {
    pub fn env(&self, seed: u64) -> ChargeEnvConfig {
        ChargeEnvConfig {
            offsets: self.offsets.clone(),
            neighbor_rate: self.neighbor_rate,
            reference_temperature: self.reference_temperature,
            temperature_exponent: self.temperature_exponent,
            next_nearest_weight: self.next_nearest_weight,
            scramble_rate: self.scramble_rate,
            temperatures: self.temperatures.clone(),
            sample_interval: self.sample_interval,
            duration: self.duration,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }

    /// Model-order selection settings used by the charge pipeline.
    pub fn selection_config(&self, seed: u64, exec: Execution) -> SelectionConfig {
        SelectionConfig {
            max_order: self.max_order,
            seed,
            restarts: self.selection_restarts,
            max_samples: self.selection_samples,
            silhouette_samples: self.selection_samples,
            exec,
            ..Default::default()
        }
    }
}

/// Planted power-law noise `S(f) = amplitude / f^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawSection {
    pub alpha: f64,
    /// Density at 1 Hz.
    pub amplitude: f64,
    /// Sample spacing, s.
    pub dt: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsSection {
    pub geometry: DeviceGeometryConfig,
    pub thresholds: Vec<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Direct solves at a few source points to cross-check reciprocity.
    pub reciprocity_check: bool,
    pub write_maps: bool,
}

impl Default for FieldsSection {
    fn default() -> Self {
        FieldsSection {
            geometry: DeviceGeometryConfig::default(),
            // Four per decade, 1e-3 to 1e-1.
            thresholds: (0..=8).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect(),
            tol: 1e-8,
            max_sweeps: 20_000,
            reciprocity_check: true,
            write_maps: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." || path.is_empty() {
                CliError::Config(inner.to_string())
            } else {
                CliError::Config(format!("field `{path}`: {inner}"))
            }
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    /// Output root: explicit config value, then the environment, then the
    /// built-in default.
    pub fn output_root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Config actually run: `--quick` divides every duration (and sample
    /// count) by [`QUICK_FACTOR`] and halves the field grid.
    pub fn effective(&self) -> RunConfig {
        if !self.quick {
            return self.clone();
        }
        let mut c = self.clone();
        c.parity.duration /= QUICK_FACTOR;
        c.charge.duration /= QUICK_FACTOR;
        for n in [&mut c.charge.offset_noise, &mut c.charge.frequency_noise] {
            n.samples = ((n.samples as f64 / QUICK_FACTOR) as usize).max(64);
        }
        c.fields.geometry.cells = (c.fields.geometry.cells / 2).max(16);
        c
    }

    /// SHA-256 of the canonical JSON of the effective config, excluding the
    /// output location, which does not affect results.
    pub fn digest(&self) -> String {
        let mut c = self.effective();
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
