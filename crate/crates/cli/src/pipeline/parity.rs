use std::path::Path;

use chargenoise::classify::{decode_parity, dwell_times, flip_agreement, FlipAgreement, ParityDecodeConfig};
use chargenoise::io::{label_path_to_csv, psd_to_csv, shots_to_csv};
use chargenoise::spectral::{fit_lorentzian, psd, resample_nearest_hold, FitConfig, LorentzianFit, PsdConfig};
use chargenoise::synth::{gen_parity_path, gen_parity_shots, ParityProcessConfig};
use chargenoise::Execution;
use serde::{Deserialize, Serialize};

use super::{single, stage, Outcome};
use crate::config::{ParitySection, RunConfig};
use crate::error::{Result, StageExt};
use crate::manifest::Artifacts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub planted_dwell: f64,
    pub duty_cycle: f64,
    pub duration: f64,
    pub shots: usize,
    pub undersampled: bool,
    pub warnings: Vec<String>,
    /// Fraction of shots whose binary outcome (ground vs excited) disagrees
    /// with the state before readout.
    pub misassignment: f64,
    pub component_states: Vec<usize>,
    pub flips: FlipAgreement,
    pub spurious_rate: f64,
    /// Spurious rate of the naive interleave of the two band paths.
    pub merged_spurious_rate: f64,
    /// Mean run length of the decoded path, s.
    pub run_length_dwell: f64,
    pub fit: LorentzianFit,
    /// Telegraph reading of the fitted corner, `1 / (pi fc)`, s.
    pub recovered_dwell: f64,
    pub dwell_rel_error: f64,
}

pub fn parity_pipeline(sec: &ParitySection, seed: u64, exec: Execution, art: &mut Artifacts) -> Result<ParityReport> {
    let process =
        ParityProcessConfig { dwell_time: sec.dwell_time, duty_cycle: sec.duty_cycle, duration: sec.duration, seed };
    let model = sec.cluster_model();

    let (path, shots) = stage(art, "parity/synth", |art| {
        let path = gen_parity_path(&process).stage("parity/synth")?;
        let shots = gen_parity_shots(&path, &model, &process).stage("parity/synth")?;
        if sec.write_shots {
            art.write("shots.csv", shots_to_csv(&shots).as_bytes())?;
        }
        art.write_json("planted_path.json", &path)?;
        Ok((path, shots))
    })?;

    let mut warnings = Vec::new();
    if !process.is_resolved() {
        let w = format!(
            "duty cycle {} s is not shorter than the dwell time {} s; flips are undersampled",
            process.duty_cycle, process.dwell_time
        );
        log::warn!("{w}");
        warnings.push(w);
    }

    let dec = stage(art, "parity/classify", |art| {
        let cfg = ParityDecodeConfig {
            gmm_samples: sec.gmm_samples,
            gmm_restarts: sec.gmm_restarts,
            hmm_restarts: sec.hmm_restarts,
            hmm_max_iter: sec.hmm_max_iter,
            seed,
            exec,
        };
        let dec = decode_parity(&shots, &model.means, &cfg).stage("parity/classify")?;
        art.write("decoded_path.csv", label_path_to_csv(&dec.fused).as_bytes())?;
        Ok(dec)
    })?;

    let fit = stage(art, "parity/spectral", |art| {
        let values: Vec<f64> = dec.fused.states.iter().map(|&s| s as f64).collect();
        let dt = 0.5 * process.duty_cycle;
        let series = resample_nearest_hold(&dec.fused.times, &values, dt).stage("parity/spectral")?;
        let seg = (series.len() >= sec.psd_segment_len).then_some(sec.psd_segment_len);
        let p = psd(&series, dt, &PsdConfig { segment_len: seg, ..Default::default() }).stage("parity/spectral")?;
        let fit = fit_lorentzian(&p, &FitConfig { f_min: 2.0 * p.df(), f_max: sec.fit_f_max, ..Default::default() })
            .stage("parity/spectral")?;
        art.write("psd.csv", psd_to_csv(&p).as_bytes())?;
        art.write_json("lorentzian_fit.json", &fit)?;
        Ok(fit)
    })?;

    stage(art, "parity/report", |art| {
        let wrong = shots
            .iter()
            .zip(&dec.observable)
            .filter(|(s, &o)| s.truth_state.map(|t| usize::from(t != 0)) != Some(o))
            .count();
        let flips = flip_agreement(&dec.fused, &path.flip_times, process.duty_cycle);
        let merged = flip_agreement(&dec.merged, &path.flip_times, process.duty_cycle);
        let runs = dwell_times(&dec.fused, 2).stage("parity/report")?;
        let report = ParityReport {
            planted_dwell: process.dwell_time,
            duty_cycle: process.duty_cycle,
            duration: process.duration,
            shots: shots.len(),
            undersampled: !process.is_resolved(),
            warnings,
            misassignment: wrong as f64 / shots.len() as f64,
            component_states: dec.component_states.clone(),
            spurious_rate: flips.spurious_rate(),
            merged_spurious_rate: merged.spurious_rate(),
            flips,
            run_length_dwell: runs.pooled.map_or(f64::NAN, |r| r.mean),
            recovered_dwell: fit.rts_dwell,
            dwell_rel_error: fit.rts_dwell / process.dwell_time - 1.0,
            fit,
        };
        art.write_json("dwell_report.json", &report)?;
        Ok(report)
    })
}

pub fn cmd_parity_pipeline(cfg: &RunConfig, out: &Path) -> Result<Outcome<ParityReport>> {
    single("parity", cfg, out, |c, art| parity_pipeline(&c.parity, c.seed, c.execution, art))
}
