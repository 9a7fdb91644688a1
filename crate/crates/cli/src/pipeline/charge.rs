use std::path::Path;

use chargenoise::classify::{
    dwell_times, gmm_classify, gmm_fit, select_model_order, transition_matrix, GmmConfig, LabelPath,
    ModelSelectionReport, RunStats, Samples, TransitionMatrix,
};
use chargenoise::io::{charge_trace_to_csv, label_path_to_csv, psd_to_csv, transition_matrix_to_csv};
use chargenoise::spectral::{fit_power_law, gen_power_law_noise, psd, PowerLawFit, Psd, PsdConfig};
use chargenoise::synth::{gen_charge_trace, ChargeTrace};
use chargenoise::Execution;
use serde::{Deserialize, Serialize};

use super::{single, stage, Outcome};
use crate::config::{ChargeSection, PowerLawSection, RunConfig};
use crate::error::{CliError, Result, StageExt};
use crate::manifest::Artifacts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureReport {
    /// K.
    pub temperature: f64,
    pub samples: usize,
    pub matrix: TransitionMatrix,
    /// Largest per-row total-variation distance to the planted matrix, when
    /// the chosen order matches the planted one.
    pub max_row_tv: Option<f64>,
    pub neighbor_mass: f64,
    pub neighbor_sigma: f64,
    pub scramble_mass: f64,
    pub scramble_sigma: f64,
    /// Stable time pooled over configurations, s.
    pub dwell: Option<RunStats>,
    /// Planted mean stable time, s.
    pub planted_stable_time: f64,
    /// `(measured - planted) / (mean / sqrt(count))`.
    pub dwell_z: Option<f64>,
    /// Fraction of samples labeled with their planted configuration.
    pub label_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawReport {
    pub planted_alpha: f64,
    pub planted_amplitude: f64,
    pub fit: PowerLawFit,
    pub alpha_error: f64,
    /// Fitted over planted amplitude.
    pub amplitude_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeReport {
    pub planted_order: usize,
    pub chosen_order: usize,
    pub selection: Option<ModelSelectionReport>,
    /// Ascending configuration offsets found by the mixture, e.
    pub state_means: Vec<f64>,
    pub temperatures: Vec<TemperatureReport>,
    pub neighbor_increasing: bool,
    /// Every pair of scramble masses agrees within three combined counting
    /// errors.
    pub scramble_flat: bool,
    pub offset_noise: PowerLawReport,
    pub frequency_noise: PowerLawReport,
}

fn mk_label(t: f64) -> String {
    format!("{}mK", (t * 1e3).round() as i64)
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Synthesizes planted power-law noise, estimates its PSD and fits the
/// slope over the full band.
pub fn power_law_fit(sec: &PowerLawSection, seed: u64) -> chargenoise::Result<(Psd, PowerLawReport)> {
    let x = gen_power_law_noise(sec.samples, sec.dt, sec.alpha, sec.amplitude, seed)?;
    let p = psd(&x, sec.dt, &PsdConfig::default())?;
    let fit = fit_power_law(&p, p.df(), 0.5 / sec.dt)?;
    let report = PowerLawReport {
        planted_alpha: sec.alpha,
        planted_amplitude: sec.amplitude,
        alpha_error: fit.alpha - sec.alpha,
        amplitude_ratio: fit.amplitude / sec.amplitude,
        fit,
    };
    Ok((p, report))
}

fn power_law(name: &'static str, sec: &PowerLawSection, seed: u64, art: &mut Artifacts) -> Result<PowerLawReport> {
    let (p, report) = power_law_fit(sec, seed).stage(name)?;
    art.write(&format!("{}_psd.csv", name.trim_start_matches("charge/")), psd_to_csv(&p).as_bytes())?;
    Ok(report)
}

pub fn charge_pipeline(sec: &ChargeSection, seed: u64, exec: Execution, art: &mut Artifacts) -> Result<ChargeReport> {
    if sec.temperatures.is_empty() {
        return Err(CliError::Config("field `charge.temperatures`: need at least one temperature".into()));
    }
    let env = sec.env(seed);

    let traces: Vec<ChargeTrace> = stage(art, "charge/synth", |art| {
        let mut out = Vec::new();
        for &t in &env.temperatures {
            let trace = gen_charge_trace(&env, t).stage("charge/synth")?;
            art.write(&format!("trace_{}.csv", mk_label(t)), charge_trace_to_csv(&trace).as_bytes())?;
            out.push(trace);
        }
        Ok(out)
    })?;
    let pooled: Vec<f64> = traces.iter().flat_map(|t| t.q.iter().copied()).collect();

    let (chosen, selection) = stage(art, "charge/selection", |art| match sec.order {
        Some(n) => Ok((n, None)),
        None => {
            let report = select_model_order(&pooled, &sec.selection_config(seed, exec)).stage("charge/selection")?;
            art.write_json("model_selection.json", &report)?;
            Ok((report.chosen, Some(report)))
        }
    })?;

    let (means, paths) = stage(art, "charge/classify", |art| {
        let cfg = GmmConfig { restarts: 2, exec, ..GmmConfig::new(chosen, seed) };
        let fit = gmm_fit(Samples::scalar(&pooled).stage("charge/classify")?, &cfg).stage("charge/classify")?;
        let raw: Vec<f64> = fit.model.means.iter().map(|m| m[0]).collect();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
        // rank[component] = position in ascending order of means.
        let mut rank = vec![0; raw.len()];
        for (r, &c) in order.iter().enumerate() {
            rank[c] = r;
        }
        let mut paths = Vec::new();
        for tr in &traces {
            let cls = gmm_classify(&fit.model, Samples::scalar(&tr.q).stage("charge/classify")?, exec)
                .stage("charge/classify")?;
            let path = LabelPath {
                times: tr.times.clone(),
                states: cls.labels.iter().map(|&l| rank[l]).collect(),
                log_likelihood: 0.0,
            };
            art.write(&format!("labels_{}.csv", mk_label(tr.temperature)), label_path_to_csv(&path).as_bytes())?;
            paths.push(path);
        }
        Ok((order.iter().map(|&c| raw[c]).collect::<Vec<f64>>(), paths))
    })?;

    let temperatures = stage(art, "charge/transitions", |art| {
        let planted_n = env.offsets.len();
        let mut reports = Vec::new();
        for (tr, path) in traces.iter().zip(&paths) {
            let mut m = transition_matrix(path, chosen).stage("charge/transitions")?;
            m.temperature = Some(tr.temperature);
            art.write(
                &format!("transitions_{}.csv", mk_label(tr.temperature)),
                transition_matrix_to_csv(&m).as_bytes(),
            )?;
            let max_row_tv = if chosen == planted_n {
                let planted = env.transition_matrix(tr.temperature).stage("charge/transitions")?;
                Some(m.probs.iter().zip(&planted).map(|(a, b)| total_variation(a, b)).fold(0.0, f64::max))
            } else {
                None
            };
            let dwell = dwell_times(path, chosen).stage("charge/transitions")?.pooled;
            let planted_stable_time = env.mean_stable_time(tr.temperature);
            let (nm, sm) = (m.pooled_neighbor_mass(), m.pooled_scramble_mass());
            let label_accuracy = tr.truth.as_ref().filter(|_| chosen == planted_n).map(|truth| {
                truth.iter().zip(&path.states).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
            });
            reports.push(TemperatureReport {
                temperature: tr.temperature,
                samples: tr.len(),
                max_row_tv,
                neighbor_mass: nm,
                neighbor_sigma: m.pooled_error(nm),
                scramble_mass: sm,
                scramble_sigma: m.pooled_error(sm),
                dwell_z: dwell.map(|d| (d.mean - planted_stable_time) / (d.mean / (d.count as f64).sqrt())),
                dwell,
                planted_stable_time,
                label_accuracy,
                matrix: m,
            });
        }
        Ok(reports)
    })?;

    let (offset_noise, frequency_noise) = stage(art, "charge/noise", |art| {
        let o = power_law("charge/offset", &sec.offset_noise, seed, art)?;
        let f = power_law("charge/frequency", &sec.frequency_noise, seed.wrapping_add(1), art)?;
        art.write_json("power_law_fits.json", &serde_json::json!({ "offset": o, "frequency": f }))?;
        Ok((o, f))
    })?;

    let neighbor_increasing = temperatures.windows(2).all(|w| w[1].neighbor_mass > w[0].neighbor_mass);
    let scramble_flat = temperatures.iter().enumerate().all(|(i, a)| {
        temperatures[i + 1..]
            .iter()
            .all(|b| (a.scramble_mass - b.scramble_mass).abs() <= 3.0 * a.scramble_sigma.hypot(b.scramble_sigma))
    });
    let report = ChargeReport {
        planted_order: env.offsets.len(),
        chosen_order: chosen,
        selection,
        state_means: means,
        temperatures,
        neighbor_increasing,
        scramble_flat,
        offset_noise,
        frequency_noise,
    };
    stage(art, "charge/report", |art| art.write_json("charge_report.json", &report))?;
    Ok(report)
}

pub fn cmd_charge_pipeline(cfg: &RunConfig, out: &Path) -> Result<Outcome<ChargeReport>> {
    single("charge", cfg, out, |c, art| charge_pipeline(&c.charge, c.seed, c.execution, art))
}
