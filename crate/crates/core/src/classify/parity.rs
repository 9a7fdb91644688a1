//! Charge-parity decoding from interleaved even/odd band probes.

use serde::{Deserialize, Serialize};

use super::gmm::{gmm_classify, gmm_fit, GmmConfig, GmmFit, Samples};
use super::hmm::{
    hmm_train, hmm_viterbi, Emission, EmissionKind, HiddenMarkov, HmmConfig, HmmFit, LabelPath, Observations,
};
use super::markov::parity_band_reduce;
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::synth::{Parity, ShotRecord};

/// Readout states the mixture distinguishes: ground, and the two excited
/// levels reached when the probed band matches.
pub const PARITY_READOUT_STATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityDecodeConfig {
    /// Shots used to fit the mixture; all shots are classified.
    pub gmm_samples: usize,
    pub gmm_restarts: usize,
    pub hmm_restarts: usize,
    pub hmm_max_iter: usize,
    pub seed: u64,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for ParityDecodeConfig {
    fn default() -> Self {
        ParityDecodeConfig {
            gmm_samples: 60_000,
            gmm_restarts: 2,
            hmm_restarts: 2,
            hmm_max_iter: 300,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

/// Per-band decoding plus the fused parity path (0 = even, 1 = odd).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityDecode {
    pub gmm: GmmFit,
    /// Readout state assigned to each mixture component.
    pub component_states: Vec<usize>,
    /// Readout state per shot.
    pub states: Vec<usize>,
    /// Binary probe outcome per shot.
    pub observable: Vec<usize>,
    pub even_model: HmmFit,
    pub odd_model: HmmFit,
    /// Parity implied by each band's decoded path, on that band's timestamps.
    pub even_path: LabelPath,
    pub odd_path: LabelPath,
    /// Both band paths interleaved in time order.
    pub merged: LabelPath,
    /// Joint decode of the time-merged shots under both band models.
    pub fused: LabelPath,
}

fn parity_label(p: Parity) -> usize {
    match p {
        Parity::Even => 0,
        Parity::Odd => 1,
    }
}

/// Fits the readout mixture on an evenly strided subset of shots and labels
/// every shot with the nearest calibrated readout state. `reference` holds
/// calibrated IQ means for states 0, 1, 2.
pub fn classify_shots(
    shots: &[ShotRecord],
    reference: &[[f64; 2]],
    cfg: &ParityDecodeConfig,
) -> Result<(GmmFit, Vec<usize>, Vec<usize>)> {
    if reference.len() < PARITY_READOUT_STATES {
        return Err(invalid("reference", "need calibrated means for states 0, 1, 2"));
    }
    let iq: Vec<f64> = shots.iter().flat_map(|s| [s.i_volt, s.q_volt]).collect();
    let all = Samples::new(&iq, 2)?;
    let stride = (shots.len() / cfg.gmm_samples.max(1)).max(1);
    let fit_data: Vec<f64> = (0..shots.len()).step_by(stride).flat_map(|i| [iq[2 * i], iq[2 * i + 1]]).collect();
    let gcfg =
        GmmConfig { restarts: cfg.gmm_restarts, exec: cfg.exec, ..GmmConfig::new(PARITY_READOUT_STATES, cfg.seed) };
    let fit = gmm_fit(Samples::new(&fit_data, 2)?, &gcfg)?;
    let component_states: Vec<usize> = fit
        .model
        .means
        .iter()
        .map(|m| {
            let d = |r: &[f64; 2]| (m[0] - r[0]).powi(2) + (m[1] - r[1]).powi(2);
            (0..PARITY_READOUT_STATES).min_by(|&a, &b| d(&reference[a]).total_cmp(&d(&reference[b]))).unwrap_or(0)
        })
        .collect();
    let cls = gmm_classify(&fit.model, all, cfg.exec)?;
    let states = cls.labels.iter().map(|&c| component_states[c]).collect();
    Ok((fit, component_states, states))
}

/// Merges per-band parity paths by timestamp; equal times keep the even band
/// first.
pub fn fuse_band_paths(even: &LabelPath, odd: &LabelPath) -> LabelPath {
    let mut times = Vec::with_capacity(even.len() + odd.len());
    let mut states = Vec::with_capacity(even.len() + odd.len());
    let (mut a, mut b) = (0, 0);
    while a < even.len() || b < odd.len() {
        let take_even = b >= odd.len() || (a < even.len() && even.times[a] <= odd.times[b]);
        if take_even {
            times.push(even.times[a]);
            states.push(even.states[a]);
            a += 1;
        } else {
            times.push(odd.times[b]);
            states.push(odd.states[b]);
            b += 1;
        }
    }
    LabelPath { times, states, log_likelihood: even.log_likelihood + odd.log_likelihood }
}

fn decode_band(
    shots: &[ShotRecord],
    observable: &[usize],
    band: Parity,
    cfg: &ParityDecodeConfig,
) -> Result<(HmmFit, LabelPath)> {
    let (times, symbols): (Vec<f64>, Vec<usize>) =
        shots.iter().zip(observable).filter(|(s, _)| s.band == band).map(|(s, &o)| (s.t, o)).unzip();
    let hcfg = HmmConfig {
        restarts: cfg.hmm_restarts,
        max_iter: cfg.hmm_max_iter,
        exec: cfg.exec,
        ..HmmConfig::new(2, EmissionKind::Categorical { symbols: 2 }, cfg.seed.wrapping_add(parity_label(band) as u64))
    };
    let fit = hmm_train(&[Observations::Symbols(&symbols)], &hcfg)?;
    let path = hmm_viterbi(&fit.model, Observations::Symbols(&symbols))?.with_times(times)?;
    // Canonical state 1 emits more ones: the probed band matched.
    let matched = parity_label(band);
    let parity =
        LabelPath { states: path.states.iter().map(|&s| if s == 1 { matched } else { 1 - matched }).collect(), ..path };
    Ok((fit, parity))
}

/// Mixture classification, band reduction and one two-state discrete HMM per
/// band stream. The band paths are interleaved by timestamp as `merged`;
/// `fused` decodes the time-merged shots once under both trained band models,
/// which keeps the two streams from disagreeing by a sample at each flip.
pub fn decode_parity(shots: &[ShotRecord], reference: &[[f64; 2]], cfg: &ParityDecodeConfig) -> Result<ParityDecode> {
    if shots.is_empty() {
        return Err(invalid("shots", "empty"));
    }
    let (gmm, component_states, states) = classify_shots(shots, reference, cfg)?;
    let observable = parity_band_reduce(&states)?;
    let (even_model, even_path) = decode_band(shots, &observable, Parity::Even, cfg)?;
    let (odd_model, odd_path) = decode_band(shots, &observable, Parity::Odd, cfg)?;
    let merged = fuse_band_paths(&even_path, &odd_path);
    let joint = joint_parity_model(&even_model.model, &odd_model.model)?;
    let fused = joint_parity_path(shots, &observable, &joint)?;
    Ok(ParityDecode {
        gmm,
        component_states,
        states,
        observable,
        even_model,
        odd_model,
        even_path,
        odd_path,
        merged,
        fused,
    })
}

/// Joint model over the time-merged stream built from two trained band
/// models: hidden state is parity, a symbol is `2 * band + outcome`, and the
/// per-shot flip probability is the half-step of the mean per-pair flip
/// probability.
pub fn joint_parity_model(even: &HiddenMarkov, odd: &HiddenMarkov) -> Result<HiddenMarkov> {
    let probs = |m: &HiddenMarkov| -> Result<Vec<Vec<f64>>> {
        match &m.emission {
            Emission::Categorical { probs } if probs.len() == 2 && probs.iter().all(|r| r.len() == 2) => {
                Ok(probs.clone())
            }
            _ => Err(invalid("band_model", "expected two states over two symbols")),
        }
    };
    let (pe, po) = (probs(even)?, probs(odd)?);
    let a = 0.25 * (even.transition[0][1] + even.transition[1][0] + odd.transition[0][1] + odd.transition[1][0]);
    let a = a.clamp(0.0, 0.5);
    let h = 0.5 * (1.0 - (1.0 - 2.0 * a).sqrt());
    // Even parity: even probes match (state 1), odd probes do not (state 0).
    let row = |e: &[f64], o: &[f64]| -> Vec<f64> {
        let floor = 1e-12;
        let v = [e[0].max(floor), e[1].max(floor), o[0].max(floor), o[1].max(floor)];
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    };
    Ok(HiddenMarkov {
        initial: vec![0.5, 0.5],
        transition: vec![vec![1.0 - h, h], vec![h, 1.0 - h]],
        emission: Emission::Categorical { probs: vec![row(&pe[1], &po[0]), row(&pe[0], &po[1])] },
    })
}

/// Viterbi over all shots in time order under [`joint_parity_model`].
pub fn joint_parity_path(shots: &[ShotRecord], observable: &[usize], model: &HiddenMarkov) -> Result<LabelPath> {
    let mut order: Vec<usize> = (0..shots.len()).collect();
    order.sort_by(|&a, &b| shots[a].t.total_cmp(&shots[b].t).then(a.cmp(&b)));
    let symbols: Vec<usize> = order.iter().map(|&i| 2 * parity_label(shots[i].band) + observable[i]).collect();
    let times = order.iter().map(|&i| shots[i].t).collect();
    hmm_viterbi(model, Observations::Symbols(&symbols))?.with_times(times)
}

/// Decoded flips compared with planted flip times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipAgreement {
    pub true_flips: usize,
    pub decoded_flips: usize,
    pub matched: usize,
    /// Decoded flips with no planted flip within the tolerance.
    pub spurious: usize,
    pub missed: usize,
}

impl FlipAgreement {
    pub fn spurious_rate(&self) -> f64 {
        self.spurious as f64 / self.true_flips.max(1) as f64
    }
}

/// One-to-one matching in time order. A decoded flip sits midway between
/// the two samples that straddle it and matches a planted flip at most
/// `tolerance` away.
pub fn flip_agreement(decoded: &LabelPath, true_flips: &[f64], tolerance: f64) -> FlipAgreement {
    let flips: Vec<f64> = (1..decoded.len())
        .filter(|&i| decoded.states[i] != decoded.states[i - 1])
        .map(|i| 0.5 * (decoded.times[i] + decoded.times[i - 1]))
        .collect();
    let (mut i, mut j, mut matched) = (0, 0, 0);
    while i < flips.len() && j < true_flips.len() {
        if (flips[i] - true_flips[j]).abs() <= tolerance {
            matched += 1;
            i += 1;
            j += 1;
        } else if flips[i] < true_flips[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    FlipAgreement {
        true_flips: true_flips.len(),
        decoded_flips: flips.len(),
        matched,
        spurious: flips.len() - matched,
        missed: true_flips.len() - matched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(times: Vec<f64>, states: Vec<usize>) -> LabelPath {
        LabelPath { times, states, log_likelihood: 0.0 }
    }

    #[test]
    fn fusion_interleaves_by_time() {
        let even = lp(vec![0.0, 2.0, 4.0], vec![0, 0, 1]);
        let odd = lp(vec![1.0, 3.0, 5.0], vec![0, 1, 1]);
        let f = fuse_band_paths(&even, &odd);
        assert_eq!(f.times, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(f.states, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn flip_matching() {
        let p = lp((0..10).map(|t| t as f64).collect(), vec![0, 0, 1, 1, 0, 0, 0, 1, 1, 1]);
        let a = flip_agreement(&p, &[1.4, 6.6, 8.0], 0.6);
        assert_eq!(a.decoded_flips, 3);
        assert_eq!(a.matched, 2);
        assert_eq!(a.spurious, 1);
        assert_eq!(a.missed, 1);
    }
}
