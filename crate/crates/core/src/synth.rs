//! Seedable generators for every dataset the analysis pipeline consumes.
//!
//! All generators draw from ChaCha8 streams keyed by an explicit seed, so a
//! configuration plus seed always reproduces the same bits.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectrum::{fold_offset, OffsetChargeE, ParityBands};

/// Line separation, in Hz, below which two spectroscopy lines are treated as
/// unresolved at 40 us pulses.
pub const RESOLUTION_HZ: f64 = 25e3;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn flipped(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// Which parity band a probe pulse targets.
pub type Band = Parity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityProcessConfig {
    /// Mean time between parity flips, s.
    pub dwell_time: f64,
    /// Time per interleaved even/odd probe pair, s.
    pub duty_cycle: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for ParityProcessConfig {
    fn default() -> Self {
        ParityProcessConfig { dwell_time: 5.9e-3, duty_cycle: 50e-6, duration: 60.0, seed: 1 }
    }
}

impl ParityProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dwell_time > 0.0) || !self.dwell_time.is_finite() {
            return Err(invalid("dwell_time", "must be positive"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(invalid("duration", "must be positive"));
        }
        if !(self.duty_cycle > 0.0) || !self.duty_cycle.is_finite() {
            return Err(invalid("duty_cycle", "must be positive"));
        }
        Ok(())
    }

    /// Dwell longer than the duty cycle; otherwise flips are undersampled.
    pub fn is_resolved(&self) -> bool {
        self.dwell_time > self.duty_cycle
    }
}

/// Two-state telegraph path on `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelegraphPath {
    pub initial: Parity,
    pub flip_times: Vec<f64>,
    pub duration: f64,
}

impl TelegraphPath {
    pub fn parity_at(&self, t: f64) -> Parity {
        let flips = self.flip_times.partition_point(|&f| f <= t);
        if flips % 2 == 0 {
            self.initial
        } else {
            self.initial.flipped()
        }
    }

    /// Lengths of the constant intervals, first and last included.
    pub fn intervals(&self) -> Vec<f64> {
        let mut edges = Vec::with_capacity(self.flip_times.len() + 2);
        edges.push(0.0);
        edges.extend_from_slice(&self.flip_times);
        edges.push(self.duration);
        edges.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Symmetric Poisson switching with mean inter-flip time `dwell_time`.
pub fn gen_parity_path(cfg: &ParityProcessConfig) -> Result<TelegraphPath> {
    cfg.validate()?;
    let mut r = rng(cfg.seed, 1);
    let initial = if r.random::<bool>() { Parity::Odd } else { Parity::Even };
    let exp = Exp::new(1.0 / cfg.dwell_time).map_err(|e| invalid("dwell_time", e.to_string()))?;
    let mut flip_times = Vec::new();
    let mut t = exp.sample(&mut r);
    while t < cfg.duration {
        flip_times.push(t);
        t += exp.sample(&mut r);
    }
    Ok(TelegraphPath { initial, flip_times, duration: cfg.duration })
}

/// Per-state IQ cluster and readout misassignment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqClusterModel {
    pub means: Vec<[f64; 2]>,
    /// Row-major 2x2 covariances.
    pub covariances: Vec<[[f64; 2]; 2]>,
    /// `error_matrix[s][r]`: probability that state `s` is read out as `r`.
    pub error_matrix: Vec<Vec<f64>>,
}

impl IqClusterModel {
    /// Four quadrant clusters with isotropic width `sigma` and readout
    /// relaxation `2 -> 1` with probability `relax_21`.
    pub fn quadrants(sigma: f64, relax_21: f64) -> Self {
        let mut error_matrix = vec![vec![0.0; 4]; 4];
        for (s, row) in error_matrix.iter_mut().enumerate() {
            row[s] = 1.0;
        }
        error_matrix[2][2] = 1.0 - relax_21;
        error_matrix[2][1] = relax_21;
        let v = sigma * sigma;
        IqClusterModel {
            means: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
            covariances: vec![[[v, 0.0], [0.0, v]]; 4],
            error_matrix,
        }
    }

    /// Zero-width clusters for the noiseless limit; the error matrix is identity.
    pub fn noiseless() -> Self {
        IqClusterModel::quadrants(0.0, 0.0)
    }

    pub fn states(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if n == 0 || self.covariances.len() != n || self.error_matrix.len() != n {
            return Err(invalid("cluster_model", "means, covariances and error matrix must agree in size"));
        }
        for c in &self.covariances {
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            if c[0][0] < 0.0 || c[1][1] < 0.0 || det < -1e-15 || (c[0][1] - c[1][0]).abs() > 1e-15 {
                return Err(invalid("covariances", "must be symmetric positive semidefinite"));
            }
        }
        check_stochastic(&self.error_matrix)?;
        if self.error_matrix.iter().any(|r| r.len() != n) {
            return Err(invalid("error_matrix", "must be square"));
        }
        Ok(())
    }

    /// Draws one IQ point for true state `s`: read state through the error
    /// matrix, then a Gaussian around that cluster.
    pub fn sample<R: Rng>(&self, s: usize, r: &mut R) -> (usize, [f64; 2]) {
        let read = sample_categorical(&self.error_matrix[s], r);
        let c = &self.covariances[read];
        let a = c[0][0].sqrt();
        let b = if a > 0.0 { c[0][1] / a } else { 0.0 };
        let d = (c[1][1] - b * b).max(0.0).sqrt();
        let z1: f64 = StandardNormal.sample(r);
        let z2: f64 = StandardNormal.sample(r);
        let m = self.means[read];
        (read, [m[0] + a * z1, m[1] + b * z1 + d * z2])
    }
}

pub(crate) fn sample_categorical<R: Rng>(p: &[f64], r: &mut R) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    // Round-off: fall back to the last state with nonzero mass.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

pub(crate) fn check_stochastic(m: &[Vec<f64>]) -> Result<()> {
    for (row, r) in m.iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotStochastic { row, sum });
        }
    }
    Ok(())
}

/// One demodulated single-shot readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub t: f64,
    pub i_volt: f64,
    pub q_volt: f64,
    pub band: Band,
    /// Qudit state before readout, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_state: Option<u8>,
}

/// Interleaved even/odd probe shots: the even-band shot of pair `k` sits at
/// `k * duty_cycle`, the odd-band shot half a cycle later. A probe whose band
/// matches the current parity excites the qudit to state 2; otherwise the
/// qudit stays in the ground state.
pub fn gen_parity_shots(
    path: &TelegraphPath,
    model: &IqClusterModel,
    cfg: &ParityProcessConfig,
) -> Result<Vec<ShotRecord>> {
    cfg.validate()?;
    model.validate()?;
    if model.states() < 3 {
        return Err(invalid("cluster_model", "need at least states 0, 1, 2"));
    }
    if path.duration + 1e-12 < cfg.duration {
        return Err(invalid("path", "does not cover the requested duration"));
    }
    let mut r = rng(cfg.seed, 2);
    let pairs = (cfg.duration / cfg.duty_cycle).floor() as usize;
    let mut shots = Vec::with_capacity(2 * pairs);
    for k in 0..pairs {
        for (offset, band) in [(0.0, Parity::Even), (0.5, Parity::Odd)] {
            let t = (k as f64 + offset) * cfg.duty_cycle;
            let state = if path.parity_at(t) == band { 2 } else { 0 };
            let (_, iq) = model.sample(state, &mut r);
            shots.push(ShotRecord { t, i_volt: iq[0], q_volt: iq[1], band, truth_state: Some(state as u8) });
        }
    }
    Ok(shots)
}

/// Environment of quasi-stable charge configurations hopping as a
/// discrete-time Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeEnvConfig {
    /// Configuration offsets, e, ascending in `[0, 0.5]`.
    pub offsets: Vec<f64>,
    /// Total neighbor-hop rate (|index step| <= 2) out of a configuration at
    /// `reference_temperature`, 1/s.
    pub neighbor_rate: f64,
    pub reference_temperature: f64,
    /// Neighbor rate scales as `(T / T_ref)^temperature_exponent`.
    pub temperature_exponent: f64,
    /// Weight of a next-nearest hop relative to a nearest hop.
    pub next_nearest_weight: f64,
    /// Total rate of large (|index step| > 2) scrambling jumps, 1/s.
    pub scramble_rate: f64,
    /// Temperatures, K.
    pub temperatures: Vec<f64>,
    pub sample_interval: f64,
    pub duration: f64,
    /// Gaussian measurement noise on the emitted offset, e.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ChargeEnvConfig {
    /// 10 mK mean stable time of 22 minutes, of which scrambling accounts for
    /// one event per 1.6 hours; 70 hours sampled every 10 s.
    fn default() -> Self {
        let total = 1.0 / (22.0 * 60.0);
        let scramble = 1.0 / (1.6 * 3600.0);
        ChargeEnvConfig {
            offsets: vec![0.035, 0.085, 0.150, 0.205, 0.270, 0.330, 0.395, 0.455],
            neighbor_rate: total - scramble,
            reference_temperature: 0.010,
            temperature_exponent: 1.0,
            next_nearest_weight: 0.5,
            scramble_rate: scramble,
            temperatures: vec![0.010, 0.050, 0.100, 0.150],
            sample_interval: 10.0,
            duration: 70.0 * 3600.0,
            noise_sigma: 0.008,
            seed: 7,
        }
    }
}

impl ChargeEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() {
            return Err(invalid("offsets", "need at least one configuration"));
        }
        if self.offsets.iter().any(|q| !(0.0..=0.5).contains(q)) {
            return Err(invalid("offsets", "must lie in [0, 0.5] e"));
        }
        if self.offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("offsets", "must be strictly ascending"));
        }
        for (name, v) in [
            ("neighbor_rate", self.neighbor_rate),
            ("scramble_rate", self.scramble_rate),
            ("noise_sigma", self.noise_sigma),
            ("next_nearest_weight", self.next_nearest_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("sample_interval", self.sample_interval),
            ("duration", self.duration),
            ("reference_temperature", self.reference_temperature),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.temperatures.is_empty() || self.temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("temperatures", "need at least one positive temperature"));
        }
        Ok(())
    }

    pub fn neighbor_rate_at(&self, temperature: f64) -> f64 {
        self.neighbor_rate * (temperature / self.reference_temperature).powf(self.temperature_exponent)
    }

    /// Mean time in a configuration at `temperature`, s, for configurations
    /// that have both neighbor and scramble targets.
    pub fn mean_stable_time(&self, temperature: f64) -> f64 {
        1.0 / (self.neighbor_rate_at(temperature) + self.scramble_rate)
    }

    /// Same statistics on a clock running `factor` times faster: rates are
    /// multiplied and the duration divided by `factor`; the sample interval
    /// is kept, so the run has `factor` times fewer samples.
    pub fn compressed(&self, factor: f64) -> Self {
        ChargeEnvConfig {
            neighbor_rate: self.neighbor_rate * factor,
            scramble_rate: self.scramble_rate * factor,
            duration: self.duration / factor,
            ..self.clone()
        }
    }

    /// Per-sample transition matrix `I + Q dt` at `temperature`. Neighbor
    /// rate is split over the available targets with |step| <= 2 (nearest
    /// weight 1, next-nearest `next_nearest_weight`); scramble rate is split
    /// evenly over targets with |step| > 2.
    pub fn transition_matrix(&self, temperature: f64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let n = self.offsets.len();
        let dt = self.sample_interval;
        let nr = self.neighbor_rate_at(temperature);
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            let weight = |j: usize| match i.abs_diff(j) {
                1 => 1.0,
                2 => self.next_nearest_weight,
                _ => 0.0,
            };
            let wsum: f64 = (0..n).map(weight).sum();
            let far = (0..n).filter(|&j| i.abs_diff(j) > 2).count();
            let mut out = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let rate = if i.abs_diff(j) <= 2 {
                    if wsum > 0.0 {
                        nr * weight(j) / wsum
                    } else {
                        0.0
                    }
                } else {
                    self.scramble_rate / far as f64
                };
                p[i][j] = rate * dt;
                out += p[i][j];
            }
            if out > 1.0 {
                return Err(invalid(
                    "sample_interval",
                    format!("exit probability {out} per sample exceeds 1 at T = {temperature} K"),
                ));
            }
            p[i][i] = 1.0 - out;
        }
        check_stochastic(&p)?;
        Ok(p)
    }
}

/// Folded offset-charge time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeTrace {
    pub times: Vec<f64>,
    pub q: Vec<f64>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<usize>>,
}

impl ChargeTrace {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

fn nearest_index(offsets: &[f64], q: f64) -> usize {
    let mut best = 0;
    for (k, &o) in offsets.iter().enumerate() {
        if (o - q).abs() < (offsets[best] - q).abs() {
            best = k;
        }
    }
    best
}

/// Markov chain over configurations sampled every `sample_interval`, emitting
/// the folded configuration offset plus Gaussian noise. Noise draws that
/// would land nearer another configuration are redrawn, so every label is
/// the nearest configuration to its emitted value.
pub fn gen_charge_trace(cfg: &ChargeEnvConfig, temperature: f64) -> Result<ChargeTrace> {
    cfg.validate()?;
    let t_index = cfg
        .temperatures
        .iter()
        .position(|&t| (t - temperature).abs() <= 1e-12 * t.max(1.0))
        .ok_or_else(|| invalid("temperature", format!("{temperature} K is not in the configured list")))?;
    let p = cfg.transition_matrix(temperature)?;
    let steps = (cfg.duration / cfg.sample_interval).floor() as usize + 1;
    let mut r = rng(cfg.seed, 100 + t_index as u64);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| invalid("noise_sigma", e.to_string()))?;

    let mut state = r.random_range(0..cfg.offsets.len());
    let mut times = Vec::with_capacity(steps);
    let mut q = Vec::with_capacity(steps);
    let mut truth = Vec::with_capacity(steps);
    for k in 0..steps {
        if k > 0 {
            state = sample_categorical(&p[state], &mut r);
        }
        let center = cfg.offsets[state];
        let mut value = fold_offset(center + noise.sample(&mut r));
        let mut tries = 0;
        while nearest_index(&cfg.offsets, value) != state {
            tries += 1;
            if tries > 64 {
                value = center;
                break;
            }
            value = fold_offset(center + noise.sample(&mut r));
        }
        times.push(k as f64 * cfg.sample_interval);
        q.push(value);
        truth.push(state);
    }
    Ok(ChargeTrace { times, q, temperature, truth: Some(truth) })
}

/// Full width at half maximum of a line probed with a pulse of `pulse_len`
/// seconds, Hz.
pub fn line_fwhm_hz(pulse_len: f64) -> f64 {
    1.0 / (PI * pulse_len)
}

/// Excited population versus drive frequency: two unit-height Lorentzians at
/// the parity-band frequencies plus Gaussian noise. `grid` is in GHz.
pub fn gen_spectroscopy_trace(
    bands: &ParityBands,
    q: OffsetChargeE,
    pulse_len: f64,
    grid: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(pulse_len > 0.0) {
        return Err(invalid("pulse_len", "must be positive"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(invalid("noise_sigma", "must be >= 0"));
    }
    let half_width_ghz = 0.5 * line_fwhm_hz(pulse_len) * 1e-9;
    let (fp, fm) = bands.band_frequencies(q);
    let lorentz = |f: f64, c: f64| 1.0 / (1.0 + ((f - c) / half_width_ghz).powi(2));
    let mut r = rng(seed, 3);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| invalid("noise_sigma", e.to_string()))?;
    Ok(grid
        .iter()
        .map(|&f| {
            let base = lorentz(f, fp) + lorentz(f, fm);
            if noise_sigma > 0.0 {
                base + noise.sample(&mut r)
            } else {
                base
            }
        })
        .collect())
}

/// Local maxima above `min_height`, refined by a parabola through the
/// three samples around each maximum. Returns centers in grid units.
pub fn find_line_centers(grid: &[f64], trace: &[f64], min_height: f64) -> Vec<f64> {
    let mut centers = Vec::new();
    for k in 1..trace.len().saturating_sub(1) {
        let (a, b, c) = (trace[k - 1], trace[k], trace[k + 1]);
        if b >= min_height && b > a && b >= c {
            let denom = a - 2.0 * b + c;
            let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            let step = 0.5 * (grid[k + 1] - grid[k - 1]);
            centers.push(grid[k] + shift * step);
        }
    }
    centers
}

/// Ramsey fringe `0.5 [cos(2 pi d+ t) + cos(2 pi d- t)] exp(-t / T2*)` where
/// `d+-` are the detunings of the two parity bands from `drive_ghz`, in Hz.
pub fn gen_ramsey_trace(
    bands: &ParityBands,
    q: OffsetChargeE,
    drive_ghz: f64,
    t2_star: f64,
    times: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(t2_star > 0.0) {
        return Err(invalid("t2_star", "must be positive"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(invalid("noise_sigma", "must be >= 0"));
    }
    let (fp, fm) = bands.band_frequencies(q);
    let (dp, dm) = ((fp - drive_ghz) * 1e9, (fm - drive_ghz) * 1e9);
    let mut r = rng(seed, 4);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| invalid("noise_sigma", e.to_string()))?;
    Ok(times
        .iter()
        .map(|&t| {
            let s = 0.5 * ((2.0 * PI * dp * t).cos() + (2.0 * PI * dm * t).cos()) * (-t / t2_star).exp();
            if noise_sigma > 0.0 {
                s + noise.sample(&mut r)
            } else {
                s
            }
        })
        .collect())
}

/// Conditional reset pulses chosen from the readout quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPulse {
    None,
    Pi01,
    Pi12Pi01,
}

/// Two thresholds splitting the IQ plane into quadrants, each labeled with a
/// qudit state. Quadrant index is `(i >= i_split) + 2 * (q >= q_split)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetBoundaries {
    pub i_split: f64,
    pub q_split: f64,
    pub quadrant_states: [u8; 4],
}

impl Default for ResetBoundaries {
    /// Matches [`IqClusterModel::quadrants`].
    fn default() -> Self {
        ResetBoundaries { i_split: 0.0, q_split: 0.0, quadrant_states: [0, 1, 3, 2] }
    }
}

impl ResetBoundaries {
    /// State assigned to an IQ point. A point on a boundary belongs to every
    /// adjacent quadrant and resolves to the lowest state among them.
    pub fn classify(&self, i: f64, q: f64) -> u8 {
        let i_sides: &[usize] = if i == self.i_split {
            &[0, 1]
        } else if i > self.i_split {
            &[1]
        } else {
            &[0]
        };
        let q_sides: &[usize] = if q == self.q_split {
            &[0, 1]
        } else if q > self.q_split {
            &[1]
        } else {
            &[0]
        };
        let mut best = u8::MAX;
        for &a in i_sides {
            for &b in q_sides {
                best = best.min(self.quadrant_states[a + 2 * b]);
            }
        }
        best
    }
}

pub fn reset_decision(shot: &ShotRecord, boundaries: &ResetBoundaries) -> ResetPulse {
    match boundaries.classify(shot.i_volt, shot.q_volt) {
        0 => ResetPulse::None,
        1 => ResetPulse::Pi01,
        _ => ResetPulse::Pi12Pi01,
    }
}

/// Applies ideal reset pulses to a qudit state.
pub fn apply_reset(state: u8, pulse: ResetPulse) -> u8 {
    let pi01 = |s: u8| match s {
        0 => 1,
        1 => 0,
        x => x,
    };
    let pi12 = |s: u8| match s {
        1 => 2,
        2 => 1,
        x => x,
    };
    match pulse {
        ResetPulse::None => state,
        ResetPulse::Pi01 => pi01(state),
        ResetPulse::Pi12Pi01 => pi01(pi12(state)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_determinism_and_short_duration() {
        let cfg = ParityProcessConfig { duration: 1.0, ..Default::default() };
        assert_eq!(gen_parity_path(&cfg).unwrap(), gen_parity_path(&cfg).unwrap());
        let short = ParityProcessConfig { dwell_time: 1e3, duration: 1e-6, ..cfg };
        let p = gen_parity_path(&short).unwrap();
        assert!(p.flip_times.is_empty());
        assert_eq!(p.intervals().len(), 1);
    }

    #[test]
    fn parity_at_follows_flips() {
        let p = TelegraphPath { initial: Parity::Even, flip_times: vec![1.0, 2.5], duration: 4.0 };
        assert_eq!(p.parity_at(0.5), Parity::Even);
        assert_eq!(p.parity_at(1.0), Parity::Odd);
        assert_eq!(p.parity_at(3.0), Parity::Even);
        assert_eq!(p.intervals(), vec![1.0, 1.5, 1.5]);
    }

    #[test]
    fn shots_interleave() {
        let cfg = ParityProcessConfig { duration: 0.01, ..Default::default() };
        let path = gen_parity_path(&cfg).unwrap();
        let shots = gen_parity_shots(&path, &IqClusterModel::quadrants(0.2, 0.0), &cfg).unwrap();
        assert_eq!(shots.len(), 400);
        for w in shots.windows(2) {
            assert_ne!(w[0].band, w[1].band);
            assert!(w[1].t > w[0].t);
            assert!((w[1].t - w[0].t - 25e-6).abs() < 1e-12);
        }
        for s in &shots {
            let expect = if path.parity_at(s.t) == s.band { 2 } else { 0 };
            assert_eq!(s.truth_state, Some(expect));
        }
    }

    #[test]
    fn invalid_error_matrix_rejected() {
        let mut m = IqClusterModel::quadrants(0.1, 0.0);
        m.error_matrix[0][1] = 0.5;
        assert!(m.validate().is_err());
    }

    #[test]
    fn frozen_charge_env_is_constant() {
        let cfg = ChargeEnvConfig {
            neighbor_rate: 0.0,
            scramble_rate: 0.0,
            noise_sigma: 0.0,
            duration: 1000.0,
            ..Default::default()
        };
        let tr = gen_charge_trace(&cfg, 0.05).unwrap();
        assert!(tr.q.windows(2).all(|w| w[0] == w[1]));
        assert!(gen_charge_trace(&cfg, 0.2).is_err());
    }

    #[test]
    fn default_dwell_is_22_minutes_at_base() {
        let cfg = ChargeEnvConfig::default();
        assert!((cfg.mean_stable_time(0.010) - 22.0 * 60.0).abs() < 1e-9);
        let p = cfg.transition_matrix(0.010).unwrap();
        for (i, row) in p.iter().enumerate() {
            let exit: f64 = 1.0 - row[i];
            assert!((exit - cfg.sample_interval / (22.0 * 60.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn neighbor_mass_grows_and_scramble_is_flat() {
        let cfg = ChargeEnvConfig::default();
        let mass = |t: f64| {
            let p = cfg.transition_matrix(t).unwrap();
            let n = p.len();
            let (mut nb, mut sc) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    match i.abs_diff(j) {
                        0 => {}
                        1 | 2 => nb += p[i][j],
                        _ => sc += p[i][j],
                    }
                }
            }
            (nb, sc)
        };
        let m: Vec<_> = cfg.temperatures.iter().map(|&t| mass(t)).collect();
        for w in m.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!((w[1].1 - w[0].1).abs() < 1e-15);
        }
    }

    #[test]
    fn labels_match_nearest_configuration() {
        let cfg = ChargeEnvConfig { duration: 5.0 * 3600.0, noise_sigma: 0.02, ..Default::default() };
        let tr = gen_charge_trace(&cfg, 0.15).unwrap();
        let truth = tr.truth.as_ref().unwrap();
        for (q, &s) in tr.q.iter().zip(truth) {
            assert!((0.0..=0.5).contains(q));
            assert_eq!(nearest_index(&cfg.offsets, *q), s);
        }
    }

    #[test]
    fn spectroscopy_lines() {
        let bands = ParityBands { i: 1, j: 2, f_bar: 5.0, eps: 60e-6, raw_sign: 1.0, cosine_residual: 0.0 };
        let grid: Vec<f64> = (-200..=200).map(|k| 5.0 + k as f64 * 1e-6).collect();
        // Half an electron: bands coincide.
        let merged = gen_spectroscopy_trace(&bands, OffsetChargeE::new(0.5), 40e-6, &grid, 0.0, 1).unwrap();
        let c = find_line_centers(&grid, &merged, 0.5);
        assert_eq!(c.len(), 1);
        assert!((c[0] - 5.0).abs() < 1e-6);
        assert!((merged[200] - 2.0).abs() < 1e-9);
        // Zero offset: full splitting 2 eps = 120 kHz.
        let split = gen_spectroscopy_trace(&bands, OffsetChargeE::new(0.0), 40e-6, &grid, 0.0, 1).unwrap();
        let c = find_line_centers(&grid, &split, 0.5);
        assert_eq!(c.len(), 2);
        assert!(((c[1] - c[0]) - 120e-6).abs() < 1e-6);
        assert!(120e3 > RESOLUTION_HZ);
        assert!((line_fwhm_hz(40e-6) - 7957.7).abs() < 0.1);
    }

    #[test]
    fn ramsey_envelope() {
        let bands = ParityBands { i: 1, j: 2, f_bar: 5.0, eps: 0.0, raw_sign: 1.0, cosine_residual: 0.0 };
        let s = gen_ramsey_trace(&bands, OffsetChargeE::new(0.2), 5.0, 30e-6, &[0.0, 120e-6], 0.0, 0).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - (-4.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn reset_decisions() {
        let b = ResetBoundaries::default();
        let m = IqClusterModel::quadrants(0.1, 0.0);
        let shot = |s: usize| ShotRecord {
            t: 0.0,
            i_volt: m.means[s][0],
            q_volt: m.means[s][1],
            band: Parity::Even,
            truth_state: None,
        };
        assert_eq!(reset_decision(&shot(0), &b), ResetPulse::None);
        assert_eq!(reset_decision(&shot(1), &b), ResetPulse::Pi01);
        assert_eq!(reset_decision(&shot(2), &b), ResetPulse::Pi12Pi01);
        assert_eq!(reset_decision(&shot(3), &b), ResetPulse::Pi12Pi01);
        // On the I boundary between states 1 and 2 (upper-right / lower-right): lower index.
        assert_eq!(b.classify(1.0, 0.0), 1);
        assert_eq!(b.classify(0.0, 0.0), 0);
        assert_eq!(apply_reset(2, ResetPulse::Pi12Pi01), 0);
        assert_eq!(apply_reset(1, ResetPulse::Pi01), 0);
    }
}
