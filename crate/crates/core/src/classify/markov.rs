//! Empirical Markov statistics of decoded label paths.

use serde::{Deserialize, Serialize};

use super::hmm::LabelPath;
use crate::error::{invalid, Error, Result};

/// Labels `|i - j| <= NEIGHBOR_REACH` apart count as neighbor transitions.
pub const NEIGHBOR_REACH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub probs: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    /// Rows with no outgoing transitions, filled uniformly.
    pub flagged_rows: Vec<usize>,
    /// Per row: off-diagonal probability within the neighbor reach.
    pub neighbor_mass: Vec<f64>,
    /// Per row: probability beyond the neighbor reach.
    pub scramble_mass: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.probs.len()
    }

    /// Copy with the diagonal zeroed, for display only.
    pub fn display(&self) -> Vec<Vec<f64>> {
        let mut p = self.probs.clone();
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        p
    }

    pub fn total_transitions(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn pooled(&self, pick: impl Fn(usize, usize) -> bool) -> (u64, u64) {
        let mut hit = 0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if pick(i, j) {
                    hit += c;
                }
            }
        }
        (hit, self.total_transitions())
    }

    /// Fraction of all observed steps that moved to a neighbor configuration.
    pub fn pooled_neighbor_mass(&self) -> f64 {
        let (h, t) = self.pooled(|i, j| i != j && i.abs_diff(j) <= NEIGHBOR_REACH);
        h as f64 / t.max(1) as f64
    }

    /// Fraction of all observed steps that jumped beyond the neighbor reach.
    pub fn pooled_scramble_mass(&self) -> f64 {
        let (h, t) = self.pooled(|i, j| i.abs_diff(j) > NEIGHBOR_REACH);
        h as f64 / t.max(1) as f64
    }

    /// Poisson counting error of a pooled fraction.
    pub fn pooled_error(&self, fraction: f64) -> f64 {
        let t = self.total_transitions().max(1) as f64;
        (fraction * t).max(1.0).sqrt() / t
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.probs {
            let line: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Row-normalized bigram counts of a label path.
pub fn transition_matrix(path: &LabelPath, n: usize) -> Result<TransitionMatrix> {
    if n == 0 {
        return Err(invalid("n", "must be >= 1"));
    }
    for (t, &s) in path.states.iter().enumerate() {
        if s >= n {
            return Err(Error::LabelOutOfRange { index: t, label: s, limit: n });
        }
    }
    let mut counts = vec![vec![0u64; n]; n];
    for w in path.states.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let mut flagged_rows = Vec::new();
    let probs: Vec<Vec<f64>> = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                flagged_rows.push(i);
                log::warn!("label {i} never left; row filled uniformly");
                vec![1.0 / n as f64; n]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    let neighbor_mass = probs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter().enumerate().filter(|(j, _)| *j != i && i.abs_diff(*j) <= NEIGHBOR_REACH).map(|(_, p)| p).sum()
        })
        .collect();
    let scramble_mass = probs
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().filter(|(j, _)| i.abs_diff(*j) > NEIGHBOR_REACH).map(|(_, p)| p).sum())
        .collect();
    Ok(TransitionMatrix { probs, counts, flagged_rows, neighbor_mass, scramble_mass, temperature: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl RunStats {
    fn from(mut runs: Vec<f64>) -> Option<Self> {
        if runs.is_empty() {
            return None;
        }
        runs.sort_by(f64::total_cmp);
        let n = runs.len();
        let median = if n % 2 == 1 { runs[n / 2] } else { 0.5 * (runs[n / 2 - 1] + runs[n / 2]) };
        Some(RunStats { count: n, mean: runs.iter().sum::<f64>() / n as f64, median, max: runs[n - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellStats {
    pub per_state: Vec<Option<RunStats>>,
    pub pooled: Option<RunStats>,
    /// Run durations in order of occurrence.
    pub runs: Vec<(usize, f64)>,
}

/// Run-length encoded dwell durations. A run from sample `a` to `b` lasts
/// until the next run starts; the final run is closed one median spacing
/// after its last sample.
pub fn dwell_times(path: &LabelPath, n: usize) -> Result<DwellStats> {
    let len = path.states.len();
    if path.times.len() != len {
        return Err(Error::DimensionMismatch { expected: len, got: path.times.len() });
    }
    if let Some((t, &s)) = path.states.iter().enumerate().find(|(_, &s)| s >= n) {
        return Err(Error::LabelOutOfRange { index: t, label: s, limit: n });
    }
    let mut runs = Vec::new();
    if len > 0 {
        let mut gaps: Vec<f64> = path.times.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(f64::total_cmp);
        let dt = if gaps.is_empty() { 1.0 } else { gaps[gaps.len() / 2] };
        let mut start = 0;
        for t in 1..=len {
            if t == len || path.states[t] != path.states[start] {
                let end = if t == len { path.times[len - 1] + dt } else { path.times[t] };
                runs.push((path.states[start], end - path.times[start]));
                start = t;
            }
        }
    }
    let per_state = (0..n).map(|s| RunStats::from(runs.iter().filter(|r| r.0 == s).map(|r| r.1).collect())).collect();
    Ok(DwellStats { per_state, pooled: RunStats::from(runs.iter().map(|r| r.1).collect()), runs })
}

/// Binary probe outcome per shot: 1 when the qudit was read in state 1 or 2
/// (the probed band matched the parity), 0 for the ground state.
pub fn parity_band_reduce(labels: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(t, &l)| match l {
            0 => Ok(0),
            1 | 2 => Ok(1),
            _ => Err(Error::LabelOutOfRange { index: t, label: l, limit: 3 }),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(states: Vec<usize>) -> LabelPath {
        LabelPath { times: (0..states.len()).map(|t| t as f64).collect(), states, log_likelihood: 0.0 }
    }

    #[test]
    fn bigram_counts_and_masses() {
        let m = transition_matrix(&path(vec![0, 0, 1, 4, 4, 0]), 5).unwrap();
        assert_eq!(m.counts[0], vec![1, 1, 0, 0, 0]);
        assert_eq!(m.probs[4], vec![0.5, 0.0, 0.0, 0.0, 0.5]);
        assert_eq!(m.flagged_rows, vec![2, 3]);
        assert_eq!(m.probs[2], vec![0.2; 5]);
        assert_eq!(m.neighbor_mass[0], 0.5);
        assert_eq!(m.scramble_mass[1], 1.0);
        assert!((m.pooled_scramble_mass() - 0.4).abs() < 1e-15);
        assert_eq!(m.display()[0][0], 0.0);
        for row in &m.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_path_single_dwell() {
        let d = dwell_times(&path(vec![3; 50]), 4).unwrap();
        assert_eq!(d.runs, vec![(3, 50.0)]);
        assert!(d.per_state[0].is_none());
    }

    #[test]
    fn dwell_runs() {
        let d = dwell_times(&path(vec![0, 0, 1, 1, 1, 0]), 2).unwrap();
        assert_eq!(d.runs, vec![(0, 2.0), (1, 3.0), (0, 1.0)]);
        assert_eq!(d.per_state[0].unwrap().mean, 1.5);
    }

    #[test]
    fn band_reduction() {
        assert_eq!(parity_band_reduce(&[0, 1, 2, 0]).unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(parity_band_reduce(&[0; 5]).unwrap(), vec![0; 5]);
        assert_eq!(parity_band_reduce(&[2; 5]).unwrap(), vec![1; 5]);
        assert!(matches!(parity_band_reduce(&[0, 3]), Err(Error::LabelOutOfRange { index: 1, label: 3, .. })));
    }
}
