//! Hidden Markov models with categorical or Gaussian emissions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::synth::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Emission {
    /// `probs[state][symbol]`.
    Categorical {
        probs: Vec<Vec<f64>>,
    },
    Gaussian {
        means: Vec<f64>,
        variances: Vec<f64>,
    },
}

impl Emission {
    fn n_states(&self) -> usize {
        match self {
            Emission::Categorical { probs } => probs.len(),
            Emission::Gaussian { means, .. } => means.len(),
        }
    }

    /// Mean emitted value per state; for categorical emissions the expected
    /// symbol index.
    pub fn state_means(&self) -> Vec<f64> {
        match self {
            Emission::Categorical { probs } => {
                probs.iter().map(|row| row.iter().enumerate().map(|(s, p)| s as f64 * p).sum()).collect()
            }
            Emission::Gaussian { means, .. } => means.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Symbols(&'a [usize]),
    Values(&'a [f64]),
}

impl Observations<'_> {
    pub fn len(&self) -> usize {
        match self {
            Observations::Symbols(s) => s.len(),
            Observations::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenMarkov {
    pub initial: Vec<f64>,
    /// `transition[from][to]`.
    pub transition: Vec<Vec<f64>>,
    pub emission: Emission,
}

fn check_row(row: &[f64], index: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::NotStochastic { row: index, sum });
    }
    Ok(())
}

impl HiddenMarkov {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 || self.transition.len() != n || self.emission.n_states() != n {
            return Err(invalid("hmm", "state counts disagree"));
        }
        check_row(&self.initial, 0)?;
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                return Err(invalid("transition", "matrix must be square"));
            }
            check_row(row, i)?;
        }
        match &self.emission {
            Emission::Categorical { probs } => {
                let m = probs[0].len();
                for (i, row) in probs.iter().enumerate() {
                    if row.len() != m {
                        return Err(invalid("emission", "ragged symbol table"));
                    }
                    check_row(row, i)?;
                }
            }
            Emission::Gaussian { means, variances } => {
                if variances.len() != n || variances.iter().any(|v| !(*v > 0.0)) || means.iter().any(|m| !m.is_finite())
                {
                    return Err(invalid("emission", "variances must be positive and means finite"));
                }
            }
        }
        Ok(())
    }

    /// `log b_t(j)` as a row-major `T x N` table.
    fn log_emissions(&self, obs: Observations<'_>) -> Result<Vec<f64>> {
        let n = self.n_states();
        let mut out = Vec::with_capacity(obs.len() * n);
        match (&self.emission, obs) {
            (Emission::Categorical { probs }, Observations::Symbols(sym)) => {
                let m = probs[0].len();
                let logp: Vec<Vec<f64>> = probs.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
                for (t, &s) in sym.iter().enumerate() {
                    if s >= m {
                        return Err(Error::LabelOutOfRange { index: t, label: s, limit: m });
                    }
                    out.extend(logp.iter().map(|r| r[s]));
                }
            }
            (Emission::Gaussian { means, variances }, Observations::Values(v)) => {
                let norm: Vec<f64> = variances.iter().map(|s| -0.5 * (LN_2PI + s.ln())).collect();
                for (t, &x) in v.iter().enumerate() {
                    if !x.is_finite() {
                        return Err(Error::NonFinite { index: t });
                    }
                    for j in 0..n {
                        out.push(norm[j] - 0.5 * (x - means[j]).powi(2) / variances[j]);
                    }
                }
            }
            _ => return Err(invalid("observations", "kind does not match the emission model")),
        }
        Ok(out)
    }

    /// Permutes states so emission means increase. Returns the reordered model
    /// and `perm[old] = new`.
    pub fn canonical(&self) -> (HiddenMarkov, Vec<usize>) {
        let means = self.emission.state_means();
        let mut order: Vec<usize> = (0..self.n_states()).collect();
        order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
        let mut perm = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            perm[old] = new;
        }
        (self.permuted(&order), perm)
    }

    /// Model whose state `k` is this model's state `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> HiddenMarkov {
        let pick = |v: &Vec<f64>| order.iter().map(|&o| v[o]).collect::<Vec<f64>>();
        HiddenMarkov {
            initial: pick(&self.initial),
            transition: order.iter().map(|&a| order.iter().map(|&b| self.transition[a][b]).collect()).collect(),
            emission: match &self.emission {
                Emission::Categorical { probs } => {
                    Emission::Categorical { probs: order.iter().map(|&o| probs[o].clone()).collect() }
                }
                Emission::Gaussian { means, variances } => {
                    Emission::Gaussian { means: pick(means), variances: pick(variances) }
                }
            },
        }
    }

    /// Log-likelihood of a sequence by the scaled forward recursion.
    pub fn log_likelihood(&self, obs: Observations<'_>) -> Result<f64> {
        Ok(forward_backward(self, obs, false)?.log_likelihood)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPath {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub log_likelihood: f64,
}

impl LabelPath {
    pub fn with_times(mut self, times: Vec<f64>) -> Result<Self> {
        if times.len() != self.states.len() {
            return Err(Error::DimensionMismatch { expected: self.states.len(), got: times.len() });
        }
        self.times = times;
        Ok(self)
    }

    /// Applies `perm[old] = new` to every label.
    pub fn relabel(&self, perm: &[usize]) -> LabelPath {
        LabelPath {
            times: self.times.clone(),
            states: self.states.iter().map(|&s| perm[s]).collect(),
            log_likelihood: self.log_likelihood,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Most likely state sequence. Ties resolve to the lower predecessor index
/// and, at the final step, the lower state index.
pub fn hmm_viterbi(model: &HiddenMarkov, obs: Observations<'_>) -> Result<LabelPath> {
    model.validate()?;
    let n = model.n_states();
    let t_len = obs.len();
    if t_len == 0 {
        return Ok(LabelPath { times: vec![], states: vec![], log_likelihood: 0.0 });
    }
    let logb = model.log_emissions(obs)?;
    let loga: Vec<Vec<f64>> = model.transition.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
    let mut delta: Vec<f64> = (0..n).map(|j| model.initial[j].ln() + logb[j]).collect();
    let mut back = vec![0u32; t_len * n];
    let mut next = vec![0.0; n];
    for t in 0..t_len {
        if t > 0 {
            for j in 0..n {
                let mut best = (f64::NEG_INFINITY, 0usize);
                for i in 0..n {
                    let v = delta[i] + loga[i][j];
                    if v > best.0 {
                        best = (v, i);
                    }
                }
                back[t * n + j] = best.1 as u32;
                next[j] = best.0 + logb[t * n + j];
            }
            std::mem::swap(&mut delta, &mut next);
        }
        if delta.iter().all(|d| *d == f64::NEG_INFINITY) {
            return Err(Error::ZeroProbability { index: t });
        }
    }
    let mut last = 0;
    for j in 1..n {
        if delta[j] > delta[last] {
            last = j;
        }
    }
    let log_likelihood = delta[last];
    let mut states = vec![0usize; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t * n + states[t]] as usize;
    }
    Ok(LabelPath { times: (0..t_len).map(|t| t as f64).collect(), states, log_likelihood })
}

/// Log joint probability of a given state path.
pub fn path_log_probability(model: &HiddenMarkov, obs: Observations<'_>, states: &[usize]) -> Result<f64> {
    let n = model.n_states();
    let logb = model.log_emissions(obs)?;
    let mut lp = model.initial[states[0]].ln() + logb[states[0]];
    for t in 1..states.len() {
        lp = (lp + model.transition[states[t - 1]][states[t]].ln()) + logb[t * n + states[t]];
    }
    Ok(lp)
}

struct Posterior {
    log_likelihood: f64,
    gamma: Vec<f64>,
    xi_sum: Vec<f64>,
}

/// Scaled forward-backward. Emission rows are shifted by their maximum so
/// that sharply peaked Gaussian densities cannot underflow.
fn forward_backward(model: &HiddenMarkov, obs: Observations<'_>, want_posteriors: bool) -> Result<Posterior> {
    let n = model.n_states();
    let t_len = obs.len();
    let logb = model.log_emissions(obs)?;
    let mut b = vec![0.0; t_len * n];
    let mut log_likelihood = 0.0;
    for t in 0..t_len {
        let row = &logb[t * n..(t + 1) * n];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability { index: t });
        }
        log_likelihood += m;
        for j in 0..n {
            b[t * n + j] = (row[j] - m).exp();
        }
    }
    let a = &model.transition;
    let mut alpha = vec![0.0; t_len * n];
    let mut scale = vec![0.0; t_len];
    for t in 0..t_len {
        let mut c = 0.0;
        for j in 0..n {
            let prior = if t == 0 { model.initial[j] } else { (0..n).map(|i| alpha[(t - 1) * n + i] * a[i][j]).sum() };
            let v = prior * b[t * n + j];
            alpha[t * n + j] = v;
            c += v;
        }
        if !(c > 0.0) {
            return Err(Error::ZeroProbability { index: t });
        }
        for j in 0..n {
            alpha[t * n + j] /= c;
        }
        scale[t] = c;
        log_likelihood += c.ln();
    }
    if !want_posteriors {
        return Ok(Posterior { log_likelihood, gamma: vec![], xi_sum: vec![] });
    }
    let mut beta = vec![1.0; t_len * n];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += a[i][j] * b[(t + 1) * n + j] * beta[(t + 1) * n + j];
            }
            beta[t * n + i] = s / scale[t + 1];
        }
    }
    let mut gamma = vec![0.0; t_len * n];
    for t in 0..t_len {
        let mut s = 0.0;
        for j in 0..n {
            let g = alpha[t * n + j] * beta[t * n + j];
            gamma[t * n + j] = g;
            s += g;
        }
        for j in 0..n {
            gamma[t * n + j] /= s;
        }
    }
    let mut xi_sum = vec![0.0; n * n];
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..n {
            let ai = alpha[t * n + i];
            if ai == 0.0 {
                continue;
            }
            for j in 0..n {
                xi_sum[i * n + j] += ai * a[i][j] * b[(t + 1) * n + j] * beta[(t + 1) * n + j] / scale[t + 1];
            }
        }
    }
    Ok(Posterior { log_likelihood, gamma, xi_sum })
}

/// Per-state posterior occupancy `gamma[t][j]`, row-major.
pub fn hmm_posteriors(model: &HiddenMarkov, obs: Observations<'_>) -> Result<Vec<f64>> {
    model.validate()?;
    Ok(forward_backward(model, obs, true)?.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmissionKind {
    Categorical { symbols: usize },
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub n_states: usize,
    pub emission: EmissionKind,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    /// Initial self-transition probability.
    pub stay: f64,
    #[serde(default)]
    pub exec: Execution,
}

impl HmmConfig {
    pub fn new(n_states: usize, emission: EmissionKind, seed: u64) -> Self {
        HmmConfig {
            n_states,
            emission,
            seed,
            restarts: 3,
            max_iter: 500,
            tol: 1e-8,
            stay: 0.9,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmFit {
    /// States in canonical order (increasing emission mean).
    pub model: HiddenMarkov,
    pub log_likelihood: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest deviation of any learned row sum from 1 over all iterations.
    pub max_row_error: f64,
}

fn pooled_values(seqs: &[Observations<'_>]) -> Vec<f64> {
    let mut v = Vec::new();
    for s in seqs {
        match s {
            Observations::Values(x) => v.extend_from_slice(x),
            Observations::Symbols(x) => v.extend(x.iter().map(|&s| s as f64)),
        }
    }
    v
}

fn initial_model<R: Rng>(cfg: &HmmConfig, seqs: &[Observations<'_>], jitter: f64, r: &mut R) -> Result<HiddenMarkov> {
    let n = cfg.n_states;
    let off = if n > 1 { (1.0 - cfg.stay) / (n - 1) as f64 } else { 0.0 };
    let transition = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        if n > 1 {
                            cfg.stay
                        } else {
                            1.0
                        }
                    } else {
                        off
                    }
                })
                .collect()
        })
        .collect();
    let mut values = pooled_values(seqs);
    if values.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    values.sort_by(f64::total_cmp);
    let quantile = |q: f64| values[((q * values.len() as f64) as usize).min(values.len() - 1)];
    let emission = match cfg.emission {
        EmissionKind::Gaussian => {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / values.len() as f64;
            let var = var.max(1e-300);
            let spread = var.sqrt();
            let means = (0..n)
                .map(|j| quantile((2 * j + 1) as f64 / (2 * n) as f64) + jitter * spread * (r.random::<f64>() - 0.5))
                .collect();
            Emission::Gaussian { means, variances: vec![var / (n * n) as f64; n] }
        }
        EmissionKind::Categorical { symbols } => {
            let mut freq = vec![0.0; symbols];
            for (t, &v) in values.iter().enumerate() {
                let s = v as usize;
                if s >= symbols {
                    return Err(Error::LabelOutOfRange { index: t, label: s, limit: symbols });
                }
                freq[s] += 1.0 / values.len() as f64;
            }
            let probs = (0..n)
                .map(|j| {
                    let favored = quantile((2 * j + 1) as f64 / (2 * n) as f64) as usize;
                    let mut row: Vec<f64> = (0..symbols)
                        .map(|s| {
                            let base = 0.5 * freq[s] + if s == favored { 0.5 } else { 0.0 };
                            base + 1e-3 + jitter * 0.1 * r.random::<f64>()
                        })
                        .collect();
                    let sum: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= sum);
                    row
                })
                .collect();
            Emission::Categorical { probs }
        }
    };
    Ok(HiddenMarkov { initial: vec![1.0 / n as f64; n], transition, emission })
}

fn normalize(row: &mut [f64]) -> f64 {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    (row.iter().sum::<f64>() - 1.0).abs()
}

fn baum_welch(
    mut model: HiddenMarkov,
    seqs: &[Observations<'_>],
    cfg: &HmmConfig,
    var_floor: f64,
    exec: Execution,
) -> Result<HmmFit> {
    let n = model.n_states();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut max_row_error: f64 = 0.0;
    let mut last = f64::NEG_INFINITY;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let posts = exec.map(seqs, |s| forward_backward(&model, *s, true));
        let mut ll = 0.0;
        let mut init = vec![0.0; n];
        let mut xi = vec![0.0; n * n];
        let mut occ = vec![0.0; n];
        let mut sym_counts: Vec<Vec<f64>> = Vec::new();
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        if let Emission::Categorical { probs } = &model.emission {
            sym_counts = vec![vec![0.0; probs[0].len()]; n];
        }
        for (post, seq) in posts.into_iter().zip(seqs) {
            let p = post?;
            ll += p.log_likelihood;
            for j in 0..n {
                init[j] += p.gamma[j];
            }
            xi.iter_mut().zip(&p.xi_sum).for_each(|(a, b)| *a += b);
            for t in 0..seq.len() {
                for j in 0..n {
                    let g = p.gamma[t * n + j];
                    occ[j] += g;
                    match seq {
                        Observations::Symbols(s) => sym_counts[j][s[t]] += g,
                        Observations::Values(v) => {
                            s1[j] += g * v[t];
                            s2[j] += g * v[t] * v[t];
                        }
                    }
                }
            }
        }
        history.push(ll);
        if last.is_finite() && (ll - last).abs() <= cfg.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
        last = ll;

        max_row_error = max_row_error.max(normalize(&mut init));
        model.initial = init;
        for i in 0..n {
            let mut row: Vec<f64> = xi[i * n..(i + 1) * n].to_vec();
            if row.iter().sum::<f64>() > 0.0 {
                max_row_error = max_row_error.max(normalize(&mut row));
                model.transition[i] = row;
            }
        }
        match &mut model.emission {
            Emission::Categorical { probs } => {
                for j in 0..n {
                    if occ[j] > 0.0 {
                        let mut row = sym_counts[j].clone();
                        max_row_error = max_row_error.max(normalize(&mut row));
                        probs[j] = row;
                    }
                }
            }
            Emission::Gaussian { means, variances } => {
                for j in 0..n {
                    if occ[j] > 1e-12 {
                        let mu = s1[j] / occ[j];
                        means[j] = mu;
                        variances[j] = (s2[j] / occ[j] - mu * mu).max(var_floor);
                    }
                }
            }
        }
    }
    if !converged {
        log::warn!("hmm training stopped at the iteration cap ({}) before converging", cfg.max_iter);
    }
    let (canon, _) = model.canonical();
    let log_likelihood = seqs.iter().map(|s| canon.log_likelihood(*s)).sum::<Result<f64>>()?;
    Ok(HmmFit { model: canon, log_likelihood, history, iterations, converged, max_row_error })
}

fn variance_floor(seqs: &[Observations<'_>]) -> f64 {
    let v = pooled_values(seqs);
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len().max(1) as f64;
    (1e-6 * var).max(1e-300)
}

fn check_sequences(seqs: &[Observations<'_>]) -> Result<()> {
    let total: usize = seqs.iter().map(|s| s.len()).sum();
    if total < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: total });
    }
    Ok(())
}

/// Baum-Welch over several independent sequences with quantile-seeded
/// restarts; the best final log-likelihood wins.
pub fn hmm_train(seqs: &[Observations<'_>], cfg: &HmmConfig) -> Result<HmmFit> {
    if cfg.n_states == 0 {
        return Err(invalid("n_states", "must be >= 1"));
    }
    check_sequences(seqs)?;
    let floor = variance_floor(seqs);
    let restarts = cfg.restarts.max(1);
    let fits = cfg.exec.map_range(restarts, |k| {
        let mut r = rng(cfg.seed, 2000 + k as u64);
        let jitter = if k == 0 { 0.0 } else { 0.5 };
        let init = initial_model(cfg, seqs, jitter, &mut r)?;
        let inner = if restarts > 1 { Execution::Sequential } else { cfg.exec };
        baum_welch(init, seqs, cfg, floor, inner)
    });
    let mut best: Option<HmmFit> = None;
    for f in fits {
        let f = f?;
        if best.as_ref().is_none_or(|b| f.log_likelihood > b.log_likelihood) {
            best = Some(f);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Baum-Welch starting from a supplied model.
pub fn hmm_train_from(init: &HiddenMarkov, seqs: &[Observations<'_>], cfg: &HmmConfig) -> Result<HmmFit> {
    init.validate()?;
    check_sequences(seqs)?;
    baum_welch(init.clone(), seqs, cfg, variance_floor(seqs), cfg.exec)
}
