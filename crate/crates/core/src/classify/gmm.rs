//! Gaussian mixtures fitted by expectation-maximization.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{Execution, REDUCE_CHUNK};
use crate::synth::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Ridge added to a covariance whose smallest eigenvalue falls below this
/// fraction of the data variance.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

/// Row-major observations of fixed dimension.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Samples<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(invalid("samples", format!("length {} is not a multiple of dim {dim}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Samples { data, dim })
    }

    pub fn scalar(data: &'a [f64]) -> Result<Self> {
        Samples::new(data, 1)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw(&self) -> &'a [f64] {
        self.data
    }

    fn mean(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d];
        for p in self.data.chunks(d) {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.len() as f64);
        m
    }

    fn covariance(&self, mean: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut c = vec![0.0; d * d];
        for p in self.data.chunks(d) {
            for a in 0..d {
                for b in 0..d {
                    c[a * d + b] += (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        c.iter_mut().for_each(|v| *v /= self.len() as f64);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim x dim` covariance per component.
    pub covariances: Vec<Vec<f64>>,
}

/// Cached Cholesky factor and normalization of one component.
#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: Vec<f64>,
    /// Lower-triangular Cholesky factor, row-major.
    chol: Vec<f64>,
    log_norm: f64,
}

impl Component {
    fn log_density(&self, x: &[f64], z: &mut [f64]) -> f64 {
        let d = self.mean.len();
        if d == 1 {
            let u = (x[0] - self.mean[0]) / self.chol[0];
            return self.log_weight + self.log_norm - 0.5 * u * u;
        }
        // Forward substitution L z = x - mu.
        let mut q = 0.0;
        for a in 0..d {
            let mut s = x[a] - self.mean[a];
            for b in 0..a {
                s -= self.chol[a * d + b] * z[b];
            }
            z[a] = s / self.chol[a * d + a];
            q += z[a] * z[a];
        }
        self.log_weight + self.log_norm - 0.5 * q
    }
}

fn cholesky(c: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = c[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn min_eigenvalue(c: &[f64], d: usize) -> f64 {
    match d {
        1 => c[0],
        2 => {
            let (a, b, e) = (c[0], c[1], c[3]);
            0.5 * (a + e) - (0.25 * (a - e).powi(2) + b * b).sqrt()
        }
        _ => {
            let m = nalgebra::DMatrix::from_row_slice(d, d, c);
            m.symmetric_eigenvalues().min()
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GaussianMixture {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(invalid("mixture", "component arrays disagree in length"));
        }
        let wsum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (wsum - 1.0).abs() > 1e-9 {
            return Err(invalid("weights", format!("must be non-negative and sum to 1 (sum {wsum})")));
        }
        for c in &self.covariances {
            if c.len() != self.dim * self.dim || cholesky(c, self.dim).is_none() {
                return Err(invalid("covariances", "must be positive definite"));
            }
        }
        Ok(())
    }

    /// Free parameters: weights, means and full covariances.
    pub fn parameter_count(&self) -> usize {
        let (k, d) = (self.k(), self.dim);
        (k - 1) + k * d + k * d * (d + 1) / 2
    }

    pub fn bic(&self, log_likelihood: f64, samples: usize) -> f64 {
        -2.0 * log_likelihood + self.parameter_count() as f64 * (samples as f64).ln()
    }

    fn components(&self) -> Result<Vec<Component>> {
        let d = self.dim;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((&w, m), c)| {
                let chol = cholesky(c, d).ok_or_else(|| invalid("covariances", "not positive definite"))?;
                let log_det: f64 = (0..d).map(|i| 2.0 * chol[i * d + i].ln()).sum();
                Ok(Component {
                    log_weight: w.ln(),
                    mean: m.clone(),
                    chol,
                    log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
                })
            })
            .collect()
    }

    /// Total log-likelihood of the samples.
    pub fn log_likelihood(&self, samples: Samples<'_>, exec: Execution) -> Result<f64> {
        self.check_dim(samples)?;
        let comps = self.components()?;
        let k = comps.len();
        let partial = exec.map_chunks(samples.raw(), REDUCE_CHUNK * samples.dim(), |_, chunk| {
            let mut lp = vec![0.0; k];
            let mut z = vec![0.0; samples.dim()];
            chunk
                .chunks(samples.dim())
                .map(|x| {
                    for (j, c) in comps.iter().enumerate() {
                        lp[j] = c.log_density(x, &mut z);
                    }
                    log_sum_exp(&lp)
                })
                .sum::<f64>()
        });
        Ok(partial.into_iter().sum())
    }

    fn check_dim(&self, samples: Samples<'_>) -> Result<()> {
        if samples.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: samples.dim() });
        }
        Ok(())
    }
}

/// Hard labels and posterior probabilities (`posteriors[i * k + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<usize>,
    pub posteriors: Vec<f64>,
    pub k: usize,
}

impl Classification {
    pub fn posterior(&self, i: usize) -> &[f64] {
        &self.posteriors[i * self.k..(i + 1) * self.k]
    }
}

/// Maximum-posterior labels; ties resolve to the lower component index.
pub fn gmm_classify(model: &GaussianMixture, samples: Samples<'_>, exec: Execution) -> Result<Classification> {
    model.check_dim(samples)?;
    let comps = model.components()?;
    let k = comps.len();
    let d = samples.dim();
    let parts = exec.map_chunks(samples.raw(), REDUCE_CHUNK * d, |_, chunk| {
        let mut labels = Vec::with_capacity(chunk.len() / d);
        let mut post = Vec::with_capacity(chunk.len() / d * k);
        let mut lp = vec![0.0; k];
        let mut z = vec![0.0; d];
        for x in chunk.chunks(d) {
            for (j, c) in comps.iter().enumerate() {
                lp[j] = c.log_density(x, &mut z);
            }
            let norm = log_sum_exp(&lp);
            let mut best = 0;
            for j in 0..k {
                if lp[j] > lp[best] {
                    best = j;
                }
                post.push((lp[j] - norm).exp());
            }
            labels.push(best);
        }
        (labels, post)
    });
    let mut labels = Vec::with_capacity(samples.len());
    let mut posteriors = Vec::with_capacity(samples.len() * k);
    for (l, p) in parts {
        labels.extend(l);
        posteriors.extend(p);
    }
    Ok(Classification { labels, posteriors, k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    #[serde(default)]
    pub exec: Execution,
}

impl GmmConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        GmmConfig { k, seed, restarts: 4, max_iter: 500, tol: 1e-10, exec: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: GaussianMixture,
    pub log_likelihood: f64,
    /// Log-likelihood before each M-step of the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of covariance regularizations applied in the winning restart.
    pub ridge_events: usize,
    pub restart: usize,
}

struct Stats {
    log_likelihood: f64,
    nk: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

fn e_step(comps: &[Component], samples: Samples<'_>, shift: &[f64], exec: Execution) -> Stats {
    let k = comps.len();
    let d = samples.dim();
    let parts = exec.map_chunks(samples.raw(), REDUCE_CHUNK * d, |_, chunk| {
        let mut st = Stats { log_likelihood: 0.0, nk: vec![0.0; k], s1: vec![0.0; k * d], s2: vec![0.0; k * d * d] };
        let mut lp = vec![0.0; k];
        let mut z = vec![0.0; d];
        let mut y = vec![0.0; d];
        for x in chunk.chunks(d) {
            for (j, c) in comps.iter().enumerate() {
                lp[j] = c.log_density(x, &mut z);
            }
            // Shifted exponentials serve both the normalizer and the
            // responsibilities.
            let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in lp.iter_mut() {
                *v = (*v - m).exp();
                total += *v;
            }
            st.log_likelihood += m + total.ln();
            for a in 0..d {
                y[a] = x[a] - shift[a];
            }
            for j in 0..k {
                let r = lp[j] / total;
                if r == 0.0 {
                    continue;
                }
                st.nk[j] += r;
                for a in 0..d {
                    st.s1[j * d + a] += r * y[a];
                    for b in 0..d {
                        st.s2[(j * d + a) * d + b] += r * y[a] * y[b];
                    }
                }
            }
        }
        st
    });
    let mut total = Stats { log_likelihood: 0.0, nk: vec![0.0; k], s1: vec![0.0; k * d], s2: vec![0.0; k * d * d] };
    for p in parts {
        total.log_likelihood += p.log_likelihood;
        total.nk.iter_mut().zip(&p.nk).for_each(|(a, b)| *a += b);
        total.s1.iter_mut().zip(&p.s1).for_each(|(a, b)| *a += b);
        total.s2.iter_mut().zip(&p.s2).for_each(|(a, b)| *a += b);
    }
    total
}

/// Replaces a covariance whose smallest eigenvalue is below `floor` by
/// `cov + floor * I`. Returns true when the ridge was applied.
fn regularize(cov: &mut [f64], d: usize, floor: f64) -> bool {
    if min_eigenvalue(cov, d) < floor || cholesky(cov, d).is_none() {
        for a in 0..d {
            cov[a * d + a] += floor;
        }
        true
    } else {
        false
    }
}

fn m_step(model: &mut GaussianMixture, st: &Stats, shift: &[f64], m: usize, floor: f64) -> usize {
    let d = model.dim;
    let mut ridges = 0;
    for j in 0..model.k() {
        let n = st.nk[j];
        if n <= 1e-12 * m as f64 {
            // Starved component: keep its shape, weight falls to its share.
            model.weights[j] = n / m as f64;
            continue;
        }
        model.weights[j] = n / m as f64;
        let mu: Vec<f64> = (0..d).map(|a| st.s1[j * d + a] / n).collect();
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] = st.s2[(j * d + a) * d + b] / n - mu[a] * mu[b];
            }
        }
        for a in 0..d {
            for b in 0..a {
                let s = 0.5 * (cov[a * d + b] + cov[b * d + a]);
                cov[a * d + b] = s;
                cov[b * d + a] = s;
            }
        }
        if regularize(&mut cov, d, floor) {
            ridges += 1;
            log::debug!("component {j} regularized with ridge {floor:e}");
        }
        model.means[j] = mu.iter().zip(shift).map(|(a, s)| a + s).collect();
        model.covariances[j] = cov;
    }
    let wsum: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= wsum);
    ridges
}

/// Initial mixture from hard assignment to `seeds` followed by a few Lloyd
/// iterations.
fn init_from_seeds(samples: Samples<'_>, mut seeds: Vec<Vec<f64>>, data_cov: &[f64], floor: f64) -> GaussianMixture {
    let d = samples.dim();
    let k = seeds.len();
    let mut assign = vec![0usize; samples.len()];
    for _ in 0..10 {
        for (i, a) in assign.iter_mut().enumerate() {
            let x = samples.point(i);
            let mut best = (f64::INFINITY, 0);
            for (j, s) in seeds.iter().enumerate() {
                let dist: f64 = x.iter().zip(s).map(|(u, v)| (u - v).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            *a = best.1;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(samples.point(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                seeds[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let mut weights = vec![0.0; k];
    let mut covs = vec![vec![0.0; d * d]; k];
    for (i, &a) in assign.iter().enumerate() {
        weights[a] += 1.0;
        let x = samples.point(i);
        for p in 0..d {
            for q in 0..d {
                covs[a][p * d + q] += (x[p] - seeds[a][p]) * (x[q] - seeds[a][q]);
            }
        }
    }
    for j in 0..k {
        if weights[j] > d as f64 {
            covs[j].iter_mut().for_each(|c| *c /= weights[j]);
        } else {
            covs[j] = data_cov.iter().map(|c| c / (k * k) as f64).collect();
        }
        regularize(&mut covs[j], d, floor);
    }
    let m = samples.len() as f64;
    let weights: Vec<f64> = weights.iter().map(|w| (w + 1.0) / (m + k as f64)).collect();
    GaussianMixture { dim: d, weights, means: seeds, covariances: covs }
}

fn kmeans_pp_seeds<R: Rng>(samples: Samples<'_>, k: usize, r: &mut R) -> Vec<Vec<f64>> {
    let m = samples.len();
    // Seed on a bounded subsample; Lloyd refinement uses all points.
    let pool: Vec<usize> = if m > 4096 {
        let mut v = sample_indices(r, m, 4096).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..m).collect()
    };
    let mut seeds = vec![samples.point(pool[r.random_range(0..pool.len())]).to_vec()];
    let mut dist: Vec<f64> = pool.iter().map(|&i| sq_dist(samples.point(i), &seeds[0])).collect();
    while seeds.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = pool.len() - 1;
            for (j, &w) in dist.iter().enumerate() {
                if u < w {
                    pick = j;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            r.random_range(0..pool.len())
        };
        let s = samples.point(pool[next]).to_vec();
        for (j, &i) in pool.iter().enumerate() {
            dist[j] = dist[j].min(sq_dist(samples.point(i), &s));
        }
        seeds.push(s);
    }
    seeds
}

fn quantile_seeds(samples: Samples<'_>, k: usize) -> Vec<Vec<f64>> {
    let mut v = samples.raw().to_vec();
    v.sort_by(f64::total_cmp);
    (0..k)
        .map(|j| {
            let q = (2 * j + 1) as f64 / (2 * k) as f64;
            vec![v[((q * v.len() as f64) as usize).min(v.len() - 1)]]
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum()
}

fn run_em(
    samples: Samples<'_>,
    mut model: GaussianMixture,
    cfg: &GmmConfig,
    floor: f64,
    shift: &[f64],
    exec: Execution,
) -> Result<GmmFit> {
    let m = samples.len();
    let mut history = Vec::new();
    let mut ridge_events = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut last = f64::NEG_INFINITY;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let comps = model.components()?;
        let st = e_step(&comps, samples, shift, exec);
        let ll = st.log_likelihood;
        history.push(ll);
        if last.is_finite() && (ll - last).abs() <= cfg.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
        last = ll;
        ridge_events += m_step(&mut model, &st, shift, m, floor);
    }
    let log_likelihood = model.log_likelihood(samples, exec)?;
    Ok(GmmFit { model, log_likelihood, history, iterations, converged, ridge_events, restart: 0 })
}

/// EM from several initializations; the best final log-likelihood wins
/// (ties keep the earliest restart). Restart 0 seeds 1-D data from quantiles;
/// the others use k-means++ seeding.
pub fn gmm_fit(samples: Samples<'_>, cfg: &GmmConfig) -> Result<GmmFit> {
    if cfg.k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    if samples.len() < 10 * cfg.k {
        return Err(Error::TooFewSamples { needed: 10 * cfg.k, got: samples.len() });
    }
    let d = samples.dim();
    let mean = samples.mean();
    let data_cov = samples.covariance(&mean);
    let var = (0..d).map(|a| data_cov[a * d + a]).sum::<f64>() / d as f64;
    let floor = COVARIANCE_FLOOR * var.max(f64::MIN_POSITIVE);
    let restarts = cfg.restarts.max(1);

    let fits = cfg.exec.map_range(restarts, |r_idx| {
        let mut r = rng(cfg.seed, 1000 + r_idx as u64);
        let seeds =
            if r_idx == 0 && d == 1 { quantile_seeds(samples, cfg.k) } else { kmeans_pp_seeds(samples, cfg.k, &mut r) };
        let init = init_from_seeds(samples, seeds, &data_cov, floor);
        let inner = if restarts > 1 { Execution::Sequential } else { cfg.exec };
        run_em(samples, init, cfg, floor, &mean, inner).map(|mut f| {
            f.restart = r_idx;
            f
        })
    });
    let mut best: Option<GmmFit> = None;
    for f in fits {
        let f = f?;
        if best.as_ref().is_none_or(|b| f.log_likelihood > b.log_likelihood) {
            best = Some(f);
        }
    }
    let best = best.expect("at least one restart");
    if best.ridge_events > 0 {
        log::info!("gmm k={} applied {} covariance ridges", cfg.k, best.ridge_events);
    }
    Ok(best)
}

/// Greedy nearest-mean matching of mixture components to reference points.
/// Returns `map[component] = reference index`.
pub fn match_components(model: &GaussianMixture, reference: &[Vec<f64>]) -> Vec<usize> {
    let mut pairs = Vec::new();
    for (c, m) in model.means.iter().enumerate() {
        for (r, p) in reference.iter().enumerate() {
            pairs.push((sq_dist(m, p), c, r));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut map = vec![usize::MAX; model.k()];
    let mut used = vec![false; reference.len()];
    for (_, c, r) in pairs {
        if map[c] == usize::MAX && !used[r] {
            map[c] = r;
            used[r] = true;
        }
    }
    map
}

/// Summed Euclidean distance between greedily matched means of two mixtures.
pub fn mixture_distance(a: &GaussianMixture, b: &GaussianMixture) -> f64 {
    let map = match_components(a, &b.means);
    map.iter()
        .enumerate()
        .filter(|(_, &r)| r != usize::MAX)
        .map(|(c, &r)| sq_dist(&a.means[c], &b.means[r]).sqrt())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_2d(n: usize, center: [f64; 2], sigma: f64, seed: u64) -> Vec<f64> {
        let mut r = rng(seed, 0);
        let mut v = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            v.push(center[0] + sigma * a);
            v.push(center[1] + sigma * b + 0.3 * sigma * a);
        }
        v
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let data = gaussian_2d(2000, [0.5, -1.0], 0.7, 3);
        let s = Samples::new(&data, 2).unwrap();
        let fit = gmm_fit(s, &GmmConfig::new(1, 1)).unwrap();
        let mean = s.mean();
        let cov = s.covariance(&mean);
        for a in 0..2 {
            assert!((fit.model.means[0][a] - mean[a]).abs() < 1e-9);
        }
        for (x, y) in fit.model.covariances[0].iter().zip(&cov) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert_eq!(fit.ridge_events, 0);
    }

    #[test]
    fn separated_clusters_fully_recovered() {
        let mut data = gaussian_2d(500, [0.0, 0.0], 0.1, 1);
        data.extend(gaussian_2d(500, [1.0, 0.0], 0.1, 2));
        let s = Samples::new(&data, 2).unwrap();
        let fit = gmm_fit(s, &GmmConfig::new(2, 5)).unwrap();
        let cls = gmm_classify(&fit.model, s, Execution::Sequential).unwrap();
        let first = cls.labels[0];
        assert!(cls.labels[..500].iter().all(|&l| l == first));
        assert!(cls.labels[500..].iter().all(|&l| l != first));
    }

    #[test]
    fn em_history_is_monotone() {
        let mut data = gaussian_2d(400, [0.0, 0.0], 0.3, 11);
        data.extend(gaussian_2d(300, [0.6, 0.4], 0.2, 12));
        data.extend(gaussian_2d(300, [-0.5, 0.7], 0.25, 13));
        let s = Samples::new(&data, 2).unwrap();
        let fit = gmm_fit(s, &GmmConfig::new(3, 2)).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn overfit_pure_noise_has_worse_bic() {
        let data = gaussian_2d(100, [0.0, 0.0], 1.0, 21);
        let s = Samples::new(&data, 2).unwrap();
        let one = gmm_fit(s, &GmmConfig::new(1, 0)).unwrap();
        let mut cfg = GmmConfig::new(10, 0);
        cfg.restarts = 2;
        let many = gmm_fit(s, &cfg).unwrap();
        assert!(many.model.bic(many.log_likelihood, 100) > one.model.bic(one.log_likelihood, 100));
    }

    #[test]
    fn classify_posteriors() {
        let model = GaussianMixture {
            dim: 1,
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0], vec![1.0]],
            covariances: vec![vec![0.01], vec![0.01]],
        };
        let data = [-1.0, 0.0, 1.0];
        let cls = gmm_classify(&model, Samples::scalar(&data).unwrap(), Execution::Sequential).unwrap();
        assert_eq!(cls.labels, vec![0, 0, 1]);
        assert!(cls.posterior(0)[0] > 0.999);
        assert!((cls.posterior(1)[0] - 0.5).abs() < 1e-15);
        for i in 0..3 {
            assert!((cls.posterior(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_too_few_and_bad_dims() {
        let data = vec![0.0; 20];
        assert!(matches!(
            gmm_fit(Samples::scalar(&data).unwrap(), &GmmConfig::new(3, 0)),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(Samples::new(&data[..3], 2).is_err());
    }

    #[test]
    fn degenerate_component_gets_ridge() {
        // Half the data sits on one exact value.
        let mut data: Vec<f64> = vec![2.0; 200];
        let mut r = rng(4, 0);
        data.extend((0..200).map(|_| -> f64 { StandardNormal.sample(&mut r) }));
        let fit = gmm_fit(Samples::scalar(&data).unwrap(), &GmmConfig::new(2, 1)).unwrap();
        assert!(fit.ridge_events > 0);
        assert!(fit.model.validate().is_ok());
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let mut data = gaussian_2d(3000, [0.0, 0.0], 0.3, 1);
        data.extend(gaussian_2d(3000, [1.0, 1.0], 0.3, 2));
        let s = Samples::new(&data, 2).unwrap();
        let mut cfg = GmmConfig::new(2, 9);
        cfg.exec = Execution::Sequential;
        let a = gmm_fit(s, &cfg).unwrap();
        cfg.exec = Execution::Parallel;
        let b = gmm_fit(s, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
