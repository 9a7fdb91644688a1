//! Choosing the number of mixture components.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use super::gmm::{gmm_classify, gmm_fit, mixture_distance, GmmConfig, Samples};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::synth::rng;

/// Mean silhouette of a 1-D labelling, exact, in O(m k log m).
///
/// Singleton clusters contribute `a = 0`. Returns `None` when fewer than two
/// clusters are populated.
pub fn silhouette_1d(values: &[f64], labels: &[usize], k: usize) -> Option<f64> {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&v, &l) in values.iter().zip(labels) {
        members[l].push(v);
    }
    if members.iter().filter(|m| !m.is_empty()).count() < 2 {
        return None;
    }
    let prefix: Vec<Vec<f64>> = members
        .iter_mut()
        .map(|m| {
            m.sort_by(f64::total_cmp);
            let mut p = Vec::with_capacity(m.len() + 1);
            p.push(0.0);
            for v in m.iter() {
                p.push(p.last().unwrap() + v);
            }
            p
        })
        .collect();
    // Sum of |x - v| over one cluster.
    let abs_sum = |c: usize, x: f64| -> f64 {
        let m = &members[c];
        let p = &prefix[c];
        let below = m.partition_point(|&v| v < x);
        let n = m.len();
        x * below as f64 - p[below] + (p[n] - p[below]) - x * (n - below) as f64
    };
    let mut total = 0.0;
    for (&x, &own) in values.iter().zip(labels) {
        let n_own = members[own].len();
        let a = if n_own > 1 { abs_sum(own, x) / (n_own - 1) as f64 } else { 0.0 };
        let b = (0..k)
            .filter(|&c| c != own && !members[c].is_empty())
            .map(|c| abs_sum(c, x) / members[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if n_own == 1 {
            1.0
        } else if a.max(b) > 0.0 {
            (b - a) / a.max(b)
        } else {
            0.0
        };
        total += s;
    }
    Some(total / values.len() as f64)
}

/// Direct O(m^2) silhouette for points of any dimension, same conventions as
/// [`silhouette_1d`].
pub fn silhouette(samples: Samples<'_>, labels: &[usize], k: usize) -> Option<f64> {
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let m = samples.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..m {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let x = samples.point(i);
        for j in 0..m {
            let d: f64 = x.iter().zip(samples.point(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            sums[labels[j]] += d;
        }
        let own = labels[i];
        let a = if counts[own] > 1 { sums[own] / (counts[own] - 1) as f64 } else { 0.0 };
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += if counts[own] == 1 {
            1.0
        } else if a.max(b) > 0.0 {
            (b - a) / a.max(b)
        } else {
            0.0
        };
    }
    Some(total / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub max_order: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Points used for fitting; longer inputs are subsampled.
    pub max_samples: usize,
    /// Points used for the silhouette.
    pub silhouette_samples: usize,
    /// BIC counts as flat once no remaining improvement exceeds this fraction
    /// of the largest improvement.
    pub bic_flat: f64,
    /// Train/test distance counts as low at or below this fraction of its
    /// maximum.
    pub distance_low: f64,
    /// Allowed relative drop of the silhouette below its running maximum.
    pub silhouette_drop: f64,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            max_order: 19,
            seed: 0,
            restarts: 4,
            max_iter: 100,
            max_samples: 3000,
            silhouette_samples: 3000,
            bic_flat: 0.1,
            distance_low: 0.1,
            silhouette_drop: 0.05,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderMetrics {
    pub order: usize,
    pub log_likelihood: f64,
    pub bic: f64,
    /// `bic(order + 1) - bic(order)`; absent for the largest order.
    pub bic_gradient: Option<f64>,
    /// Absent for a single component.
    pub silhouette: Option<f64>,
    pub train_test_distance: f64,
    /// False when a component owns no points in the silhouette sample.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionReport {
    pub orders: Vec<OrderMetrics>,
    pub chosen: usize,
    pub samples_used: usize,
}

fn subsample(values: &[f64], n: usize, seed: u64, stream: u64) -> Vec<f64> {
    if values.len() <= n {
        return values.to_vec();
    }
    let mut r = rng(seed, stream);
    let mut idx = sample_indices(&mut r, values.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| values[i]).collect()
}

/// Fits mixtures of 1..=max_order components to scalar data and picks the
/// smallest order from which no later BIC improvement exceeds a fraction of
/// the largest one, the train/test distance is low and the silhouette sits on
/// its plateau. Falls back to the BIC minimum when no order satisfies all
/// three.
pub fn select_model_order(values: &[f64], cfg: &SelectionConfig) -> Result<ModelSelectionReport> {
    if cfg.max_order < 2 {
        return Err(invalid("max_order", "must be >= 2"));
    }
    let data = subsample(values, cfg.max_samples, cfg.seed, 3000);
    if data.len() < 20 * cfg.max_order {
        return Err(Error::TooFewSamples { needed: 20 * cfg.max_order, got: data.len() });
    }
    let samples = Samples::scalar(&data)?;
    let sil_data = subsample(&data, cfg.silhouette_samples, cfg.seed, 3001);
    let sil_samples = Samples::scalar(&sil_data)?;
    // Fixed random half split shared by all orders.
    let mut r = rng(cfg.seed, 3002);
    let mut perm = sample_indices(&mut r, data.len(), data.len()).into_vec();
    let half = data.len() / 2;
    let (left, right) = perm.split_at_mut(half);
    left.sort_unstable();
    right.sort_unstable();
    let train: Vec<f64> = left.iter().map(|&i| data[i]).collect();
    let test: Vec<f64> = right.iter().map(|&i| data[i]).collect();

    let metrics = cfg.exec.map_range(cfg.max_order, |idx| -> Result<OrderMetrics> {
        let k = idx + 1;
        let gcfg = GmmConfig {
            k,
            seed: cfg.seed.wrapping_add(k as u64),
            restarts: cfg.restarts,
            max_iter: cfg.max_iter,
            tol: 1e-9,
            exec: Execution::Sequential,
        };
        let full = gmm_fit(samples, &gcfg)?;
        let a = gmm_fit(Samples::scalar(&train)?, &gcfg)?;
        let b = gmm_fit(Samples::scalar(&test)?, &gcfg)?;
        let cls = gmm_classify(&full.model, sil_samples, Execution::Sequential)?;
        let mut counts = vec![0usize; k];
        cls.labels.iter().for_each(|&l| counts[l] += 1);
        let valid = counts.iter().all(|&c| c > 0);
        let silhouette = if k > 1 { silhouette_1d(&sil_data, &cls.labels, k) } else { None };
        Ok(OrderMetrics {
            order: k,
            log_likelihood: full.log_likelihood,
            bic: full.model.bic(full.log_likelihood, data.len()),
            bic_gradient: None,
            silhouette,
            train_test_distance: mixture_distance(&a.model, &b.model),
            valid,
        })
    });
    let mut orders = metrics.into_iter().collect::<Result<Vec<_>>>()?;
    for k in 0..orders.len() - 1 {
        orders[k].bic_gradient = Some(orders[k + 1].bic - orders[k].bic);
    }
    let chosen = elbow(&orders, cfg);
    Ok(ModelSelectionReport { orders, chosen, samples_used: data.len() })
}

fn elbow(orders: &[OrderMetrics], cfg: &SelectionConfig) -> usize {
    let max_gain = orders.iter().filter_map(|o| o.bic_gradient.map(|g| -g)).fold(f64::NEG_INFINITY, f64::max);
    let max_dist = orders.iter().map(|o| o.train_test_distance).fold(0.0, f64::max);
    // Largest improvement still available at or beyond each order.
    let mut remaining = vec![f64::NEG_INFINITY; orders.len()];
    for k in (0..orders.len()).rev() {
        let here = orders[k].bic_gradient.map(|g| -g).unwrap_or(f64::NEG_INFINITY);
        remaining[k] = if k + 1 < orders.len() { here.max(remaining[k + 1]) } else { here };
    }
    let mut running = f64::NEG_INFINITY;
    for (idx, o) in orders.iter().enumerate() {
        if o.bic_gradient.is_none() {
            break;
        }
        let sil_ok = match o.silhouette {
            None => o.order == 1,
            Some(s) => {
                running = running.max(s);
                s >= running - cfg.silhouette_drop * running.abs()
            }
        };
        let bic_flat = max_gain <= 0.0 || remaining[idx] < cfg.bic_flat * max_gain;
        let dist_low = o.train_test_distance <= cfg.distance_low * max_dist;
        if o.valid && bic_flat && dist_low && sil_ok {
            return o.order;
        }
    }
    orders.iter().min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.order.cmp(&b.order))).map(|o| o.order).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_silhouette_matches_direct() {
        let mut r = rng(5, 0);
        use rand::Rng;
        let values: Vec<f64> = (0..300).map(|_| r.random::<f64>()).collect();
        let labels: Vec<usize> = values.iter().map(|v| ((v * 3.7) as usize).min(3)).collect();
        let fast = silhouette_1d(&values, &labels, 4).unwrap();
        let slow = silhouette(Samples::scalar(&values).unwrap(), &labels, 4).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn two_points_two_clusters() {
        assert_eq!(silhouette_1d(&[0.0, 1.0], &[0, 1], 2), Some(1.0));
        assert_eq!(silhouette_1d(&[0.0, 1.0], &[0, 0], 2), None);
    }

    #[test]
    fn picks_three_separated_clusters() {
        use rand_distr::{Distribution, Normal};
        let mut r = rng(2, 0);
        let mut values = Vec::new();
        for c in [0.1, 0.25, 0.4] {
            let n = Normal::new(c, 0.01).unwrap();
            values.extend((0..800).map(|_| n.sample(&mut r)));
        }
        let cfg = SelectionConfig { max_order: 8, seed: 1, ..Default::default() };
        let rep = select_model_order(&values, &cfg).unwrap();
        assert_eq!(rep.chosen, 3, "{:#?}", rep.orders);
    }
}
