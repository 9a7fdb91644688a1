//! Power spectral densities and the fits used to read switching rates off
//! them.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::synth::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // Periodic Hann, which tiles exactly at 50 % overlap.
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdConfig {
    /// Samples per segment; `None` picks the largest power of two not above
    /// a quarter of the series.
    pub segment_len: Option<usize>,
    /// Fractional overlap between consecutive segments.
    pub overlap: f64,
    pub window: Window,
}

impl Default for PsdConfig {
    fn default() -> Self {
        PsdConfig { segment_len: None, overlap: 0.5, window: Window::Hann }
    }
}

/// One-sided spectral density; the sum of `power * df` over all bins equals
/// the variance of the (mean-removed) signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub segments: usize,
    pub segment_len: usize,
    pub dt: f64,
}

impl Psd {
    pub fn df(&self) -> f64 {
        1.0 / (self.segment_len as f64 * self.dt)
    }

    /// Integral of the density over all bins.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.df()
    }

    /// Averages bins into logarithmically spaced groups (DC dropped).
    pub fn log_binned(&self, bins_per_decade: usize) -> Psd {
        let mut freqs = Vec::new();
        let mut power = Vec::new();
        let step = 10f64.powf(1.0 / bins_per_decade.max(1) as f64);
        let mut i = 1;
        while i < self.freqs.len() {
            let edge = self.freqs[i] * step;
            let mut j = i;
            let (mut fs, mut ps) = (0.0, 0.0);
            while j < self.freqs.len() && (self.freqs[j] < edge || j == i) {
                fs += self.freqs[j];
                ps += self.power[j];
                j += 1;
            }
            let n = (j - i) as f64;
            freqs.push(fs / n);
            power.push(ps / n);
            i = j;
        }
        Psd { freqs, power, segments: self.segments, segment_len: self.segment_len, dt: self.dt }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz,power\n");
        for (f, p) in self.freqs.iter().zip(&self.power) {
            s.push_str(&format!("{f},{p}\n"));
        }
        s
    }
}

fn default_segment(n: usize) -> usize {
    let quarter = (n / 4).max(16);
    let mut s = 16;
    while s * 2 <= quarter {
        s *= 2;
    }
    s.min(n)
}

/// Welch estimate of a uniformly sampled series.
pub fn psd(series: &[f64], dt: f64, cfg: &PsdConfig) -> Result<Psd> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", "must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(invalid("overlap", "must lie in [0, 1)"));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    let n = cfg.segment_len.unwrap_or_else(|| default_segment(series.len()));
    if n < 4 || series.len() < n {
        return Err(Error::TooFewSamples { needed: n.max(4), got: series.len() });
    }
    let hop = ((n as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
    let w = cfg.window.coefficients(n);
    let u: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let half = n / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= series.len() {
        let seg = &series[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            buf[i] = Complex::new((seg[i] - mean) * w[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..=half {
            let edge = k == 0 || (n % 2 == 0 && k == half);
            acc[k] += buf[k].norm_sqr() * if edge { 1.0 } else { 2.0 };
        }
        segments += 1;
        start += hop;
    }
    let scale = dt / (u * segments as f64);
    Ok(Psd {
        freqs: (0..=half).map(|k| k as f64 / (n as f64 * dt)).collect(),
        power: acc.iter().map(|a| a * scale).collect(),
        segments,
        segment_len: n,
        dt,
    })
}

/// Zero-order-hold resampling onto a uniform grid starting at the first
/// timestamp: each grid point takes the latest sample at or before it.
pub fn resample_nearest_hold(times: &[f64], values: &[f64], dt: f64) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
    }
    if times.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(invalid("times", "must be non-decreasing"));
    }
    let t0 = times[0];
    let count = ((times[times.len() - 1] - t0) / dt).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let t = t0 + k as f64 * dt;
        while j + 1 < times.len() && times[j + 1] <= t {
            j += 1;
        }
        out.push(values[j]);
    }
    Ok(out)
}

/// `A / (1 + (f/fc)^2) + B`.
pub fn lorentzian(f: f64, amplitude: f64, corner: f64, floor: f64) -> f64 {
    amplitude / (1.0 + (f / corner).powi(2)) + floor
}

/// One-sided density of a symmetric random telegraph signal switching
/// between levels separated by `step`, with `flip_rate` flips per second.
pub fn telegraph_psd(f: f64, flip_rate: f64, step: f64) -> f64 {
    step * step * flip_rate / (2.0 * (flip_rate * flip_rate + (PI * f).powi(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub max_iter: usize,
    /// Number of starting corner frequencies, log-spaced over the band.
    pub starts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { f_min: 0.0, f_max: f64::INFINITY, max_iter: 200, starts: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub corner_hz: f64,
    pub floor: f64,
    pub corner_sigma: f64,
    /// Covariance of `(ln A, ln fc, B)`.
    pub covariance: [[f64; 3]; 3],
    /// `1 / fc`.
    pub knee_dwell: f64,
    /// `1 / (2 pi fc)`, the correlation time of the process.
    pub angular_dwell: f64,
    /// `1 / (pi fc)`, the mean time between flips of a symmetric telegraph
    /// signal with this corner.
    pub rts_dwell: f64,
    pub weighted_residual: f64,
    pub points: usize,
}

struct Band {
    f: Vec<f64>,
    log_p: Vec<f64>,
    w: Vec<f64>,
}

fn band(psd: &Psd, f_min: f64, f_max: f64) -> Result<Band> {
    let mut b = Band { f: vec![], log_p: vec![], w: vec![] };
    for (&f, &p) in psd.freqs.iter().zip(&psd.power) {
        if f > 0.0 && f >= f_min && f <= f_max && p > 0.0 {
            b.f.push(f);
            b.log_p.push(p.ln());
            b.w.push(1.0 / f);
        }
    }
    let wsum: f64 = b.w.iter().sum();
    b.w.iter_mut().for_each(|w| *w /= wsum);
    Ok(b)
}

fn residuals(b: &Band, th: &Vector3<f64>) -> (f64, Vec<f64>, Vec<Vector3<f64>>) {
    let (a, fc, floor) = (th[0].exp(), th[1].exp(), th[2]);
    let mut cost = 0.0;
    let mut r = Vec::with_capacity(b.f.len());
    let mut j = Vec::with_capacity(b.f.len());
    for i in 0..b.f.len() {
        let x = (b.f[i] / fc).powi(2);
        let l = a / (1.0 + x);
        let m = l + floor;
        let ri = m.ln() - b.log_p[i];
        cost += b.w[i] * ri * ri;
        r.push(ri);
        j.push(Vector3::new(l / m, l * 2.0 * x / (1.0 + x) / m, 1.0 / m));
    }
    (cost, r, j)
}

fn levenberg_marquardt(b: &Band, mut th: Vector3<f64>, max_iter: usize) -> (Vector3<f64>, f64, bool, Vec<f64>) {
    let mut lambda = 1e-3;
    let (mut cost, mut r, mut jac) = residuals(b, &th);
    let mut trace = vec![cost];
    for _ in 0..max_iter {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for i in 0..r.len() {
            jtj += b.w[i] * jac[i] * jac[i].transpose();
            jtr += b.w[i] * r[i] * jac[i];
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] *= 1.0 + lambda;
                a[(k, k)] += 1e-300;
            }
            let Some(mut step) = a.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            // Floor pinned at zero: drop it from the step rather than project.
            if th[2] <= 0.0 && step[2] < 0.0 {
                let mut g = jtr;
                g[2] = 0.0;
                for k in 0..2 {
                    a[(k, 2)] = 0.0;
                    a[(2, k)] = 0.0;
                }
                a[(2, 2)] = 1.0;
                let Some(s2) = a.cholesky().map(|c| c.solve(&-g)) else {
                    lambda *= 10.0;
                    continue;
                };
                step = s2;
            }
            let mut cand = th + step;
            cand[2] = cand[2].max(0.0);
            let (c2, r2, j2) = residuals(b, &cand);
            if c2.is_finite() && c2 <= cost {
                let rel = (cost - c2) / cost.max(1e-300);
                th = cand;
                cost = c2;
                r = r2;
                jac = j2;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                trace.push(cost);
                if rel < 1e-10 {
                    return (th, cost, true, trace);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a stationary point.
            return (th, cost, true, trace);
        }
    }
    (th, cost, false, trace)
}

/// Fits a Lorentzian plus white floor to a density by Levenberg-Marquardt on
/// log residuals weighted by `1/f`, from several starting corners.
pub fn fit_lorentzian(psd: &Psd, cfg: &FitConfig) -> Result<LorentzianFit> {
    let b = band(psd, cfg.f_min, cfg.f_max)?;
    if b.f.len() < 6 {
        return Err(Error::TooFewSamples { needed: 6, got: b.f.len() });
    }
    let (f_lo, f_hi) = (b.f[0], b.f[b.f.len() - 1]);
    let low_level = b.log_p[..(b.f.len() / 20).max(1)].iter().sum::<f64>() / (b.f.len() / 20).max(1) as f64;
    let mut tail: Vec<f64> = b.log_p[b.f.len() * 9 / 10..].iter().map(|l| l.exp()).collect();
    tail.sort_by(f64::total_cmp);
    let floor0 = 0.5 * tail[tail.len() / 2];
    let starts = cfg.starts.max(1);
    let mut best: Option<(Vector3<f64>, f64)> = None;
    let mut trace_all = Vec::new();
    for s in 0..starts {
        let frac = (s as f64 + 0.5) / starts as f64;
        let fc0 = f_lo * (f_hi / f_lo).powf(frac);
        let init = Vector3::new(low_level, fc0.ln(), floor0);
        let (th, cost, ok, _) = levenberg_marquardt(&b, init, cfg.max_iter);
        trace_all.push(cost);
        if ok && best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((th, cost));
        }
    }
    let Some((th, cost)) = best else {
        return Err(Error::FitNoConvergence {
            restarts: starts,
            residual: trace_all.iter().cloned().fold(f64::INFINITY, f64::min),
            residual_trace: trace_all,
        });
    };
    let (_, r, jac) = residuals(&b, &th);
    let n = r.len();
    let mut jtj = Matrix3::zeros();
    for i in 0..n {
        jtj += b.w[i] * jac[i] * jac[i].transpose();
    }
    // Weights are normalized to sum to one; the variance scale restores counts.
    let sigma2 = cost * n as f64 / (n as f64 - 3.0) / n as f64;
    let cov = jtj.try_inverse().map(|m| m * sigma2).unwrap_or_else(|| Matrix3::from_element(f64::NAN));
    let corner = th[1].exp();
    let mut covariance = [[0.0; 3]; 3];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cov[(i, j)];
        }
    }
    Ok(LorentzianFit {
        amplitude: th[0].exp(),
        corner_hz: corner,
        floor: th[2],
        corner_sigma: corner * cov[(1, 1)].max(0.0).sqrt(),
        covariance,
        knee_dwell: 1.0 / corner,
        angular_dwell: 1.0 / (2.0 * PI * corner),
        rts_dwell: 1.0 / (PI * corner),
        weighted_residual: cost,
        points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Density at 1 Hz.
    pub amplitude: f64,
    pub alpha: f64,
    pub alpha_sigma: f64,
    pub points: usize,
}

/// Straight-line fit of `ln S = ln A - alpha ln f`, weighted by `1/f`.
pub fn fit_power_law(psd: &Psd, f_min: f64, f_max: f64) -> Result<PowerLawFit> {
    let b = band(psd, f_min, f_max)?;
    let n = b.f.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let x: Vec<f64> = b.f.iter().map(|f| f.ln()).collect();
    let xm: f64 = x.iter().zip(&b.w).map(|(x, w)| x * w).sum();
    let ym: f64 = b.log_p.iter().zip(&b.w).map(|(y, w)| y * w).sum();
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += b.w[i] * (x[i] - xm).powi(2);
        sxy += b.w[i] * (x[i] - xm) * (b.log_p[i] - ym);
    }
    if !(sxx > 0.0) {
        return Err(invalid("psd", "frequency band is degenerate"));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = (0..n).map(|i| b.w[i] * (b.log_p[i] - intercept - slope * x[i]).powi(2)).sum();
    let sigma2 = rss / (n as f64 - 2.0).max(1.0);
    Ok(PowerLawFit { amplitude: intercept.exp(), alpha: -slope, alpha_sigma: (sigma2 / sxx).sqrt(), points: n })
}

/// Gaussian noise with one-sided density `amplitude * f^-alpha`, made by
/// shaping white noise in the frequency domain. The DC and Nyquist bins are
/// zero.
pub fn gen_power_law_noise(n: usize, dt: f64, alpha: f64, amplitude: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    if !(dt > 0.0) || !(amplitude >= 0.0) || !alpha.is_finite() {
        return Err(invalid("noise", "dt and amplitude must be positive, alpha finite"));
    }
    let mut r = rng(seed, 50);
    let mut bins = vec![Complex::new(0.0, 0.0); n];
    for k in 1..n.div_ceil(2) {
        let f = k as f64 / (n as f64 * dt);
        let s = (n as f64 * amplitude * f.powf(-alpha) / (4.0 * dt)).sqrt();
        let re: f64 = StandardNormal.sample(&mut r);
        let im: f64 = StandardNormal.sample(&mut r);
        bins[k] = Complex::new(s * re, s * im);
        bins[n - k] = bins[k].conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut bins);
    Ok(bins.iter().map(|c| c.re / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parseval_single_rectangular_segment() {
        let x: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let cfg = PsdConfig { segment_len: Some(256), overlap: 0.0, window: Window::Rectangular };
        let p = psd(&x, 0.01, &cfg).unwrap();
        let mean = x.iter().sum::<f64>() / 256.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0;
        assert!((p.total_power() - var).abs() < 1e-12 * var.max(1.0));
    }

    #[test]
    fn pure_tone_lands_in_its_bin() {
        let n = 1024;
        let dt = 1e-3;
        let f0 = 64.0 / (n as f64 * dt);
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f0 * i as f64 * dt).sin()).collect();
        let p = psd(&x, dt, &PsdConfig { segment_len: Some(n), ..Default::default() }).unwrap();
        let peak = (0..p.power.len()).max_by(|&a, &b| p.power[a].total_cmp(&p.power[b])).unwrap();
        assert_eq!(peak, 64);
    }

    #[test]
    fn hold_resampling() {
        let v = resample_nearest_hold(&[0.0, 0.25, 1.0], &[1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
        assert!(resample_nearest_hold(&[1.0, 0.0], &[0.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn lorentzian_fit_recovers_exact_curve() {
        let freqs: Vec<f64> = (0..2000).map(|k| k as f64 * 0.5).collect();
        let power = freqs.iter().map(|&f| lorentzian(f, 2e-3, 27.0, 1e-7)).collect();
        let p = Psd { freqs, power, segments: 1, segment_len: 4000, dt: 0.0005 };
        let fit = fit_lorentzian(&p, &FitConfig::default()).unwrap();
        assert!((fit.corner_hz / 27.0 - 1.0).abs() < 1e-6, "{}", fit.corner_hz);
        assert!((fit.amplitude / 2e-3 - 1.0).abs() < 1e-6);
        assert!((fit.rts_dwell * PI * 27.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn power_law_noise_slope() {
        let x = gen_power_law_noise(1 << 16, 1e-3, 1.0, 1e-4, 3).unwrap();
        let p = psd(&x, 1e-3, &PsdConfig::default()).unwrap();
        let fit = fit_power_law(&p, 1.0, 400.0).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.1, "{}", fit.alpha);
        assert!((fit.amplitude / 1e-4 - 1.0).abs() < 0.3, "{}", fit.amplitude);
    }

    #[test]
    fn too_short_series() {
        assert!(matches!(psd(&[1.0, 2.0], 1.0, &PsdConfig::default()), Err(Error::TooFewSamples { .. })));
    }
}
