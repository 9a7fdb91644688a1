use std::f64::consts::PI;

use chargenoise::spectral::*;
use chargenoise::synth::{gen_parity_path, Parity, ParityProcessConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

fn telegraph_series(dwell: f64, dt: f64, duration: f64, seed: u64) -> Vec<f64> {
    let cfg = ParityProcessConfig { dwell_time: dwell, duty_cycle: dt, duration, seed };
    let path = gen_parity_path(&cfg).unwrap();
    let n = (duration / dt) as usize;
    (0..n)
        .map(|k| match path.parity_at(k as f64 * dt) {
            Parity::Even => 0.0,
            Parity::Odd => 1.0,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn white_noise_parseval(seed in any::<u64>(), log_n in 12u32..16) {
        let x = white(1 << log_n, seed);
        let rect = PsdConfig { segment_len: Some(x.len()), overlap: 0.0, window: Window::Rectangular };
        let p = psd(&x, 0.01, &rect).unwrap();
        prop_assert!((p.total_power() / variance(&x) - 1.0).abs() < 0.01);
        let welch = psd(&x, 0.01, &PsdConfig::default()).unwrap();
        prop_assert!((welch.total_power() / variance(&x) - 1.0).abs() < 0.05);
    }

    #[test]
    fn lorentzian_self_fit_is_exact(amp in 1e-6f64..1.0, corner in 5.0f64..200.0, floor_frac in 0.0f64..1e-3) {
        let freqs: Vec<f64> = (0..4000).map(|k| k as f64 * 0.5).collect();
        let floor = amp * floor_frac;
        let power = freqs.iter().map(|&f| lorentzian(f, amp, corner, floor)).collect();
        let p = Psd { freqs, power, segments: 1, segment_len: 8000, dt: 0.00025 };
        let fit = fit_lorentzian(&p, &FitConfig::default()).unwrap();
        prop_assert!((fit.corner_hz / corner - 1.0).abs() < 1e-9, "{} vs {}", fit.corner_hz, corner);
        prop_assert!((fit.amplitude / amp - 1.0).abs() < 1e-9);
        prop_assert!((fit.floor - floor).abs() < 1e-9 * amp);
    }
}

#[test]
fn telegraph_psd_matches_analytic_over_two_decades() {
    let dwell = 5e-3;
    let dt = 1e-4;
    let x = telegraph_series(dwell, dt, 400.0, 11);
    let p = psd(&x, dt, &PsdConfig { segment_len: Some(1 << 14), ..Default::default() }).unwrap();
    let rate = 1.0 / dwell;
    let fc = rate / PI;
    let binned = p.log_binned(10);
    let mut checked = 0;
    for (&f, &s) in binned.freqs.iter().zip(&binned.power) {
        if f >= fc / 10.0 && f <= fc * 10.0 {
            let expect = telegraph_psd(f, rate, 1.0);
            assert!((s / expect - 1.0).abs() < 0.15, "f {f}: {s} vs {expect}");
            checked += 1;
        }
    }
    assert!(checked >= 15);
}

#[test]
fn fitted_knee_grows_with_flip_rate() {
    let dt = 1e-4;
    let corners: Vec<f64> = [20e-3, 10e-3, 5e-3, 2e-3]
        .iter()
        .map(|&dwell| {
            let x = telegraph_series(dwell, dt, 200.0, 3);
            let p = psd(&x, dt, &PsdConfig { segment_len: Some(1 << 14), ..Default::default() }).unwrap();
            let fit = fit_lorentzian(&p, &FitConfig { f_min: 2.0 * p.df(), ..Default::default() }).unwrap();
            assert!((fit.rts_dwell / dwell - 1.0).abs() < 0.15, "{} vs {dwell}", fit.rts_dwell);
            fit.corner_hz
        })
        .collect();
    assert!(corners.windows(2).all(|w| w[1] > w[0]), "{corners:?}");
}

#[test]
fn doubling_the_record_halves_bin_variance() {
    let seg = 4096;
    let spread = |n: usize| {
        let x = white(n, 9);
        let p = psd(&x, 1.0, &PsdConfig { segment_len: Some(seg), overlap: 0.0, window: Window::Rectangular }).unwrap();
        let inner = &p.power[1..seg / 2];
        let m = inner.iter().sum::<f64>() / inner.len() as f64;
        inner.iter().map(|v| (v - m).powi(2)).sum::<f64>() / inner.len() as f64 / (m * m)
    };
    let ratio = spread(seg * 64) / spread(seg * 128);
    assert!((ratio - 2.0).abs() < 0.5, "{ratio}");
}

#[test]
fn planted_power_laws_are_recovered() {
    for (alpha, amp, dt, seed) in [(1.94, 1.11e-6, 10.0, 1), (2.06, 7.4e5, 1.0, 2)] {
        let x = gen_power_law_noise(25_200, dt, alpha, amp, seed).unwrap();
        let p = psd(&x, dt, &PsdConfig::default()).unwrap();
        let fit = fit_power_law(&p, p.df(), 0.5 / dt).unwrap();
        assert!((fit.alpha - alpha).abs() < 0.1, "{} vs {alpha}", fit.alpha);
        assert!(fit.amplitude / amp < 2.0 && amp / fit.amplitude < 2.0, "{} vs {amp}", fit.amplitude);
    }
}
