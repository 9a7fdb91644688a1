use chargenoise::io::*;
use chargenoise::synth::*;
use proptest::prelude::*;

#[test]
fn telegraph_statistics_match_planted_dwell() {
    let cfg = ParityProcessConfig::default();
    let path = gen_parity_path(&cfg).unwrap();
    let expect = cfg.duration / cfg.dwell_time;
    let n = path.flip_times.len() as f64;
    assert!((n - expect).abs() < 3.0 * expect.sqrt(), "{n} vs {expect}");

    // Interior intervals are exponential: mean and sd both equal the dwell.
    let iv = path.intervals();
    let inner = &iv[1..iv.len() - 1];
    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
    let sd = cfg.dwell_time / (inner.len() as f64).sqrt();
    assert!((mean - cfg.dwell_time).abs() < 3.0 * sd, "{mean}");

    let cycles = (cfg.duration / cfg.duty_cycle) as usize;
    let mut busy = vec![false; cycles];
    for &t in &path.flip_times {
        if let Some(b) = busy.get_mut((t / cfg.duty_cycle) as usize) {
            *b = true;
        }
    }
    let quiet = busy.iter().filter(|&&b| !b).count() as f64 / cycles as f64;
    assert!(quiet >= 0.99, "{quiet}");
}

#[test]
fn generators_are_deterministic_and_seed_sensitive() {
    let cfg = ParityProcessConfig { duration: 0.5, ..Default::default() };
    let model = IqClusterModel::quadrants(0.5, 0.1);
    let run = |c: &ParityProcessConfig| {
        let p = gen_parity_path(c).unwrap();
        let s = gen_parity_shots(&p, &model, c).unwrap();
        (p, s)
    };
    assert_eq!(run(&cfg), run(&cfg));
    assert_ne!(run(&cfg).1, run(&ParityProcessConfig { seed: 2, ..cfg }).1);

    let env = ChargeEnvConfig { duration: 3600.0 * 5.0, ..Default::default() };
    assert_eq!(gen_charge_trace(&env, 0.05).unwrap(), gen_charge_trace(&env, 0.05).unwrap());
    assert!(gen_charge_trace(&env, 0.02).is_err());
}

#[test]
fn undersampled_dwell_is_flagged() {
    let cfg = ParityProcessConfig { dwell_time: 20e-6, ..Default::default() };
    assert!(!cfg.is_resolved());
    assert!(ParityProcessConfig::default().is_resolved());
}

#[test]
fn charge_trace_stays_folded_and_labeled() {
    let env = ChargeEnvConfig { duration: 20.0 * 3600.0, ..Default::default() };
    for &t in &env.temperatures {
        let trace = gen_charge_trace(&env, t).unwrap();
        let truth = trace.truth.as_ref().unwrap();
        for (&q, &s) in trace.q.iter().zip(truth) {
            assert!((0.0..=0.5).contains(&q));
            let nearest =
                env.offsets.iter().enumerate().min_by(|a, b| (a.1 - q).abs().total_cmp(&(b.1 - q).abs())).unwrap().0;
            assert_eq!(nearest, s);
        }
    }
}

#[test]
fn charge_trace_csv_round_trip() {
    let env = ChargeEnvConfig { duration: 7200.0, ..Default::default() };
    let trace = gen_charge_trace(&env, 0.1).unwrap();
    assert_eq!(charge_trace_from_csv(&charge_trace_to_csv(&trace)).unwrap(), trace);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shots_csv_round_trip(seed in any::<u64>(), sigma in 0.0f64..1.0) {
        let cfg = ParityProcessConfig { duration: 2e-3, seed, ..Default::default() };
        let path = gen_parity_path(&cfg).unwrap();
        let shots = gen_parity_shots(&path, &IqClusterModel::quadrants(sigma, 0.1), &cfg).unwrap();
        prop_assert_eq!(shots_from_csv(&shots_to_csv(&shots)).unwrap(), shots);
    }

    #[test]
    fn reset_lands_in_ground_state_for_clean_reads(state in 0u8..3, i in 0.05f64..2.0, q in 0.05f64..2.0) {
        let model = IqClusterModel::quadrants(0.0, 0.0);
        let m = model.means[state as usize];
        let shot = ShotRecord { t: 0.0, i_volt: m[0] * i, q_volt: m[1] * q, band: Parity::Even, truth_state: Some(state) };
        prop_assert_eq!(apply_reset(state, reset_decision(&shot, &ResetBoundaries::default())), 0);
    }
}
