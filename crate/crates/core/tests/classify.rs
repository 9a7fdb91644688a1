use chargenoise::classify::*;
use chargenoise::synth::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn random_model(n: usize, symbols: usize, seed: u64) -> HiddenMarkov {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut row = |len: usize| normalized((0..len).map(|_| 0.05 + r.random::<f64>()).collect());
    HiddenMarkov {
        initial: row(n),
        transition: (0..n).map(|_| row(n)).collect(),
        emission: Emission::Categorical { probs: (0..n).map(|_| row(symbols)).collect() },
    }
}

fn all_paths(n: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

fn telegraph_symbols(len: usize, flip: f64, seed: u64) -> Vec<usize> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0;
    (0..len)
        .map(|_| {
            if r.random::<f64>() < flip {
                s = 1 - s;
            }
            s
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn viterbi_equals_exhaustive_maximum(n in 1usize..=3, symbols in 1usize..=3, len in 1usize..=8, seed in any::<u64>()) {
        let model = random_model(n, symbols, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let obs: Vec<usize> = (0..len).map(|_| r.random_range(0..symbols)).collect();
        let path = hmm_viterbi(&model, Observations::Symbols(&obs)).unwrap();
        let best = all_paths(n, len)
            .iter()
            .map(|p| path_log_probability(&model, Observations::Symbols(&obs), p).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(path.log_likelihood, best);
        let own = path_log_probability(&model, Observations::Symbols(&obs), &path.states).unwrap();
        prop_assert_eq!(own, best);
    }

    #[test]
    fn relabeling_states_permutes_the_path(seed in any::<u64>(), len in 2usize..60) {
        let model = random_model(3, 3, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let obs: Vec<usize> = (0..len).map(|_| r.random_range(0..3)).collect();
        let order = [2usize, 0, 1];
        let permuted = model.permuted(&order);
        let a = hmm_viterbi(&model, Observations::Symbols(&obs)).unwrap();
        let b = hmm_viterbi(&permuted, Observations::Symbols(&obs)).unwrap();
        prop_assert!((a.log_likelihood - b.log_likelihood).abs() <= 1e-12 * a.log_likelihood.abs());
        // New state k is old state order[k]. Products commute, so exact ties
        // between distinct paths occur; compare probabilities, not labels.
        let mapped: Vec<usize> = b.states.iter().map(|&k| order[k]).collect();
        let lp = path_log_probability(&model, Observations::Symbols(&obs), &mapped).unwrap();
        prop_assert!((lp - a.log_likelihood).abs() <= 1e-12 * a.log_likelihood.abs());
        let la = model.log_likelihood(Observations::Symbols(&obs)).unwrap();
        let lb = permuted.log_likelihood(Observations::Symbols(&obs)).unwrap();
        prop_assert!((la - lb).abs() <= 1e-10 * la.abs());
        prop_assert_eq!(model.canonical().0, permuted.canonical().0);
    }

    #[test]
    fn silhouette_is_bounded(values in prop::collection::vec(-5.0f64..5.0, 4..80), k in 2usize..5) {
        let labels: Vec<usize> = (0..values.len()).map(|i| i % k).collect();
        if let Some(s) = silhouette_1d(&values, &labels, k) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn baum_welch_is_monotone_and_stochastic(seed in any::<u64>(), flip in 0.01f64..0.2) {
        let clean = telegraph_symbols(3000, flip, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let obs: Vec<usize> = clean.iter().map(|&s| if r.random::<f64>() < 0.1 { 1 - s } else { s }).collect();
        let cfg = HmmConfig { restarts: 1, max_iter: 60, ..HmmConfig::new(2, EmissionKind::Categorical { symbols: 2 }, seed) };
        let fit = hmm_train(&[Observations::Symbols(&obs)], &cfg).unwrap();
        for w in fit.history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(fit.max_row_error <= 1e-9);
        for row in &fit.model.transition {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn gmm_em_is_monotone(seed in any::<u64>(), k in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..2000).map(|i| (i % 3) as f64 + 0.3 * (r.random::<f64>() - 0.5)).collect();
        let cfg = GmmConfig { restarts: 1, max_iter: 80, ..GmmConfig::new(k, seed) };
        let fit = gmm_fit(Samples::scalar(&data).unwrap(), &cfg).unwrap();
        for w in fit.history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn noiseless_labels_give_empirical_flip_frequency() {
    // Rare enough flips that no one-sample runs occur; those are cheaper to
    // explain as emission noise and move the likelihood maximum.
    let obs = telegraph_symbols(20_000, 0.002, 3);
    let cfg = HmmConfig { restarts: 1, ..HmmConfig::new(2, EmissionKind::Categorical { symbols: 2 }, 0) };
    let fit = hmm_train(&[Observations::Symbols(&obs)], &cfg).unwrap();
    let mut counts = [[0.0f64; 2]; 2];
    for w in obs.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    for i in 0..2 {
        let empirical = counts[i][1 - i] / (counts[i][0] + counts[i][1]);
        assert!((fit.model.transition[i][1 - i] - empirical).abs() < 1e-6, "{:?} vs {empirical}", fit.model.transition);
    }
}

#[test]
fn isolated_flip_is_suppressed() {
    let model = HiddenMarkov {
        initial: vec![0.5, 0.5],
        transition: vec![vec![0.999, 0.001], vec![0.001, 0.999]],
        emission: Emission::Categorical { probs: vec![vec![0.95, 0.05], vec![0.05, 0.95]] },
    };
    let mut obs = vec![0; 40];
    obs[20] = 1;
    let path = hmm_viterbi(&model, Observations::Symbols(&obs)).unwrap();
    assert!(path.states.iter().all(|&s| s == 0));
}

#[test]
fn gaussian_hmm_recovers_configuration_offsets() {
    let env = ChargeEnvConfig::default();
    let trace = gen_charge_trace(&env, 0.100).unwrap();
    let cfg = HmmConfig { restarts: 2, ..HmmConfig::new(env.offsets.len(), EmissionKind::Gaussian, 4) };
    let fit = hmm_train(&[Observations::Values(&trace.q)], &cfg).unwrap();
    let Emission::Gaussian { means, .. } = &fit.model.emission else { panic!() };
    let truth = trace.truth.as_ref().unwrap();
    for (k, (&m, &o)) in means.iter().zip(&env.offsets).enumerate() {
        let occupancy = truth.iter().filter(|&&s| s == k).count() as f64;
        let bound = 3.0 * env.noise_sigma / occupancy.sqrt();
        assert!((m - o).abs() <= bound, "state {k}: {m} vs {o} (bound {bound})");
    }
}

fn truth_path(trace: &ChargeTrace) -> LabelPath {
    LabelPath { times: trace.times.clone(), states: trace.truth.clone().unwrap(), log_likelihood: 0.0 }
}

#[test]
fn planted_transition_matrices_and_dwell() {
    let env = ChargeEnvConfig::default();
    let mut neighbor = Vec::new();
    let mut dwell = Vec::new();
    for &t in &env.temperatures {
        let trace = gen_charge_trace(&env, t).unwrap();
        let m = transition_matrix(&truth_path(&trace), env.offsets.len()).unwrap();
        let planted = env.transition_matrix(t).unwrap();
        for (i, (a, b)) in m.probs.iter().zip(&planted).enumerate() {
            let tv = 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
            assert!(tv < 0.05, "T {t} row {i}: {tv}");
        }
        neighbor.push(m.pooled_neighbor_mass());
        let d = dwell_times(&truth_path(&trace), env.offsets.len()).unwrap();
        dwell.push(d.pooled.unwrap());
    }
    assert!(neighbor.windows(2).all(|w| w[1] > w[0]), "{neighbor:?}");
    assert!(dwell.windows(2).all(|w| w[1].mean < w[0].mean));
    let cold = dwell[0];
    let planted = env.mean_stable_time(env.temperatures[0]);
    let sigma = cold.mean / (cold.count as f64).sqrt();
    assert!((cold.mean - planted).abs() < 3.0 * sigma, "{} vs {planted} ({sigma})", cold.mean);
}

fn parity_run(model: &IqClusterModel, duration: f64) -> (TelegraphPath, Vec<ShotRecord>, ParityDecode) {
    let cfg = ParityProcessConfig { duration, seed: 5, ..Default::default() };
    let path = gen_parity_path(&cfg).unwrap();
    let shots = gen_parity_shots(&path, model, &cfg).unwrap();
    let dec = decode_parity(&shots, &model.means, &ParityDecodeConfig::default()).unwrap();
    (path, shots, dec)
}

#[test]
fn noiseless_clusters_decode_the_planted_path() {
    let (path, shots, dec) = parity_run(&IqClusterModel::noiseless(), 2.0);
    for (k, s) in shots.iter().enumerate() {
        let expect = match path.parity_at(s.t) {
            Parity::Even => 0,
            Parity::Odd => 1,
        };
        assert_eq!(dec.fused.states[k], expect, "shot {k} at {}", s.t);
    }
}

#[test]
fn decoded_flips_sit_within_one_sample() {
    let (path, _, dec) = parity_run(&IqClusterModel::quadrants(0.5, 0.1), 10.0);
    let agree = flip_agreement(&dec.fused, &path.flip_times, ParityProcessConfig::default().duty_cycle);
    let diff = agree.decoded_flips.abs_diff(agree.true_flips) as f64;
    assert!(diff <= 0.02 * agree.true_flips as f64, "{agree:?}");
    assert!(agree.spurious_rate() < 0.02, "{agree:?}");
}
