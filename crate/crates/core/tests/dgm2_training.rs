use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsclust::dgm2::{dynamic_mixture_adjust, train, Dgm2Config, Dgm2Model, EmissionMode, ForecastMode};
use tsclust::forecast::ClusterInfo;
use tsclust::linalg::Mat;
use tsclust::metrics::{naive_predict, per_timestep_ari, rmse, NaivePredictorKind};
use tsclust::synth::{generate_dgm2_data, Dgm2SynthSpec};

#[test]
fn training_on_three_component_data() {
    let s = generate_dgm2_data::<f64>(&Dgm2SynthSpec::separated(200, 3, 12, 4.0, 3)).unwrap();
    let train_idx: Vec<usize> = (0..140).collect();
    let (model, report) = train(&s.data.select_individuals(&train_idx).unwrap(), 3, &Dgm2Config::default()).unwrap();

    assert!(report.final_elbo > report.initial_elbo);
    let n = report.loss_trace.len() / 5;
    let head = report.loss_trace[..n].iter().sum::<f64>() / n as f64;
    let tail = report.loss_trace[report.loss_trace.len() - n..].iter().sum::<f64>() / n as f64;
    assert!(tail <= head, "smoothed loss rose from {head} to {tail}");
    assert!(report.wall_clock_seconds > 0.0);

    let recovered: Vec<_> = (0..200).map(|i| model.cluster_trajectory(&s.data.individual(i)).unwrap()).collect();
    let (_, mean_ari) = per_timestep_ari(&recovered, &s.trajectories).unwrap();
    assert!(mean_ari >= 0.5, "per-timestep ARI {mean_ari}");

    let (mut pred, mut base, mut truth) = (vec![], vec![], vec![]);
    for i in 140..200 {
        let y = s.data.series(i, 0);
        let f = model.forecast(&[y[..10].to_vec()], 2, ForecastMode::Soft).unwrap();
        pred.extend_from_slice(&f.mean[0]);
        base.extend(naive_predict(NaivePredictorKind::Mean, &y[..10], 2).unwrap());
        truth.extend_from_slice(&y[10..]);
    }
    let (r_model, r_base) = (rmse(&pred, &truth).unwrap(), rmse(&base, &truth).unwrap());
    assert!(r_model < r_base, "model RMSE {r_model} vs Mean {r_base}");
}

#[test]
fn identical_seeds_give_identical_loss_traces() {
    let s = generate_dgm2_data::<f64>(&Dgm2SynthSpec::separated(20, 2, 6, 4.0, 1)).unwrap();
    let cfg = Dgm2Config { epochs: 5, batch_size: 8, seed: 9, ..Dgm2Config::default() };
    let (a, ra) = train(&s.data, 2, &cfg).unwrap();
    let (b, rb) = train(&s.data, 2, &cfg).unwrap();
    assert_eq!(ra.loss_trace, rb.loss_trace);
    assert_eq!(a, b);
    let (_, rc) = train(&s.data, 2, &Dgm2Config { seed: 10, ..cfg }).unwrap();
    assert_ne!(ra.loss_trace, rc.loss_trace);
}

/// Component means `[-1.5]` and `[2.0]`, non-uniform base, and a transition
/// cell blind to its input so soft and sampled rollouts share a hidden path.
fn input_blind_toy() -> Dgm2Model<f64> {
    let mut model = Dgm2Model::initialize(&[vec![-1.5], vec![2.0]], vec![0.4f64.ln()], 4, 0.3, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = model.params_mut();
    p.transition.cell.w = Mat::zeros(16, 2);
    for v in p.transition.cell.b.iter_mut().chain(p.transition.readout.b2.iter_mut()) {
        *v = rng.random_range(-1.0..1.0);
    }
    for r in 0..p.transition.readout.w2.rows() {
        for c in 0..p.transition.readout.w2.cols() {
            p.transition.readout.w2[(r, c)] = rng.random_range(-2.0..2.0);
        }
    }
    p.base_logits = vec![0.8, -0.2];
    model
}

#[test]
fn soft_forecast_matches_sampled_rollouts() {
    let model = input_blind_toy();
    let history = vec![vec![0.3, 1.9, -1.2, 2.2]];
    let soft = model.forecast(&history, 3, ForecastMode::Soft).unwrap();
    let n = 100_000;
    let sampled = model.forecast(&history, 3, ForecastMode::Sample { n_samples: n, seed: 4 }).unwrap();
    for s in 0..3 {
        let se = (sampled.variance[0][s] / n as f64).sqrt();
        let gap = (soft.mean[0][s] - sampled.mean[0][s]).abs();
        assert!(gap < 3.0 * se, "step {s}: soft {} vs sampled {} (se {se})", soft.mean[0][s], sampled.mean[0][s]);
        // Law of total variance: soft variance is the exact predictive variance.
        let rel = (soft.variance[0][s] - sampled.variance[0][s]).abs() / soft.variance[0][s];
        assert!(rel < 0.03, "step {s}: variance {} vs {}", soft.variance[0][s], sampled.variance[0][s]);
    }
    let again = model.forecast(&history, 3, ForecastMode::Sample { n_samples: 500, seed: 4 }).unwrap();
    assert_eq!(again, model.forecast(&history, 3, ForecastMode::Sample { n_samples: 500, seed: 4 }).unwrap());
    assert_eq!(soft, model.forecast(&history, 3, ForecastMode::Soft).unwrap());
    match soft.clusters {
        ClusterInfo::Dynamic(tr) => assert_eq!(tr.len(), 7),
        _ => panic!("expected a dynamic trajectory"),
    }
}

#[test]
fn soft_emission_mean_matches_monte_carlo_over_hard_means() {
    let means = vec![vec![-2.0, 0.5], vec![1.0, 3.0], vec![4.0, -1.0]];
    let model = Dgm2Model::initialize(&means, vec![0.0, 0.0], 3, 0.5, 1).unwrap();
    let probs = [0.2, 0.5, 0.3];
    let (soft, _) = model.emission_params(&probs, EmissionMode::Soft);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 100_000;
    let (mut sum, mut sum_sq) = ([0.0; 2], [0.0; 2]);
    for _ in 0..n {
        let u: f64 = rng.random();
        let k = if u < 0.2 { 0 } else if u < 0.7 { 1 } else { 2 };
        let mut one_hot = [0.0; 3];
        one_hot[k] = 1.0;
        let (hard, _) = model.emission_params(&one_hot, EmissionMode::Hard);
        for j in 0..2 {
            sum[j] += hard[j];
            sum_sq[j] += hard[j] * hard[j];
        }
    }
    for j in 0..2 {
        let m = sum[j] / n as f64;
        let var = (sum_sq[j] - n as f64 * m * m) / (n as f64 - 1.0);
        assert!((soft[j] - m).abs() < 3.0 * (var / n as f64).sqrt(), "dim {j}: {} vs {m}", soft[j]);
    }
}

fn on_simplex(p: &[f64]) -> bool {
    (p.iter().sum::<f64>() - 1.0).abs() < 1e-9 && p.iter().all(|&x| x >= 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_distribution_is_on_the_simplex(
        seed in any::<u64>(),
        k in 1usize..5,
        xs in proptest::collection::vec(-20f64..20.0, 6),
        gamma in 0f64..=1.0,
    ) {
        let means: Vec<Vec<f64>> = (0..k).map(|c| vec![c as f64]).collect();
        let model = Dgm2Model::initialize(&means, vec![0.0], 5, gamma, seed).unwrap();
        let traj = model.cluster_trajectory(std::slice::from_ref(&xs)).unwrap();
        prop_assert!(traj.probs.iter().all(|p| on_simplex(p)));
        let mut st = model.zero_state();
        let mut z = model.initial_transition();
        prop_assert!(on_simplex(&z));
        let base = model.mixture().base;
        for _ in 0..4 {
            let (p, next) = model.transition_step(&z, &st);
            prop_assert!(on_simplex(&p));
            prop_assert!(on_simplex(&dynamic_mixture_adjust(&p, &base, gamma).unwrap()));
            z = p;
            st = next;
        }
        let f = model.forecast(&[xs[..3].to_vec()], 3, ForecastMode::Soft).unwrap();
        if let ClusterInfo::Dynamic(tr) = f.clusters {
            prop_assert!(tr.probs.iter().all(|p| on_simplex(p)));
        }
    }

    #[test]
    fn mixture_adjust_is_affine_in_gamma(
        raw_p in proptest::collection::vec(0.01f64..1.0, 4),
        raw_b in proptest::collection::vec(0.01f64..1.0, 4),
        gamma in 0f64..=1.0,
    ) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, b) = (norm(&raw_p), norm(&raw_b));
        let at = |g: f64| dynamic_mixture_adjust(&p, &b, g).unwrap();
        let (lo, hi, mid) = (at(0.0), at(1.0), at(gamma));
        for i in 0..4 {
            prop_assert!((mid[i] - (lo[i] + gamma * (hi[i] - lo[i]))).abs() < 1e-15);
        }
    }
}
