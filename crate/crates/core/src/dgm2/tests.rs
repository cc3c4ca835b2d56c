use super::*;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hand-written weights for a K = 2, H = 2 network with 2-dimensional input.
fn hand_network() -> Network<f64> {
    let w = Mat::from_rows(&[
        vec![0.3, -0.2],
        vec![0.1, 0.4],
        vec![-0.5, 0.2],
        vec![0.25, 0.05],
        vec![0.6, -0.1],
        vec![-0.3, 0.35],
        vec![0.15, 0.2],
        vec![-0.05, -0.4],
    ]);
    let u = Mat::from_rows(&[
        vec![0.1, 0.0],
        vec![-0.2, 0.3],
        vec![0.05, 0.1],
        vec![0.0, -0.15],
        vec![0.2, 0.2],
        vec![-0.1, 0.05],
        vec![0.3, -0.25],
        vec![0.12, 0.07],
    ]);
    let b = vec![0.01, -0.02, 0.5, 0.3, -0.1, 0.2, 0.0, 0.05];
    Network {
        cell: LstmCell { w, u, b },
        readout: Readout {
            w1: Mat::from_rows(&[vec![0.7, -0.3], vec![0.2, 0.9]]),
            b1: vec![0.1, -0.2],
            w2: Mat::from_rows(&[vec![1.1, -0.4], vec![-0.6, 0.8]]),
            b2: vec![0.05, -0.05],
        },
    }
}

/// Scalar re-derivation of one LSTM step, readout and softmax, written
/// directly from the cell equations with explicit indices.
fn oracle_step(net: &Network<f64>, x: [f64; 2], h: [f64; 2], c: [f64; 2]) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let w = |r: usize, col: usize| net.cell.w[(r, col)];
    let u = |r: usize, col: usize| net.cell.u[(r, col)];
    let pre = |r: usize| w(r, 0) * x[0] + w(r, 1) * x[1] + u(r, 0) * h[0] + u(r, 1) * h[1] + net.cell.b[r];
    let mut h_new = [0.0; 2];
    let mut c_new = [0.0; 2];
    for j in 0..2 {
        let ig = sig(pre(j));
        let fg = sig(pre(2 + j));
        let gg = pre(4 + j).tanh();
        let og = sig(pre(6 + j));
        c_new[j] = fg * c[j] + ig * gg;
        h_new[j] = og * c_new[j].tanh();
    }
    let r = &net.readout;
    let a0 = (r.w1[(0, 0)] * h_new[0] + r.w1[(0, 1)] * h_new[1] + r.b1[0]).tanh();
    let a1 = (r.w1[(1, 0)] * h_new[0] + r.w1[(1, 1)] * h_new[1] + r.b1[1]).tanh();
    let l0 = r.w2[(0, 0)] * a0 + r.w2[(0, 1)] * a1 + r.b2[0];
    let l1 = r.w2[(1, 0)] * a0 + r.w2[(1, 1)] * a1 + r.b2[1];
    let e0 = l0.exp();
    let e1 = l1.exp();
    ([e0 / (e0 + e1), e1 / (e0 + e1)], h_new, c_new)
}

fn hand_model() -> Dgm2Model<f64> {
    let params = Dgm2Params {
        transition: hand_network(),
        inference: hand_network(),
        means: Mat::from_rows(&[vec![-1.0, 0.5], vec![2.0, -0.5]]),
        log_var: vec![0.1, -0.2],
        base_logits: vec![0.3, -0.3],
    };
    Dgm2Model::from_params(params, 0.4, 0).unwrap()
}

#[test]
fn transition_and_inference_match_scalar_oracle() {
    let model = hand_model();
    let net = hand_network();
    let mut state = model.zero_state();
    let (mut h, mut c) = ([0.0; 2], [0.0; 2]);
    for z in [[0.3, 0.7], [1.0, 0.0], [0.5, 0.5]] {
        let (p, next) = model.transition_step(&z, &state);
        let (po, ho, co) = oracle_step(&net, z, h, c);
        for j in 0..2 {
            assert!((p[j] - po[j]).abs() < 1e-12);
            assert!((next.h[j] - ho[j]).abs() < 1e-12);
            assert!((next.c[j] - co[j]).abs() < 1e-12);
        }
        state = next;
        (h, c) = (ho, co);
    }
    let mut state = model.zero_state();
    let (mut h, mut c) = ([0.0; 2], [0.0; 2]);
    for x in [[0.2, -1.3], [1.5, 0.4]] {
        let (q, next) = model.inference_step(&x, &state);
        let (qo, ho, co) = oracle_step(&net, x, h, c);
        for j in 0..2 {
            assert!((q[j] - qo[j]).abs() < 1e-12);
        }
        state = next;
        (h, c) = (ho, co);
    }
}

#[test]
fn zero_readout_gives_uniform_distributions() {
    let mut model = Dgm2Model::<f64>::initialize(&[vec![0.0], vec![1.0], vec![2.0]], vec![0.0], 4, 0.5, 7).unwrap();
    model.params_mut().transition.readout = Readout::zeros(4, 4, 3);
    model.params_mut().inference.readout = Readout::zeros(4, 4, 3);
    let (p, _) = model.transition_step(&[0.2, 0.3, 0.5], &model.zero_state());
    let (q, _) = model.inference_step(&[1.7], &model.zero_state());
    for v in p.iter().chain(&q) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn mixture_adjust_endpoints_and_arithmetic() {
    let p = [0.2, 0.5, 0.3];
    let base = [0.6, 0.1, 0.3];
    assert_eq!(dynamic_mixture_adjust(&p, &base, 0.0).unwrap(), p.to_vec());
    assert_eq!(dynamic_mixture_adjust(&p, &base, 1.0).unwrap(), base.to_vec());
    assert_eq!(dynamic_mixture_adjust(&[1.0, 0.0], &[0.5, 0.5], 0.5).unwrap(), vec![0.75, 0.25]);
    assert!(matches!(dynamic_mixture_adjust(&p, &base, 1.5), Err(Error::InvalidGamma(_))));
    assert!(matches!(dynamic_mixture_adjust(&p, &base, -0.1), Err(Error::InvalidGamma(_))));
}

#[test]
fn emission_modes() {
    let model = Dgm2Model::initialize(&[vec![0.0], vec![2.0]], vec![0.3], 3, 0.5, 1).unwrap();
    let (m, v) = model.emission_params(&[0.0, 1.0], EmissionMode::Hard);
    assert_eq!(m, vec![2.0]);
    assert!((v[0] - 0.3f64.exp()).abs() < 1e-15);
    let (m, _) = model.emission_params(&[0.5, 0.5], EmissionMode::Soft);
    assert_eq!(m, vec![1.0]);
    let (m, _) = model.emission_params(&[1.0, 0.0], EmissionMode::Soft);
    assert_eq!(m, vec![0.0]);
}

#[test]
fn single_component_elbo_is_gaussian_log_likelihood() {
    let model = Dgm2Model::initialize(&[vec![0.5]], vec![0.2], 3, 0.5, 4).unwrap();
    let xs = vec![vec![0.1, 1.2, -0.7, 0.4]];
    let var = 0.2f64.exp();
    let expected: f64 = xs[0]
        .iter()
        .map(|&x| -0.5 * ((std::f64::consts::TAU * var).ln() + (x - 0.5) * (x - 0.5) / var))
        .sum();
    assert!((model.elbo(&xs).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn kl_is_nonnegative_and_zero_on_equality() {
    let q = [0.2, 0.3, 0.5];
    assert_eq!(categorical_kl(&q, &q), 0.0);
    assert!(categorical_kl(&q, &[0.3, 0.3, 0.4]) > 0.0);
    assert!(categorical_kl(&[1.0, 0.0, 0.0], &[0.3, 0.3, 0.4]) > 0.0);
}

#[test]
fn elbo_gradient_matches_central_differences() {
    let mut model = Dgm2Model::<f64>::initialize(&[vec![-1.0], vec![1.0]], vec![-0.3], 3, 0.35, 11).unwrap();
    // Larger weights than the default init so every gate is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut flat = model.params().flatten();
    flat.iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
    model.params_mut().assign(&flat);
    let series = vec![vec![-0.8, 1.3, 0.9, -1.1]];
    let (_, grad) = model.elbo_and_grad(&series).unwrap();
    let analytic = grad.flatten();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut plus = model.clone();
        let mut fp = flat.clone();
        fp[i] += h;
        plus.params_mut().assign(&fp);
        let mut minus = model.clone();
        let mut fm = flat.clone();
        fm[i] -= h;
        minus.params_mut().assign(&fm);
        let numeric = (plus.elbo(&series).unwrap() - minus.elbo(&series).unwrap()) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn trajectory_labels_are_argmaxes() {
    let model = hand_model();
    let series = vec![vec![0.3, -2.0, 1.0], vec![1.0, 0.0, -1.0]];
    let tr = model.cluster_trajectory(&series).unwrap();
    assert_eq!(tr.len(), 3);
    for (l, p) in tr.labels.iter().zip(&tr.probs) {
        assert_eq!(*l, argmax(p) + 1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn single_component_trajectory_is_constant() {
    let model = Dgm2Model::initialize(&[vec![0.0]], vec![0.0], 3, 0.5, 2).unwrap();
    let tr = model.cluster_trajectory(&[vec![3.0, -1.0, 0.2]]).unwrap();
    assert_eq!(tr.labels, vec![1, 1, 1]);
}

#[test]
fn forecast_horizon_zero_and_single_component() {
    let model = hand_model();
    let hist = vec![vec![0.3, -2.0], vec![1.0, 0.0]];
    let f = model.forecast(&hist, 0, ForecastMode::Soft).unwrap();
    assert_eq!(f.horizon(), 0);
    match f.clusters {
        ClusterInfo::Dynamic(tr) => assert_eq!(tr.len(), 2),
        _ => panic!("expected a dynamic trajectory"),
    }

    let single = Dgm2Model::initialize(&[vec![1.25]], vec![0.0], 3, 0.5, 2).unwrap();
    let f = single.forecast(&[vec![0.0, 4.0, 2.0]], 5, ForecastMode::Soft).unwrap();
    assert!(f.mean[0].iter().all(|&v| v == 1.25));
}

#[test]
fn logit_shift_leaves_probabilities_unchanged() {
    let model = hand_model();
    let mut shifted = model.clone();
    shifted.params_mut().inference.readout.b2.iter_mut().for_each(|b| *b += 3.7);
    shifted.params_mut().transition.readout.b2.iter_mut().for_each(|b| *b -= 1.3);
    let series = vec![vec![0.3, -2.0, 1.0], vec![1.0, 0.0, -1.0]];
    let a = model.cluster_trajectory(&series).unwrap();
    let b = shifted.cluster_trajectory(&series).unwrap();
    assert_eq!(a.labels, b.labels);
    for (p, q) in a.probs.iter().flatten().zip(b.probs.iter().flatten()) {
        assert!((p - q).abs() < 1e-12);
    }
    let (p1, _) = model.transition_step(&[0.4, 0.6], &model.zero_state());
    let (p2, _) = shifted.transition_step(&[0.4, 0.6], &shifted.zero_state());
    assert!(p1.iter().zip(&p2).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn json_round_trip() {
    let model = hand_model();
    let back = Dgm2Model::<f64>::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn shape_and_gamma_validation() {
    assert!(Dgm2Model::initialize(&[vec![0.0]], vec![0.0], 3, 1.2, 0).is_err());
    assert!(Dgm2Model::initialize(&[vec![0.0, 1.0]], vec![0.0], 3, 0.5, 0).is_err());
    let model = hand_model();
    assert!(matches!(model.elbo(&[vec![1.0]]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
}
