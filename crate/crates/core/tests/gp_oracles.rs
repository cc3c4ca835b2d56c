use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsclust::data::TimeGrid;
use tsclust::gp::{expected_log_density_value, gp_condition, gp_log_marginal, gp_log_marginal_grad, kernel_matrix, GaussianState, Kernel};
use tsclust::linalg::{Cholesky, Mat};

const TAU: f64 = std::f64::consts::TAU;

fn se(v: f64, l: f64, s: f64, t: f64) -> f64 {
    v * (-(s - t) * (s - t) / (2.0 * l * l)).exp()
}

fn det3(a: [[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse through the adjugate.
fn inv3(a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let d = det3(a);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            out[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / d;
        }
    }
    out
}

/// Dense MVN log density with the same diagonal jitter the library adds.
fn dense_log_marginal(v: f64, l: f64, noise: f64, t: [f64; 3], y: [f64; 3]) -> f64 {
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = se(v, l, t[i], t[j]);
        }
        k[i][i] += noise + 1e-6 * v;
    }
    let ki = inv3(k);
    let mut quad = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            quad += y[i] * ki[i][j] * y[j];
        }
    }
    -0.5 * (3.0 * TAU.ln() + det3(k).ln() + quad)
}

#[test]
fn log_marginal_matches_dense_three_point_oracle() {
    let cases = [
        (1.3, 1.7, 0.2, [1.0, 2.0, 4.0], [0.3, -1.1, 0.8]),
        (0.4, 0.9, 0.05, [2.0, 3.0, 7.0], [1.5, 0.2, -0.4]),
        (2.5, 3.0, 0.0, [1.0, 5.0, 6.0], [-0.7, 0.9, 1.4]),
    ];
    for (v, l, noise, t, y) in cases {
        let grid = TimeGrid::new(t.iter().map(|&x| x as i64).collect()).unwrap();
        let got = gp_log_marginal(&Kernel::new(v, l).unwrap(), noise, &grid, &y).unwrap();
        let want = dense_log_marginal(v, l, noise, t, y);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn doubling_noise_at_zero_data_moves_only_the_determinant() {
    let (v, l, t) = (1.1, 1.4, [1.0, 2.0, 3.0]);
    let grid = TimeGrid::new(vec![1, 2, 3]).unwrap();
    let k = Kernel::new(v, l).unwrap();
    let a = gp_log_marginal(&k, 0.3, &grid, &[0.0; 3]).unwrap();
    let b = gp_log_marginal(&k, 0.6, &grid, &[0.0; 3]).unwrap();
    assert!(b < a);
    let want = dense_log_marginal(v, l, 0.6, t, [0.0; 3]) - dense_log_marginal(v, l, 0.3, t, [0.0; 3]);
    assert!((b - a - want).abs() < 1e-10);
}

#[test]
fn two_observation_conditioning_matches_schur_complement() {
    let (v, l, noise) = (1.2, 1.6, 0.1);
    let k = Kernel::new(v, l).unwrap();
    let grid = TimeGrid::new(vec![1, 2, 4]).unwrap();
    let prior = GaussianState::prior(&k, &grid);
    let obs = TimeGrid::new(vec![1, 4]).unwrap();
    let target = TimeGrid::new(vec![2]).unwrap();
    let y = [0.7, -0.4];
    let post = gp_condition(&prior, Some(&obs), &y, noise, &target, None).unwrap();

    let a = se(v, l, 1.0, 1.0) + noise;
    let b = se(v, l, 1.0, 4.0);
    let d = se(v, l, 4.0, 4.0) + noise;
    let det = a * d - b * b;
    let (i00, i01, i11) = (d / det, -b / det, a / det);
    let c0 = se(v, l, 2.0, 1.0);
    let c1 = se(v, l, 2.0, 4.0);
    let w0 = c0 * i00 + c1 * i01;
    let w1 = c0 * i01 + c1 * i11;
    let mean = w0 * y[0] + w1 * y[1];
    let var = v - (w0 * c0 + w1 * c1);
    assert!((post.mean[0] - mean).abs() < 1e-10);
    assert!((post.cov[(0, 0)] - var).abs() < 1e-10);
}

#[test]
fn gradient_matches_central_differences() {
    let grid = TimeGrid::new(vec![1, 2, 3, 4]).unwrap();
    let y = [0.4, -0.3, 1.1, 0.2];
    for (lv, ll, ln) in [(0.2, 0.3, -1.5), (-0.4, 0.9, -0.7), (1.0, -0.1, -2.5)] {
        let f = |p: [f64; 3]| {
            gp_log_marginal(&Kernel::from_log(p[0], p[1]).unwrap(), p[2].exp(), &grid, &y).unwrap()
        };
        let (_, g) = gp_log_marginal_grad(&Kernel::from_log(lv, ll).unwrap(), f64::exp(ln), &grid, &y).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut p = [lv, ll, ln];
            let mut m = p;
            p[i] += h;
            m[i] -= h;
            let num = (f(p) - f(m)) / (2.0 * h);
            let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-4);
            assert!(rel < 1e-4, "parameter {i}: {} vs {num}", g[i]);
        }
    }
}

fn distinct_grid(max_len: usize) -> impl Strategy<Value = TimeGrid> {
    proptest::collection::btree_set(-30i64..60, 1..=max_len)
        .prop_map(|s| TimeGrid::new(s.into_iter().collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_matrix_is_symmetric_psd(grid in distinct_grid(20), v in 0.1f64..5.0, l in 0.2f64..10.0) {
        let k = Kernel::new(v, l).unwrap();
        let mut m: Mat<f64> = kernel_matrix(&k, &grid, &grid);
        prop_assert_eq!(m.max_abs_asymmetry(), 0.0);
        // Factorable after a 1e-8 v shift ⇔ smallest eigenvalue > −1e-8 v.
        m.add_diag(1e-8 * v);
        prop_assert!(Cholesky::new(&m).is_some());
    }

    #[test]
    fn posterior_variance_never_exceeds_prior(
        grid in distinct_grid(12),
        pick in proptest::collection::vec(any::<bool>(), 12),
        noise in 0.0f64..0.5,
        v in 0.2f64..3.0,
        l in 0.5f64..5.0,
    ) {
        let k = Kernel::new(v, l).unwrap();
        let prior = GaussianState::prior(&k, &grid);
        let obs: Vec<i64> = grid.points().iter().zip(&pick).filter(|(_, &p)| p).map(|(&t, _)| t).collect();
        prop_assume!(!obs.is_empty());
        let values: Vec<f64> = obs.iter().map(|&t| (t as f64 * 0.37).sin()).collect();
        let obs = TimeGrid::new(obs).unwrap();
        let post = gp_condition(&prior, Some(&obs), &values, noise, &grid, None).unwrap();
        for (p, q) in post.variances().iter().zip(prior.variances()) {
            prop_assert!(*p <= q + 1e-10);
        }
        prop_assert!(post.cov.max_abs_asymmetry() < 1e-10);
    }

    #[test]
    fn log_marginal_is_permutation_invariant(
        grid in distinct_grid(10),
        perm_seed in any::<u64>(),
        v in 0.2f64..3.0,
        l in 0.5f64..5.0,
    ) {
        let k = Kernel::new(v, l).unwrap();
        let times: Vec<f64> = grid.as_reals();
        let y: Vec<f64> = times.iter().map(|&t| (t * 0.71).cos()).collect();
        let a = gp_log_marginal(&k, 0.1, &grid, &y).unwrap();
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let pt: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let py: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let mut outer = Mat::zeros(py.len(), py.len());
        outer.add_outer(1.0, &py, &py);
        let b = expected_log_density_value(&k, 0.1, &pt, &outer).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
