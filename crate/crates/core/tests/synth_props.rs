use tsclust::synth::{generate_dgm2_data, generate_magma_data, Dgm2SynthSpec, MagmaSynthSpec};

#[test]
fn cluster_sample_means_converge_to_drawn_curves() {
    let (m, k, t) = (2000, 2, 12);
    // 24 cells at 3 sds: a given seed exceeds somewhere with probability about 6%,
    // so calibration across seeds is checked separately below.
    let mut spec = MagmaSynthSpec::separated(m, k, t, 3.0, 1);
    spec.indiv_variance = 0.0;
    let s = generate_magma_data::<f64>(&spec).unwrap();
    let bound = 3.0 * spec.noise_var.sqrt() / ((m / k) as f64).sqrt();
    for c in 0..k {
        let members: Vec<usize> = (0..m).filter(|&i| s.labels.0[i] == c + 1).collect();
        for step in 0..t {
            let mean = members.iter().map(|&i| s.data.value(i, 0, step)).sum::<f64>() / members.len() as f64;
            let dev = (mean - s.mean_curves[c][step]).abs();
            assert!(dev < bound, "cluster {c} step {step}: deviation {dev} >= {bound}");
        }
    }
}

#[test]
fn cluster_mean_errors_are_standard_normal_across_seeds() {
    let (m, k, t) = (2000, 2, 12);
    let mut z = Vec::new();
    for seed in 100..130 {
        let mut spec = MagmaSynthSpec::separated(m, k, t, 3.0, seed);
        spec.indiv_variance = 0.0;
        let s = generate_magma_data::<f64>(&spec).unwrap();
        for c in 0..k {
            let members: Vec<usize> = (0..m).filter(|&i| s.labels.0[i] == c + 1).collect();
            let se = spec.noise_var.sqrt() / (members.len() as f64).sqrt();
            for step in 0..t {
                let mean = members.iter().map(|&i| s.data.value(i, 0, step)).sum::<f64>() / members.len() as f64;
                z.push((mean - s.mean_curves[c][step]) / se);
            }
        }
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| v * v).sum::<f64>() / n;
    // 720 draws: sd of the mean is 0.037, sd of the second moment about 0.053.
    assert!(mean.abs() < 0.15, "mean z {mean}");
    assert!((var - 1.0).abs() < 0.2, "second moment {var}");
}

#[test]
fn magma_generator_is_deterministic_and_well_shaped() {
    let spec = MagmaSynthSpec::separated(15, 3, 7, 2.0, 5);
    let a = generate_magma_data::<f64>(&spec).unwrap();
    let b = generate_magma_data::<f64>(&spec).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(a.labels, b.labels);
    assert_eq!((a.data.n_individuals(), a.data.n_dims(), a.data.grid().len()), (15, 1, 7));
    assert!(a.data.is_complete());
    let c = generate_magma_data::<f64>(&MagmaSynthSpec { seed: 6, ..spec }).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn dgm2_generator_is_deterministic_and_well_shaped() {
    let mut spec = Dgm2SynthSpec::separated(9, 3, 5, 4.0, 8);
    spec.d = 2;
    spec.means = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![4.0, 0.5]];
    spec.emission_var = vec![1.0, 0.5];
    let a = generate_dgm2_data::<f64>(&spec).unwrap();
    let b = generate_dgm2_data::<f64>(&spec).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(a.trajectories, b.trajectories);
    assert_eq!((a.data.n_individuals(), a.data.n_dims(), a.data.grid().len()), (9, 2, 5));
    assert!(a.data.is_complete());
    assert!(a.trajectories.iter().all(|tr| tr.len() == 5));
}

/// Per-individual occupancy fractions are independent across individuals,
/// so their spread gives an honest standard error despite autocorrelation.
fn occupancy_within_three_se(paths: &[Vec<usize>], k: usize, expected: &[f64]) {
    let m = paths.len() as f64;
    for c in 0..k {
        let frac: Vec<f64> =
            paths.iter().map(|p| p.iter().filter(|&&l| l == c + 1).count() as f64 / p.len() as f64).collect();
        let mean = frac.iter().sum::<f64>() / m;
        let var = frac.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        assert!((mean - expected[c]).abs() < 3.0 * se, "component {c}: {mean} vs {} (se {se})", expected[c]);
    }
}

#[test]
fn chain_occupancy_matches_stationary_distribution() {
    // M·T = 10^5; the sticky symmetric chain is doubly stochastic, so uniform is stationary.
    let spec = Dgm2SynthSpec { stickiness: 0.8, ..Dgm2SynthSpec::separated(10_000, 3, 10, 4.0, 23) };
    let s = generate_dgm2_data::<f64>(&spec).unwrap();
    let stationary = [1.0 / 3.0; 3];
    occupancy_within_three_se(&s.chain, 3, &stationary);
    let emitted: Vec<Vec<usize>> = s.trajectories.iter().map(|tr| tr.labels.clone()).collect();
    occupancy_within_three_se(&emitted, 3, &stationary);
}

#[test]
fn full_mixing_weight_reproduces_base_frequencies() {
    let base = vec![0.5, 0.3, 0.2];
    let spec = Dgm2SynthSpec { gamma: 1.0, base: base.clone(), ..Dgm2SynthSpec::separated(5000, 3, 8, 4.0, 29) };
    let s = generate_dgm2_data::<f64>(&spec).unwrap();
    let m = 5000.0;
    for t in 0..8 {
        for (c, &p) in base.iter().enumerate() {
            let freq = s.trajectories.iter().filter(|tr| tr.labels[t] == c + 1).count() as f64 / m;
            let se = (p * (1.0 - p) / m).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "step {t} component {c}: {freq} vs {p}");
        }
    }
}

#[test]
fn absorbing_chain_without_mixing_gives_constant_trajectories() {
    let spec = Dgm2SynthSpec { stickiness: 1.0, gamma: 0.0, ..Dgm2SynthSpec::separated(50, 3, 9, 4.0, 4) };
    let s = generate_dgm2_data::<f64>(&spec).unwrap();
    for tr in &s.trajectories {
        assert!(tr.labels.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn noiseless_emissions_equal_component_means() {
    let spec = Dgm2SynthSpec { emission_var: vec![0.0], ..Dgm2SynthSpec::separated(20, 3, 6, 4.0, 9) };
    let s = generate_dgm2_data::<f64>(&spec).unwrap();
    for (i, tr) in s.trajectories.iter().enumerate() {
        for (t, &l) in tr.labels.iter().enumerate() {
            assert_eq!(s.data.value(i, 0, t), spec.means[l - 1][0]);
        }
    }
}
