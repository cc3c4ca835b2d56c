//! Exponentiated-quadratic kernels and exact Gaussian-process algebra.

use serde::{Deserialize, Serialize};

use crate::data::TimeGrid;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, Cholesky, Jitter, Mat};
use crate::scalar::Scalar;

/// `k(s, t) = variance * exp(-(s - t)^2 / (2 lengthscale^2))`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Kernel<S> {
    variance: S,
    lengthscale: S,
}

impl<S: Scalar> Kernel<S> {
    pub fn new(variance: S, lengthscale: S) -> Result<Self> {
        if !(variance > S::zero()) || !(lengthscale > S::zero()) || !variance.is_finite() || !lengthscale.is_finite() {
            return Err(Error::InvalidKernel);
        }
        Ok(Self { variance, lengthscale })
    }

    pub fn from_log(log_variance: S, log_lengthscale: S) -> Result<Self> {
        Self::new(log_variance.exp(), log_lengthscale.exp())
    }

    pub fn variance(&self) -> S {
        self.variance
    }

    pub fn lengthscale(&self) -> S {
        self.lengthscale
    }

    #[inline]
    pub fn eval(&self, s: S, t: S) -> S {
        let r = (s - t) / self.lengthscale;
        self.variance * (-S::lit(0.5) * r * r).exp()
    }

    /// Gram matrix between two sets of real-valued inputs.
    pub fn matrix_at(&self, a: &[S], b: &[S]) -> Mat<S> {
        Mat::from_fn(a.len(), b.len(), |i, j| self.eval(a[i], b[j]))
    }
}

/// Entry `(i, j)` is `k(a_i, b_j)`.
pub fn kernel_matrix<S: Scalar>(kernel: &Kernel<S>, grid_a: &TimeGrid, grid_b: &TimeGrid) -> Mat<S> {
    kernel.matrix_at(&grid_a.as_reals(), &grid_b.as_reals())
}

/// `K + noise I` factored with the variance-relative jitter schedule.
#[derive(Clone, Debug)]
pub struct FactoredCov<S> {
    pub cov: Mat<S>,
    pub chol: Cholesky<S>,
    pub jitter: S,
}

/// Build and factor `v R + (noise + jitter) I` on `times`; jitter starts at `1e-6 v`.
pub fn factor_cov<S: Scalar>(kernel: &Kernel<S>, noise_var: S, times: &[S]) -> Result<FactoredCov<S>> {
    let mut cov = kernel.matrix_at(times, times);
    cov.add_diag(noise_var);
    let (chol, jitter) = cholesky_jittered(&cov, Jitter { scale: kernel.variance, try_zero_first: false })?;
    cov.add_diag(jitter);
    Ok(FactoredCov { cov, chol, jitter })
}

/// `log N(y | 0, K + noise I)` on `grid`.
pub fn gp_log_marginal<S: Scalar>(kernel: &Kernel<S>, noise_var: S, grid: &TimeGrid, y: &[S]) -> Result<S> {
    check_len(grid.len(), y.len())?;
    let f = factor_cov(kernel, noise_var, &grid.as_reals())?;
    let n = S::from_usize_lossy(y.len());
    Ok(-S::lit(0.5) * (n * S::lit(std::f64::consts::TAU).ln() + f.chol.log_det() + f.chol.quad_form(y)))
}

/// Log marginal likelihood and its gradient with respect to
/// `(log variance, log lengthscale, log noise)`.
pub fn gp_log_marginal_grad<S: Scalar>(
    kernel: &Kernel<S>,
    noise_var: S,
    grid: &TimeGrid,
    y: &[S],
) -> Result<(S, [S; 3])> {
    check_len(grid.len(), y.len())?;
    let mut outer = Mat::zeros(y.len(), y.len());
    outer.add_outer(S::one(), y, y);
    expected_log_density(kernel, noise_var, &grid.as_reals(), &outer)
}

/// `-(n log 2π + log|K| + tr(K⁻¹ M)) / 2` for `K = v R + noise I` and a second
/// moment matrix `M = E[y yᵀ]`, plus its gradient in log-hyperparameters.
///
/// With `M = y yᵀ` this is the GP log marginal likelihood; with
/// `M = m mᵀ + C` it is the expected log density under `y ~ N(m, C)`.
pub fn expected_log_density<S: Scalar>(
    kernel: &Kernel<S>,
    noise_var: S,
    times: &[S],
    second_moment: &Mat<S>,
) -> Result<(S, [S; 3])> {
    let n = times.len();
    let f = factor_cov(kernel, noise_var, times)?;
    let kinv = f.chol.inverse();
    let kinv_m = kinv.matmul(second_moment);
    let half = S::lit(0.5);
    let value = -half
        * (S::from_usize_lossy(n) * S::lit(std::f64::consts::TAU).ln() + f.chol.log_det() + kinv_m.trace());
    // G = K⁻¹ M K⁻¹ − K⁻¹
    let mut g = kinv_m.matmul(&kinv);
    g.symmetrize();
    let g = g.sub(&kinv);

    let ell2 = kernel.lengthscale * kernel.lengthscale;
    let (mut d_var, mut d_len, mut d_noise) = (S::zero(), S::zero(), S::zero());
    for i in 0..n {
        for j in 0..n {
            let k = kernel.eval(times[i], times[j]);
            let diff = times[i] - times[j];
            let gij = g[(i, j)];
            d_var += gij * k;
            d_len += gij * k * diff * diff / ell2;
        }
        d_var += g[(i, i)] * f.jitter;
        d_noise += g[(i, i)] * noise_var;
    }
    Ok((value, [half * d_var, half * d_len, half * d_noise]))
}

/// Value-only counterpart of [`expected_log_density`].
pub fn expected_log_density_value<S: Scalar>(
    kernel: &Kernel<S>,
    noise_var: S,
    times: &[S],
    second_moment: &Mat<S>,
) -> Result<S> {
    let f = factor_cov(kernel, noise_var, times)?;
    Ok(gaussian_expected_log_density(&f.chol, second_moment))
}

/// `-(n log 2π + log|K| + tr(K⁻¹ M)) / 2` from a factor of `K`.
pub fn gaussian_expected_log_density<S: Scalar>(chol: &Cholesky<S>, second_moment: &Mat<S>) -> S {
    let n = chol.dim();
    let tr = chol.solve_mat(second_moment).trace();
    -S::lit(0.5) * (S::from_usize_lossy(n) * S::lit(std::f64::consts::TAU).ln() + chol.log_det() + tr)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

/// Gaussian distribution over the values of a process on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct GaussianState<S> {
    pub grid: TimeGrid,
    pub mean: Vec<S>,
    pub cov: Mat<S>,
}

impl<S: Scalar> GaussianState<S> {
    pub fn new(grid: TimeGrid, mean: Vec<S>, cov: Mat<S>) -> Result<Self> {
        let n = grid.len();
        if mean.len() != n || cov.rows() != n || cov.cols() != n {
            return Err(Error::ShapeMismatch("gaussian state shape does not match grid".into()));
        }
        Ok(Self { grid, mean, cov })
    }

    /// Zero-mean GP prior on `grid`.
    pub fn prior(kernel: &Kernel<S>, grid: &TimeGrid) -> Self {
        let cov = kernel_matrix(kernel, grid, grid);
        Self { grid: grid.clone(), mean: vec![S::zero(); grid.len()], cov }
    }

    pub fn variances(&self) -> Vec<S> {
        self.cov.diagonal()
    }

    /// Marginal on a sub-grid.
    pub fn restrict(&self, grid: &TimeGrid) -> Result<Self> {
        let idx = positions(&self.grid, grid)?;
        Ok(Self {
            grid: grid.clone(),
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            cov: self.cov.select(&idx, &idx),
        })
    }
}

/// Positions of `sub`'s points inside `grid`.
pub fn positions(grid: &TimeGrid, sub: &TimeGrid) -> Result<Vec<usize>> {
    sub.points()
        .iter()
        .map(|&t| {
            grid.position(t).ok_or_else(|| Error::InvalidArgument(format!("time {t} outside the state's grid")))
        })
        .collect()
}

/// Condition a Gaussian process on noisy observations.
///
/// The latent process is `prior` (a Gaussian over its own grid) plus, when
/// `extra` is given, an independent zero-mean GP with that kernel. Observations
/// at `obs_grid` carry i.i.d. noise of variance `obs_noise_var`. Both
/// `obs_grid` and `target_grid` must lie on `prior.grid`. The returned state is
/// the posterior of the latent process on `target_grid` (noise excluded).
///
/// The observation covariance is first factored as is, then with the jitter
/// schedule if that fails.
pub fn gp_condition<S: Scalar>(
    prior: &GaussianState<S>,
    obs_grid: Option<&TimeGrid>,
    obs_values: &[S],
    obs_noise_var: S,
    target_grid: &TimeGrid,
    extra: Option<&Kernel<S>>,
) -> Result<GaussianState<S>> {
    let tidx = positions(&prior.grid, target_grid)?;
    let joint = match extra {
        Some(k) => prior.cov.add(&kernel_matrix(k, &prior.grid, &prior.grid)),
        None => prior.cov.clone(),
    };
    let prior_t_mean: Vec<S> = tidx.iter().map(|&i| prior.mean[i]).collect();
    let prior_t_cov = joint.select(&tidx, &tidx);
    let obs_grid = match obs_grid {
        Some(g) if !obs_values.is_empty() => g,
        _ => {
            if !obs_values.is_empty() {
                return Err(Error::InvalidArgument("observations without a grid".into()));
            }
            return GaussianState::new(target_grid.clone(), prior_t_mean, prior_t_cov);
        }
    };
    check_len(obs_grid.len(), obs_values.len())?;
    if obs_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("observations must be finite".into()));
    }
    let oidx = positions(&prior.grid, obs_grid)?;
    let mut k_oo = joint.select(&oidx, &oidx);
    k_oo.add_diag(obs_noise_var);
    let scale = k_oo.diagonal().into_iter().fold(S::zero(), S::max).max(S::min_positive_value());
    let (chol, _) = cholesky_jittered(&k_oo, Jitter { scale, try_zero_first: true })?;
    let k_to = joint.select(&tidx, &oidx);
    let resid: Vec<S> = oidx.iter().zip(obs_values).map(|(&i, &y)| y - prior.mean[i]).collect();
    let alpha = chol.solve(&resid);
    let mean: Vec<S> = prior_t_mean.iter().zip(k_to.matvec(&alpha)).map(|(&m, d)| m + d).collect();
    // cov = K_tt − K_to K_oo⁻¹ K_ot, via V = L⁻¹ K_ot
    let k_ot = k_to.transpose();
    let mut v = Mat::zeros(oidx.len(), tidx.len());
    let mut col = vec![S::zero(); oidx.len()];
    for j in 0..tidx.len() {
        for i in 0..oidx.len() {
            col[i] = k_ot[(i, j)];
        }
        let z = chol.solve_lower(&col);
        for i in 0..oidx.len() {
            v[(i, j)] = z[i];
        }
    }
    let mut cov = prior_t_cov.sub(&v.transpose().matmul(&v));
    cov.symmetrize();
    GaussianState::new(target_grid.clone(), mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(pts: &[i64]) -> TimeGrid {
        TimeGrid::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn kernel_rejects_nonpositive() {
        assert!(Kernel::new(0.0, 1.0).is_err());
        assert!(Kernel::new(1.0, -1.0).is_err());
    }

    #[test]
    fn kernel_matrix_diagonal_and_unit_distance() {
        let k = Kernel::<f64>::new(2.5, 1.3).unwrap();
        let g = grid(&[1, 2, 5]);
        let m = kernel_matrix(&k, &g, &g);
        assert!(m.diagonal().iter().all(|&d| d == 2.5));
        assert_eq!(m.max_abs_asymmetry(), 0.0);

        let unit = Kernel::<f64>::new(1.0, 1.0).unwrap();
        let m = kernel_matrix(&unit, &grid(&[1]), &grid(&[2]));
        assert!((m[(0, 0)] - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn very_long_lengthscale_is_flat() {
        let k = Kernel::<f64>::new(1.7, 1e6).unwrap();
        let g = grid(&[1, 2, 3]);
        let m = kernel_matrix(&k, &g, &g);
        assert!(m.as_slice().iter().all(|&x| (x - 1.7).abs() < 1e-6));
    }

    #[test]
    fn single_point_log_marginal() {
        let k = Kernel::<f64>::new(1.0, 1.0).unwrap();
        let v = gp_log_marginal(&k, 0.0, &grid(&[3]), &[0.0]).unwrap();
        let expected = -0.5 * (std::f64::consts::TAU * (1.0 + 1e-6)).ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn length_mismatch() {
        let k = Kernel::<f64>::new(1.0, 1.0).unwrap();
        assert!(matches!(gp_log_marginal(&k, 0.0, &grid(&[1, 2]), &[0.0]), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn conditioning_without_observations_is_identity() {
        let k = Kernel::<f64>::new(1.0, 2.0).unwrap();
        let g = grid(&[1, 2, 3]);
        let prior = GaussianState::prior(&k, &g);
        let post = gp_condition(&prior, None, &[], 0.1, &g, None).unwrap();
        assert_eq!(post, prior);
    }

    #[test]
    fn noise_free_interpolation() {
        let k = Kernel::<f64>::new(1.0, 1.5).unwrap();
        let g = grid(&[1, 2, 3, 4]);
        let prior = GaussianState::prior(&k, &g);
        let obs = grid(&[2]);
        let post = gp_condition(&prior, Some(&obs), &[0.8], 0.0, &g, None).unwrap();
        assert!((post.mean[1] - 0.8).abs() < 1e-8);
        assert!(post.cov[(1, 1)] <= 1e-8);
    }

    #[test]
    fn extra_kernel_adds_to_prior_without_observations() {
        let k = Kernel::<f64>::new(1.0, 2.0).unwrap();
        let e = Kernel::new(0.5, 1.0).unwrap();
        let g = grid(&[1, 2]);
        let prior = GaussianState::prior(&k, &g);
        let post = gp_condition(&prior, None, &[], 0.0, &g, Some(&e)).unwrap();
        assert!((post.cov[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn target_off_grid_is_an_error() {
        let k = Kernel::<f64>::new(1.0, 2.0).unwrap();
        let prior = GaussianState::prior(&k, &grid(&[1, 2]));
        assert!(gp_condition(&prior, None, &[], 0.0, &grid(&[7]), None).is_err());
    }
}
