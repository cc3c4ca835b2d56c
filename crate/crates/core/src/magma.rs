//! Whole-series clustering with a K-component mixture of Gaussian processes.
//!
//! Each series is modelled as `y_i = μ_k + f_i + ε_i` for its (latent) cluster
//! `k`: `μ_k` is a cluster mean process with its own kernel, `f_i` an
//! individual deviation sharing one kernel across individuals, and `ε_i` white
//! noise. Fitting alternates closed-form updates of the Gaussian
//! hyper-posteriors `q(μ_k)` and the memberships `τ` with a bounded gradient
//! ascent on the kernel hyperparameters, all of which increase one common
//! evidence lower bound.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TimeGrid, TimeSeriesSet};
use crate::error::{Error, Result};
use crate::forecast::{ClusterInfo, Forecast};
use crate::gp::{
    expected_log_density, expected_log_density_value, factor_cov, gaussian_expected_log_density,
    gp_condition, kernel_matrix, positions, GaussianState, Kernel,
};
use crate::kmeans::kmeans;
use crate::linalg::{cholesky_jittered, Cholesky, Jitter, Mat};
use crate::scalar::{argmax, log_sum_exp, softmax, Scalar};

/// Responsibility mass below which a cluster counts as empty.
pub const DEGENERATE_MASS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct VemConfig<S> {
    pub max_iters: usize,
    /// Relative ELBO change below which fitting stops.
    pub tol: f64,
    /// Gradient steps on the hyperparameters per outer iteration.
    pub m_step_iters: usize,
    pub seed: u64,
    /// Initial memberships (rows on the simplex); k-means when absent.
    pub init_memberships: Option<Vec<Vec<S>>>,
}

impl<S> Default for VemConfig<S> {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-4, m_step_iters: 30, seed: 0, init_memberships: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VemReport {
    pub elbo_trace: Vec<f64>,
    pub n_iters: usize,
    pub converged: bool,
    pub wall_clock_seconds: f64,
    pub iteration_seconds: Vec<f64>,
    /// Iterations at which an empty cluster was re-seeded; the ELBO is not
    /// comparable across such a step.
    pub reseeded_at: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MagmaClustModel<S> {
    mean_kernels: Vec<Kernel<S>>,
    indiv_kernel: Kernel<S>,
    noise_var: S,
    mixing: Vec<S>,
    mean_posteriors: Vec<GaussianState<S>>,
    memberships: Vec<Vec<S>>,
    train_grid: TimeGrid,
}

/// One training series restricted to its observed points.
struct Obs<S> {
    idx: Vec<usize>,
    times: Vec<S>,
    y: Vec<S>,
}

/// Cached factor of an individual's covariance `K_θ0 + σ² I`.
struct IndivFactor<S> {
    chol: Cholesky<S>,
    inv: Mat<S>,
    inv_y: Vec<S>,
}

const LOG_VAR_BOUNDS: (f64, f64) = (-9.2, 9.2);
const LOG_LEN_BOUNDS: (f64, f64) = (-2.3, 6.9);
const LOG_NOISE_BOUNDS: (f64, f64) = (-13.8, 6.9);

impl<S: Scalar> MagmaClustModel<S> {
    pub fn k(&self) -> usize {
        self.mixing.len()
    }

    pub fn mean_kernels(&self) -> &[Kernel<S>] {
        &self.mean_kernels
    }

    pub fn indiv_kernel(&self) -> &Kernel<S> {
        &self.indiv_kernel
    }

    pub fn noise_var(&self) -> S {
        self.noise_var
    }

    pub fn mixing(&self) -> &[S] {
        &self.mixing
    }

    pub fn mean_posteriors(&self) -> &[GaussianState<S>] {
        &self.mean_posteriors
    }

    pub fn memberships(&self) -> &[Vec<S>] {
        &self.memberships
    }

    pub fn train_grid(&self) -> &TimeGrid {
        &self.train_grid
    }

    /// Replace the observation noise variance (e.g. to study noise-free prediction).
    pub fn with_noise_var(mut self, noise_var: S) -> Self {
        self.noise_var = noise_var;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Hyper-posterior of cluster `k`'s mean process on an arbitrary grid.
    ///
    /// Points off the training grid are filled in by GP prediction from the
    /// training-grid posterior under the cluster's mean kernel.
    pub fn mean_posterior_on(&self, k: usize, grid: &TimeGrid) -> Result<GaussianState<S>> {
        let post = &self.mean_posteriors[k];
        if let Ok(idx) = positions(&self.train_grid, grid) {
            return Ok(GaussianState {
                grid: grid.clone(),
                mean: idx.iter().map(|&i| post.mean[i]).collect(),
                cov: post.cov.select(&idx, &idx),
            });
        }
        let kernel = &self.mean_kernels[k];
        let g = &self.train_grid;
        let new_pts: Vec<i64> = grid.points().iter().copied().filter(|&t| g.position(t).is_none()).collect();
        let new_grid = TimeGrid::new(new_pts)?;
        let prior = factor_cov(kernel, S::zero(), &g.as_reals())?;
        let c_gx = kernel_matrix(kernel, g, &new_grid);
        // A = C_xg C_gg⁻¹ (stored transposed)
        let a_t = prior.chol.solve_mat(&c_gx);
        let a = a_t.transpose();
        let mean_x = a.matvec(&post.mean);
        let cov_xg = a.matmul(&post.cov);
        let mut c_xx = kernel_matrix(kernel, &new_grid, &new_grid);
        c_xx.add_diag(prior.jitter);
        let mut cov_xx = c_xx.sub(&a.matmul(&c_gx)).add(&cov_xg.matmul(&a_t));
        cov_xx.symmetrize();

        let union = g.union(&new_grid);
        let n = union.len();
        let src: Vec<(bool, usize)> = union
            .points()
            .iter()
            .map(|&t| match g.position(t) {
                Some(i) => (true, i),
                None => (false, new_grid.position(t).expect("point from one of the grids")),
            })
            .collect();
        let mut mean = Vec::with_capacity(n);
        for &(on_g, i) in &src {
            mean.push(if on_g { post.mean[i] } else { mean_x[i] });
        }
        let cov = Mat::from_fn(n, n, |r, c| match (src[r], src[c]) {
            ((true, i), (true, j)) => post.cov[(i, j)],
            ((false, i), (true, j)) => cov_xg[(i, j)],
            ((true, i), (false, j)) => cov_xg[(j, i)],
            ((false, i), (false, j)) => cov_xx[(i, j)],
        });
        GaussianState::new(union, mean, cov)?.restrict(grid)
    }

    /// Posterior cluster memberships of a new individual given its history.
    pub fn membership_given(&self, history_times: &[i64], history_values: &[S]) -> Result<Vec<S>> {
        if history_values.is_empty() {
            return Ok(self.mixing.clone());
        }
        let hgrid = TimeGrid::new(history_times.to_vec())?;
        let ht = hgrid.as_reals::<S>();
        let mut logs = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let post = self.mean_posterior_on(k, &hgrid)?;
            let mut cov = self.indiv_kernel.matrix_at(&ht, &ht).add(&post.cov);
            cov.add_diag(self.noise_var);
            let (chol, _) =
                cholesky_jittered(&cov, Jitter { scale: self.indiv_kernel.variance(), try_zero_first: false })?;
            let resid: Vec<S> = history_values.iter().zip(&post.mean).map(|(&y, &m)| y - m).collect();
            let mut outer = Mat::zeros(resid.len(), resid.len());
            outer.add_outer(S::one(), &resid, &resid);
            logs.push(safe_ln(self.mixing[k]) + gaussian_expected_log_density(&chol, &outer));
        }
        Ok(softmax(&logs))
    }

    /// Forecast one individual on `target_grid` from its observed history.
    ///
    /// Every cluster conditions `μ_k + f_i + ε` on the history; cluster
    /// predictions are mixed with the individual's posterior memberships. The
    /// interval is the 95% band of the most probable cluster.
    pub fn predict(&self, history_times: &[i64], history_values: &[S], target_grid: &TimeGrid) -> Result<Forecast<S>> {
        if history_times.len() != history_values.len() {
            return Err(Error::LengthMismatch(history_times.len(), history_values.len()));
        }
        let memberships = self.membership_given(history_times, history_values)?;
        let hgrid = if history_times.is_empty() { None } else { Some(TimeGrid::new(history_times.to_vec())?) };
        let domain = match &hgrid {
            Some(h) => h.union(target_grid),
            None => target_grid.clone(),
        };
        let mut means = Vec::with_capacity(self.k());
        let mut vars = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let prior = self.mean_posterior_on(k, &domain)?;
            let post = gp_condition(
                &prior,
                hgrid.as_ref(),
                history_values,
                self.noise_var,
                target_grid,
                Some(&self.indiv_kernel),
            )?;
            vars.push(post.variances().into_iter().map(|v| v.max(S::zero()) + self.noise_var).collect::<Vec<_>>());
            means.push(post.mean);
        }
        let n = target_grid.len();
        let mut mean = vec![S::zero(); n];
        let mut second = vec![S::zero(); n];
        for k in 0..self.k() {
            let w = memberships[k];
            for t in 0..n {
                mean[t] += w * means[k][t];
                second[t] += w * (vars[k][t] + means[k][t] * means[k][t]);
            }
        }
        let variance: Vec<S> = mean.iter().zip(&second).map(|(&m, &s)| (s - m * m).max(S::zero())).collect();
        let best = argmax(&memberships);
        let z = S::lit(1.96);
        let lower: Vec<S> = (0..n).map(|t| means[best][t] - z * vars[best][t].sqrt()).collect();
        let upper: Vec<S> = (0..n).map(|t| means[best][t] + z * vars[best][t].sqrt()).collect();
        Ok(Forecast {
            mean: vec![mean],
            variance: vec![variance],
            interval: Some((vec![lower], vec![upper])),
            clusters: ClusterInfo::Static { label: best + 1, memberships },
        })
    }

    /// Most probable cluster (1-based, ties to the lowest index) of training individual `i`.
    pub fn assign_cluster(&self, i: usize) -> Result<(usize, Vec<S>)> {
        let row = self.memberships.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.memberships.len() })?;
        Ok((argmax(row) + 1, row.clone()))
    }
}

fn safe_ln<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x.ln()
    } else {
        S::lit(-1e30)
    }
}

/// `τ log(π / τ)` with the `0 log 0 = 0` convention.
fn membership_term<S: Scalar>(tau: S, pi: S) -> S {
    if tau > S::zero() {
        tau * (safe_ln(pi) - tau.ln())
    } else {
        S::zero()
    }
}

/// Fit a K-cluster model to univariate series by variational EM.
pub fn vem_fit<S: Scalar>(
    data: &TimeSeriesSet<S>,
    k: usize,
    config: &VemConfig<S>,
) -> Result<(MagmaClustModel<S>, VemReport)> {
    let start = Instant::now();
    if data.n_dims() != 1 {
        return Err(Error::UnsupportedMultivariate(data.n_dims()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let grid = data.grid().clone();
    let all_times = grid.as_reals::<S>();
    let m = data.n_individuals();
    let mut obs = Vec::with_capacity(m);
    for i in 0..m {
        let idx: Vec<usize> = (0..grid.len()).filter(|&t| data.is_observed(i, 0, t)).collect();
        if idx.is_empty() {
            return Err(Error::EmptyIndividual(i));
        }
        obs.push(Obs {
            times: idx.iter().map(|&t| all_times[t]).collect(),
            y: idx.iter().map(|&t| data.value(i, 0, t)).collect(),
            idx,
        });
    }

    let mut tau = initial_memberships(data, k, config)?;
    let (mean_kernels, indiv_kernel, noise_var) = initial_hyperparameters(&obs, &grid, k)?;
    let mut state = VemState {
        grid,
        obs,
        tau: std::mem::take(&mut tau),
        pi: vec![S::one() / S::from_usize_lossy(k); k],
        mean_kernels,
        indiv_kernel,
        noise_var,
        posteriors: Vec::new(),
        post_logdet: Vec::new(),
    };
    state.pi = column_means(&state.tau);

    let mut report = VemReport {
        elbo_trace: Vec::new(),
        n_iters: 0,
        converged: false,
        wall_clock_seconds: 0.0,
        iteration_seconds: Vec::new(),
        reseeded_at: Vec::new(),
        warnings: Vec::new(),
    };
    for iter in 0..config.max_iters {
        let it_start = Instant::now();
        let factors = state.indiv_factors()?;
        state.update_mean_posteriors(&factors)?;
        let log_rho = state.update_memberships(&factors)?;
        if let Some(msg) = state.reseed_empty_clusters(&log_rho, &factors)? {
            log::warn!("{msg}");
            report.warnings.push(msg);
            report.reseeded_at.push(iter);
        }
        state.pi = column_means(&state.tau);
        state.optimize_mean_kernels(config.m_step_iters)?;
        state.optimize_indiv_kernel(config.m_step_iters)?;
        let elbo = state.elbo()?.as_f64();
        if !elbo.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        report.iteration_seconds.push(it_start.elapsed().as_secs_f64());
        report.n_iters = iter + 1;
        let prev = report.elbo_trace.last().copied();
        report.elbo_trace.push(elbo);
        if let Some(prev) = prev {
            if ((elbo - prev) / prev.abs().max(1.0)).abs() < config.tol {
                report.converged = true;
                break;
            }
        }
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    let model = MagmaClustModel {
        mean_kernels: state.mean_kernels,
        indiv_kernel: state.indiv_kernel,
        noise_var: state.noise_var,
        mixing: state.pi,
        mean_posteriors: state.posteriors,
        memberships: state.tau,
        train_grid: state.grid,
    };
    Ok((model, report))
}

fn column_means<S: Scalar>(tau: &[Vec<S>]) -> Vec<S> {
    let k = tau[0].len();
    let m = S::from_usize_lossy(tau.len());
    let mut pi: Vec<S> = (0..k).map(|c| tau.iter().map(|r| r[c]).sum::<S>() / m).collect();
    let total: S = pi.iter().copied().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

fn initial_memberships<S: Scalar>(data: &TimeSeriesSet<S>, k: usize, config: &VemConfig<S>) -> Result<Vec<Vec<S>>> {
    let m = data.n_individuals();
    if let Some(init) = &config.init_memberships {
        if init.len() != m || init.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("initial memberships must be M x K".into()));
        }
        for row in init {
            let s: S = row.iter().copied().sum();
            if row.iter().any(|&x| x < S::zero()) || (s - S::one()).abs() > S::lit(1e-9) {
                return Err(Error::InvalidArgument("initial membership rows must lie on the simplex".into()));
            }
        }
        return Ok(init.clone());
    }
    // Mean-fill missing cells with the across-individual mean at that time.
    let t_len = data.grid().len();
    let col_mean: Vec<S> = (0..t_len)
        .map(|t| {
            let vals: Vec<S> = (0..m).filter(|&i| data.is_observed(i, 0, t)).map(|i| data.value(i, 0, t)).collect();
            if vals.is_empty() {
                S::zero()
            } else {
                vals.iter().copied().sum::<S>() / S::from_usize_lossy(vals.len())
            }
        })
        .collect();
    let points: Vec<Vec<S>> = (0..m)
        .map(|i| (0..t_len).map(|t| if data.is_observed(i, 0, t) { data.value(i, 0, t) } else { col_mean[t] }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (labels, _) = kmeans(&points, k, &mut rng, 100);
    Ok(labels
        .into_iter()
        .map(|l| {
            let mut row = vec![S::zero(); k];
            row[l] = S::one();
            row
        })
        .collect())
}

fn initial_hyperparameters<S: Scalar>(
    obs: &[Obs<S>],
    grid: &TimeGrid,
    k: usize,
) -> Result<(Vec<Kernel<S>>, Kernel<S>, S)> {
    let vals: Vec<S> = obs.iter().flat_map(|o| o.y.iter().copied()).collect();
    let n = S::from_usize_lossy(vals.len());
    let mean = vals.iter().copied().sum::<S>() / n;
    let var = (vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n).max(S::lit(1e-2));
    let pts = grid.points();
    let span = S::lit((pts[pts.len() - 1] - pts[0]) as f64);
    let len = (span / S::lit(4.0)).max(S::one());
    let mean_kernel = Kernel::new(var, len)?;
    let indiv = Kernel::new(var * S::lit(0.25), len)?;
    Ok((vec![mean_kernel; k], indiv, var * S::lit(0.1)))
}

struct VemState<S> {
    grid: TimeGrid,
    obs: Vec<Obs<S>>,
    tau: Vec<Vec<S>>,
    pi: Vec<S>,
    mean_kernels: Vec<Kernel<S>>,
    indiv_kernel: Kernel<S>,
    noise_var: S,
    posteriors: Vec<GaussianState<S>>,
    post_logdet: Vec<S>,
}

impl<S: Scalar> VemState<S> {
    fn k(&self) -> usize {
        self.mean_kernels.len()
    }

    fn indiv_factors(&self) -> Result<Vec<IndivFactor<S>>> {
        self.obs
            .iter()
            .map(|o| {
                let f = factor_cov(&self.indiv_kernel, self.noise_var, &o.times)?;
                let inv = f.chol.inverse();
                let inv_y = f.chol.solve(&o.y);
                Ok(IndivFactor { chol: f.chol, inv, inv_y })
            })
            .collect()
    }

    /// Closed-form `q(μ_k)`: precision `C_k⁻¹ + Σ_i τ_ik Ψ_i⁻¹`, mean from the
    /// τ-weighted precision-scaled data.
    fn update_mean_posteriors(&mut self, factors: &[IndivFactor<S>]) -> Result<()> {
        let n = self.grid.len();
        let times = self.grid.as_reals::<S>();
        self.posteriors.clear();
        self.post_logdet.clear();
        for k in 0..self.k() {
            let prior = factor_cov(&self.mean_kernels[k], S::zero(), &times)?;
            let mut precision = prior.chol.inverse();
            let mut b = vec![S::zero(); n];
            for (i, (o, f)) in self.obs.iter().zip(factors).enumerate() {
                let w = self.tau[i][k];
                if w == S::zero() {
                    continue;
                }
                for (a, &ga) in o.idx.iter().enumerate() {
                    b[ga] += w * f.inv_y[a];
                    for (c, &gc) in o.idx.iter().enumerate() {
                        precision[(ga, gc)] += w * f.inv[(a, c)];
                    }
                }
            }
            precision.symmetrize();
            let scale = precision.diagonal().into_iter().fold(S::zero(), S::max);
            let (chol, _) = cholesky_jittered(&precision, Jitter { scale, try_zero_first: true })?;
            let cov = chol.inverse();
            let mean = chol.solve(&b);
            self.post_logdet.push(-chol.log_det());
            self.posteriors.push(GaussianState::new(self.grid.clone(), mean, cov)?);
        }
        Ok(())
    }

    /// Second moment `E[(y_i − μ_k)(y_i − μ_k)ᵀ]` under `q(μ_k)`.
    fn residual_moment(&self, i: usize, k: usize) -> Mat<S> {
        let o = &self.obs[i];
        let post = &self.posteriors[k];
        let resid: Vec<S> = o.idx.iter().zip(&o.y).map(|(&g, &y)| y - post.mean[g]).collect();
        let mut mom = post.cov.select(&o.idx, &o.idx);
        mom.add_outer(S::one(), &resid, &resid);
        mom
    }

    /// Closed-form τ update; returns the unnormalized log weights.
    fn update_memberships(&mut self, factors: &[IndivFactor<S>]) -> Result<Vec<Vec<S>>> {
        let mut all = Vec::with_capacity(self.obs.len());
        for (i, f) in factors.iter().enumerate() {
            let logs: Vec<S> = (0..self.k())
                .map(|k| safe_ln(self.pi[k]) + gaussian_expected_log_density(&f.chol, &self.residual_moment(i, k)))
                .collect();
            let lse = log_sum_exp(&logs);
            self.tau[i] = logs.iter().map(|&l| (l - lse).exp()).collect();
            let s: S = self.tau[i].iter().copied().sum();
            self.tau[i].iter_mut().for_each(|t| *t /= s);
            all.push(logs);
        }
        Ok(all)
    }

    fn reseed_empty_clusters(&mut self, log_rho: &[Vec<S>], factors: &[IndivFactor<S>]) -> Result<Option<String>> {
        let mut msgs = Vec::new();
        for k in 0..self.k() {
            let mass: S = self.tau.iter().map(|r| r[k]).sum();
            if mass.as_f64() >= DEGENERATE_MASS {
                continue;
            }
            let worst = (0..self.obs.len())
                .min_by(|&a, &b| {
                    let la = log_sum_exp(&log_rho[a]);
                    let lb = log_sum_exp(&log_rho[b]);
                    la.partial_cmp(&lb).expect("finite log-likelihoods")
                })
                .expect("at least one individual");
            self.tau[worst] = (0..self.k()).map(|c| if c == k { S::one() } else { S::zero() }).collect();
            msgs.push(format!("cluster {} lost all responsibility; re-seeded on individual {worst}", k + 1));
        }
        if msgs.is_empty() {
            return Ok(None);
        }
        self.update_mean_posteriors(factors)?;
        Ok(Some(msgs.join("; ")))
    }

    fn optimize_mean_kernels(&mut self, steps: usize) -> Result<()> {
        let times = self.grid.as_reals::<S>();
        for k in 0..self.k() {
            let post = &self.posteriors[k];
            let mut mom = post.cov.clone();
            mom.add_outer(S::one(), &post.mean, &post.mean);
            let kern = self.mean_kernels[k];
            let x0 = vec![kern.variance().ln(), kern.lengthscale().ln()];
            let bounds = [LOG_VAR_BOUNDS, LOG_LEN_BOUNDS];
            let x = ascend(x0, &bounds, steps, |x| {
                let kern = Kernel::from_log(x[0], x[1])?;
                let (v, g) = expected_log_density(&kern, S::zero(), &times, &mom)?;
                Ok((v, vec![g[0], g[1]]))
            })?;
            self.mean_kernels[k] = Kernel::from_log(x[0], x[1])?;
        }
        Ok(())
    }

    fn indiv_moments(&self) -> Vec<Mat<S>> {
        (0..self.obs.len())
            .map(|i| {
                let n = self.obs[i].idx.len();
                let mut acc = Mat::zeros(n, n);
                for k in 0..self.k() {
                    let w = self.tau[i][k];
                    if w > S::zero() {
                        acc.axpy(w, &self.residual_moment(i, k));
                    }
                }
                acc
            })
            .collect()
    }

    fn optimize_indiv_kernel(&mut self, steps: usize) -> Result<()> {
        let moments = self.indiv_moments();
        let obs = &self.obs;
        let x0 = vec![self.indiv_kernel.variance().ln(), self.indiv_kernel.lengthscale().ln(), self.noise_var.ln()];
        let bounds = [LOG_VAR_BOUNDS, LOG_LEN_BOUNDS, LOG_NOISE_BOUNDS];
        let x = ascend(x0, &bounds, steps, |x| {
            let kern = Kernel::from_log(x[0], x[1])?;
            let noise = x[2].exp();
            let mut total = S::zero();
            let mut grad = vec![S::zero(); 3];
            for (o, mom) in obs.iter().zip(&moments) {
                let (v, g) = expected_log_density(&kern, noise, &o.times, mom)?;
                total += v;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Ok((total, grad))
        })?;
        self.indiv_kernel = Kernel::from_log(x[0], x[1])?;
        self.noise_var = x[2].exp();
        Ok(())
    }

    fn elbo(&self) -> Result<S> {
        let n = S::from_usize_lossy(self.grid.len());
        let times = self.grid.as_reals::<S>();
        let mut total = S::zero();
        for (o, mom) in self.obs.iter().zip(self.indiv_moments()) {
            total += expected_log_density_value(&self.indiv_kernel, self.noise_var, &o.times, &mom)?;
        }
        for row in &self.tau {
            for (k, &t) in row.iter().enumerate() {
                total += membership_term(t, self.pi[k]);
            }
        }
        let entropy_const = n * (S::one() + S::lit(std::f64::consts::TAU).ln());
        for k in 0..self.k() {
            let post = &self.posteriors[k];
            let mut mom = post.cov.clone();
            mom.add_outer(S::one(), &post.mean, &post.mean);
            total += expected_log_density_value(&self.mean_kernels[k], S::zero(), &times, &mom)?;
            total += S::lit(0.5) * (entropy_const + self.post_logdet[k]);
        }
        Ok(total)
    }
}

/// Bounded gradient ascent with an adaptive step that only accepts strict
/// improvements, so the objective never decreases.
fn ascend<S: Scalar>(
    x0: Vec<S>,
    bounds: &[(f64, f64)],
    steps: usize,
    mut f: impl FnMut(&[S]) -> Result<(S, Vec<S>)>,
) -> Result<Vec<S>> {
    let mut x = x0;
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.max(S::lit(lo)).min(S::lit(hi));
    }
    let (mut fx, mut gx) = f(&x)?;
    let mut eta = S::lit(0.1);
    for _ in 0..steps {
        let norm = gx.iter().map(|&g| g * g).sum::<S>().sqrt();
        if !(norm > S::zero()) || !norm.is_finite() {
            break;
        }
        let cand: Vec<S> = x
            .iter()
            .zip(&gx)
            .zip(bounds)
            .map(|((&xi, &gi), &(lo, hi))| (xi + eta * gi / norm).max(S::lit(lo)).min(S::lit(hi)))
            .collect();
        match f(&cand) {
            Ok((fc, gc)) if fc > fx && fc.is_finite() => {
                x = cand;
                fx = fc;
                gx = gc;
                eta = (eta * S::lit(1.5)).min(S::one());
            }
            _ => {
                eta *= S::lit(0.5);
                if eta < S::lit(1e-10) {
                    break;
                }
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> MagmaClustModel<f64> {
        let grid = TimeGrid::range(1, 3).unwrap();
        let k = Kernel::new(1.0, 1.0).unwrap();
        let mk = |c: f64| GaussianState::new(grid.clone(), vec![c; 3], Mat::identity(3).scale(0.01)).unwrap();
        MagmaClustModel {
            mean_kernels: vec![k, k, k],
            indiv_kernel: k,
            noise_var: 0.1,
            mixing: vec![0.2, 0.5, 0.3],
            mean_posteriors: vec![mk(0.0), mk(1.0), mk(2.0)],
            memberships: vec![vec![0.1, 0.7, 0.2], vec![0.5, 0.5, 0.0]],
            train_grid: grid,
        }
    }

    #[test]
    fn assign_cluster_uses_argmax_with_low_tie_break() {
        let m = toy_model();
        assert_eq!(m.assign_cluster(0).unwrap().0, 2);
        assert_eq!(m.assign_cluster(1).unwrap().0, 1);
        assert!(matches!(m.assign_cluster(5), Err(Error::IndexOutOfRange { index: 5, len: 2 })));
    }

    #[test]
    fn empty_history_predicts_weighted_mean_of_posteriors() {
        let m = toy_model();
        let target = TimeGrid::new(vec![2, 3]).unwrap();
        let f = m.predict(&[], &[], &target).unwrap();
        let expected = 0.2 * 0.0 + 0.5 * 1.0 + 0.3 * 2.0;
        assert!(f.mean[0].iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn json_round_trip() {
        let m = toy_model();
        let back = MagmaClustModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ascend_never_decreases() {
        let x = ascend(vec![3.0f64], &[(-10.0, 10.0)], 30, |x| Ok((-(x[0] - 1.0).powi(2), vec![-2.0 * (x[0] - 1.0)])))
            .unwrap();
        assert!((x[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_multivariate_and_zero_k() {
        let grid = TimeGrid::range(1, 2).unwrap();
        let data = TimeSeriesSet::from_complete(grid.clone(), &[vec![vec![0.0, 1.0], vec![1.0, 2.0]]]).unwrap();
        assert!(matches!(vem_fit(&data, 1, &VemConfig::default()), Err(Error::UnsupportedMultivariate(2))));
        let uni = TimeSeriesSet::from_complete(grid, &[vec![vec![0.0, 1.0]]]).unwrap();
        assert!(vem_fit(&uni, 0, &VemConfig::default()).is_err());
    }

    #[test]
    fn rejects_individual_without_observations() {
        let grid = TimeGrid::range(1, 2).unwrap();
        let data = TimeSeriesSet::new(
            vec!["a".into(), "b".into()],
            vec!["x".into()],
            grid,
            vec![1.0, 2.0, 0.0, 0.0],
            vec![true, true, false, false],
        )
        .unwrap();
        assert!(matches!(vem_fit(&data, 1, &VemConfig::default()), Err(Error::EmptyIndividual(1))));
    }
}
