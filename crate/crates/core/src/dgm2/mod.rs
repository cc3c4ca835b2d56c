//! Dynamic clustering with a recurrent deep generative model.
//!
//! Generative side: a transition LSTM reads the previous cluster distribution
//! and emits `p(z_t | z_<t) = softmax(MLP(h_t))`; the emission component is
//! drawn from the blend `ψ_t = (1 − γ) p(z_t | z_<t) + γ p(μ)` with the static
//! mixing weights `p(μ)`, and the observation from that component's Gaussian.
//! Inference side: a second LSTM reads the observations and emits
//! `q(z_t) = softmax(MLP(h̃_t))`.
//!
//! Training maximizes
//! `Σ_t E_q[log N(x_t | μ_z, σ²)] − KL(q_t ‖ ψ_t)` with exact expectations over
//! the categorical latents (no sampling), so gradients are deterministic.

mod batch;
mod nn;
mod train;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ClusterInfo, ClusterTrajectory, Forecast};
use crate::linalg::Mat;
use crate::scalar::{argmax, log_sum_exp, softmax, Scalar};

pub use nn::{LstmCell, LstmState, Network, ParamSet, Readout};
pub use train::{train, Dgm2Config, TrainReport};

use nn::{softmax_backward, LstmCache, ReadoutCache};

/// Trainable parameters; also used as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Dgm2Params<S> {
    pub transition: Network<S>,
    pub inference: Network<S>,
    /// Component means, one row per cluster (`K × d`).
    pub means: Mat<S>,
    /// Log of the shared diagonal emission variance (`d`).
    pub log_var: Vec<S>,
    /// Logits of the static mixing weights `p(μ)` (`K`).
    pub base_logits: Vec<S>,
}

impl<S: Scalar> Dgm2Params<S> {
    pub fn zeros(k: usize, d: usize, hidden: usize) -> Self {
        Self {
            transition: Network::zeros(k, hidden, k),
            inference: Network::zeros(d, hidden, k),
            means: Mat::zeros(k, d),
            log_var: vec![S::zero(); d],
            base_logits: vec![S::zero(); k],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |s| s.iter_mut().for_each(|x| *x = S::zero()));
        z
    }
}

impl<S> ParamSet<S> for Dgm2Params<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        self.transition.visit(f);
        self.inference.visit(f);
        f(self.means.as_slice());
        f(&self.log_var);
        f(&self.base_logits);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        self.transition.visit_mut(f);
        self.inference.visit_mut(f);
        f(self.means.as_mut_slice());
        f(&mut self.log_var);
        f(&mut self.base_logits);
    }
}

/// Emission mixture: component means, shared diagonal variance and static weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams<S> {
    pub means: Vec<Vec<S>>,
    pub variance: Vec<S>,
    pub base: Vec<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmissionMode {
    /// Mean of the most probable component.
    Hard,
    /// Probability-weighted average of component means.
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForecastMode {
    /// Deterministic propagation of expectations.
    Soft,
    /// Average of ancestral rollouts.
    Sample { n_samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Dgm2Model<S> {
    k: usize,
    d: usize,
    hidden: usize,
    gamma: S,
    seed: u64,
    params: Dgm2Params<S>,
}

/// `ψ = (1 − γ) p_trans + γ base`.
pub fn dynamic_mixture_adjust<S: Scalar>(p_trans: &[S], base: &[S], gamma: S) -> Result<Vec<S>> {
    if !(gamma >= S::zero() && gamma <= S::one()) {
        return Err(Error::InvalidGamma(gamma.as_f64()));
    }
    if p_trans.len() != base.len() {
        return Err(Error::LengthMismatch(p_trans.len(), base.len()));
    }
    Ok(p_trans.iter().zip(base).map(|(&p, &b)| (S::one() - gamma) * p + gamma * b).collect())
}

/// `KL(q ‖ p)` for categorical distributions, with `0 log 0 = 0`.
pub fn categorical_kl<S: Scalar>(q: &[S], p: &[S]) -> S {
    q.iter().zip(p).filter(|(&qi, _)| qi > S::zero()).map(|(&qi, &pi)| qi * (qi.ln() - pi.ln())).sum()
}

struct SeriesTape<S> {
    inf_cells: Vec<LstmCache<S>>,
    inf_reads: Vec<ReadoutCache<S>>,
    q: Vec<Vec<S>>,
    log_q: Vec<Vec<S>>,
    tr_cells: Vec<LstmCache<S>>,
    tr_reads: Vec<ReadoutCache<S>>,
    p: Vec<Vec<S>>,
    base: Vec<S>,
    psi: Vec<Vec<S>>,
    /// Per-step, per-component emission log densities.
    loglik: Vec<Vec<S>>,
}

impl<S: Scalar> Dgm2Model<S> {
    /// Model with explicit parameters.
    pub fn from_params(params: Dgm2Params<S>, gamma: S, seed: u64) -> Result<Self> {
        if !(gamma >= S::zero() && gamma <= S::one()) {
            return Err(Error::InvalidGamma(gamma.as_f64()));
        }
        let k = params.base_logits.len();
        let d = params.log_var.len();
        let hidden = params.transition.cell.hidden_dim();
        let consistent = params.means.rows() == k
            && params.means.cols() == d
            && params.transition.cell.input_dim() == k
            && params.transition.readout.output_dim() == k
            && params.inference.cell.input_dim() == d
            && params.inference.cell.hidden_dim() == hidden
            && params.inference.readout.output_dim() == k;
        if !consistent {
            return Err(Error::ShapeMismatch("inconsistent parameter shapes".into()));
        }
        Ok(Self { k, d, hidden, gamma, seed, params })
    }

    /// Random network weights in `[-0.1, 0.1]`, uniform `p(μ)`, given component means.
    pub fn initialize(means: &[Vec<S>], log_var: Vec<S>, hidden: usize, gamma: S, seed: u64) -> Result<Self> {
        let k = means.len();
        let d = log_var.len();
        if k == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::ShapeMismatch("component means must be K x d with K >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Dgm2Params {
            transition: Network::random(k, hidden, k, 0.1, &mut rng),
            inference: Network::random(d, hidden, k, 0.1, &mut rng),
            means: Mat::from_rows(means),
            log_var,
            base_logits: vec![S::zero(); k],
        };
        Self::from_params(params, gamma, seed)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn gamma(&self) -> S {
        self.gamma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &Dgm2Params<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Dgm2Params<S> {
        &mut self.params
    }

    pub fn mixture(&self) -> MixtureParams<S> {
        MixtureParams {
            means: (0..self.k).map(|k| self.params.means.row(k).to_vec()).collect(),
            variance: self.params.log_var.iter().map(|&s| s.exp()).collect(),
            base: softmax(&self.params.base_logits),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        Self::from_params(m.params, m.gamma, m.seed)
    }

    pub fn zero_state(&self) -> LstmState<S> {
        LstmState::zeros(self.hidden)
    }

    /// Transition distribution for the first step, read from the zero state.
    pub fn initial_transition(&self) -> Vec<S> {
        softmax(&self.params.transition.readout.forward(&vec![S::zero(); self.hidden]).0)
    }

    /// Advance the transition cell on the previous cluster distribution and
    /// read out the next one.
    pub fn transition_step(&self, z_prev_probs: &[S], h_prev: &LstmState<S>) -> (Vec<S>, LstmState<S>) {
        let (next, _) = self.params.transition.cell.forward(z_prev_probs, h_prev);
        let (logits, _) = self.params.transition.readout.forward(&next.h);
        (softmax(&logits), next)
    }

    /// Advance the inference cell on one observation and read out `q`.
    pub fn inference_step(&self, x_t: &[S], h_prev: &LstmState<S>) -> (Vec<S>, LstmState<S>) {
        let (next, _) = self.params.inference.cell.forward(x_t, h_prev);
        let (logits, _) = self.params.inference.readout.forward(&next.h);
        (softmax(&logits), next)
    }

    pub fn emission_params(&self, z_probs: &[S], mode: EmissionMode) -> (Vec<S>, Vec<S>) {
        let var: Vec<S> = self.params.log_var.iter().map(|&s| s.exp()).collect();
        let mean = match mode {
            EmissionMode::Hard => self.params.means.row(argmax(z_probs)).to_vec(),
            EmissionMode::Soft => self.params.means.tmatvec(z_probs),
        };
        (mean, var)
    }

    /// Columns of a `(d, T)` series as per-step observation vectors.
    fn steps(&self, series: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
        if series.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: series.len() });
        }
        let t_len = series[0].len();
        if series.iter().any(|row| row.len() != t_len) {
            return Err(Error::ShapeMismatch("ragged series".into()));
        }
        let steps: Vec<Vec<S>> = (0..t_len).map(|t| series.iter().map(|row| row[t]).collect()).collect();
        if steps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("series values must be finite".into()));
        }
        Ok(steps)
    }

    fn forward_tape(&self, xs: &[Vec<S>]) -> Result<SeriesTape<S>> {
        let p = &self.params;
        let mut st = self.zero_state();
        let (mut inf_cells, mut inf_reads, mut q, mut log_q) = (vec![], vec![], vec![], vec![]);
        for x in xs {
            let (next, cache) = p.inference.cell.forward(x, &st);
            let (logits, rc) = p.inference.readout.forward(&next.h);
            let lse = log_sum_exp(&logits);
            log_q.push(logits.iter().map(|&l| l - lse).collect::<Vec<_>>());
            q.push(softmax(&logits));
            inf_cells.push(cache);
            inf_reads.push(rc);
            st = next;
        }

        let mut tr_cells = Vec::new();
        let mut tr_reads = Vec::new();
        let mut probs = Vec::new();
        let mut st = self.zero_state();
        for t in 0..xs.len() {
            let h = if t == 0 {
                st.h.clone()
            } else {
                let (next, cache) = p.transition.cell.forward(&q[t - 1], &st);
                tr_cells.push(cache);
                st = next;
                st.h.clone()
            };
            let (logits, rc) = p.transition.readout.forward(&h);
            probs.push(softmax(&logits));
            tr_reads.push(rc);
        }

        let base = softmax(&p.base_logits);
        let psi = probs
            .iter()
            .map(|pt| dynamic_mixture_adjust(pt, &base, self.gamma))
            .collect::<Result<Vec<_>>>()?;
        let half = S::lit(0.5);
        let log2pi = S::lit(std::f64::consts::TAU).ln();
        let loglik = xs
            .iter()
            .map(|x| {
                (0..self.k)
                    .map(|k| {
                        let mu = p.means.row(k);
                        (0..self.d)
                            .map(|j| {
                                let r = x[j] - mu[j];
                                -half * (log2pi + p.log_var[j] + r * r * (-p.log_var[j]).exp())
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(SeriesTape { inf_cells, inf_reads, q, log_q, tr_cells, tr_reads, p: probs, base, psi, loglik })
    }

    fn tape_elbo(&self, tape: &SeriesTape<S>) -> S {
        let mut total = S::zero();
        for t in 0..tape.q.len() {
            for k in 0..self.k {
                let q = tape.q[t][k];
                if q > S::zero() {
                    total += q * (tape.loglik[t][k] - tape.log_q[t][k] + tape.psi[t][k].ln());
                }
            }
        }
        total
    }

    /// Evidence lower bound of one complete `(d, T)` series.
    pub fn elbo(&self, series: &[Vec<S>]) -> Result<S> {
        let xs = self.steps(series)?;
        let v = self.tape_elbo(&self.forward_tape(&xs)?);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(v)
    }

    /// ELBO and its gradient with respect to every parameter.
    pub fn elbo_and_grad(&self, series: &[Vec<S>]) -> Result<(S, Dgm2Params<S>)> {
        let xs = self.steps(series)?;
        let tape = self.forward_tape(&xs)?;
        let value = self.tape_elbo(&tape);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let p = &self.params;
        let mut grad = p.zeros_like();
        let t_len = xs.len();
        let one = S::one();
        let half = S::lit(0.5);

        // Direct dependence on q (reconstruction and KL), and on ψ through KL.
        let mut dq: Vec<Vec<S>> = Vec::with_capacity(t_len);
        let mut dbase = vec![S::zero(); self.k];
        let mut dp: Vec<Vec<S>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let psi = &tape.psi[t];
            dq.push((0..self.k).map(|k| tape.loglik[t][k] - tape.log_q[t][k] - one + psi[k].ln()).collect());
            let dpsi: Vec<S> = (0..self.k).map(|k| tape.q[t][k] / psi[k]).collect();
            dp.push(dpsi.iter().map(|&g| (one - self.gamma) * g).collect());
            dbase.iter_mut().zip(&dpsi).for_each(|(b, &g)| *b += self.gamma * g);
        }
        grad.base_logits = softmax_backward(&tape.base, &dbase);

        for (t, x) in xs.iter().enumerate() {
            for k in 0..self.k {
                let q = tape.q[t][k];
                for j in 0..self.d {
                    let r = x[j] - p.means[(k, j)];
                    let inv_var = (-p.log_var[j]).exp();
                    grad.means[(k, j)] += q * r * inv_var;
                    grad.log_var[j] += q * (-half + half * r * r * inv_var);
                }
            }
        }

        // Transition chain: p_t reads the state after consuming q_1..q_{t-1}.
        let mut dh_next = vec![S::zero(); self.hidden];
        let mut dc_next = vec![S::zero(); self.hidden];
        for t in (0..t_len).rev() {
            let dlogits = softmax_backward(&tape.p[t], &dp[t]);
            let dh_read = p.transition.readout.backward(&tape.tr_reads[t], &dlogits, &mut grad.transition.readout);
            if t == 0 {
                break;
            }
            let dh: Vec<S> = dh_read.iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
            let (dx, dh_prev, dc_prev) =
                p.transition.cell.backward(&tape.tr_cells[t - 1], &dh, &dc_next, &mut grad.transition.cell);
            dq[t - 1].iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        // Inference chain.
        let mut dh_next = vec![S::zero(); self.hidden];
        let mut dc_next = vec![S::zero(); self.hidden];
        for t in (0..t_len).rev() {
            let dlogits = softmax_backward(&tape.q[t], &dq[t]);
            let dh_read = p.inference.readout.backward(&tape.inf_reads[t], &dlogits, &mut grad.inference.readout);
            let dh: Vec<S> = dh_read.iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
            let (_, dh_prev, dc_prev) =
                p.inference.cell.backward(&tape.inf_cells[t], &dh, &dc_next, &mut grad.inference.cell);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok((value, grad))
    }

    /// Posterior cluster probabilities per step and their argmax labels.
    pub fn cluster_trajectory(&self, series: &[Vec<S>]) -> Result<ClusterTrajectory<S>> {
        let xs = self.steps(series)?;
        let mut st = self.zero_state();
        let mut probs = Vec::with_capacity(xs.len());
        for x in &xs {
            let (q, next) = self.inference_step(x, &st);
            probs.push(q);
            st = next;
        }
        Ok(ClusterTrajectory::from_probs(probs))
    }

    /// Roll the generative model forward `horizon` steps after a `(d, T_h)` history.
    ///
    /// The returned trajectory holds the inference distributions over the
    /// history followed by the blended emission distributions `ψ` of the
    /// forecast steps (soft mode).
    pub fn forecast(&self, history: &[Vec<S>], horizon: usize, mode: ForecastMode) -> Result<Forecast<S>> {
        let xs = if history.iter().all(Vec::is_empty) && history.len() == self.d {
            Vec::new()
        } else {
            self.steps(history)?
        };
        let mut inf = self.zero_state();
        let mut q_hist = Vec::with_capacity(xs.len());
        for x in &xs {
            let (q, next) = self.inference_step(x, &inf);
            q_hist.push(q);
            inf = next;
        }
        // Transition state after consuming q_1..q_{T_h - 1}.
        let mut tr = self.zero_state();
        for q in q_hist.iter().take(q_hist.len().saturating_sub(1)) {
            tr = self.params.transition.cell.forward(q, &tr).0;
        }
        let last_q = q_hist.last().cloned();
        let base = softmax(&self.params.base_logits);
        let mixture = self.mixture();

        let mut mean = vec![Vec::with_capacity(horizon); self.d];
        let mut variance = vec![Vec::with_capacity(horizon); self.d];
        let mut traj = q_hist.clone();
        match mode {
            ForecastMode::Soft => {
                let mut st = tr;
                let mut input = last_q;
                for _ in 0..horizon {
                    let p = match &input {
                        Some(z) => {
                            let (p, next) = self.transition_step(z, &st);
                            st = next;
                            p
                        }
                        None => self.initial_transition(),
                    };
                    let psi = dynamic_mixture_adjust(&p, &base, self.gamma)?;
                    let (m, var) = self.emission_params(&psi, EmissionMode::Soft);
                    for j in 0..self.d {
                        let second: S = (0..self.k).map(|k| psi[k] * mixture.means[k][j] * mixture.means[k][j]).sum();
                        mean[j].push(m[j]);
                        variance[j].push(var[j] + (second - m[j] * m[j]).max(S::zero()));
                    }
                    traj.push(psi);
                    input = Some(p);
                }
            }
            ForecastMode::Sample { n_samples, seed } => {
                if n_samples == 0 {
                    return Err(Error::InvalidArgument("sample mode needs at least one sample".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut sum = vec![vec![0.0f64; horizon]; self.d];
                let mut sum_sq = vec![vec![0.0f64; horizon]; self.d];
                let mut psi_avg = vec![vec![S::zero(); self.k]; horizon];
                let sd: Vec<f64> = mixture.variance.iter().map(|v| v.as_f64().sqrt()).collect();
                for _ in 0..n_samples {
                    let mut st = tr.clone();
                    let mut input = last_q.clone();
                    for s in 0..horizon {
                        let p = match &input {
                            Some(z) => {
                                let (p, next) = self.transition_step(z, &st);
                                st = next;
                                p
                            }
                            None => self.initial_transition(),
                        };
                        let psi = dynamic_mixture_adjust(&p, &base, self.gamma)?;
                        let comp = sample_categorical(&psi, &mut rng);
                        for j in 0..self.d {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            let x = mixture.means[comp][j].as_f64() + sd[j] * eps;
                            sum[j][s] += x;
                            sum_sq[j][s] += x * x;
                        }
                        psi_avg[s].iter_mut().zip(&psi).for_each(|(a, &b)| *a += b);
                        let z = sample_categorical(&p, &mut rng);
                        input = Some((0..self.k).map(|c| if c == z { S::one() } else { S::zero() }).collect());
                    }
                }
                let n = n_samples as f64;
                for j in 0..self.d {
                    for s in 0..horizon {
                        let m = sum[j][s] / n;
                        mean[j].push(S::lit(m));
                        let var = if n_samples > 1 { (sum_sq[j][s] - n * m * m) / (n - 1.0) } else { 0.0 };
                        variance[j].push(S::lit(var.max(0.0)));
                    }
                }
                let ns = S::from_usize_lossy(n_samples);
                traj.extend(psi_avg.into_iter().map(|p| p.into_iter().map(|x| x / ns).collect::<Vec<_>>()));
            }
        }
        let z = S::lit(1.96);
        let lower = mean.iter().zip(&variance).map(|(m, v)| m.iter().zip(v).map(|(&a, &b)| a - z * b.sqrt()).collect()).collect();
        let upper = mean.iter().zip(&variance).map(|(m, v)| m.iter().zip(v).map(|(&a, &b)| a + z * b.sqrt()).collect()).collect();
        Ok(Forecast {
            mean,
            variance,
            interval: Some((lower, upper)),
            clusters: ClusterInfo::Dynamic(ClusterTrajectory::from_probs(traj)),
        })
    }
}

fn sample_categorical<S: Scalar, R: Rng>(p: &[S], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (i, &pi) in p.iter().enumerate() {
        let pi = pi.as_f64();
        if u < pi {
            return i;
        }
        u -= pi;
    }
    p.len() - 1
}

#[cfg(test)]
mod tests;
