use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dgm2Model, ParamSet};
use crate::data::TimeSeriesSet;
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dgm2Config {
    pub hidden: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Dgm2Config {
    fn default() -> Self {
        Self { hidden: 16, gamma: 0.5, learning_rate: 1e-2, batch_size: 32, epochs: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean negative ELBO per individual over the mini-batches of each epoch.
    pub loss_trace: Vec<f64>,
    /// Mean per-individual ELBO before the first update.
    pub initial_elbo: f64,
    /// Mean per-individual ELBO after the last update.
    pub final_elbo: f64,
    pub wall_clock_seconds: f64,
}

/// Adam state over a flat parameter vector.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Ascent step on `params` along `grad`.
    fn step<S: Scalar>(&mut self, params: &mut [S], grad: &[S]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i].as_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let step = self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] += S::lit(step);
        }
    }
}

/// Component means by k-means over all observed time slices; the emission
/// variance starts at the pooled within-cluster variance.
fn initial_mixture<S: Scalar>(data: &TimeSeriesSet<S>, k: usize, seed: u64) -> (Vec<Vec<S>>, Vec<S>) {
    let d = data.n_dims();
    let t_len = data.grid().len();
    let points: Vec<Vec<S>> = (0..data.n_individuals())
        .flat_map(|i| (0..t_len).map(move |t| (0..d).map(|j| data.value(i, j, t)).collect::<Vec<S>>()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b6d_6561_6e73);
    let (labels, centers) = kmeans(&points, k, &mut rng, 100);
    let n = S::from_usize_lossy(points.len());
    let log_var = (0..d)
        .map(|j| {
            let ss: S = points.iter().zip(&labels).map(|(p, &l)| (p[j] - centers[l][j]).powi(2)).sum();
            (ss / n).max(S::lit(1e-3)).ln()
        })
        .collect();
    (centers, log_var)
}

/// Mean ELBO over the batch and its averaged gradient.
fn batch_objective<S: Scalar>(
    model: &Dgm2Model<S>,
    series: &[Vec<Vec<S>>],
    batch: &[usize],
) -> Result<(f64, Vec<S>)> {
    let refs: Vec<&[Vec<S>]> = batch.iter().map(|&i| series[i].as_slice()).collect();
    let mut grad = model.params().zeros_like();
    let total = model.batch_elbo_grad(&refs, &mut grad)?;
    let n = batch.len();
    let scale = S::one() / S::from_usize_lossy(n);
    let mut grad = grad.flatten();
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total.as_f64() / n as f64, grad))
}

fn mean_elbo<S: Scalar>(model: &Dgm2Model<S>, series: &[Vec<Vec<S>>]) -> Result<f64> {
    let mut total = 0.0;
    for s in series {
        total += model.elbo(s)?.as_f64();
    }
    Ok(total / series.len() as f64)
}

/// Fit a K-cluster model by mini-batch Adam on the mean per-individual ELBO.
pub fn train<S: Scalar>(data: &TimeSeriesSet<S>, k: usize, config: &Dgm2Config) -> Result<(Dgm2Model<S>, TrainReport)> {
    let start = Instant::now();
    if !data.is_complete() {
        return Err(Error::IncompleteSeries);
    }
    if k == 0 || config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::InvalidArgument("K, batch size and hidden width must be positive".into()));
    }
    if data.n_individuals() == 0 {
        return Err(Error::InvalidArgument("no individuals to train on".into()));
    }
    let (means, log_var) = initial_mixture(data, k, config.seed);
    let mut model = Dgm2Model::initialize(&means, log_var, config.hidden, S::lit(config.gamma), config.seed)?;
    let series: Vec<Vec<Vec<S>>> = (0..data.n_individuals()).map(|i| data.individual(i)).collect();

    let initial_elbo = mean_elbo(&model, &series)?;
    let mut flat = model.params().flatten();
    let mut adam = Adam::new(flat.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..series.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (elbo, grad) = batch_objective(&model, &series, batch)?;
            epoch_total += elbo * batch.len() as f64;
            adam.step(&mut flat, &grad);
            model.params_mut().assign(&flat);
        }
        let loss = -epoch_total / series.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        loss_trace.push(loss);
    }
    let final_elbo = mean_elbo(&model, &series)?;
    let report = TrainReport { loss_trace, initial_elbo, final_elbo, wall_clock_seconds: start.elapsed().as_secs_f64() };
    Ok((model, report))
}
