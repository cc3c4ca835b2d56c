//! Seeded generators that sample from the two model families, with known
//! ground-truth clusters.

use std::io::Write;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{TimeGrid, TimeSeriesSet};
use crate::error::{Error, Result};
use crate::forecast::ClusterTrajectory;
use crate::gp::Kernel;
use crate::linalg::{cholesky_jittered, Jitter};
use crate::metrics::PartitionLabels;
use crate::scalar::Scalar;

/// Mixture-of-GP data: `y_i = μ_k + offset_k + f_i + ε_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagmaSynthSpec {
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub mean_variance: f64,
    pub mean_lengthscale: f64,
    /// Constant added to each cluster's mean curve; controls separation.
    pub mean_offsets: Vec<f64>,
    /// Zero disables the individual process.
    pub indiv_variance: f64,
    pub indiv_lengthscale: f64,
    pub noise_var: f64,
    pub mixing: Vec<f64>,
    pub seed: u64,
}

impl MagmaSynthSpec {
    /// `k` clusters with offsets spaced `separation` apart and uniform mixing.
    pub fn separated(m: usize, k: usize, t: usize, separation: f64, seed: u64) -> Self {
        Self {
            m,
            k,
            t,
            mean_variance: 1.0,
            mean_lengthscale: 3.0,
            mean_offsets: (0..k).map(|c| separation * (c as f64 - (k as f64 - 1.0) / 2.0)).collect(),
            indiv_variance: 0.2,
            indiv_lengthscale: 3.0,
            noise_var: 0.05,
            mixing: vec![1.0 / k as f64; k],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.mixing, self.k, "mixing")?;
        if self.mean_offsets.len() != self.k {
            return Err(Error::InvalidArgument("one mean offset per cluster required".into()));
        }
        if self.m == 0 || self.t == 0 {
            return Err(Error::InvalidArgument("M and T must be positive".into()));
        }
        if !(self.mean_variance > 0.0 && self.mean_lengthscale > 0.0 && self.indiv_lengthscale > 0.0)
            || self.indiv_variance < 0.0
            || self.noise_var < 0.0
        {
            return Err(Error::InvalidArgument("variances must be non-negative, kernel scales positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MagmaSynth<S> {
    pub data: TimeSeriesSet<S>,
    /// 1-based cluster of each individual.
    pub labels: PartitionLabels,
    /// Drawn cluster mean curves (offsets included), `K × T`.
    pub mean_curves: Vec<Vec<f64>>,
}

/// Sticky Markov chain over components, blended with static weights before emission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dgm2SynthSpec {
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub d: usize,
    /// `K × d` component means.
    pub means: Vec<Vec<f64>>,
    /// Per-dimension emission variance.
    pub emission_var: Vec<f64>,
    /// Probability of staying in the current component.
    pub stickiness: f64,
    pub gamma: f64,
    pub base: Vec<f64>,
    pub seed: u64,
}

impl Dgm2SynthSpec {
    /// Univariate components at `0, sep, 2 sep, …` (centered) with unit emission variance.
    pub fn separated(m: usize, k: usize, t: usize, separation: f64, seed: u64) -> Self {
        Self {
            m,
            k,
            t,
            d: 1,
            means: (0..k).map(|c| vec![separation * (c as f64 - (k as f64 - 1.0) / 2.0)]).collect(),
            emission_var: vec![1.0],
            stickiness: 0.9,
            gamma: 0.1,
            base: vec![1.0 / k as f64; k],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.base, self.k, "base")?;
        if self.means.len() != self.k || self.means.iter().any(|m| m.len() != self.d) {
            return Err(Error::InvalidArgument("means must be K x d".into()));
        }
        if self.emission_var.len() != self.d || self.emission_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("emission variance must be d non-negative values".into()));
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return Err(Error::InvalidArgument("stickiness must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        if self.m == 0 || self.t == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("M, T and d must be positive".into()));
        }
        Ok(())
    }

    /// Row `from` of the sticky transition matrix.
    pub fn transition_row(&self, from: usize) -> Vec<f64> {
        if self.k == 1 {
            return vec![1.0];
        }
        let off = (1.0 - self.stickiness) / (self.k - 1) as f64;
        (0..self.k).map(|c| if c == from { self.stickiness } else { off }).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dgm2Synth<S> {
    pub data: TimeSeriesSet<S>,
    /// Emitting component of every step (the observable clustering).
    pub trajectories: Vec<ClusterTrajectory<S>>,
    /// Latent chain state of every step.
    pub chain: Vec<Vec<usize>>,
}

fn check_simplex(p: &[f64], k: usize, what: &str) -> Result<()> {
    if k == 0 || p.len() != k || p.iter().any(|&x| x < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{what} must be a probability vector of length K >= 1")));
    }
    Ok(())
}

fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (i, &pi) in p.iter().enumerate() {
        if u < pi {
            return i;
        }
        u -= pi;
    }
    p.len() - 1
}

/// One draw of a zero-mean GP on `grid`.
fn gp_draw<R: Rng>(kernel: &Kernel<f64>, grid: &TimeGrid, rng: &mut R) -> Result<Vec<f64>> {
    let times = grid.as_reals::<f64>();
    let cov = kernel.matrix_at(&times, &times);
    let (chol, _) = cholesky_jittered(&cov, Jitter { scale: kernel.variance(), try_zero_first: false })?;
    let z: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(rng)).collect();
    Ok(chol.factor().matvec(&z))
}

pub fn generate_magma_data<S: Scalar>(spec: &MagmaSynthSpec) -> Result<MagmaSynth<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = TimeGrid::range(1, spec.t)?;
    let mean_kernel = Kernel::new(spec.mean_variance, spec.mean_lengthscale)?;
    let mut curves = Vec::with_capacity(spec.k);
    for c in 0..spec.k {
        let draw = gp_draw(&mean_kernel, &grid, &mut rng)?;
        curves.push(draw.into_iter().map(|v| v + spec.mean_offsets[c]).collect::<Vec<_>>());
    }
    let indiv_kernel = if spec.indiv_variance > 0.0 {
        Some(Kernel::new(spec.indiv_variance, spec.indiv_lengthscale)?)
    } else {
        None
    };
    let noise_sd = spec.noise_var.sqrt();
    let mut labels = Vec::with_capacity(spec.m);
    let mut series = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let c = sample_index(&spec.mixing, &mut rng);
        labels.push(c + 1);
        let f = match &indiv_kernel {
            Some(k) => gp_draw(k, &grid, &mut rng)?,
            None => vec![0.0; spec.t],
        };
        let row: Vec<S> = (0..spec.t)
            .map(|t| {
                let eps: f64 = if noise_sd > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
                S::lit(curves[c][t] + f[t] + noise_sd * eps)
            })
            .collect();
        series.push(vec![row]);
    }
    let data = TimeSeriesSet::from_complete(grid, &series)?;
    Ok(MagmaSynth { data, labels: PartitionLabels(labels), mean_curves: curves })
}

pub fn generate_dgm2_data<S: Scalar>(spec: &Dgm2SynthSpec) -> Result<Dgm2Synth<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = TimeGrid::range(1, spec.t)?;
    let sd: Vec<f64> = spec.emission_var.iter().map(|v| v.sqrt()).collect();
    let mut series = Vec::with_capacity(spec.m);
    let mut trajectories = Vec::with_capacity(spec.m);
    let mut chains = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let mut rows = vec![Vec::with_capacity(spec.t); spec.d];
        let mut emitted = Vec::with_capacity(spec.t);
        let mut chain = Vec::with_capacity(spec.t);
        let mut z = sample_index(&spec.base, &mut rng);
        for t in 0..spec.t {
            let comp = if t == 0 {
                z
            } else {
                let p = spec.transition_row(z);
                z = sample_index(&p, &mut rng);
                let psi: Vec<f64> =
                    p.iter().zip(&spec.base).map(|(&a, &b)| (1.0 - spec.gamma) * a + spec.gamma * b).collect();
                sample_index(&psi, &mut rng)
            };
            chain.push(z + 1);
            emitted.push(comp + 1);
            for j in 0..spec.d {
                let eps: f64 = if sd[j] > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
                rows[j].push(S::lit(spec.means[comp][j] + sd[j] * eps));
            }
        }
        series.push(rows);
        trajectories.push(ClusterTrajectory::from_labels(emitted, spec.k)?);
        chains.push(chain);
    }
    let data = TimeSeriesSet::from_complete(grid, &series)?;
    Ok(Dgm2Synth { data, trajectories, chain: chains })
}

/// `individual_id,label` rows.
pub fn write_static_labels<W: Write>(ids: &[String], labels: &PartitionLabels, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["individual_id", "label"])?;
    for (id, l) in ids.iter().zip(&labels.0) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `individual_id,time_index,label` rows.
pub fn write_dynamic_labels<S: Scalar, W: Write>(
    ids: &[String],
    grid: &TimeGrid,
    trajectories: &[ClusterTrajectory<S>],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["individual_id", "time_index", "label"])?;
    for (id, tr) in ids.iter().zip(trajectories) {
        for (&t, l) in grid.points().iter().zip(&tr.labels) {
            w.write_record([id.as_str(), &t.to_string(), &l.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
