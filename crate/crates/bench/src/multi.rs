//! `bench compare-multi`: one multivariate DGM² with `k1 · k2` clusters
//! against two univariate DGM² with `k1` and `k2`, on a two-dimensional
//! dataset, repeated over `n_seeds` replicates.
//!
//! Replicate `r` uses master seed `seed + r` (and synthetic data seed
//! `synth.seed + r` when one is fixed).

use std::collections::BTreeSet;
use std::time::Instant;

use tsclust::dgm2::train;
use tsclust::forecast::ClusterTrajectory;
use tsclust::metrics::{pair_label, product_partition, PartitionLabels};

use crate::config::ExperimentConfig;
use crate::dataset::{self, Prepared};
use crate::error::{BenchError, Result};
use crate::experiment::{dgm2_config, dgm2_forecasts, per_timestep_entries, score, AriEntry, Scores};
use crate::seeds::{derive_seed, row_stream};

pub const MULTIVARIATE: &str = "multivariate";
pub const COMBINED: &str = "combined_univariate";

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRow {
    pub replicate: usize,
    pub k1: usize,
    pub k2: usize,
    pub approach: &'static str,
    pub scores: std::result::Result<Scores, String>,
    pub seconds: f64,
}

/// Across-replicate summary of one `(k1, k2)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSummary {
    pub k1: usize,
    pub k2: usize,
    pub multi_rmse: Vec<f64>,
    pub combined_rmse: Vec<f64>,
    pub mean_ari: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl PairSummary {
    /// Absolute difference of the across-replicate mean RMSEs.
    pub fn rmse_gap(&self) -> f64 {
        (mean(&self.multi_rmse) - mean(&self.combined_rmse)).abs()
    }

    /// `sqrt((sd_multi² + sd_combined²) / 2)` over replicates.
    pub fn pooled_sd(&self) -> f64 {
        let (a, b) = (sample_sd(&self.multi_rmse), sample_sd(&self.combined_rmse));
        ((a * a + b * b) / 2.0).sqrt()
    }

    pub fn multi_mean(&self) -> f64 {
        mean(&self.multi_rmse)
    }

    pub fn combined_mean(&self) -> f64 {
        mean(&self.combined_rmse)
    }

    pub fn ari_mean(&self) -> f64 {
        mean(&self.mean_ari)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiReport {
    pub dims: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub rows: Vec<MultiRow>,
    /// Entries are labelled `r<replicate>` in the model field.
    pub ari: Vec<AriEntry>,
}

impl MultiReport {
    /// Summaries over replicates where both approaches succeeded.
    pub fn summaries(&self) -> Vec<PairSummary> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for r in &self.rows {
            if !pairs.contains(&(r.k1, r.k2)) {
                pairs.push((r.k1, r.k2));
            }
        }
        pairs
            .into_iter()
            .map(|(k1, k2)| {
                let mut s = PairSummary { k1, k2, multi_rmse: vec![], combined_rmse: vec![], mean_ari: vec![] };
                let k = format!("{k1}x{k2}");
                let reps: BTreeSet<usize> =
                    self.rows.iter().filter(|r| (r.k1, r.k2) == (k1, k2)).map(|r| r.replicate).collect();
                for rep in reps {
                    let get = |approach: &str| {
                        self.rows
                            .iter()
                            .find(|r| r.replicate == rep && (r.k1, r.k2) == (k1, k2) && r.approach == approach)
                            .and_then(|r| r.scores.as_ref().ok().map(Scores::rmse_avg))
                    };
                    if let (Some(a), Some(b)) = (get(MULTIVARIATE), get(COMBINED)) {
                        s.multi_rmse.push(a);
                        s.combined_rmse.push(b);
                        let tag = format!("r{rep}");
                        if let Some(e) = self.ari.iter().find(|e| e.model == tag && e.k == k && e.time_index.is_none()) {
                            s.mean_ari.push(e.value);
                        }
                    }
                }
                s
            })
            .collect()
    }
}

fn replicate_config(cfg: &ExperimentConfig, r: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(r as u64);
    if let Some(s) = c.synth.as_mut() {
        s.seed = s.seed.map(|x| x.wrapping_add(r as u64));
    }
    c
}

pub fn run_multivariate_comparison(cfg: &ExperimentConfig) -> Result<MultiReport> {
    cfg.validate_multi()?;
    let mut report = MultiReport { dims: Vec::new(), n_train: 0, n_test: 0, rows: Vec::new(), ari: Vec::new() };
    for r in 0..cfg.n_seeds {
        let rc = replicate_config(cfg, r);
        let ds = dataset::load(&rc)?;
        if ds.data.n_dims() != 2 {
            return Err(BenchError::DataLoad(format!("compare-multi needs 2 dimensions, got {}", ds.data.n_dims())));
        }
        let prep = dataset::prepare(&ds, rc.split_spec()?, rc.test_fraction, rc.seed)?;
        report.dims = ds.data.dim_names().to_vec();
        report.n_train = prep.train_idx.len();
        report.n_test = prep.test_idx.len();
        for &[k1, k2] in &cfg.k_pairs {
            let (multi, combined, ari) = compare_pair(&rc, &prep, k1, k2);
            report.rows.push(MultiRow { replicate: r, k1, k2, approach: MULTIVARIATE, scores: multi.0, seconds: multi.1 });
            report.rows.push(MultiRow { replicate: r, k1, k2, approach: COMBINED, scores: combined.0, seconds: combined.1 });
            match ari {
                Ok(entries) => report.ari.extend(entries.into_iter().map(|mut e| {
                    e.model = format!("r{r}");
                    e.k = format!("{k1}x{k2}");
                    e
                })),
                Err(e) => log::warn!("replicate {r} pair {k1}x{k2}: no ARI ({e})"),
            }
        }
    }
    Ok(report)
}

type Outcome = (std::result::Result<Scores, String>, f64);

struct Trained {
    mean: Vec<Vec<Vec<f64>>>,
    trajectories: Vec<ClusterTrajectory<f64>>,
    seconds: f64,
}

fn fit_and_forecast(cfg: &ExperimentConfig, prep: &Prepared, dim: Option<usize>, k: usize, seed: u64) -> tsclust::Result<Trained> {
    let (train_set, hist, window) = match dim {
        Some(j) => (prep.train.select_dim(j)?, prep.test_history.select_dim(j)?, prep.test_window.select_dim(j)?),
        None => (prep.train.clone(), prep.test_history.clone(), prep.test_window.clone()),
    };
    let start = Instant::now();
    let (model, _) = train(&train_set, k, &dgm2_config(cfg, seed))?;
    let seconds = start.elapsed().as_secs_f64();
    let (mean, _) = dgm2_forecasts(&model, &hist, prep.test_future.grid().len())?;
    let trajectories = (0..window.n_individuals())
        .map(|i| model.cluster_trajectory(&window.individual(i)))
        .collect::<tsclust::Result<Vec<_>>>()?;
    Ok(Trained { mean, trajectories, seconds })
}

fn compare_pair(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    k1: usize,
    k2: usize,
) -> (Outcome, Outcome, tsclust::Result<Vec<AriEntry>>) {
    // Stream ids 0x10.. keep these rows apart from `bench run` rows.
    let seed = |slot: u64, k: usize| derive_seed(cfg.seed, row_stream(0x10 + slot, k));
    let multi = fit_and_forecast(cfg, prep, None, k1 * k2, seed(0, k1 * k2));
    let first = fit_and_forecast(cfg, prep, Some(0), k1, seed(1, k1));
    let second = fit_and_forecast(cfg, prep, Some(1), k2, seed(2, k2));

    let multi_out = match &multi {
        Ok(t) => (score(&t.mean, prep, cfg.scale), t.seconds),
        Err(e) => (Err(e.to_string()), 0.0),
    };
    let (combined_out, product) = match (&first, &second) {
        (Ok(a), Ok(b)) => {
            let mean: Vec<Vec<Vec<f64>>> =
                a.mean.iter().zip(&b.mean).map(|(x, y)| vec![x[0].clone(), y[0].clone()]).collect();
            let product: tsclust::Result<Vec<ClusterTrajectory<f64>>> = a
                .trajectories
                .iter()
                .zip(&b.trajectories)
                .map(|(x, y)| {
                    let labels = product_partition(&PartitionLabels(x.labels.clone()), &PartitionLabels(y.labels.clone()), k2)?;
                    ClusterTrajectory::from_labels(labels.0, pair_label(k1, k2, k2))
                })
                .collect();
            ((score(&mean, prep, cfg.scale), a.seconds + b.seconds), Some(product))
        }
        (Err(e), _) | (_, Err(e)) => ((Err(e.to_string()), 0.0), None),
    };
    let ari = match (multi, product) {
        (Ok(m), Some(Ok(p))) => per_timestep_entries(&m.trajectories, &p, prep.test_window.grid().points(), "combined_univariate"),
        (Err(e), _) | (_, Some(Err(e))) => Err(e),
        (_, None) => Err(tsclust::Error::InvalidArgument("a univariate model failed".into())),
    };
    (multi_out, combined_out, ari)
}
