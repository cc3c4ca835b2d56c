//! Loading or generating the dataset of a run and preparing the
//! train/test, history/horizon views shared by every row.

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsclust::data::{fit_standardizer, read_csv, split_history_horizon, standardize, SplitSpec, StandardizationParams, TimeSeriesSet};
use tsclust::forecast::ClusterTrajectory;
use tsclust::metrics::PartitionLabels;
use tsclust::synth::{generate_dgm2_data, generate_magma_data, write_dynamic_labels, write_static_labels};
use tsclust::Error;

use crate::config::{ExperimentConfig, Generator, SynthConfig};
use crate::error::{BenchError, Result};
use crate::seeds::{derive_seed, SYNTH_DATA, TEST_SPLIT};

/// Known cluster structure of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Truth {
    None,
    Static(PartitionLabels),
    Dynamic(Vec<ClusterTrajectory<f64>>),
}

impl Truth {
    fn select(&self, idx: &[usize], len: usize) -> Self {
        match self {
            Self::None => Self::None,
            Self::Static(l) => Self::Static(PartitionLabels(idx.iter().map(|&i| l.0[i]).collect())),
            Self::Dynamic(tr) => Self::Dynamic(
                idx.iter()
                    .map(|&i| ClusterTrajectory {
                        labels: tr[i].labels[..len].to_vec(),
                        probs: tr[i].probs[..len].to_vec(),
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub data: TimeSeriesSet<f64>,
    pub truth: Truth,
}

/// Generate a synthetic dataset. A dgm2 dataset with `d > 1` stacks `d`
/// independent univariate draws; its truth label combines the per-dimension
/// labels in mixed radix `k`.
pub fn generate(synth: &SynthConfig, seed: u64) -> Result<Dataset> {
    match synth.generator {
        Generator::Magma => {
            let s = generate_magma_data::<f64>(&synth.magma_spec(seed))?;
            Ok(Dataset { data: s.data, truth: Truth::Static(s.labels) })
        }
        Generator::Dgm2 if synth.d == 1 => {
            let s = generate_dgm2_data::<f64>(&synth.dgm2_spec(seed))?;
            Ok(Dataset { data: s.data, truth: Truth::Dynamic(s.trajectories) })
        }
        Generator::Dgm2 => {
            let parts = (0..synth.d)
                .map(|j| generate_dgm2_data::<f64>(&synth.dgm2_spec(derive_seed(seed, j as u64))))
                .collect::<Result<Vec<_>, _>>()?;
            let series: Vec<Vec<Vec<f64>>> =
                (0..synth.m).map(|i| parts.iter().map(|p| p.data.series(i, 0).to_vec()).collect()).collect();
            let data = TimeSeriesSet::from_complete(parts[0].data.grid().clone(), &series)?;
            let k_all = synth.k.pow(synth.d as u32);
            let truth = (0..synth.m)
                .map(|i| {
                    let labels = (0..synth.t)
                        .map(|t| parts.iter().fold(0, |acc, p| acc * synth.k + p.trajectories[i].labels[t] - 1) + 1)
                        .collect();
                    ClusterTrajectory::from_labels(labels, k_all)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Dataset { data, truth: Truth::Dynamic(truth) })
        }
    }
}

/// Seed of the synthetic data: explicit, or derived from the run seed.
pub fn synth_seed(cfg: &ExperimentConfig, synth: &SynthConfig) -> u64 {
    synth.seed.unwrap_or_else(|| derive_seed(cfg.seed, SYNTH_DATA))
}

pub fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.synth, cfg.is_synthetic()) {
        (Some(s), true) => generate(s, synth_seed(cfg, s)),
        _ => {
            let file = File::open(&cfg.dataset).map_err(|e| BenchError::DataLoad(format!("{}: {e}", cfg.dataset)))?;
            let ingested = read_csv::<f64, _>(file).map_err(|e| BenchError::DataLoad(e.to_string()))?;
            if ingested.dropped_rows > 0 {
                log::warn!("{} implausible rows dropped from {}", ingested.dropped_rows, cfg.dataset);
            }
            Ok(Dataset { data: ingested.data, truth: Truth::None })
        }
    }
}

/// Write `data.csv` and `labels.csv` for a synthetic dataset.
pub fn write_dataset(ds: &Dataset, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    tsclust::data::write_csv(&ds.data, File::create(out_dir.join("data.csv"))?)?;
    let ids = ds.data.individual_ids();
    match &ds.truth {
        Truth::Static(l) => write_static_labels(ids, l, File::create(out_dir.join("labels.csv"))?)?,
        Truth::Dynamic(tr) => write_dynamic_labels(ids, ds.data.grid(), tr, File::create(out_dir.join("labels.csv"))?)?,
        Truth::None => {}
    }
    Ok(())
}

/// Views of one dataset shared by every row of a run, all on the
/// standardized scale fitted to the training individuals.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: TimeSeriesSet<f64>,
    pub test_history: TimeSeriesSet<f64>,
    pub test_future: TimeSeriesSet<f64>,
    /// History followed by horizon, for cluster trajectories.
    pub test_window: TimeSeriesSet<f64>,
    pub params: StandardizationParams<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub test_truth: Truth,
}

/// Held-out individuals: a seeded shuffle, first `round(M · fraction)` taken
/// (at least one, leaving at least one for training), returned sorted.
pub fn test_subset(m: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if m < 2 {
        return Err(BenchError::DataLoad("need at least two individuals to hold some out".into()));
    }
    let n_test = ((m as f64 * fraction).round() as usize).clamp(1, m - 1);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, TEST_SPLIT)));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Training statistics, with unit scale kept for dimensions that are constant.
fn standardizer(train: &TimeSeriesSet<f64>) -> Result<StandardizationParams<f64>> {
    match fit_standardizer(train) {
        Ok(p) => Ok(p),
        Err(Error::ZeroVariance { .. }) => {
            let mut mean = Vec::with_capacity(train.n_dims());
            let mut std = Vec::with_capacity(train.n_dims());
            for j in 0..train.n_dims() {
                let vals: Vec<f64> = (0..train.n_individuals()).flat_map(|i| train.observed(i, j).1).collect();
                let mu = vals.iter().sum::<f64>() / vals.len() as f64;
                let sd = (vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (vals.len() as f64 - 1.0)).sqrt();
                mean.push(mu);
                std.push(if sd > 0.0 { sd } else { 1.0 });
            }
            log::warn!("constant dimension found; it is centered but not scaled");
            Ok(StandardizationParams::new(mean, std)?)
        }
        Err(e) => Err(BenchError::DataLoad(e.to_string())),
    }
}

pub fn prepare(ds: &Dataset, split: SplitSpec, test_fraction: f64, seed: u64) -> Result<Prepared> {
    let data = &ds.data;
    let (h, f) = (split.history_len, split.horizon_len);
    split.validate(data.grid().len()).map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
    let len = h + f;
    let window = if data.grid().len() == len {
        data.clone()
    } else {
        split_history_horizon(data, SplitSpec::new(len, data.grid().len() - len)?)?.0
    };
    let (train_idx, test_idx) = test_subset(data.n_individuals(), test_fraction, seed)?;
    let raw_train = window.select_individuals(&train_idx)?;
    let params = standardizer(&raw_train)?;
    let train = standardize(&raw_train, &params)?;
    let test_window = standardize(&window.select_individuals(&test_idx)?, &params)?;
    let (test_history, test_future) = split_history_horizon(&test_window, split)?;
    let test_truth = ds.truth.select(&test_idx, len);
    Ok(Prepared { train, test_history, test_future, test_window, params, train_idx, test_idx, test_truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_subset_is_disjoint_and_seeded() {
        let (train, test) = test_subset(60, 0.3, 7).unwrap();
        assert_eq!((train.len(), test.len()), (42, 18));
        assert!(test.iter().all(|i| !train.contains(i)));
        assert_eq!(test_subset(60, 0.3, 7).unwrap().1, test);
        assert_ne!(test_subset(60, 0.3, 8).unwrap().1, test);
        assert_eq!(test_subset(3, 0.01, 1).unwrap().1.len(), 1);
        assert_eq!(test_subset(3, 0.99, 1).unwrap().0.len(), 1);
    }

    #[test]
    fn stacked_dims_combine_labels() {
        let synth = SynthConfig { generator: Generator::Dgm2, m: 5, k: 2, t: 4, separation: 4.0, seed: None, d: 2 };
        let ds = generate(&synth, 3).unwrap();
        assert_eq!(ds.data.n_dims(), 2);
        let Truth::Dynamic(tr) = &ds.truth else { panic!("expected dynamic truth") };
        let first = generate_dgm2_data::<f64>(&synth.dgm2_spec(derive_seed(3, 0))).unwrap();
        let second = generate_dgm2_data::<f64>(&synth.dgm2_spec(derive_seed(3, 1))).unwrap();
        for i in 0..5 {
            for t in 0..4 {
                let want = tsclust::metrics::pair_label(first.trajectories[i].labels[t], second.trajectories[i].labels[t], 2);
                assert_eq!(tr[i].labels[t], want);
            }
        }
    }
}
