use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// Per-timestep cluster labels (1-based) and the probability vectors they were read from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ClusterTrajectory<S> {
    pub labels: Vec<usize>,
    pub probs: Vec<Vec<S>>,
}

impl<S: Scalar> ClusterTrajectory<S> {
    /// Labels are the argmax of each vector, lowest index on ties.
    pub fn from_probs(probs: Vec<Vec<S>>) -> Self {
        let labels = probs.iter().map(|p| argmax(p) + 1).collect();
        Self { labels, probs }
    }

    /// Trajectory of known hard labels (one-hot probabilities over `k` clusters).
    pub fn from_labels(labels: Vec<usize>, k: usize) -> Result<Self> {
        let probs = labels
            .iter()
            .map(|&l| {
                if l == 0 || l > k {
                    return Err(Error::IndexOutOfRange { index: l, len: k });
                }
                let mut p = vec![S::zero(); k];
                p[l - 1] = S::one();
                Ok(p)
            })
            .collect::<Result<_>>()?;
        Ok(Self { labels, probs })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Cluster information attached to a forecast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub enum ClusterInfo<S> {
    /// One label for the whole series.
    Static { label: usize, memberships: Vec<S> },
    /// One label per time step (history followed by the forecast horizon).
    Dynamic(ClusterTrajectory<S>),
    None,
}

/// Predictive distribution for one individual over a forecast horizon,
/// indexed `[dim][step]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Forecast<S> {
    pub mean: Vec<Vec<S>>,
    pub variance: Vec<Vec<S>>,
    /// Lower and upper 95% bounds, when the model provides them.
    pub interval: Option<(Vec<Vec<S>>, Vec<Vec<S>>)>,
    pub clusters: ClusterInfo<S>,
}

impl<S: Scalar> Forecast<S> {
    pub fn horizon(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    pub fn n_dims(&self) -> usize {
        self.mean.len()
    }
}
