//! Naive forecasters and the accuracy / partition-agreement metrics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ClusterTrajectory;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NaivePredictorKind {
    LastValue,
    Mean,
    Median,
}

impl NaivePredictorKind {
    pub const ALL: [Self; 3] = [Self::LastValue, Self::Mean, Self::Median];
}

impl fmt::Display for NaivePredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LastValue => "LastValue",
            Self::Mean => "Mean",
            Self::Median => "Median",
        })
    }
}

impl FromStr for NaivePredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "lastvalue" => Ok(Self::LastValue),
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(Error::InvalidArgument(format!("unknown naive predictor `{other}`"))),
        }
    }
}

/// Constant forecast of length `horizon` from the history's last value, mean or median.
pub fn naive_predict<S: Scalar>(kind: NaivePredictorKind, history: &[S], horizon: usize) -> Result<Vec<S>> {
    let last = *history.last().ok_or(Error::EmptyHistory)?;
    let value = match kind {
        NaivePredictorKind::LastValue => last,
        NaivePredictorKind::Mean => history.iter().copied().sum::<S>() / S::from_usize_lossy(history.len()),
        NaivePredictorKind::Median => {
            let mut sorted = history.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite history"));
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / S::lit(2.0)
            }
        }
    };
    Ok(vec![value; horizon])
}

fn check_pair<S>(pred: &[S], truth: &[S]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn rmse<S: Scalar>(pred: &[S], truth: &[S]) -> Result<S> {
    check_pair(pred, truth)?;
    let ss: S = pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok((ss / S::from_usize_lossy(pred.len())).sqrt())
}

pub fn mae<S: Scalar>(pred: &[S], truth: &[S]) -> Result<S> {
    check_pair(pred, truth)?;
    let s: S = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(s / S::from_usize_lossy(pred.len()))
}

/// One non-negative cluster label per item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionLabels(pub Vec<usize>);

impl PartitionLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for PartitionLabels {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index from the pair-counting contingency table.
///
/// When both partitions are trivial in the same way (the adjustment's
/// denominator vanishes), the index is 1 by convention.
pub fn ari(a: &PartitionLabels, b: &PartitionLabels) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("ARI needs at least two items".into()));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.0.iter().zip(&b.0) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    // Sum in sorted order so results are bit-reproducible.
    let sorted_sum = |m: &mut dyn Iterator<Item = u64>| {
        let mut v: Vec<u64> = m.collect();
        v.sort_unstable();
        v.into_iter().map(choose2).sum::<f64>()
    };
    let index = sorted_sum(&mut table.values().copied());
    let sum_a = sorted_sum(&mut rows.values().copied());
    let sum_b = sorted_sum(&mut cols.values().copied());
    let expected = sum_a * sum_b / choose2(a.len() as u64);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Labels of every individual at time position `t`.
pub fn per_timestep_partition<S: Scalar>(trajectories: &[ClusterTrajectory<S>], t: usize) -> Result<PartitionLabels> {
    trajectories
        .iter()
        .map(|tr| tr.labels.get(t).copied().ok_or(Error::TimeOutOfRange { t, len: tr.len() }))
        .collect::<Result<Vec<_>>>()
        .map(PartitionLabels)
}

/// Combined label of two 1-based labels: `(first - 1) * k_second + second`.
pub fn pair_label(first: usize, second: usize, k_second: usize) -> usize {
    (first - 1) * k_second + second
}

/// Element-wise [`pair_label`] of two partitions.
pub fn product_partition(a: &PartitionLabels, b: &PartitionLabels, k_second: usize) -> Result<PartitionLabels> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(PartitionLabels(a.0.iter().zip(&b.0).map(|(&x, &y)| pair_label(x, y, k_second)).collect()))
}

/// ARI at each time position and its mean across positions.
pub fn per_timestep_ari<S: Scalar>(
    a: &[ClusterTrajectory<S>],
    b: &[ClusterTrajectory<S>],
) -> Result<(Vec<f64>, f64)> {
    let len = a.first().map_or(0, ClusterTrajectory::len);
    let series = (0..len)
        .map(|t| ari(&per_timestep_partition(a, t)?, &per_timestep_partition(b, t)?))
        .collect::<Result<Vec<_>>>()?;
    let mean = if series.is_empty() { f64::NAN } else { series.iter().sum::<f64>() / series.len() as f64 };
    Ok((series, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_predictors() {
        use NaivePredictorKind::*;
        assert_eq!(naive_predict(LastValue, &[1.0, 2.0, 3.0], 2).unwrap(), vec![3.0, 3.0]);
        assert_eq!(naive_predict(Mean, &[1.0, 2.0, 3.0], 1).unwrap(), vec![2.0]);
        assert_eq!(naive_predict(Median, &[1.0, 2.0, 9.0, 10.0], 1).unwrap(), vec![5.5]);
        assert_eq!(naive_predict(Median, &[9.0, 1.0, 2.0], 1).unwrap(), vec![2.0]);
        assert!(naive_predict(Mean, &[1.0f64], 0).unwrap().is_empty());
        assert!(matches!(naive_predict::<f64>(Mean, &[], 1), Err(Error::EmptyHistory)));
    }

    #[test]
    fn error_metrics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((rmse(&[0.0, 3.0], &[4.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 3.0], &[4.0, 0.0]).unwrap(), 3.5);
        assert!(matches!(rmse(&[0.0], &[0.0, 1.0]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(mae::<f64>(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn ari_identity_up_to_relabeling() {
        let a = PartitionLabels(vec![1, 1, 2, 2, 3]);
        let b = PartitionLabels(vec![7, 7, 0, 0, 4]);
        assert_eq!(ari(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn ari_degenerate_partitions() {
        let same = PartitionLabels(vec![1, 1, 1, 1]);
        let singles = PartitionLabels(vec![1, 2, 3, 4]);
        assert_eq!(ari(&same, &singles).unwrap(), 0.0);
        assert_eq!(ari(&same, &same).unwrap(), 1.0);
        assert!(matches!(ari(&same, &PartitionLabels(vec![1])), Err(Error::LengthMismatch(4, 1))));
    }

    #[test]
    fn pairing_arithmetic() {
        assert_eq!(pair_label(2, 3, 5), 8);
        assert_eq!(pair_label(1, 1, 1), 1);
    }

    #[test]
    fn timestep_slicing() {
        let t1 = ClusterTrajectory::<f64>::from_labels(vec![1, 2, 2], 2).unwrap();
        let t2 = ClusterTrajectory::<f64>::from_labels(vec![2, 2, 1], 2).unwrap();
        let p = per_timestep_partition(&[t1.clone(), t2], 2).unwrap();
        assert_eq!(p.0, vec![2, 1]);
        let single = per_timestep_partition(std::slice::from_ref(&t1), 0).unwrap();
        assert_eq!(single.0, vec![1]);
        assert!(matches!(per_timestep_partition(&[t1], 3), Err(Error::TimeOutOfRange { t: 3, len: 3 })));
    }
}
