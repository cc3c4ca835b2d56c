//! `bench run`: every configured model for every K on one held-out split.

use std::time::Instant;

use tsclust::data::TimeSeriesSet;
use tsclust::dgm2::{train, Dgm2Config, ForecastMode};
use tsclust::forecast::ClusterInfo;
use tsclust::magma::{vem_fit, VemConfig};
use tsclust::metrics::{ari, mae, naive_predict, per_timestep_ari, rmse, NaivePredictorKind, PartitionLabels};

use crate::config::{ExperimentConfig, ModelKind, Scale};
use crate::dataset::{self, Prepared, Truth};
use crate::error::Result;
use crate::seeds::{derive_seed, row_stream};

/// Per-dimension and averaged errors of one row.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
}

impl Scores {
    pub fn rmse_avg(&self) -> f64 {
        self.rmse.iter().sum::<f64>() / self.rmse.len() as f64
    }

    pub fn mae_avg(&self) -> f64 {
        self.mae.iter().sum::<f64>() / self.mae.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub model: String,
    /// Cluster count label: `3`, `2x2`, or empty for baselines.
    pub k: String,
    /// `Err` holds the message of a failed fit or forecast.
    pub scores: std::result::Result<Scores, String>,
    /// Fit wall-clock seconds.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AriEntry {
    pub model: String,
    pub k: String,
    /// What the partition was compared with.
    pub against: String,
    /// Grid time of a per-timestep entry; `None` for a static or averaged value.
    pub time_index: Option<i64>,
    pub value: f64,
}

/// One forecast value, for plotting curves with intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastPoint {
    pub model: String,
    pub k: String,
    pub individual: String,
    pub dim: String,
    pub time_index: i64,
    pub mean: f64,
    pub interval: Option<(f64, f64)>,
    pub truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub dims: Vec<String>,
    pub scale: Scale,
    pub history: usize,
    pub horizon: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rows: Vec<Row>,
    pub ari: Vec<AriEntry>,
    pub forecasts: Vec<ForecastPoint>,
}

/// Predictions of one model for every test individual, `[individual][dim][step]`,
/// plus intervals when the model has them.
struct Predictions {
    mean: Vec<Vec<Vec<f64>>>,
    interval: Option<Vec<Vec<Vec<(f64, f64)>>>>,
}

struct Fitted {
    pred: Predictions,
    seconds: f64,
    ari: Vec<AriEntry>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BenchmarkReport> {
    cfg.validate_run()?;
    let ds = dataset::load(cfg)?;
    let prep = dataset::prepare(&ds, cfg.split_spec()?, cfg.test_fraction, cfg.seed)?;
    let mut report = BenchmarkReport {
        dims: ds.data.dim_names().to_vec(),
        scale: cfg.scale,
        history: cfg.split.history,
        horizon: cfg.split.horizon,
        n_train: prep.train_idx.len(),
        n_test: prep.test_idx.len(),
        rows: Vec::new(),
        ari: Vec::new(),
        forecasts: Vec::new(),
    };
    for &model in &cfg.models {
        let ks: Vec<Option<usize>> =
            if model.is_clustering() { cfg.k_list.iter().map(|&k| Some(k)).collect() } else { vec![None] };
        for k in ks {
            let k_label = k.map_or_else(String::new, |k| k.to_string());
            let seed = derive_seed(cfg.seed, row_stream(model.index(), k.unwrap_or(0)));
            let fitted = match (model.naive(), k) {
                (Some(kind), _) => naive_row(kind, &prep),
                (None, Some(k)) if model == ModelKind::Dgm2 => dgm2_row(cfg, &prep, k, seed),
                (None, Some(k)) => magma_row(cfg, &prep, k, seed),
                (None, None) => unreachable!("clustering models always carry K"),
            };
            let (scores, seconds) = match fitted {
                Ok(f) => {
                    report.forecasts.extend(forecast_points(&model.to_string(), &k_label, &f.pred, &prep, cfg.scale));
                    report.ari.extend(f.ari.into_iter().map(|mut e| {
                        e.model = model.to_string();
                        e.k = k_label.clone();
                        e
                    }));
                    (score(&f.pred.mean, &prep, cfg.scale), f.seconds)
                }
                Err(e) => {
                    log::warn!("{model} K={k_label} failed: {e}");
                    (Err(e.to_string()), 0.0)
                }
            };
            report.rows.push(Row { model: model.to_string(), k: k_label, scores, seconds });
        }
    }
    Ok(report)
}

fn to_scale(x: f64, j: usize, prep: &Prepared, scale: Scale) -> f64 {
    match scale {
        Scale::Standardized => x,
        Scale::Raw => x * prep.params.std[j] + prep.params.mean[j],
    }
}

/// Errors over the observed horizon cells of the test individuals.
pub(crate) fn score(pred: &[Vec<Vec<f64>>], prep: &Prepared, scale: Scale) -> std::result::Result<Scores, String> {
    let fut = &prep.test_future;
    let mut scores = Scores { rmse: Vec::new(), mae: Vec::new() };
    for j in 0..fut.n_dims() {
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for (i, pi) in pred.iter().enumerate() {
            for s in 0..fut.grid().len() {
                if fut.is_observed(i, j, s) {
                    p.push(to_scale(pi[j][s], j, prep, scale));
                    t.push(to_scale(fut.value(i, j, s), j, prep, scale));
                }
            }
        }
        let r = rmse(&p, &t).map_err(|e| format!("dimension {j}: {e}"))?;
        let m = mae(&p, &t).map_err(|e| format!("dimension {j}: {e}"))?;
        if !(r.is_finite() && m.is_finite()) {
            return Err(format!("dimension {j}: non-finite error"));
        }
        scores.rmse.push(r);
        scores.mae.push(m);
    }
    Ok(scores)
}

fn forecast_points(model: &str, k: &str, pred: &Predictions, prep: &Prepared, scale: Scale) -> Vec<ForecastPoint> {
    let fut = &prep.test_future;
    let mut out = Vec::new();
    for (i, pi) in pred.mean.iter().enumerate() {
        for j in 0..fut.n_dims() {
            for (s, &time) in fut.grid().points().iter().enumerate() {
                out.push(ForecastPoint {
                    model: model.to_string(),
                    k: k.to_string(),
                    individual: fut.individual_ids()[i].clone(),
                    dim: fut.dim_names()[j].clone(),
                    time_index: time,
                    mean: to_scale(pi[j][s], j, prep, scale),
                    interval: pred.interval.as_ref().map(|iv| {
                        let (lo, hi) = iv[i][j][s];
                        (to_scale(lo, j, prep, scale), to_scale(hi, j, prep, scale))
                    }),
                    truth: fut.is_observed(i, j, s).then(|| to_scale(fut.value(i, j, s), j, prep, scale)),
                });
            }
        }
    }
    out
}

fn naive_row(kind: NaivePredictorKind, prep: &Prepared) -> tsclust::Result<Fitted> {
    let (hist, f) = (&prep.test_history, prep.test_future.grid().len());
    let start = Instant::now();
    let mean = (0..hist.n_individuals())
        .map(|i| (0..hist.n_dims()).map(|j| naive_predict(kind, &hist.observed(i, j).1, f)).collect())
        .collect::<tsclust::Result<_>>()?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Fitted { pred: Predictions { mean, interval: None }, seconds, ari: Vec::new() })
}

fn magma_row(cfg: &ExperimentConfig, prep: &Prepared, k: usize, seed: u64) -> tsclust::Result<Fitted> {
    let (hist, target) = (&prep.test_history, prep.test_future.grid());
    let n = hist.n_individuals();
    let mut mean = vec![Vec::new(); n];
    let mut interval = vec![Vec::new(); n];
    let mut seconds = 0.0;
    let mut static_labels = Vec::new();
    let vem = VemConfig { max_iters: cfg.vem_max_iters, seed, ..VemConfig::default() };
    for j in 0..prep.train.n_dims() {
        let train_j = prep.train.select_dim(j)?;
        let start = Instant::now();
        let (model, _) = vem_fit(&train_j, k, &vem)?;
        seconds += start.elapsed().as_secs_f64();
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let (times, values) = hist.observed(i, j);
            let fc = model.predict(&times, &values, target)?;
            let (lo, hi) = fc.interval.clone().expect("GP forecasts carry intervals");
            interval[i].push(lo[0].iter().zip(&hi[0]).map(|(&a, &b)| (a, b)).collect());
            mean[i].push(fc.mean[0].clone());
            if let ClusterInfo::Static { label, .. } = fc.clusters {
                labels.push(label);
            }
        }
        static_labels.push(labels);
    }
    let mut entries = Vec::new();
    if let (Truth::Static(truth), [labels]) = (&prep.test_truth, static_labels.as_slice()) {
        if labels.len() >= 2 {
            let value = ari(&PartitionLabels(labels.clone()), truth)?;
            entries.push(AriEntry { model: String::new(), k: String::new(), against: "truth".into(), time_index: None, value });
        }
    }
    Ok(Fitted { pred: Predictions { mean, interval: Some(interval) }, seconds, ari: entries })
}

pub(crate) fn dgm2_config(cfg: &ExperimentConfig, seed: u64) -> Dgm2Config {
    Dgm2Config { hidden: cfg.hidden, gamma: cfg.gamma, epochs: cfg.epochs, seed, ..Dgm2Config::default() }
}

/// Soft forecasts `[individual][dim][step]` with intervals.
pub(crate) fn dgm2_forecasts(
    model: &tsclust::dgm2::Dgm2Model<f64>,
    hist: &TimeSeriesSet<f64>,
    horizon: usize,
) -> tsclust::Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<(f64, f64)>>>)> {
    let mut mean = Vec::with_capacity(hist.n_individuals());
    let mut interval = Vec::with_capacity(hist.n_individuals());
    for i in 0..hist.n_individuals() {
        let fc = model.forecast(&hist.individual(i), horizon, ForecastMode::Soft)?;
        let (lo, hi) = fc.interval.clone().expect("soft forecasts carry intervals");
        interval.push(lo.iter().zip(&hi).map(|(l, h)| l.iter().zip(h).map(|(&a, &b)| (a, b)).collect()).collect());
        mean.push(fc.mean);
    }
    Ok((mean, interval))
}

fn dgm2_row(cfg: &ExperimentConfig, prep: &Prepared, k: usize, seed: u64) -> tsclust::Result<Fitted> {
    let start = Instant::now();
    let (model, _) = train(&prep.train, k, &dgm2_config(cfg, seed))?;
    let seconds = start.elapsed().as_secs_f64();
    let (mean, interval) = dgm2_forecasts(&model, &prep.test_history, prep.test_future.grid().len())?;
    let mut entries = Vec::new();
    if let Truth::Dynamic(truth) = &prep.test_truth {
        if truth.len() >= 2 {
            let recovered = (0..prep.test_window.n_individuals())
                .map(|i| model.cluster_trajectory(&prep.test_window.individual(i)))
                .collect::<tsclust::Result<Vec<_>>>()?;
            entries = per_timestep_entries(&recovered, truth, prep.test_window.grid().points(), "truth")?;
        }
    }
    Ok(Fitted { pred: Predictions { mean, interval: Some(interval) }, seconds, ari: entries })
}

/// One entry per grid time plus the mean over time.
pub(crate) fn per_timestep_entries(
    a: &[tsclust::forecast::ClusterTrajectory<f64>],
    b: &[tsclust::forecast::ClusterTrajectory<f64>],
    times: &[i64],
    against: &str,
) -> tsclust::Result<Vec<AriEntry>> {
    let (series, mean) = per_timestep_ari(a, b)?;
    let entry = |time_index, value| AriEntry { model: String::new(), k: String::new(), against: against.into(), time_index, value };
    let mut out: Vec<AriEntry> = series.iter().zip(times).map(|(&v, &t)| entry(Some(t), v)).collect();
    out.push(entry(None, mean));
    Ok(out)
}
