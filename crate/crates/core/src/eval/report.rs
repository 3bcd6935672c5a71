use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dm::{diebold_mariano, DieboldMariano, DEFAULT_DM_LAG};
use super::metrics::{
    crps_from_quantiles, interval_coverage, mase, mean_bias, mean_pinball, point_metrics, r_squared, sample_mase,
    MaseSummary,
};
use super::{EvalError, Result};
use crate::domain::{ForecastSample, QuantilePrediction};
use crate::model::Checkpoint;
use crate::pipeline::{NeumaierSum, TARGET_CHANNEL};
use crate::Scalar;

/// Note stored with every report next to the CRPS value.
pub const CRPS_NOTE: &str = "approximate: twice the mean pinball loss over quantile levels 0.1, 0.5, 0.9";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub crps: f64,
    pub mean_pinball: f64,
    pub coverage_80: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub bias: f64,
    pub crps: f64,
    pub coverage_80: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub wmape: Option<f64>,
    pub mase: MaseSummary,
}

/// Metrics over every (sample, horizon step) pair in NDVI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub n_pairs: usize,
    pub rmse: f64,
    pub mae: f64,
    pub wmape: Option<f64>,
    pub wmape_undefined: bool,
    pub mase: MaseSummary,
    pub crps: f64,
    pub crps_note: String,
    pub mean_pinball: f64,
    /// Share of truths inside the `[q10, q90]` band.
    pub coverage_80: f64,
    pub r2: Option<f64>,
    pub bias: f64,
    /// Share of rows whose quantiles are not non-decreasing.
    pub crossing_rate: f64,
    pub per_step: Vec<StepMetrics>,
    pub groups: BTreeMap<String, GroupMetrics>,
    /// Mean per-sample MASE of each cube.
    pub per_cube_mase: BTreeMap<String, f64>,
    /// Last observed history NDVI carried forward.
    pub persistence: BaselineMetrics,
    /// Squared median error of the model against squared persistence error.
    pub dm_vs_persistence: Option<DieboldMariano>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub truth: f64,
    pub prediction: f64,
    pub group: String,
    pub delta_days: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub scatter: Vec<ScatterRow>,
}

fn group_of<'a>(groups: Option<&'a BTreeMap<String, String>>, cube: &str) -> &'a str {
    match groups {
        None => "all",
        Some(m) => m.get(cube).map(String::as_str).unwrap_or("unknown"),
    }
}

fn slice_metrics(y: &[f64], q: &[[f64; 3]]) -> (f64, f64, f64, f64, f64) {
    let med: Vec<f64> = q.iter().map(|r| r[1]).collect();
    let pm = point_metrics(y, &med);
    let crps: NeumaierSum = y.iter().zip(q).map(|(&t, r)| crps_from_quantiles(t, r)).collect();
    (
        pm.rmse,
        pm.mae,
        crps.value() / y.len() as f64,
        mean_pinball(y, q),
        interval_coverage(y, q),
    )
}

/// Scores predictions already expressed in NDVI units.
pub fn evaluate_predictions(
    predictions: &[QuantilePrediction<f64>],
    samples: &[ForecastSample],
    groups: Option<&BTreeMap<String, String>>,
) -> Result<Evaluation> {
    if predictions.len() != samples.len() {
        return Err(EvalError::Argument(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    if samples.is_empty() {
        return Err(EvalError::Argument("nothing to evaluate".into()));
    }
    let mut y = Vec::new();
    let mut q = Vec::new();
    let mut steps = Vec::new();
    let mut persistence = Vec::new();
    let mut scatter = Vec::new();
    let mut by_group: BTreeMap<&str, (Vec<f64>, Vec<[f64; 3]>)> = BTreeMap::new();
    let mut cube_mase: BTreeMap<&str, NeumaierSum> = BTreeMap::new();
    let mut cube_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut histories = Vec::with_capacity(samples.len());
    let mut medians = Vec::with_capacity(samples.len());
    let mut carried = Vec::with_capacity(samples.len());

    for (p, s) in predictions.iter().zip(samples) {
        if p.horizon() != s.horizon() {
            return Err(EvalError::Argument(format!(
                "prediction horizon {} for a sample of horizon {}",
                p.horizon(),
                s.horizon()
            )));
        }
        let last = s.last_observed_ndvi().ok_or_else(|| {
            EvalError::Argument(format!("sample of {} has no observed history", s.cube_id))
        })?;
        let group = group_of(groups, &s.cube_id);
        let history: Vec<f64> = s.history_ndvi.iter().flatten().copied().collect();
        let median: Vec<f64> = p.values.iter().map(|r| r[1]).collect();
        if let Some(m) = sample_mase(&s.raw_targets, &median, &history) {
            cube_mase.entry(&s.cube_id).or_default().add(m);
            *cube_counts.entry(&s.cube_id).or_default() += 1;
        }
        for (k, row) in p.values.iter().enumerate() {
            let t = s.raw_targets[k];
            y.push(t);
            q.push(*row);
            steps.push(k);
            persistence.push(last);
            scatter.push(ScatterRow {
                truth: t,
                prediction: row[1],
                group: group.to_string(),
                delta_days: s.delta_days[k],
            });
            let e = by_group.entry(group).or_default();
            e.0.push(t);
            e.1.push(*row);
        }
        histories.push(history);
        medians.push(median);
        carried.push(vec![last; s.horizon()]);
    }

    let med: Vec<f64> = q.iter().map(|r| r[1]).collect();
    let pm = point_metrics(&y, &med);
    let (_, _, crps, pinball, coverage) = slice_metrics(&y, &q);
    let horizon = samples.iter().map(|s| s.horizon()).max().unwrap_or(0);
    let per_step = (0..horizon)
        .filter_map(|k| {
            let idx: Vec<usize> = (0..y.len()).filter(|&i| steps[i] == k).collect();
            if idx.is_empty() {
                return None;
            }
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let qs: Vec<[f64; 3]> = idx.iter().map(|&i| q[i]).collect();
            let (rmse, mae, crps, mean_pinball, coverage_80) = slice_metrics(&ys, &qs);
            Some(StepMetrics {
                step: k + 1,
                n: ys.len(),
                rmse,
                mae,
                crps,
                mean_pinball,
                coverage_80,
            })
        })
        .collect();
    let groups = by_group
        .into_iter()
        .map(|(name, (ys, qs))| {
            let meds: Vec<f64> = qs.iter().map(|r| r[1]).collect();
            let (rmse, mae, crps, _, coverage_80) = slice_metrics(&ys, &qs);
            (
                name.to_string(),
                GroupMetrics {
                    n: ys.len(),
                    rmse,
                    mae,
                    r2: r_squared(&ys, &meds),
                    bias: mean_bias(&ys, &meds),
                    crps,
                    coverage_80,
                },
            )
        })
        .collect();
    let per_cube_mase = cube_mase
        .into_iter()
        .map(|(c, s)| (c.to_string(), s.value() / cube_counts[c] as f64))
        .collect();
    let rows = |preds: &'_ [Vec<f64>]| -> MaseSummary {
        mase(
            samples
                .iter()
                .zip(preds)
                .zip(&histories)
                .map(|((s, p), h)| (s.raw_targets.as_slice(), p.as_slice(), h.as_slice())),
        )
    };
    let baseline = point_metrics(&y, &persistence);
    let model_se: Vec<f64> = y.iter().zip(&med).map(|(a, b)| (a - b).powi(2)).collect();
    let base_se: Vec<f64> = y.iter().zip(&persistence).map(|(a, b)| (a - b).powi(2)).collect();
    let crossing = q.iter().filter(|r| !(r[0] <= r[1] && r[1] <= r[2])).count();

    let report = MetricReport {
        n_samples: samples.len(),
        n_pairs: y.len(),
        rmse: pm.rmse,
        mae: pm.mae,
        wmape: pm.wmape,
        wmape_undefined: pm.wmape.is_none(),
        mase: rows(&medians),
        crps,
        crps_note: CRPS_NOTE.to_string(),
        mean_pinball: pinball,
        coverage_80: coverage,
        r2: r_squared(&y, &med),
        bias: mean_bias(&y, &med),
        crossing_rate: crossing as f64 / q.len() as f64,
        per_step,
        groups,
        per_cube_mase,
        persistence: BaselineMetrics {
            rmse: baseline.rmse,
            mae: baseline.mae,
            wmape: baseline.wmape,
            mase: rows(&carried),
        },
        dm_vs_persistence: diebold_mariano(&model_se, &base_se, DEFAULT_DM_LAG).ok(),
    };
    Ok(Evaluation { report, scatter })
}

/// Predicts scaled samples with a checkpoint, maps quantiles back to NDVI
/// units and scores them.
pub fn evaluate<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    samples: &[ForecastSample],
    samples_hash: u64,
    groups: Option<&BTreeMap<String, String>>,
    batch_size: usize,
) -> Result<Evaluation> {
    if checkpoint.schema_hash != samples_hash {
        return Err(EvalError::SchemaMismatch {
            checkpoint: checkpoint.schema_hash,
            samples: samples_hash,
        });
    }
    if let Some(s) = samples.iter().find(|s| !s.scaled) {
        return Err(EvalError::Argument(format!("sample of {} is not scaled", s.cube_id)));
    }
    let raw = predict_ndvi(checkpoint, samples, batch_size)?;
    evaluate_predictions(&raw, samples, groups)
}

/// Quantile predictions in NDVI units.
pub fn predict_ndvi<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    samples: &[ForecastSample],
    batch_size: usize,
) -> Result<Vec<QuantilePrediction<f64>>> {
    let target = checkpoint
        .scaler
        .variables
        .get(TARGET_CHANNEL)
        .ok_or_else(|| EvalError::Argument("checkpoint scaler has no target variable".into()))?;
    let scaled = checkpoint.network.predict(samples, batch_size)?;
    Ok(scaled.iter().map(|p| p.map(|v| target.invert(v.as_f64()))).collect())
}

pub fn write_scatter_csv(path: impl AsRef<Path>, rows: &[ScatterRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter_csv(path: impl AsRef<Path>) -> Result<Vec<ScatterRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
