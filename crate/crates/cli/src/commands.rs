use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sqf_core::domain::ForecastSample;
use sqf_core::eval::{
    diebold_mariano, evaluate, predict_ndvi, read_scatter_csv, write_scatter_csv, MetricReport, DEFAULT_DM_LAG,
};
use sqf_core::ingest::{
    generate_synthetic, read_groups_csv, read_pixels_csv, read_targets_csv, read_weather_csv, series_from_pixel_table,
    write_groups_csv, write_targets_csv, write_weather_csv,
};
use sqf_core::model::{load_checkpoint, Checkpoint, InputSwitches, Network};
use sqf_core::pipeline::{
    prepare_dataset, read_samples, scale_splits, schema_hash, write_samples, FeatureSchema, ScalerParams,
};
use sqf_core::train::{train, CheckpointSink, EpochRecord, TrainOutcome};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TRAIN_CACHE: &str = "train.sqf";
pub const VAL_CACHE: &str = "val.sqf";
pub const SCALER_FILE: &str = "scaler.json";
pub const PREPARE_STAMP: &str = "prepare.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.sqfm";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const FORECAST_FILE: &str = "forecast.csv";

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn expected_hash(cfg: &RunConfig) -> u64 {
    schema_hash(&FeatureSchema::standard(), cfg.samples.history_len, cfg.samples.horizon)
}

pub fn gen(cfg: &RunConfig) -> CliResult<()> {
    let d = generate_synthetic(&cfg.synthetic)?;
    write_targets_csv(cfg.targets_path(), &d.series)?;
    write_weather_csv(cfg.weather_path(), &d.weather)?;
    write_groups_csv(cfg.out("groups.csv"), &d.groups)?;
    log::info!("wrote {} synthetic cubes to {}", d.series.len(), cfg.paths.output_dir.display());
    Ok(())
}

pub struct Prepared {
    pub train: Vec<ForecastSample>,
    pub val: Vec<ForecastSample>,
    pub scaler: ScalerParams,
    pub hash: u64,
}

/// Inputs that determine the prepared caches.
fn prepare_stamp(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "targets": cfg.targets_path(),
        "weather": cfg.weather_path(),
        "pixels": cfg.paths.pixels,
        "samples": cfg.samples,
        "perturbation": cfg.perturbation,
        "split": cfg.split,
    })
}

pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let series = match &cfg.paths.pixels {
        Some(p) => series_from_pixel_table(&read_pixels_csv(p)?)?,
        None => read_targets_csv(cfg.targets_path())?,
    };
    let weather = read_weather_csv(cfg.weather_path())?;
    let samples = prepare_dataset(&series, &weather, &cfg.samples, &cfg.perturbation)?;
    let split = scale_splits(samples, &cfg.split)?;
    if split.val.is_empty() {
        return Err(CliError::data(format!("no samples fall in validation years {:?}", cfg.split.val_years)));
    }
    let hash = expected_hash(cfg);
    write_samples(cfg.out(TRAIN_CACHE), hash, &split.train)?;
    write_samples(cfg.out(VAL_CACHE), hash, &split.val)?;
    write_text(&cfg.out(SCALER_FILE), &serde_json::to_string_pretty(&split.scaler)?)?;
    write_text(&cfg.out(PREPARE_STAMP), &serde_json::to_string_pretty(&prepare_stamp(cfg))?)?;
    log::info!(
        "prepared {} training and {} validation samples (schema {hash:016x})",
        split.train.len(),
        split.val.len()
    );
    Ok(Prepared {
        train: split.train,
        val: split.val,
        scaler: split.scaler,
        hash,
    })
}

fn read_cache(path: &Path, expected: u64) -> CliResult<Vec<ForecastSample>> {
    let (header, samples) = read_samples(path).map_err(|e| CliError::from(e).context(path.display()))?;
    if header.schema_hash != expected {
        return Err(CliError::data(format!(
            "{}: schema hash {:016x} does not match the configured {expected:016x}",
            path.display(),
            header.schema_hash
        )));
    }
    Ok(samples)
}

/// Reuses caches written by `prepare` for the same inputs, otherwise
/// prepares afresh.
pub fn load_or_prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let stamp_ok = std::fs::read_to_string(cfg.out(PREPARE_STAMP))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .is_some_and(|s| s == prepare_stamp(cfg));
    if !stamp_ok {
        return prepare(cfg);
    }
    let hash = expected_hash(cfg);
    let scaler: ScalerParams = serde_json::from_str(
        &std::fs::read_to_string(cfg.out(SCALER_FILE)).map_err(|e| CliError::data(format!("{SCALER_FILE}: {e}")))?,
    )?;
    Ok(Prepared {
        train: read_cache(&cfg.out(TRAIN_CACHE), hash)?,
        val: read_cache(&cfg.out(VAL_CACHE), hash)?,
        scaler,
        hash,
    })
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(EpochRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn run_training(cfg: &RunConfig) -> CliResult<TrainOutcome<f64>> {
    let data = load_or_prepare(cfg)?;
    let net = Network::<f64>::new(cfg.model.clone(), cfg.init_seed)?;
    log::info!("training {} parameters", net.parameter_count());
    let sink = CheckpointSink {
        path: cfg.out(CHECKPOINT_FILE),
        scaler: data.scaler.clone(),
        schema_hash: data.hash,
        metadata: json!({ "train": cfg.train, "init_seed": cfg.init_seed }),
    };
    let outcome = train(net, &data.train, &data.val, &cfg.train, Some(&sink))?;
    write_text(&cfg.out(HISTORY_FILE), &history_csv(&outcome.history))?;
    if let Some(e) = &outcome.aborted {
        return Err(CliError::numeric(format!(
            "training aborted: {e}; {} keeps the parameters of epoch {}",
            CHECKPOINT_FILE, outcome.best_epoch
        )));
    }
    log::info!(
        "best validation loss {:.6} at epoch {}",
        outcome.best_val_loss,
        outcome.best_epoch
    );
    Ok(outcome)
}

fn load_groups(cfg: &RunConfig) -> CliResult<Option<BTreeMap<String, String>>> {
    cfg.groups_path().map(|p| read_groups_csv(p).map_err(CliError::from)).transpose()
}

fn open_checkpoint(cfg: &RunConfig, path: Option<&Path>) -> CliResult<Checkpoint<f64>> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out(CHECKPOINT_FILE));
    let mut ck = load_checkpoint::<f64>(&path).map_err(|e| CliError::from(e).context(path.display()))?;
    ck.network.config.quantile_sort |= cfg.model.quantile_sort;
    Ok(ck)
}

fn open_samples(cfg: &RunConfig, path: Option<&Path>) -> CliResult<(u64, Vec<ForecastSample>)> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out(VAL_CACHE));
    let (header, samples) = read_samples(&path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok((header.schema_hash, samples))
}

pub fn run_evaluation(cfg: &RunConfig, checkpoint: Option<&Path>, samples: Option<&Path>) -> CliResult<MetricReport> {
    let ck = open_checkpoint(cfg, checkpoint)?;
    let (hash, samples) = open_samples(cfg, samples)?;
    let groups = load_groups(cfg)?;
    let e = evaluate(&ck, &samples, hash, groups.as_ref(), cfg.eval.batch_size)?;
    write_text(&cfg.out(METRICS_FILE), &serde_json::to_string_pretty(&e.report)?)?;
    write_scatter_csv(cfg.out(SCATTER_FILE), &e.scatter)?;
    log::info!(
        "RMSE {:.4} (persistence {:.4}), CRPS {:.4}, coverage {:.1}%",
        e.report.rmse,
        e.report.persistence.rmse,
        e.report.crps,
        100.0 * e.report.coverage_80
    );
    Ok(e.report)
}

pub fn forecast(cfg: &RunConfig, checkpoint: Option<&Path>, samples: Option<&Path>) -> CliResult<PathBuf> {
    let ck = open_checkpoint(cfg, checkpoint)?;
    let (hash, samples) = open_samples(cfg, samples)?;
    if hash != ck.schema_hash {
        return Err(CliError::data(format!(
            "schema mismatch: checkpoint has {:016x}, samples have {hash:016x}",
            ck.schema_hash
        )));
    }
    let preds = predict_ndvi(&ck, &samples, cfg.eval.batch_size)?;
    let mut out = String::from("cube_id,target_date,delta_days,q10,q50,q90\n");
    for (s, p) in samples.iter().zip(&preds) {
        for (k, row) in p.values.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.cube_id, s.target_days[k], s.delta_days[k], row[0], row[1], row[2]
            );
        }
    }
    let path = cfg.out(FORECAST_FILE);
    write_text(&path, &out)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: u8,
    pub temporal_weights: bool,
    pub feature_engineering: bool,
    pub future: bool,
    pub history: bool,
    pub target: bool,
    pub rmse: f64,
    pub mae: f64,
    pub wmape: Option<f64>,
    pub mase: Option<f64>,
    pub crps: f64,
    pub mean_pinball: f64,
    pub coverage_80: f64,
    pub best_val_loss: f64,
}

const ABLATION_HEADER: &str = "table,temporal_weights,feature_engineering,future,history,target,rmse,mae,wmape,mase,crps,mean_pinball,coverage_80,best_val_loss";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AblationRow {
    fn csv(&self) -> String {
        let b = |x: bool| if x { "1" } else { "0" };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.table,
            b(self.temporal_weights),
            b(self.feature_engineering),
            b(self.future),
            b(self.history),
            b(self.target),
            self.rmse,
            self.mae,
            opt(self.wmape),
            opt(self.mase),
            self.crps,
            self.mean_pinball,
            self.coverage_80,
            self.best_val_loss
        )
    }
}

/// Configurations of one ablation table, as `(temporal weights, inputs)`.
pub fn ablation_grid(table: u8) -> CliResult<Vec<(bool, InputSwitches)>> {
    let inputs = |future, history, target, feature_engineering| InputSwitches {
        future,
        history,
        target,
        feature_engineering,
    };
    match table {
        2 => Ok(vec![
            (false, inputs(true, true, true, false)),
            (true, inputs(true, true, true, false)),
            (false, inputs(true, true, true, true)),
            (true, inputs(true, true, true, true)),
        ]),
        3 => Ok([
            (false, true, true),
            (true, true, false),
            (true, false, true),
            (false, false, true),
            (false, true, false),
            (true, false, false),
            (true, true, true),
        ]
        .into_iter()
        .map(|(f, h, t)| (true, inputs(f, h, t, true)))
        .collect()),
        other => Err(CliError::config(format!("--table must be 2 or 3, got {other}"))),
    }
}

pub fn ablate(cfg: &RunConfig, table: u8) -> CliResult<Vec<AblationRow>> {
    let grid = ablation_grid(table)?;
    let data = load_or_prepare(cfg)?;
    let groups = load_groups(cfg)?;
    let mut rows = Vec::new();
    for (temporal, inputs) in grid {
        let mut model = cfg.model.clone();
        model.inputs = inputs;
        let mut tc = cfg.train.clone();
        tc.use_temporal_weights = temporal;
        log::info!("ablation table {table}: temporal weights {temporal}, inputs {inputs:?}");
        let net = Network::<f64>::new(model, cfg.init_seed)?;
        let out = train(net, &data.train, &data.val, &tc, None)?;
        if let Some(e) = out.aborted {
            return Err(CliError::numeric(format!("ablation run {inputs:?} aborted: {e}")));
        }
        let ck = Checkpoint {
            network: out.best,
            scaler: data.scaler.clone(),
            schema_hash: data.hash,
            metadata: serde_json::Value::Null,
        };
        let r = evaluate(&ck, &data.val, data.hash, groups.as_ref(), cfg.eval.batch_size)?.report;
        rows.push(AblationRow {
            table,
            temporal_weights: temporal,
            feature_engineering: inputs.feature_engineering,
            future: inputs.future,
            history: inputs.history,
            target: inputs.target,
            rmse: r.rmse,
            mae: r.mae,
            wmape: r.wmape,
            mase: r.mase.value,
            crps: r.crps,
            mean_pinball: r.mean_pinball,
            coverage_80: r.coverage_80,
            best_val_loss: out.best_val_loss,
        });
    }
    let mut text = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    write_text(&cfg.out(ABLATION_FILE), &text)?;
    Ok(rows)
}

fn read_metrics(dir: &Path) -> CliResult<MetricReport> {
    let path = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Collects the metric reports of run directories into one summary, plus a
/// Diebold-Mariano comparison of two runs' squared median errors.
pub fn report(cfg: &RunConfig, runs: &[PathBuf], compare: Option<(&Path, &Path)>) -> CliResult<String> {
    let mut summary = serde_json::Map::new();
    let mut table = String::from("run                          rmse     mae      crps     pinball  coverage\n");
    for dir in runs {
        let m = read_metrics(dir)?;
        let _ = writeln!(
            table,
            "{:<28} {:<8.4} {:<8.4} {:<8.4} {:<8.4} {:.1}%",
            dir.display(),
            m.rmse,
            m.mae,
            m.crps,
            m.mean_pinball,
            100.0 * m.coverage_80
        );
        let mut entry = json!({ "metrics": m });
        let ablation = dir.join(ABLATION_FILE);
        if ablation.exists() {
            entry["ablation_csv"] = json!(std::fs::read_to_string(&ablation)?);
        }
        summary.insert(dir.display().to_string(), entry);
    }
    let mut doc = json!({ "runs": summary });
    if let Some((a, b)) = compare {
        let ra = read_scatter_csv(a.join(SCATTER_FILE))?;
        let rb = read_scatter_csv(b.join(SCATTER_FILE))?;
        if ra.len() != rb.len() || ra.iter().zip(&rb).any(|(x, y)| x.truth != y.truth) {
            return Err(CliError::data(format!(
                "{} and {} were not evaluated on the same samples",
                a.display(),
                b.display()
            )));
        }
        let se = |rows: &[sqf_core::eval::ScatterRow]| -> Vec<f64> {
            rows.iter().map(|r| (r.truth - r.prediction).powi(2)).collect()
        };
        let dm = diebold_mariano(&se(&ra), &se(&rb), DEFAULT_DM_LAG)?;
        let _ = writeln!(
            table,
            "Diebold-Mariano {} vs {}: statistic {}, p-value {}",
            a.display(),
            b.display(),
            dm.statistic.map(|s| format!("{s:.4}")).unwrap_or_else(|| "undefined".into()),
            dm.p_value.map(|s| format!("{s:.4}")).unwrap_or_else(|| "undefined".into())
        );
        doc["comparison"] = json!({ "a": a, "b": b, "loss": "squared median error", "lag": DEFAULT_DM_LAG, "dm": dm });
    }
    write_text(&cfg.out("report.json"), &serde_json::to_string_pretty(&doc)?)?;
    Ok(table)
}
