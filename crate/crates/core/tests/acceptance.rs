//! Acceptance criteria. Every test writes one `PASS`/`FAIL` line straight to
//! stderr so the verdicts show up without `--nocapture`.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqf_core::autodiff::{check_gradients, GradCheckOptions, Graph, Tensor, Var};
use sqf_core::domain::{DailyWeather, ForecastSample, ObsPoint, ObservationSeries, QuantilePrediction, TimeStamp, WeatherRow};
use sqf_core::eval::{
    crps_from_quantiles, diebold_mariano, evaluate, mean_pinball, point_metrics, sample_mase, MetricReport,
};
use sqf_core::ingest::{generate_synthetic, SyntheticConfig, SyntheticDataset};
use sqf_core::model::{
    count_parameters, estimate_flops, Batch, Checkpoint, InputSwitches, Mode, ModelConfig, Network,
};
use sqf_core::pipeline::{
    engineered_features, generate_windows, interpolate_gaps, prepare_dataset, scale_splits, schema_hash,
    FeatureSchema, PerturbationConfig, PreparedSplits, SampleConfig, YearSplit,
};
use sqf_core::train::{batch_loss, loss_and_grad, pinball, temporal_weight, train, LossWeights, TrainConfig};

fn verdict(id: u32, pass: bool, detail: &str) {
    let line = format!("{} criterion {id}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- criterion 1

fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 12,
        dropout: 0.1,
        ..Default::default()
    }
}

fn small_samples(n_cubes: usize, seed: u64) -> Vec<ForecastSample> {
    let d = generate_synthetic(&SyntheticConfig {
        n_cubes,
        rng_seed: seed,
        ..Default::default()
    })
    .unwrap();
    let s = prepare_dataset(&d.series, &d.weather, &SampleConfig::default(), &PerturbationConfig::default()).unwrap();
    scale_splits(
        s,
        &YearSplit {
            train_years: vec![2017, 2018, 2019, 2020],
            val_years: vec![1900],
        },
    )
    .unwrap()
    .train
}

/// Largest relative gradient error of the full training loss for one seed.
fn full_model_gradient_error(seed: u64, pool: &[ForecastSample]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::<f64>::new(gradcheck_config(), seed).unwrap();
    let pair: Vec<&ForecastSample> = (0..2).map(|_| &pool[rng.random_range(0..pool.len())]).collect();
    let mut batch = Batch::from_samples(&pair, &net.config).unwrap();
    let mode = Mode::Train { seed };
    // keep every residual well away from the pinball kink so that central
    // differences see a smooth function
    let mut g = Graph::new();
    let out = net.forward(&mut g, &batch, mode).unwrap().output;
    let values = g.value(out).to_vec();
    for (i, t) in batch.targets.iter_mut().enumerate() {
        let row = &values[3 * i..3 * i + 3];
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let base = if sign > 0.0 { row.iter().cloned().fold(f64::MIN, f64::max) } else { row.iter().cloned().fold(f64::MAX, f64::min) };
        *t = base + sign * rng.random_range(0.2..1.0);
    }
    let inputs: Vec<Tensor<f64>> = net
        .store
        .params
        .iter()
        .map(|p| Tensor::new(p.shape.clone(), p.data.clone()).unwrap())
        .collect();
    let f = |g: &mut Graph<f64>, vars: &[Var]| {
        let out = net.forward_with(g, &batch, mode, vars).map_err(|e| match e {
            sqf_core::model::ModelError::Autodiff(a) => a,
            other => panic!("{other}"),
        })?;
        let (loss, grad) = loss_and_grad(g.value(out), &batch.targets, &batch.delta_days, LossWeights::default());
        g.attach_loss(out, loss, grad)
    };
    let opts = GradCheckOptions::new(1e-3, 1e-3);
    let report = sqf_core::autodiff::check_gradients_with(f, &inputs, opts).unwrap();
    report.max_rel_error
}

#[test]
fn criterion_01_gradient_fidelity() {
    let start = Instant::now();
    let pool = small_samples(8, 3);
    let worst = (0..20u64).map(|s| full_model_gradient_error(s, &pool)).fold(0.0, f64::max);

    // per-op checks
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = |shape: &[usize]| Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0));
    let (a, b, c, gamma) = (t(&[2, 3, 4]), t(&[4, 5]), t(&[2, 3, 4]), t(&[4]));
    let mut op_worst: f64 = 0.0;
    let mut op = |f: &dyn Fn(&mut Graph<f64>, &[Var]) -> sqf_core::autodiff::Result<Var>, inputs: &[Tensor<f64>]| {
        let r = check_gradients(f, inputs, 1e-5, 1e-4).unwrap();
        op_worst = op_worst.max(r.max_rel_error);
    };
    op(&|g, v| { let m = g.matmul(v[0], v[1])?; g.sum_all(m) }, &[a.clone(), b]);
    op(&|g, v| { let s = g.softmax(v[0])?; let m = g.mul(s, v[1])?; g.sum_all(m) }, &[a.clone(), c.clone()]);
    op(&|g, v| { let s = g.layer_norm(v[0])?; let m = g.mul(s, v[1])?; let m = g.mul(m, v[2])?; g.sum_all(m) }, &[a.clone(), gamma, c.clone()]);
    op(&|g, v| { let p = g.permute(v[0], &[0, 2, 1])?; let r = g.reshape(p, vec![6, 4])?; let s = g.gather(r, &[5, 0, 0, 3], 0)?; let s = g.mul(s, s)?; g.sum_all(s) }, &[a.clone()]);
    op(&|g, v| { let m = g.mean(v[0], 1)?; let m = g.mul(m, m)?; g.sum_all(m) }, &[a.clone()]);
    op(&|g, v| { let k = g.concat(&[v[0], v[1]], 2)?; let k = g.mul(k, k)?; g.sum_all(k) }, &[a, c]);

    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-3 && op_worst < 1e-4 && secs < 120.0;
    verdict(
        1,
        pass,
        &format!("full-model max rel error {worst:.2e} over 20 seeds, per-op {op_worst:.2e}, {secs:.1} s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

/// Day-by-day accumulation over `(from, to]`.
fn day_loop(rows: &[WeatherRow], start: i64, from: i64, to: i64) -> [f64; 3] {
    let (mut rain, mut cold, mut hot) = (0.0, 0.0, 0.0);
    let mut day = from + 1;
    while day <= to {
        let r = &rows[(day - start) as usize];
        rain += r.rainfall;
        if r.temperature < 10.0 {
            cold += 1.0;
        }
        if r.temperature > 30.0 {
            hot += 1.0;
        }
        day += 1;
    }
    [rain, cold, hot]
}

#[test]
fn criterion_02_feature_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum: f64 = 0.0;
    let mut counts_exact = true;
    for _ in 0..1000 {
        let n = rng.random_range(30..120);
        let first = rng.random_range(17_000..19_000i64);
        let rows: Vec<WeatherRow> = (0..n)
            .map(|_| WeatherRow {
                rainfall: if rng.random_bool(0.6) { 0.0 } else { rng.random_range(0.0..40.0) },
                temperature: rng.random_range(-15.0..45.0),
                humidity: rng.random_range(0.0..100.0),
                ..WeatherRow::default()
            })
            .collect();
        let w = DailyWeather::new("c", TimeStamp::from_day(first), rows.clone());
        let at = first + rng.random_range(14..n as i64);
        let prev = if rng.random_bool(0.9) { Some(at - rng.random_range(1..=(at - first + 1))) } else { None };
        let (f, valid) = engineered_features(&w, prev.map(TimeStamp::from_day), TimeStamp::from_day(at)).unwrap();
        let mut expected = [0.0; 9];
        if let Some(p) = prev {
            expected[..3].copy_from_slice(&day_loop(&rows, first, p, at));
        }
        expected[3..6].copy_from_slice(&day_loop(&rows, first, at - 7, at));
        expected[6..9].copy_from_slice(&day_loop(&rows, first, at - 14, at));
        assert_eq!(valid, prev.is_some());
        for k in 0..9 {
            if k % 3 == 0 {
                worst_sum = worst_sum.max((f[k] - expected[k]).abs());
            } else {
                counts_exact &= f[k] == expected[k];
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = counts_exact && worst_sum <= 1e-12 && secs < 10.0;
    verdict(
        2,
        pass,
        &format!("1000 instances, counts exact: {counts_exact}, max sum error {worst_sum:.1e}, {secs:.2} s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_interpolation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = true;
    for _ in 0..1000 {
        let t0 = rng.random_range(0..10_000i64);
        let t1 = t0 + rng.random_range(2..60);
        let t = rng.random_range(t0 + 1..t1);
        let (y0, y1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let s = ObservationSeries::new(
            "c",
            vec![
                ObsPoint::observed(TimeStamp::from_day(t0), y0),
                ObsPoint::cloudy(TimeStamp::from_day(t)),
                ObsPoint::observed(TimeStamp::from_day(t1), y1),
            ],
        );
        let out = interpolate_gaps(&s).unwrap();
        let (t0f, t1f, tf) = (t0 as f64, t1 as f64, t as f64);
        exact &= out.points[1].value == Some(y0 + (tf - t0f) / (t1f - t0f) * (y1 - y0));
        exact &= out.points[0].value == Some(y0) && out.points[2].value == Some(y1);
    }

    // random series with cloudy runs at both ends
    let mut untouched = true;
    let mut boundary_excluded = true;
    for _ in 0..100 {
        let n = rng.random_range(12..40);
        let lead = rng.random_range(1..4);
        let trail = rng.random_range(1..4);
        let points: Vec<ObsPoint> = (0..n)
            .map(|i| {
                let day = TimeStamp::from_day(18_000 + 5 * i as i64);
                let inner = i >= lead && i < n - trail;
                if inner && (i == lead || i == n - trail - 1 || rng.random_bool(0.7)) {
                    ObsPoint::observed(day, rng.random_range(0.0..1.0))
                } else {
                    ObsPoint::cloudy(day)
                }
            })
            .collect();
        let s = ObservationSeries::new("c", points);
        let filled = interpolate_gaps(&s).unwrap();
        for (a, b) in s.points.iter().zip(&filled.points) {
            if a.observed {
                untouched &= a == b;
            }
        }
        for w in generate_windows(&filled, 3, 3, 1).unwrap() {
            boundary_excluded &= w.start >= lead && w.end() <= n - trail;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = exact && untouched && boundary_excluded && secs < 5.0;
    verdict(
        3,
        pass,
        &format!("exact: {exact}, observed untouched: {untouched}, boundary excluded: {boundary_excluded}, {secs:.2} s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_loss_and_weights() {
    let mut ok = pinball(1.0, 0.0, 0.5) == 0.5
        && pinball(0.0_f64, 1.0, 0.9) == 1.0 - 0.9
        && pinball(0.4, 0.4, 0.1) == 0.0
        && temporal_weight(0.0, 0.5) == 1.0
        && temporal_weight(2.0, 0.5) == 0.5
        && temporal_weight(10.0, 0.5) == 1.0 / 6.0;
    let w: Vec<f64> = [5.0, 10.0, 15.0].iter().map(|&d| temporal_weight(d, 0.5)).collect();
    ok &= w == [2.0 / 7.0, 1.0 / 6.0, 2.0 / 17.0];

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..64);
        let out: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(1..40) as f64).collect();
        for weights in [LossWeights::default(), LossWeights::UNIFORM] {
            let preds: Vec<QuantilePrediction<f64>> =
                out.chunks(3).map(|r| QuantilePrediction::new(vec![[r[0], r[1], r[2]]])).collect();
            let samples: Vec<ForecastSample> = y
                .iter()
                .zip(&d)
                .map(|(&t, &dd)| one_step_sample(t, dd))
                .collect();
            let l: f64 = batch_loss(&preds, &samples, weights);
            let mut sum = 0.0;
            for i in 0..n {
                let wk = if weights.temporal { 1.0 / (1.0 + 0.5 * d[i]) } else { 1.0 };
                for (k, q) in [0.1, 0.5, 0.9].iter().enumerate() {
                    let r = y[i] - out[3 * i + k];
                    sum += wk * if r >= 0.0 { q * r } else { (1.0 - q) * -r };
                }
            }
            worst = worst.max((l - sum / (3 * n) as f64).abs());
        }
    }
    let pass = ok && worst <= 1e-12;
    verdict(4, pass, &format!("unit examples exact: {ok}, batch_loss vs scalar loop {worst:.1e}"));
    assert!(pass);
}

fn one_step_sample(target: f64, delta: f64) -> ForecastSample {
    ForecastSample {
        cube_id: "c".into(),
        history_width: 22,
        future_width: 21,
        history_tokens: vec![0.0; 22],
        history_mask: vec![true],
        future_tokens: vec![0.0; 21],
        future_mask: vec![true],
        selection_indices: vec![0],
        targets: vec![target],
        raw_targets: vec![target],
        history_ndvi: vec![Some(0.0)],
        target_days: vec![TimeStamp::from_day(delta as i64)],
        last_history_day: TimeStamp::from_day(0),
        delta_days: vec![delta],
        history_bt_valid: vec![true],
        scaled: true,
    }
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_masking() {
    let d = generate_synthetic(&SyntheticConfig {
        n_cubes: 24,
        cloud_probability: 0.45,
        ..Default::default()
    })
    .unwrap();
    let cfg = SampleConfig {
        interpolate: false,
        ..Default::default()
    };
    let samples = prepare_dataset(&d.series, &d.weather, &cfg, &PerturbationConfig::default()).unwrap();
    let prepared = scale_splits(
        samples,
        &YearSplit {
            train_years: vec![2017, 2018, 2019, 2020],
            val_years: vec![1900],
        },
    )
    .unwrap();
    let masked: Vec<ForecastSample> =
        prepared.train.into_iter().filter(|s| s.history_mask.iter().any(|m| !m)).collect();
    let net = Network::<f64>::new(
        ModelConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 64,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let before = net.predict(&masked, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut perturbed = masked.clone();
    for s in &mut perturbed {
        let w = s.history_width;
        for j in 0..s.history_len() {
            if !s.history_mask[j] {
                for v in &mut s.history_tokens[j * w..(j + 1) * w] {
                    *v += rng.random_range(-10.0..10.0);
                }
            }
        }
    }
    let after = net.predict(&perturbed, 16).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in before.iter().zip(&after) {
        for (r, q) in a.values.iter().zip(&b.values) {
            for k in 0..3 {
                worst = worst.max((r[k] - q[k]).abs());
            }
        }
    }
    let pass = !masked.is_empty() && worst <= 1e-9;
    verdict(5, pass, &format!("{} samples with masked history, max output change {worst:.1e}", masked.len()));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_parameter_count() {
    let schema = FeatureSchema::standard();
    let cfg = ModelConfig {
        d_model: 128,
        n_layers: 8,
        n_heads: 8,
        ffn_dim: 512,
        history_width: schema.history_width(),
        future_width: schema.future_width(),
        ..Default::default()
    };
    let params = count_parameters(&cfg);
    let flops = estimate_flops(&cfg, 1);
    let p_dev = params as f64 / 2.16e6 - 1.0;
    let f_dev = flops as f64 / 112.0e6 - 1.0;
    let pass = p_dev.abs() <= 0.15 && f_dev.abs() <= 0.25;
    verdict(
        6,
        pass,
        &format!(
            "{params} parameters ({:+.1}% vs 2.16 M, limit 15%), {:.1} MFLOPs ({:+.1}% vs 112.0, limit 25%)",
            100.0 * p_dev,
            flops as f64 / 1e6,
            100.0 * f_dev
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------- criteria 7, 8

fn reduced_model(inputs: InputSwitches) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        ffn_dim: 64,
        dropout: 0.1,
        inputs,
        ..Default::default()
    }
}

fn reduced_training() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 32,
        lr: 1e-3,
        lr_min: 1e-4,
        rng_seed: 7,
        ..Default::default()
    }
}

fn synthetic() -> &'static (SyntheticDataset, PreparedSplits) {
    static DATA: OnceLock<(SyntheticDataset, PreparedSplits)> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = SyntheticConfig::default();
        assert!(cfg.n_cubes >= 200);
        let d = generate_synthetic(&cfg).unwrap();
        let s = prepare_dataset(&d.series, &d.weather, &SampleConfig::default(), &PerturbationConfig::default()).unwrap();
        let prepared = scale_splits(s, &YearSplit::default()).unwrap();
        (d, prepared)
    })
}

struct RunResult {
    report: MetricReport,
    val_loss: f64,
    secs: f64,
}

fn synthetic_run(inputs: InputSwitches) -> RunResult {
    let start = Instant::now();
    let (_, data) = synthetic();
    let net = Network::<f64>::new(reduced_model(inputs), 11).unwrap();
    let out = train(net, &data.train, &data.val, &reduced_training(), None).unwrap();
    assert!(out.aborted.is_none());
    let hash = schema_hash(&FeatureSchema::standard(), 3, 3);
    let ckpt = Checkpoint {
        network: out.best,
        scaler: data.scaler.clone(),
        schema_hash: hash,
        metadata: serde_json::Value::Null,
    };
    let report = evaluate(&ckpt, &data.val, hash, None, 64).unwrap().report;
    RunResult {
        report,
        val_loss: out.best_val_loss,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn full_run() -> &'static RunResult {
    static FULL: OnceLock<RunResult> = OnceLock::new();
    FULL.get_or_init(|| synthetic_run(InputSwitches::default()))
}

#[test]
fn criterion_07_synthetic_learning() {
    let r = full_run();
    let ratio = r.report.rmse / r.report.persistence.rmse;
    let cov = r.report.coverage_80;
    let pass = ratio <= 0.9 && (0.7..=0.9).contains(&cov);
    verdict(
        7,
        pass,
        &format!(
            "median RMSE {:.4} vs persistence {:.4} (ratio {ratio:.3}, need <= 0.900), q10-q90 coverage {:.1}%, {:.0} s",
            r.report.rmse,
            r.report.persistence.rmse,
            100.0 * cov,
            r.secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_ablation_ordering() {
    let full = full_run();
    let off = |f: fn(&mut InputSwitches)| {
        let mut i = InputSwitches::default();
        f(&mut i);
        synthetic_run(i)
    };
    let future = off(|i| i.future = false);
    let history = off(|i| i.history = false);
    let target = off(|i| i.target = false);
    let p = |r: &RunResult| r.report.mean_pinball;
    let pass = p(full) <= p(&future)
        && p(full) <= p(&history)
        && p(full) <= p(&target)
        && p(&target) > p(&future)
        && p(&target) > p(&history);
    verdict(
        8,
        pass,
        &format!(
            "validation pinball full {:.5}, future off {:.5}, history off {:.5}, target off {:.5} (weighted val loss {:.5} / {:.5} / {:.5} / {:.5})",
            p(full),
            p(&future),
            p(&history),
            p(&target),
            full.val_loss,
            future.val_loss,
            history.val_loss,
            target.val_loss
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_metric_suite() {
    let mut ok = point_metrics(&[1.0, 1.0], &[0.0, 2.0]).rmse == 1.0
        && point_metrics(&[1.0, 1.0], &[0.0, 2.0]).mae == 1.0
        && point_metrics(&[1.0, 1.0], &[0.0, 2.0]).wmape == Some(1.0)
        && point_metrics(&[0.0, 0.0], &[0.0, 1.0]).wmape.is_none()
        && sample_mase(&[0.3, 0.4], &[0.3, 0.4], &[0.1, 0.2, 0.4]) == Some(0.0)
        && crps_from_quantiles(0.2, &[0.2, 0.2, 0.2]) == 0.0
        && (crps_from_quantiles(1.0, &[0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15;
    let m = sample_mase(&[0.5, 0.5], &[0.35, 0.65], &[0.1, 0.2, 0.4]).unwrap();
    ok &= (m - 1.0).abs() < 1e-12;
    let same = diebold_mariano(&[0.1, 0.2, 0.3, 0.4], &[0.1, 0.2, 0.3, 0.4], 2).unwrap();
    ok &= same.statistic == Some(0.0) && same.p_value == Some(1.0);
    ok &= diebold_mariano(&[0.5, 0.7, 0.1], &[0.4, 0.6, 0.0], 0).unwrap().degenerate;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut dm_worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(10..300);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.2)).collect();
        let dm = diebold_mariano(&a, &b, 2).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let mut v = 0.0;
        for k in 0..=2usize {
            let g: f64 = (k..n).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / n as f64;
            v += if k == 0 { g } else { 2.0 * (1.0 - k as f64 / 3.0) * g };
        }
        dm_worst = dm_worst.max((dm.statistic.unwrap() - mean / (v / n as f64).sqrt()).abs());
    }

    let samples = small_samples(6, 9);
    let preds: Vec<QuantilePrediction<f64>> = samples
        .iter()
        .map(|s| QuantilePrediction::new(s.targets.iter().map(|&t| [t - 0.3, t + 0.1, t + 0.2]).collect()))
        .collect();
    let y: Vec<f64> = samples.iter().flat_map(|s| s.targets.clone()).collect();
    let q: Vec<[f64; 3]> = preds.iter().flat_map(|p| p.values.clone()).collect();
    let cross = (mean_pinball(&y, &q) - batch_loss(&preds, &samples, LossWeights::UNIFORM)).abs();

    let pass = ok && dm_worst <= 1e-10 && cross <= 1e-12;
    verdict(
        9,
        pass,
        &format!("unit examples: {ok}, DM vs scalar HAC {dm_worst:.1e}, mean_pinball vs batch_loss {cross:.1e}"),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 10

fn reproducible_run(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let d = generate_synthetic(&SyntheticConfig {
            n_cubes: 24,
            ..Default::default()
        })
        .unwrap();
        let s = prepare_dataset(&d.series, &d.weather, &SampleConfig::default(), &PerturbationConfig::default()).unwrap();
        let data = scale_splits(s, &YearSplit::default()).unwrap();
        let hash = schema_hash(&FeatureSchema::standard(), 3, 3);
        let sink = sqf_core::train::CheckpointSink {
            path: dir.join("checkpoint.sqfm"),
            scaler: data.scaler.clone(),
            schema_hash: hash,
            metadata: serde_json::json!({}),
        };
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            lr_min: 1e-4,
            rng_seed: 10,
            ..Default::default()
        };
        let out = train(Network::<f64>::new(reduced_model(InputSwitches::default()), 10).unwrap(), &data.train, &data.val, &cfg, Some(&sink)).unwrap();
        let history: String = out.history.iter().map(|r| r.csv_row() + "\n").collect();
        let ckpt = sqf_core::model::load_checkpoint::<f64>(&sink.path).unwrap();
        let report = evaluate(&ckpt, &data.val, hash, None, 32).unwrap().report;
        (history.into_bytes(), std::fs::read(&sink.path).unwrap(), serde_json::to_vec(&report).unwrap())
    })
}

#[test]
fn criterion_10_reproducibility() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = reproducible_run(a.path());
    let second = reproducible_run(b.path());
    let same = [first.0 == second.0, first.1 == second.1, first.2 == second.2];
    let pass = same.iter().all(|&x| x);
    verdict(
        10,
        pass,
        &format!(
            "history identical: {}, checkpoint identical: {}, report identical: {}",
            same[0], same[1], same[2]
        ),
    );
    assert!(pass);
}
