use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sqf_autodiff::Graph;

use super::{adam_step, batch_loss, loss_and_grad, AdamState, LossWeights, Result, TrainConfig, TrainError};
use crate::domain::ForecastSample;
use crate::model::{save_checkpoint, Batch, Checkpoint, Mode, Network};
use crate::pipeline::ScalerParams;
use crate::seed::derive_seed;
use crate::Scalar;

/// Samples per gradient shard. Shards of a batch run in parallel and their
/// gradients are summed in shard order, so results do not depend on the
/// number of threads.
pub const GRADIENT_SHARD: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,lr";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.train_loss, self.val_loss, self.lr)
    }
}

/// Where to write the best checkpoint whenever validation loss improves.
#[derive(Clone, Debug)]
pub struct CheckpointSink {
    pub path: PathBuf,
    pub scaler: ScalerParams,
    pub schema_hash: u64,
    pub metadata: serde_json::Value,
}

#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters with the lowest validation loss; the initial network if no
    /// epoch improved on it.
    pub best: Network<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss of the untrained network.
    pub initial_val_loss: f64,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped early on a numeric failure.
    pub aborted: Option<TrainError>,
}

/// Mean loss over the batch and its gradient for every parameter tensor, in
/// store order.
pub fn batch_gradients<T: Scalar>(
    net: &Network<T>,
    samples: &[&ForecastSample],
    weights: LossWeights,
    dropout_seed: u64,
) -> Result<(f64, Vec<Vec<T>>)> {
    let total: usize = samples.iter().map(|s| s.horizon() * 3).sum();
    let shards = samples
        .par_chunks(GRADIENT_SHARD)
        .enumerate()
        .map(|(i, chunk)| shard_gradients(net, chunk, weights, derive_seed(dropout_seed, &format!("shard/{i}")), total))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut grads: Vec<Vec<T>> = net.store.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
    for (l, g) in shards {
        loss += l;
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    Ok((loss, grads))
}

/// Shard contribution to the batch mean loss and its gradient.
fn shard_gradients<T: Scalar>(
    net: &Network<T>,
    chunk: &[&ForecastSample],
    weights: LossWeights,
    seed: u64,
    batch_elements: usize,
) -> Result<(f64, Vec<Vec<T>>)> {
    let batch = Batch::from_samples(chunk, &net.config)?;
    let mut g = Graph::new();
    let f = net.forward(&mut g, &batch, Mode::Train { seed })?;
    let out = g.value(f.output).to_vec();
    let (mean, mut grad) = loss_and_grad(&out, &batch.targets, &batch.delta_days, weights);
    let share = T::lit(out.len() as f64 / batch_elements as f64);
    for v in &mut grad {
        *v *= share;
    }
    let loss = (mean * share).as_f64();
    if !loss.is_finite() {
        g.check_finite()?;
        return Err(TrainError::Numeric(format!("non-finite loss {loss}")));
    }
    let l = g.attach_loss(f.output, mean * share, grad)?;
    g.backward(l)?;
    let grads = f
        .params
        .iter()
        .zip(&net.store.params)
        .map(|(&v, p)| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![T::zero(); p.data.len()]))
        .collect();
    Ok((loss, grads))
}

fn validation_loss<T: Scalar>(net: &Network<T>, val: &[ForecastSample], config: &TrainConfig) -> Result<f64> {
    let pred = net.predict(val, config.batch_size)?;
    Ok(batch_loss(&pred, val, config.loss_weights()).as_f64())
}

/// Runs the epoch loop on scaled samples and keeps the best-validation
/// parameters. A numeric failure ends training early; the outcome then
/// carries the error together with the best parameters seen so far.
pub fn train<T: Scalar>(
    network: Network<T>,
    train: &[ForecastSample],
    val: &[ForecastSample],
    config: &TrainConfig,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let weights = config.loss_weights();
    let mut net = network;
    let mut state = AdamState::new(&net.store.params);
    let mut scheduler = config.scheduler();
    let initial_val_loss = validation_loss(&net, val, config)?;
    let mut outcome = TrainOutcome {
        best: net.clone(),
        best_epoch: 0,
        best_val_loss: initial_val_loss,
        initial_val_loss,
        history: Vec::with_capacity(config.epochs),
        aborted: None,
    };
    if let Some(s) = sink {
        save_best(s, &outcome)?;
    }
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        let lr = scheduler.lr;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &format!("shuffle/{epoch}")));
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        let mut elements = 0usize;
        let mut failure = None;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&ForecastSample> = idx.iter().map(|&i| &train[i]).collect();
            let n: usize = batch.iter().map(|s| s.horizon() * 3).sum();
            let seed = derive_seed(config.rng_seed, &format!("dropout/{epoch}/{b}"));
            let step = batch_gradients(&net, &batch, weights, seed)
                .and_then(|(loss, grads)| adam_step(&mut net.store.params, &grads, &mut state, lr).map(|_| loss));
            match step {
                Ok(loss) => {
                    weighted_loss += loss * n as f64;
                    elements += n;
                }
                Err(e @ TrainError::Numeric(_)) => {
                    failure = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = match failure {
            None => validation_loss(&net, val, config)?,
            Some(_) => f64::NAN,
        };
        if failure.is_none() && !val_loss.is_finite() {
            failure = Some(TrainError::Numeric(format!("validation loss is {val_loss} after epoch {epoch}")));
        }
        if let Some(e) = failure {
            log::error!("epoch {epoch}: {e}; keeping parameters from epoch {}", outcome.best_epoch);
            outcome.aborted = Some(e);
            return Ok(outcome);
        }
        let record = EpochRecord {
            epoch,
            train_loss: weighted_loss / elements as f64,
            val_loss,
            lr,
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} lr {:.2e}",
            record.train_loss,
            record.val_loss,
            record.lr
        );
        outcome.history.push(record);
        if val_loss < outcome.best_val_loss {
            outcome.best = net.clone();
            outcome.best_epoch = epoch;
            outcome.best_val_loss = val_loss;
            if let Some(s) = sink {
                save_best(s, &outcome)?;
            }
        }
        scheduler.observe(val_loss);
    }
    Ok(outcome)
}

fn save_best<T: Scalar>(sink: &CheckpointSink, outcome: &TrainOutcome<T>) -> Result<()> {
    let mut metadata = sink.metadata.clone();
    if let serde_json::Value::Object(m) = &mut metadata {
        m.insert("best_epoch".into(), outcome.best_epoch.into());
        m.insert("best_val_loss".into(), outcome.best_val_loss.into());
    }
    save_checkpoint(
        &sink.path,
        &Checkpoint {
            network: outcome.best.clone(),
            scaler: sink.scaler.clone(),
            schema_hash: sink.schema_hash,
            metadata,
        },
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, SyntheticConfig};
    use crate::model::{load_checkpoint, ModelConfig};
    use crate::pipeline::{fit_sample_scaler, prepare_dataset, scale_samples, PerturbationConfig, SampleConfig};

    fn data(n: usize) -> (Vec<ForecastSample>, ScalerParams) {
        let d = generate_synthetic(&SyntheticConfig {
            n_cubes: n,
            ..Default::default()
        })
        .unwrap();
        let mut s = prepare_dataset(&d.series, &d.weather, &SampleConfig::default(), &PerturbationConfig::default()).unwrap();
        let scaler = fit_sample_scaler(&s).unwrap();
        scale_samples(&mut s, &scaler).unwrap();
        (s, scaler)
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 16,
            ..Default::default()
        }
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr: 1e-3,
            lr_min: 1e-4,
            rng_seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn one_small_step_reduces_the_batch_loss() {
        let (s, _) = data(2);
        let batch: Vec<&ForecastSample> = s.iter().take(4).collect();
        let mut cfg = tiny();
        cfg.dropout = 0.0;
        let mut net = Network::<f64>::new(cfg, 1).unwrap();
        let w = LossWeights::default();
        let (before, grads) = batch_gradients(&net, &batch, w, 0).unwrap();
        let mut state = AdamState::new(&net.store.params);
        adam_step(&mut net.store.params, &grads, &mut state, 1e-4).unwrap();
        let (after, _) = batch_gradients(&net, &batch, w, 0).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn sharded_gradients_equal_whole_batch_loss() {
        let (s, _) = data(3);
        let batch: Vec<&ForecastSample> = s.iter().take(20).collect();
        let mut cfg = tiny();
        cfg.dropout = 0.0;
        let net = Network::<f64>::new(cfg, 1).unwrap();
        let (loss, _) = batch_gradients(&net, &batch, LossWeights::default(), 0).unwrap();
        let owned: Vec<ForecastSample> = batch.iter().map(|&x| x.clone()).collect();
        let direct = batch_loss(&net.predict(&owned, 64).unwrap(), &owned, LossWeights::default());
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (s, _) = data(4);
        let (tr, va) = s.split_at(s.len() - 6);
        let run = || train(Network::<f64>::new(tiny(), 3).unwrap(), tr, va, &quick(2), None).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        assert_eq!(a.history.len(), 2);
        assert!(a.aborted.is_none());
    }

    #[test]
    fn best_checkpoint_is_written_and_matches_outcome() {
        let (s, scaler) = data(4);
        let (tr, va) = s.split_at(s.len() - 6);
        let dir = tempfile::tempdir().unwrap();
        let sink = CheckpointSink {
            path: dir.path().join("best.sqfm"),
            scaler,
            schema_hash: 77,
            metadata: serde_json::json!({}),
        };
        let out = train(Network::<f64>::new(tiny(), 3).unwrap(), tr, va, &quick(3), Some(&sink)).unwrap();
        let ck: Checkpoint<f64> = load_checkpoint(&sink.path).unwrap();
        assert_eq!(ck.network, out.best);
        assert_eq!(ck.schema_hash, 77);
        assert_eq!(ck.metadata["best_epoch"], out.best_epoch);
        let min = out.history.iter().map(|r| r.val_loss).fold(out.initial_val_loss, f64::min);
        assert_eq!(out.best_val_loss, min);
    }

    #[test]
    fn numeric_failure_keeps_last_good_parameters() {
        let (mut s, _) = data(4);
        let n = s.len();
        let (tr, va) = s.split_at_mut(n - 6);
        let net = Network::<f64>::new(tiny(), 3).unwrap();
        tr[0].targets[0] = f64::INFINITY;
        let out = train(net.clone(), tr, va, &quick(3), None).unwrap();
        assert!(matches!(out.aborted, Some(TrainError::Numeric(_))));
        assert_eq!(out.best, net);
        assert!(out.history.is_empty());
    }

    #[test]
    fn empty_splits_are_rejected() {
        let (s, _) = data(2);
        let net = Network::<f64>::new(tiny(), 3).unwrap();
        assert!(matches!(train(net.clone(), &[], &s, &quick(1), None), Err(TrainError::EmptySplit(_))));
        assert!(matches!(train(net, &s, &[], &quick(1), None), Err(TrainError::EmptySplit(_))));
    }

    #[test]
    fn history_rows_are_csv() {
        let r = EpochRecord {
            epoch: 3,
            train_loss: 0.25,
            val_loss: 0.5,
            lr: 1e-4,
        };
        assert_eq!(r.csv_row(), "3,0.25,0.5,0.0001");
    }
}
