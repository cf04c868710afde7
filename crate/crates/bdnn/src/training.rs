//! SGD training over shadow weights with a fixed learning rate, per-epoch
//! evaluation and best-epoch selection.
//!
//! Training is a single-writer loop: online SGD by default, optional
//! minibatch averaging. Per-sample gradients inside a minibatch may be
//! computed in parallel (the `parallel` feature), but they are always
//! reduced in sample order, so results are identical either way. Dataset
//! evaluation shards across threads when `parallel` is enabled; the
//! misclassification count is an integer sum, so that too is
//! order-independent.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::SlopeConfig;
use crate::network::{output_deltas, NetInput, Network};

/// Training hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Fixed learning rate.
    pub learning_rate: f64,
    pub epochs: usize,
    pub slope: SlopeConfig,
    pub seed: u64,
    /// 1 = online SGD; larger values average gradients over the batch.
    pub batch_size: usize,
    /// Clamp binary layers' shadow weights to [−1, 1] after each update.
    /// The surrogate gradients ignore weight magnitude, so unbounded
    /// shadows make sign flips progressively harder to reach.
    pub clamp_weights: bool,
    /// Stop once the test error reaches this value (checked per epoch).
    pub stop_below_test_err: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 1,
            slope: SlopeConfig::TwoOverN,
            seed: 0,
            batch_size: 1,
            clamp_weights: true,
            stop_below_test_err: None,
        }
    }
}

/// One labeled training or test example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: NetInput,
    pub label: usize,
}

/// One row of the training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_err_pct: f64,
    pub test_err_pct: f64,
    pub seconds: f64,
}

/// Per-epoch errors plus the epoch with the lowest test error.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub records: Vec<EpochRecord>,
    /// Epoch number (1-based) of the lowest test error; earliest wins ties.
    pub best_epoch: usize,
}

impl Metrics {
    pub fn best_record(&self) -> &EpochRecord {
        self.records
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .expect("best epoch is recorded")
    }
}

/// Writes the metrics CSV (`epoch,train_err_pct,test_err_pct,seconds`).
/// With `include_timing` off the seconds column is written as zero, making
/// the bytes a pure function of the training trajectory.
pub fn write_metrics_csv<W: Write>(
    metrics: &Metrics,
    include_timing: bool,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "epoch,train_err_pct,test_err_pct,seconds")?;
    for r in &metrics.records {
        let secs = if include_timing { r.seconds } else { 0.0 };
        writeln!(
            out,
            "{},{:.4},{:.4},{:.3}",
            r.epoch, r.train_err_pct, r.test_err_pct, secs
        )?;
    }
    Ok(())
}

/// Draws every weight uniformly from [−0.5, 0.5], resampling exact zeros,
/// then synchronizes the mirrors. Deterministic per seed.
pub fn init_weights(net: &mut Network, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in net.layers_mut() {
        for w in layer.weights_mut() {
            *w = loop {
                let v = rng.random_range(-0.5..0.5);
                if v != 0.0 {
                    break v;
                }
            };
        }
    }
    net.sync_mirrors()
        .expect("freshly drawn weights are finite");
}

/// One online SGD step: shadow forward, sign-gated backprop, weight update,
/// mirror resync. A sample whose outputs are already sign-correct leaves
/// the weights untouched.
pub fn sgd_step(net: &mut Network, sample: &Sample, config: &TrainConfig) -> Result<()> {
    check_label(net, sample)?;
    let trace = net.shadow_forward(&sample.input)?;
    let deltas = output_deltas(trace.final_outputs(), sample.label)?;
    if deltas.iter().all(|&d| d == 0.0) {
        return Ok(());
    }
    let grads = net.backprop(&trace, sample.label, &config.slope)?;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads) {
        layer.apply_update(&g.weight_grads, config.learning_rate, config.clamp_weights)?;
    }
    net.sync_mirrors()
}

/// One minibatch step: per-sample gradients averaged in sample order, then
/// a single update.
pub fn sgd_minibatch(net: &mut Network, samples: &[&Sample], config: &TrainConfig) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    for s in samples {
        check_label(net, s)?;
    }
    let slope = config.slope;
    let net_ref: &Network = net;

    let one = |s: &&Sample| -> Result<Option<Vec<crate::layers::LayerGradients>>> {
        let trace = net_ref.shadow_forward(&s.input)?;
        let deltas = output_deltas(trace.final_outputs(), s.label)?;
        if deltas.iter().all(|&d| d == 0.0) {
            Ok(None)
        } else {
            net_ref.backprop(&trace, s.label, &slope).map(Some)
        }
    };

    #[cfg(feature = "parallel")]
    let per_sample = samples.par_iter().map(one).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_sample = samples.iter().map(one).collect::<Result<Vec<_>>>()?;

    let mut batch: Vec<Vec<f64>> = net
        .layers()
        .iter()
        .map(|l| vec![0.0; l.weight_count()])
        .collect();
    let mut any = false;
    // Fixed-order reduction keeps results independent of thread scheduling.
    for grads in per_sample.into_iter().flatten() {
        any = true;
        for (acc, g) in batch.iter_mut().zip(&grads) {
            for (a, &v) in acc.iter_mut().zip(&g.weight_grads) {
                *a += v;
            }
        }
    }
    if !any {
        return Ok(());
    }
    let scale = 1.0 / samples.len() as f64;
    for acc in &mut batch {
        for a in acc.iter_mut() {
            *a *= scale;
        }
    }
    for (layer, g) in net.layers_mut().iter_mut().zip(&batch) {
        layer.apply_update(g, config.learning_rate, config.clamp_weights)?;
    }
    net.sync_mirrors()
}

/// Error percentage of the packed binary classifier over a dataset.
/// Shards across threads when the `parallel` feature is on; the result is
/// identical to the sequential count.
pub fn evaluate(net: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    #[cfg(feature = "parallel")]
    let wrong: usize = samples
        .par_iter()
        .map(|s| -> Result<usize> { Ok((net.infer(&s.input)?.class != s.label) as usize) })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    #[cfg(not(feature = "parallel"))]
    let wrong: usize = {
        let mut acc = 0;
        for s in samples {
            acc += (net.infer(&s.input)?.class != s.label) as usize;
        }
        acc
    };
    Ok(100.0 * wrong as f64 / samples.len() as f64)
}

/// Single-threaded evaluation, kept callable regardless of features for
/// benchmarking against the parallel path.
pub fn evaluate_sequential(net: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let mut wrong = 0usize;
    for s in samples {
        wrong += (net.infer(&s.input)?.class != s.label) as usize;
    }
    Ok(100.0 * wrong as f64 / samples.len() as f64)
}

/// Runs seeded-shuffle SGD epochs with per-epoch train/test evaluation.
/// The network is left holding the weights of the best epoch (lowest test
/// error, earliest on ties).
pub fn train(
    net: &mut Network,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
) -> Result<Metrics> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Dataset("train and test sets must be non-empty".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if !(config.learning_rate >= 0.0) || !config.learning_rate.is_finite() {
        return Err(Error::Config(format!(
            "learning rate must be finite and non-negative, got {}",
            config.learning_rate
        )));
    }
    for s in train_set.iter().chain(test_set) {
        check_label(net, s)?;
    }

    // The shuffle stream is decoupled from the weight-init stream so the
    // same seed can drive both without overlap.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        if config.batch_size <= 1 {
            for &i in &order {
                sgd_step(net, &train_set[i], config)?;
            }
        } else {
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
                sgd_minibatch(net, &batch, config)?;
            }
        }
        let train_err = evaluate(net, train_set)?;
        let test_err = evaluate(net, test_set)?;
        records.push(EpochRecord {
            epoch,
            train_err_pct: train_err,
            test_err_pct: test_err,
            seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().map_or(true, |(e, _, _)| test_err < *e) {
            let snapshot = net.layers().iter().map(|l| l.weights().to_vec()).collect();
            best = Some((test_err, epoch, snapshot));
        }
        if let Some(stop) = config.stop_below_test_err {
            if test_err <= stop {
                break;
            }
        }
    }

    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    for (layer, weights) in net.layers_mut().iter_mut().zip(snapshot) {
        layer.set_weights(weights)?;
    }
    net.sync_mirrors()?;

    Ok(Metrics {
        records,
        best_epoch,
    })
}

fn check_label(net: &Network, sample: &Sample) -> Result<()> {
    if sample.label >= net.classes() {
        return Err(Error::LabelOutOfRange {
            label: sample.label,
            classes: net.classes(),
        });
    }
    Ok(())
}
