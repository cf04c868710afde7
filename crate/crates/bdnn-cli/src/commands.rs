//! Subcommand implementations. Every command prints `key=value` lines to
//! stdout for scripting.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use bdnn::checkpoint::{self, TrainState};
use bdnn::data::{self, ImageDataset};
use bdnn::error::{Error, Result};
use bdnn::math::Sign;
use bdnn::network::{NetInput, Network};
use bdnn::reference::SignNetwork;
use bdnn::training::{self, TrainConfig};
use bdnn::PackedBits;

use crate::config::{self, DatasetPaths, TrainSettings};

fn load_dataset(
    paths: &DatasetPaths,
    threshold: u8,
) -> Result<(ImageDataset, ImageDataset)> {
    match paths {
        DatasetPaths::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = data::mnist::load_mnist(train_images, train_labels)?;
            let test = data::mnist::load_mnist(test_images, test_labels)?;
            Ok((data::binarize(&train, threshold), data::binarize(&test, threshold)))
        }
        DatasetPaths::Cifar {
            train_batches,
            test_batches,
        } => {
            let train = data::cifar::load_batches(train_batches)?;
            let test = data::cifar::load_batches(test_batches)?;
            Ok((data::grayscale_scaled(&train), data::grayscale_scaled(&test)))
        }
    }
}

pub fn run_train(config_path: &Path, out_model: &Path, out_metrics: &Path) -> Result<()> {
    let settings: TrainSettings = config::load_settings(config_path)?;
    let spec = config::resolve_structure(&settings.structure)?;
    let mut net = Network::build(&spec)?;

    let (mut train_ds, mut test_ds) = load_dataset(&settings.dataset, settings.binarize_threshold)?;
    if let Some(k) = settings.subset_train {
        train_ds = train_ds.subset(k, settings.seed);
    }
    if let Some(k) = settings.subset_test {
        test_ds = test_ds.subset(k, settings.seed.wrapping_add(1));
    }
    let train_samples = data::prepare_samples(&train_ds, &net)?;
    let test_samples = data::prepare_samples(&test_ds, &net)?;

    training::init_weights(&mut net, settings.seed);
    let config = TrainConfig {
        learning_rate: settings.lr,
        epochs: settings.epochs,
        slope: settings.slope,
        seed: settings.seed,
        batch_size: settings.batch_size,
        clamp_weights: settings.clamp,
        stop_below_test_err: settings.stop_below_test_err,
    };
    let metrics = training::train(&mut net, &train_samples, &test_samples, &config)?;

    let state = TrainState {
        seed: settings.seed,
        best_epoch: metrics.best_epoch as u32,
        learning_rate: settings.lr,
    };
    let metadata = format!("structure={}", settings.structure);
    checkpoint::save_file(out_model, &net, &state, &metadata, true)?;

    let mut csv = Vec::new();
    training::write_metrics_csv(&metrics, settings.include_timing, &mut csv)?;
    fs::write(out_metrics, csv)?;

    let best = metrics.best_record();
    println!("epochs_run={}", metrics.records.len());
    println!("best_epoch={}", metrics.best_epoch);
    println!("best_train_err_pct={:.2}", best.train_err_pct);
    println!("best_test_err_pct={:.2}", best.test_err_pct);
    println!("model={}", out_model.display());
    println!("metrics={}", out_metrics.display());
    Ok(())
}

pub fn run_eval(
    model: &Path,
    images: Option<&Path>,
    labels: Option<&Path>,
    batches: &[std::path::PathBuf],
    threshold: u8,
    subset: Option<usize>,
    seed: u64,
) -> Result<()> {
    let loaded = checkpoint::load_file(model)?;
    let paths = match (images, labels, batches.is_empty()) {
        (Some(i), Some(l), true) => DatasetPaths::Mnist {
            train_images: i.to_path_buf(),
            train_labels: l.to_path_buf(),
            test_images: i.to_path_buf(),
            test_labels: l.to_path_buf(),
        },
        (None, None, false) => DatasetPaths::Cifar {
            train_batches: batches.to_vec(),
            test_batches: batches.to_vec(),
        },
        _ => {
            return Err(Error::Config(
                "give either --images and --labels, or --batches".into(),
            ))
        }
    };
    let (ds, _) = load_dataset(&paths, threshold)?;
    let ds = match subset {
        Some(k) => ds.subset(k, seed),
        None => ds,
    };
    let samples = data::prepare_samples(&ds, &loaded.network)?;
    let err = training::evaluate(&loaded.network, &samples)?;
    println!("samples={}", samples.len());
    println!("test_err_pct={err:.2}");
    Ok(())
}

/// Seeded random inputs matching the network geometry.
fn random_inputs(net: &Network, count: usize, seed: u64) -> Vec<NetInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = net.input_geometry().len();
    (0..count)
        .map(|_| {
            if net.is_hybrid() {
                NetInput::Real((0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            } else {
                let signs: Vec<Sign> = (0..len)
                    .map(|_| if rng.random::<bool>() { Sign::Plus } else { Sign::Minus })
                    .collect();
                NetInput::Binary(PackedBits::from_signs(&signs).unwrap())
            }
        })
        .collect()
}

pub fn run_bench(model: &Path, repeats: usize, seed: u64) -> Result<()> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let loaded = checkpoint::load_file(model)?;
    let net = loaded.network;
    let naive = SignNetwork::from_network(&net);
    let block = 64usize;
    let inputs = random_inputs(&net, block, seed);

    // Both paths run single-threaded over the same inputs, and every
    // prediction is cross-checked.
    let mut packed_classes = Vec::with_capacity(block * repeats);
    let started = Instant::now();
    for _ in 0..repeats {
        for input in &inputs {
            packed_classes.push(net.infer(input)?.class);
        }
    }
    let packed_secs = started.elapsed().as_secs_f64();

    let mut naive_classes = Vec::with_capacity(block * repeats);
    let started = Instant::now();
    for _ in 0..repeats {
        for input in &inputs {
            let (class, _) = match input {
                NetInput::Binary(p) => naive.infer_binary(&p.to_signs()),
                NetInput::Real(v) => naive.infer_real(v),
            };
            naive_classes.push(class);
        }
    }
    let naive_secs = started.elapsed().as_secs_f64();

    if packed_classes != naive_classes {
        return Err(Error::Checkpoint(
            "packed and naive paths disagree on predictions".into(),
        ));
    }

    let images = (block * repeats) as f64;
    let packed_rate = images / packed_secs;
    let naive_rate = images / naive_secs;
    println!("images={}", block * repeats);
    println!("packed_images_per_sec={packed_rate:.1}");
    println!("naive_images_per_sec={naive_rate:.1}");
    println!("speedup={:.2}", packed_rate / naive_rate);
    println!("prediction_agreement=1.0");
    Ok(())
}

pub fn run_inspect(model: &Path) -> Result<()> {
    let loaded = checkpoint::load_file(model)?;
    let net = &loaded.network;
    println!("layers={}", net.layers().len());
    println!("classes={}", net.classes());
    println!("hybrid={}", net.is_hybrid());
    println!("has_shadow={}", loaded.has_shadow);
    println!("binary_weights={}", net.binary_weight_count());
    println!("metadata={}", loaded.metadata.replace('\n', " "));
    for (i, layer) in net.layers().iter().enumerate() {
        let weights = layer.weights();
        let plus = weights.iter().filter(|&&w| w >= 0.0).count();
        let fragile = weights.iter().filter(|&&w| w.abs() <= 0.05).count();
        println!(
            "layer={} kind={} in={} out={} weights={} plus_fraction={:.4} fragile_fraction={:.4}",
            i,
            layer.kind_name(),
            layer.in_len(),
            layer.out_len(),
            weights.len(),
            plus as f64 / weights.len() as f64,
            fragile as f64 / weights.len() as f64,
        );
    }
    Ok(())
}

pub fn run_export(model: &Path, out: &Path, packed_only: bool) -> Result<()> {
    let loaded = checkpoint::load_file(model)?;
    let include_shadow = loaded.has_shadow && !packed_only;
    checkpoint::save_file(
        out,
        &loaded.network,
        &loaded.state,
        &loaded.metadata,
        include_shadow,
    )?;
    let size = fs::metadata(out)?.len();
    println!("out={}", out.display());
    println!("bytes={size}");
    println!("packed_only={packed_only}");
    Ok(())
}
