//! Flat key=value training configuration.
//!
//! Unknown keys are hard errors so typos in experiment sweeps fail fast.
//! Lines starting with `#` and blank lines are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bdnn::error::{Error, Result};
use bdnn::math::TransitionParams;
use bdnn::network::{InputGeometry, LayerSpec, NetworkSpec, StructureId};
use bdnn::SlopeConfig;

const KNOWN_KEYS: &[&str] = &[
    "structure",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_batches",
    "test_batches",
    "lr",
    "epochs",
    "seed",
    "slope_mode",
    "binarize_threshold",
    "batch_size",
    "clamp",
    "subset_train",
    "subset_test",
    "timing",
    "stop_below_test_err",
];

/// Which dataset pipeline the config names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetPaths {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
    },
}

/// Parsed training configuration.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub structure: String,
    pub dataset: DatasetPaths,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub slope: SlopeConfig,
    pub binarize_threshold: u8,
    pub batch_size: usize,
    pub clamp: bool,
    pub subset_train: Option<usize>,
    pub subset_test: Option<usize>,
    /// `wall` records wall seconds in the metrics CSV; `off` writes zeros
    /// so identical runs produce identical bytes.
    pub include_timing: bool,
    pub stop_below_test_err: Option<f64>,
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate config key {key:?}")));
        }
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}"))),
    }
}

fn parse_opt<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}"))),
    }
}

fn parse_bool(map: &BTreeMap<String, String>, key: &str, default: bool) -> Result<bool> {
    match map.get(key).map(String::as_str) {
        None => Ok(default),
        Some("true") | Some("1") | Some("on") => Ok(true),
        Some("false") | Some("0") | Some("off") => Ok(false),
        Some(v) => Err(Error::Config(format!("bad value for {key}: {v:?}"))),
    }
}

pub fn load_settings(path: &Path) -> Result<TrainSettings> {
    let text = fs::read_to_string(path)?;
    let map = parse_kv(&text)?;

    let structure = map
        .get("structure")
        .cloned()
        .ok_or_else(|| Error::Config("missing required key \"structure\"".into()))?;

    let mnist_keys = ["train_images", "train_labels", "test_images", "test_labels"];
    let cifar_keys = ["train_batches", "test_batches"];
    let has_mnist = mnist_keys.iter().any(|k| map.contains_key(*k));
    let has_cifar = cifar_keys.iter().any(|k| map.contains_key(*k));
    let dataset = match (has_mnist, has_cifar) {
        (true, true) => {
            return Err(Error::Config(
                "config names both image/label files and batch files".into(),
            ))
        }
        (false, false) => {
            return Err(Error::Config(
                "config names no dataset (need train_images/... or train_batches/...)".into(),
            ))
        }
        (true, false) => {
            let get = |k: &str| -> Result<PathBuf> {
                map.get(k)
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config(format!("missing required key {k:?}")))
            };
            DatasetPaths::Mnist {
                train_images: get("train_images")?,
                train_labels: get("train_labels")?,
                test_images: get("test_images")?,
                test_labels: get("test_labels")?,
            }
        }
        (false, true) => {
            let get = |k: &str| -> Result<Vec<PathBuf>> {
                let v = map
                    .get(k)
                    .ok_or_else(|| Error::Config(format!("missing required key {k:?}")))?;
                Ok(v.split(',').map(|p| PathBuf::from(p.trim())).collect())
            };
            DatasetPaths::Cifar {
                train_batches: get("train_batches")?,
                test_batches: get("test_batches")?,
            }
        }
    };

    let slope = match map.get("slope_mode") {
        None => SlopeConfig::TwoOverN,
        Some(v) => v.parse()?,
    };
    let include_timing = match map.get("timing").map(String::as_str) {
        None | Some("wall") => true,
        Some("off") => false,
        Some(v) => return Err(Error::Config(format!("bad value for timing: {v:?}"))),
    };

    let settings = TrainSettings {
        structure,
        dataset,
        lr: parse(&map, "lr", 0.01)?,
        epochs: parse(&map, "epochs", 1)?,
        seed: parse(&map, "seed", 0)?,
        slope,
        binarize_threshold: parse(&map, "binarize_threshold", 128)?,
        batch_size: parse(&map, "batch_size", 1)?,
        clamp: parse_bool(&map, "clamp", true)?,
        subset_train: parse_opt(&map, "subset_train")?,
        subset_test: parse_opt(&map, "subset_test")?,
        include_timing,
        stop_below_test_err: parse_opt(&map, "stop_below_test_err")?,
    };
    if settings.lr < 0.0 || !settings.lr.is_finite() {
        return Err(Error::Config(format!("lr must be non-negative, got {}", settings.lr)));
    }
    if settings.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    Ok(settings)
}

/// Resolves the `structure` value: one of the canned letters, or a path to
/// a network spec file.
pub fn resolve_structure(value: &str) -> Result<NetworkSpec> {
    if let Ok(id) = value.parse::<StructureId>() {
        return Ok(NetworkSpec::structure(id));
    }
    let path = Path::new(value);
    if path.exists() {
        let text = fs::read_to_string(path)?;
        return parse_spec_file(&text);
    }
    Err(Error::Config(format!(
        "structure {value:?} is neither A-E nor an existing spec file"
    )))
}

/// Line-based network spec:
///
/// ```text
/// input flat 785            # or: input image 1 29 29
/// classes 10
/// dense 785 1571
/// conv 1 7 5 2              # in_maps out_maps kernel stride
/// transition_dense 784 785 [threshold]
/// transition_conv 1 17 9 2 [threshold]
/// ```
pub fn parse_spec_file(text: &str) -> Result<NetworkSpec> {
    let mut input: Option<InputGeometry> = None;
    let mut classes: Option<usize> = None;
    let mut layers = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Config(format!("spec line {}: {msg}", lineno + 1));
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let nums = |from: usize, n: usize| -> Result<Vec<usize>> {
            if tokens.len() != from + n {
                return Err(bad(&format!("expected {n} numeric fields")));
            }
            tokens[from..]
                .iter()
                .map(|t| t.parse().map_err(|_| bad(&format!("bad number {t:?}"))))
                .collect()
        };
        match tokens[0] {
            "input" => {
                if tokens.len() >= 2 && tokens[1] == "flat" {
                    let v = nums(2, 1)?;
                    input = Some(InputGeometry::Flat(v[0]));
                } else if tokens.len() >= 2 && tokens[1] == "image" {
                    let v = nums(2, 3)?;
                    input = Some(InputGeometry::Image { maps: v[0], h: v[1], w: v[2] });
                } else {
                    return Err(bad("expected `input flat N` or `input image M H W`"));
                }
            }
            "classes" => {
                let v = nums(1, 1)?;
                classes = Some(v[0]);
            }
            "dense" => {
                let v = nums(1, 2)?;
                layers.push(LayerSpec::Dense { inputs: v[0], outputs: v[1] });
            }
            "conv" => {
                let v = nums(1, 4)?;
                layers.push(LayerSpec::Conv {
                    in_maps: v[0],
                    out_maps: v[1],
                    kernel: v[2],
                    stride: v[3],
                });
            }
            "transition_dense" => {
                let (v, threshold) = with_threshold(&tokens, 2, &bad)?;
                layers.push(LayerSpec::TransitionDense {
                    inputs: v[0],
                    outputs: v[1],
                    params: TransitionParams { threshold, ..Default::default() },
                });
            }
            "transition_conv" => {
                let (v, threshold) = with_threshold(&tokens, 4, &bad)?;
                layers.push(LayerSpec::TransitionConv {
                    in_maps: v[0],
                    out_maps: v[1],
                    kernel: v[2],
                    stride: v[3],
                    params: TransitionParams { threshold, ..Default::default() },
                });
            }
            other => return Err(bad(&format!("unknown directive {other:?}"))),
        }
    }

    let spec = NetworkSpec {
        input: input.ok_or_else(|| Error::Config("spec file missing `input` line".into()))?,
        classes: classes.ok_or_else(|| Error::Config("spec file missing `classes` line".into()))?,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

fn with_threshold(
    tokens: &[&str],
    n: usize,
    bad: &dyn Fn(&str) -> Error,
) -> Result<(Vec<usize>, f64)> {
    if tokens.len() != n + 1 && tokens.len() != n + 2 {
        return Err(bad(&format!("expected {n} fields plus optional threshold")));
    }
    let v: Vec<usize> = tokens[1..=n]
        .iter()
        .map(|t| t.parse().map_err(|_| bad(&format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    let threshold = if tokens.len() == n + 2 {
        tokens[n + 1]
            .parse()
            .map_err(|_| bad(&format!("bad threshold {:?}", tokens[n + 1])))?
    } else {
        0.0
    };
    Ok((v, threshold))
}
