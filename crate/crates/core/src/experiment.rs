//! Declarative experiments: load data, calibrate, train, encode, score and
//! write results.
//!
//! A run is fully determined by its [`ExperimentConfig`] and seed. Each
//! encoded unit (an image, or a patch of one) draws from its own random
//! stream derived from `(seed, unit index)`, so results do not depend on the
//! number of workers.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{calibrate, CalibrationSpec, NetworkParams};
use crate::classifier::{slp_eval, slp_train, SlpConfig};
use crate::codec::{code_to_coeffs, compression, default_input_bits, reconstruct, rmse, Normalization};
use crate::crossbar::{Crossbar, VariabilityConfig};
use crate::data::{downscale, load_cifar10, load_mnist, patchify, synthetic_planted, Dataset, Image};
use crate::engine::{run, simulate, EnergyReport, Mode, RunOptions, Trace};
use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;
use crate::reference::{lca_encode, Dictionary, LcaConfig};
use crate::spikegen::{generate_all, SpikeTrain};
use crate::training::{self, init_crossbar, EpochStats, TrainConfig, TrainState};

pub const SCHEMA_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "SSLCA_DATA_DIR";

const TEST_STREAM: u64 = 1 << 40;
const TRAIN_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Random mixtures of planted receptive fields; unlabeled.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub active: usize,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 16,
            m: 8,
            active: 2,
            noise: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Directory holding the raw files. Defaults to a subdirectory of
    /// `$SSLCA_DATA_DIR` (or `./data`).
    pub dir: Option<PathBuf>,
    /// Side length after average pooling.
    pub scale: Option<usize>,
    /// Split each image into non-overlapping `S × S` patches.
    pub patch: Option<usize>,
    pub train: usize,
    pub test: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Mnist,
            dir: None,
            scale: Some(14),
            patch: None,
            train: 10_000,
            test: 2_000,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Uninhibited,
    #[default]
    Inhibited,
    LcaReference,
}

impl RunMode {
    pub fn engine_mode(self) -> Option<Mode> {
        match self {
            RunMode::Uninhibited => Some(Mode::Uninhibited),
            RunMode::Inhibited => Some(Mode::Inhibited),
            RunMode::LcaReference => None,
        }
    }
}

/// What the classifier sees for each code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    #[default]
    Counts,
    SumToOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub slp: bool,
    pub slp_config: SlpConfig,
    pub features: Features,
    pub rmse_normalization: Normalization,
    /// Record a voltage trace for the first test unit.
    pub trace: bool,
    pub trace_samples: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            slp: true,
            slp_config: SlpConfig::default(),
            features: Features::Counts,
            rmse_normalization: Normalization::LeastSquares,
            trace: false,
            trace_samples: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// `n_inputs` is taken from the dataset geometry.
    pub network: CalibrationSpec,
    pub mode: RunMode,
    pub lca: LcaConfig,
    /// Dictionary learning; `None` keeps the random initial crossbar.
    pub training: Option<TrainConfig>,
    /// Start from a saved crossbar instead of training.
    pub dictionary: Option<PathBuf>,
    pub variability: VariabilityConfig,
    pub evaluation: EvalSpec,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            name: "experiment".into(),
            seed: 1,
            dataset: DatasetSpec::default(),
            network: CalibrationSpec {
                n_neurons: 50,
                ..CalibrationSpec::default()
            },
            mode: RunMode::Inhibited,
            lca: LcaConfig::default(),
            training: Some(TrainConfig::default()),
            dictionary: None,
            variability: VariabilityConfig::default(),
            evaluation: EvalSpec::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| SslcaError::Config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| SslcaError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(SslcaError::Config(format!(
                "config schema {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(SslcaError::Config(format!("invalid experiment name '{}'", self.name)));
        }
        if self.dataset.test == 0 {
            return Err(SslcaError::Config("dataset.test must be at least 1".into()));
        }
        if self.training.is_some() && self.dictionary.is_none() && self.dataset.train == 0 {
            return Err(SslcaError::Config("training needs dataset.train > 0".into()));
        }
        if self.evaluation.slp && self.dataset.train == 0 {
            return Err(SslcaError::Config("the classifier needs dataset.train > 0".into()));
        }
        if matches!(self.dataset.scale, Some(0)) || matches!(self.dataset.patch, Some(0)) {
            return Err(SslcaError::Config("scale and patch sizes must be positive".into()));
        }
        self.variability.validate()?;
        self.lca.validate()?;
        Ok(())
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(&self.name).join(self.seed.to_string())
    }

    fn data_dir(&self) -> PathBuf {
        if let Some(d) = &self.dataset.dir {
            return d.clone();
        }
        let root = std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data"));
        match self.dataset.kind {
            DatasetKind::Mnist => root.join("mnist"),
            DatasetKind::Cifar10 => root.join("cifar-10-batches-bin"),
            DatasetKind::Synthetic => root,
        }
    }

    /// Training config with the experiment-level online write noise applied.
    fn effective_training(&self) -> Option<TrainConfig> {
        self.training.clone().map(|mut t| {
            if self.variability.write_dev_online > 0.0 {
                t.write_dev_online = self.variability.write_dev_online;
            }
            t
        })
    }
}

/// Loads train and test splits and applies the configured downscaling.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let ds = &cfg.dataset;
    let dir = cfg.data_dir();
    let (train, test) = match ds.kind {
        DatasetKind::Mnist => {
            let load = |img: &str, lbl: &str, n: usize| -> Result<Dataset> {
                if n == 0 {
                    return Ok(Dataset::default());
                }
                Ok(load_mnist(&dir.join(img), &dir.join(lbl))?.take(n))
            };
            (
                load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", ds.train)?,
                load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", ds.test)?,
            )
        }
        DatasetKind::Cifar10 => {
            let batches = ds.train.div_ceil(10_000).min(5);
            let paths: Vec<PathBuf> = (1..=batches).map(|b| dir.join(format!("data_batch_{b}.bin"))).collect();
            let train = if batches == 0 {
                Dataset::default()
            } else {
                load_cifar10(&paths)?.take(ds.train)
            };
            (train, load_cifar10(&[dir.join("test_batch.bin")])?.take(ds.test))
        }
        DatasetKind::Synthetic => {
            let s = &ds.synthetic;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (_, xs) = synthetic_planted(s.n, s.m, s.active, s.noise, ds.train + ds.test, &mut rng);
            let to_ds = |xs: &[Vec<f64>]| -> Result<Dataset> {
                Ok(Dataset {
                    name: "synthetic".into(),
                    images: xs
                        .iter()
                        .map(|x| Image::new(x.len(), 1, 1, x.clone()))
                        .collect::<Result<_>>()?,
                    labels: vec![0; xs.len()],
                })
            };
            (to_ds(&xs[..ds.train])?, to_ds(&xs[ds.train..])?)
        }
    };
    if test.is_empty() {
        return Err(SslcaError::Data("test split is empty".into()));
    }
    let scale = |d: Dataset| -> Result<Dataset> {
        match ds.scale {
            Some(s) if ds.kind != DatasetKind::Synthetic => d.map_images(|im| downscale(im, s, s)),
            _ => Ok(d),
        }
    };
    Ok((scale(train)?, scale(test)?))
}

/// The vectors the network encodes for one image.
fn units_of(img: &Image, patch: Option<usize>) -> Result<Vec<Vec<f64>>> {
    match patch {
        Some(s) => patchify(img, s),
        None => Ok(vec![img.data.clone()]),
    }
}

fn all_units(ds: &Dataset, patch: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for img in &ds.images {
        out.extend(units_of(img, patch)?);
    }
    Ok(out)
}

/// Independent stream for unit `idx` of a run seeded with `seed`.
pub fn unit_rng(seed: u64, idx: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx);
    rng
}

/// Limits the worker pool used for encoding. Call once, before any run.
#[cfg(feature = "parallel")]
pub fn set_workers(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| SslcaError::Config(format!("cannot size worker pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn set_workers(_n: usize) -> Result<()> {
    Ok(())
}

fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Data, calibrated constants and the (trained) crossbar of one experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub params: NetworkParams,
    pub train: Dataset,
    pub test: Dataset,
    pub crossbar: Crossbar,
    pub train_state: Option<TrainState>,
    pub history: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn n_inputs(&self) -> usize {
        self.params.n_inputs
    }
}

fn n_inputs_for(cfg: &ExperimentConfig, sample: &Image) -> Result<usize> {
    Ok(units_of(sample, cfg.dataset.patch)?[0].len())
}

pub fn calibrate_for(cfg: &ExperimentConfig, n_inputs: usize) -> Result<NetworkParams> {
    let spec = CalibrationSpec {
        n_inputs,
        ..cfg.network.clone()
    };
    calibrate(&spec)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    prepare_with(cfg, train, test)
}

/// Like [`prepare`] with already loaded (and scaled) data.
pub fn prepare_with(cfg: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<Prepared> {
    cfg.validate()?;
    let n = n_inputs_for(cfg, &test.images[0])?;
    let params = calibrate_for(cfg, n)?;
    let mut warnings = cfg.variability.validate()?;
    let device = cfg.network.device;
    let mut rng = unit_rng(cfg.seed, TRAIN_STREAM);
    let (crossbar, train_state, history) = if let Some(path) = &cfg.dictionary {
        let (xb, ext) = Crossbar::load(path)?;
        if xb.rows() != n || xb.cols() != cfg.network.n_neurons {
            return Err(SslcaError::dims(
                format!("{n}x{} crossbar", cfg.network.n_neurons),
                format!("{}x{}", xb.rows(), xb.cols()),
            ));
        }
        let state = ext.and_then(|v| serde_json::from_value(v).ok());
        (xb, state, Vec::new())
    } else {
        let xb = init_crossbar(n, cfg.network.n_neurons, cfg.network.rf_avg, device, &mut rng)?;
        match cfg.effective_training() {
            Some(tc) if tc.epochs > 0 => {
                let patches = all_units(&train, cfg.dataset.patch)?;
                let (xb, state, history) = training::train(xb, &patches, &params, &tc, &mut rng)?;
                (xb, Some(state), history)
            }
            _ => (xb, None, Vec::new()),
        }
    };
    if cfg.evaluation.slp && train.labels.iter().all(|&l| l == train.labels[0]) {
        warnings.push("training labels are constant; accuracy is not meaningful".into());
    }
    Ok(Prepared {
        config: cfg.clone(),
        params,
        train,
        test,
        crossbar,
        train_state,
        history,
        warnings,
    })
}

/// One encoded unit as written to `codes.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeRecord {
    pub image: usize,
    pub unit: usize,
    pub label: Option<u8>,
    /// `(neuron, count)` for spiking runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<(usize, u32)>>,
    /// `(neuron, coefficient)` for the reference solver.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<(usize, f64)>>,
    pub exposure: f64,
    pub spikes: u32,
    pub active: usize,
    pub rmse: f64,
    pub compression: f64,
    pub energy_j: f64,
}

/// Aggregates over the test units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: RunMode,
    pub n_images: usize,
    pub n_units: usize,
    pub mean_spikes: f64,
    pub mean_active: f64,
    pub mean_rmse: f64,
    pub mean_compression: f64,
    /// Mean energy of one encoded unit.
    pub energy: EnergyReport,
    pub accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    /// Codes per second of simulated time.
    pub throughput: f64,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "mode,n_images,n_units,mean_spikes,mean_active,mean_rmse,mean_compression,\
crossbar_j,comparator_j,cap_reset_j,per_input_j,accuracy,train_accuracy,throughput_codes_per_s";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        let mode = serde_json::to_value(self.mode)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        format!(
            "{mode},{},{},{:.6},{:.6},{:.8},{:.6},{:e},{:e},{:e},{:e},{},{},{:e}",
            self.n_images,
            self.n_units,
            self.mean_spikes,
            self.mean_active,
            self.mean_rmse,
            self.mean_compression,
            self.energy.crossbar_j,
            self.energy.comparator_j,
            self.energy.cap_reset_j,
            self.energy.per_input_j,
            opt(self.accuracy),
            opt(self.train_accuracy),
            self.throughput
        )
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub codes: Vec<CodeRecord>,
    pub trace: Option<Trace>,
}

struct UnitOut {
    features: Vec<f64>,
    record: CodeRecord,
    energy: EnergyReport,
}

struct Encoding<'a> {
    prep: &'a Prepared,
    mode: RunMode,
    crossbar: Crossbar,
    /// Dictionary used for reconstructions.
    view: Matrix,
    lca_dict: Option<Dictionary>,
    read_dev: f64,
}

impl Encoding<'_> {
    fn unit(&self, x: &[f64], image: usize, unit: usize, label: Option<u8>, stream: u64) -> Result<UnitOut> {
        let cfg = &self.prep.config;
        let m = self.crossbar.cols();
        let bits = default_input_bits(x.len());
        match (self.mode.engine_mode(), &self.lca_dict) {
            (Some(mode), _) => {
                let mut rng = unit_rng(cfg.seed, stream);
                let opts = RunOptions {
                    mode,
                    read_dev: self.read_dev,
                    ..RunOptions::default()
                };
                let r = run(&self.crossbar, &self.prep.params, x, &opts, &mut rng)?;
                let counts = &r.code.counts;
                let a = code_to_coeffs(counts, cfg.evaluation.rmse_normalization, Some((&self.view, x)))?;
                let features = match cfg.evaluation.features {
                    Features::Counts => counts.iter().map(|&c| c as f64).collect(),
                    Features::SumToOne => code_to_coeffs(counts, Normalization::SumToOne, None)?,
                };
                Ok(UnitOut {
                    features,
                    record: CodeRecord {
                        image,
                        unit,
                        label,
                        counts: Some(r.code.sparse_pairs()),
                        coeffs: None,
                        exposure: r.code.exposure,
                        spikes: r.code.total(),
                        active: r.code.active(),
                        rmse: rmse(x, &reconstruct(&self.view, &a)),
                        compression: compression(counts, m, bits)?,
                        energy_j: r.energy.total_j(),
                    },
                    energy: r.energy,
                })
            }
            (None, Some(dict)) => {
                let a = lca_encode(dict, x, &cfg.lca)?;
                let active: Vec<u32> = a.iter().map(|&v| (v != 0.0) as u32).collect();
                Ok(UnitOut {
                    record: CodeRecord {
                        image,
                        unit,
                        label,
                        counts: None,
                        coeffs: Some(
                            a.iter()
                                .enumerate()
                                .filter(|(_, &v)| v != 0.0)
                                .map(|(j, &v)| (j, v))
                                .collect(),
                        ),
                        exposure: 0.0,
                        spikes: 0,
                        active: active.iter().sum::<u32>() as usize,
                        rmse: rmse(x, &dict.reconstruct(&a)),
                        compression: compression(&active, m, bits)?,
                        energy_j: 0.0,
                    },
                    features: a,
                    energy: EnergyReport::default(),
                })
            }
            (None, None) => Err(SslcaError::Internal("reference mode without a dictionary".into())),
        }
    }

    /// Encodes every unit of `ds`; returns per-image feature vectors and
    /// per-unit outputs.
    fn dataset(&self, ds: &Dataset, stream_base: u64) -> Result<(Vec<Vec<f64>>, Vec<UnitOut>)> {
        let patch = self.prep.config.dataset.patch;
        let per_image = units_of(&ds.images[0], patch)?.len();
        let outs = par_map(ds.len() * per_image, |k| {
            let (img, u) = (k / per_image, k % per_image);
            let units = units_of(&ds.images[img], patch)?;
            if units.len() != per_image {
                return Err(SslcaError::Data("images of differing geometry".into()));
            }
            self.unit(&units[u], img, u, ds.labels.get(img).copied(), stream_base + k as u64)
        })?;
        let feats = outs
            .chunks(per_image)
            .map(|c| c.iter().flat_map(|o| o.features.iter().copied()).collect())
            .collect();
        Ok((feats, outs))
    }
}

/// Columns scaled to unit norm, the usual operating point of the reference
/// solver; all-zero columns are left alone.
fn unit_columns(phi: &Matrix) -> Matrix {
    let norms: Vec<f64> = (0..phi.cols())
        .map(|j| phi.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    Matrix::from_fn(phi.rows(), phi.cols(), |i, j| {
        if norms[j] > 0.0 {
            phi.get(i, j) / norms[j]
        } else {
            0.0
        }
    })
}

/// Encodes the test split (and the training split when the classifier is
/// on) under `mode` and `variability`, and scores the result.
pub fn evaluate(prep: &Prepared, mode: RunMode, variability: &VariabilityConfig) -> Result<Evaluation> {
    let cfg = &prep.config;
    variability.validate()?;
    let crossbar = if variability.write_dev_offline > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(variability.seed);
        prep.crossbar.perturb_offline(variability.write_dev_offline, &mut rng)
    } else {
        prep.crossbar.clone()
    };
    let zero_floor = cfg.training.as_ref().is_some_and(|t| t.zero_floor);
    let view = if zero_floor {
        crossbar.weights_zero_floor()
    } else {
        crossbar.weights()
    };
    let lca_dict = match mode {
        RunMode::LcaReference => Some(Dictionary::new(unit_columns(&view))?),
        _ => None,
    };
    let enc = Encoding {
        prep,
        mode,
        crossbar,
        view,
        lca_dict,
        read_dev: variability.read_dev,
    };
    let (test_feats, outs) = enc.dataset(&prep.test, TEST_STREAM)?;
    let (accuracy, train_accuracy) = if cfg.evaluation.slp && !prep.train.is_empty() {
        let (train_feats, _) = enc.dataset(&prep.train, 0)?;
        let (model, _) = slp_train(&train_feats, &prep.train.labels, 10, &cfg.evaluation.slp_config)?;
        (
            Some(slp_eval(&model, &test_feats, &prep.test.labels)?),
            Some(slp_eval(&model, &train_feats, &prep.train.labels)?),
        )
    } else {
        (None, None)
    };
    let n = outs.len() as f64;
    let mut energy = EnergyReport::default();
    for o in &outs {
        energy.add(&o.energy);
    }
    energy.scale(1.0 / n);
    let mean = |f: &dyn Fn(&CodeRecord) -> f64| outs.iter().map(|o| f(&o.record)).sum::<f64>() / n;
    let metrics = Metrics {
        mode,
        n_images: prep.test.len(),
        n_units: outs.len(),
        mean_spikes: mean(&|r| r.spikes as f64),
        mean_active: mean(&|r| r.active as f64),
        mean_rmse: mean(&|r| r.rmse),
        mean_compression: mean(&|r| r.compression),
        energy,
        accuracy,
        train_accuracy,
        throughput: if mode == RunMode::LcaReference {
            0.0
        } else {
            1.0 / prep.params.exposure
        },
    };
    let trace = if cfg.evaluation.trace && mode != RunMode::LcaReference {
        let x = &units_of(&prep.test.images[0], cfg.dataset.patch)?[0];
        Some(trace_unit(prep, x, mode, TEST_STREAM)?.1)
    } else {
        None
    };
    Ok(Evaluation {
        metrics,
        codes: outs.into_iter().map(|o| o.record).collect(),
        trace,
    })
}

/// Replays one unit with tracing on; returns the input trains and trace.
/// The result matches the untraced encoding of the same stream.
pub fn trace_unit(prep: &Prepared, x: &[f64], mode: RunMode, stream: u64) -> Result<(Vec<SpikeTrain>, Trace)> {
    let mode = mode
        .engine_mode()
        .ok_or_else(|| SslcaError::Config("traces need a spiking mode".into()))?;
    let p = &prep.params;
    let mut rng = unit_rng(prep.config.seed, stream);
    let trains = generate_all(x, p.k_max, p.bias, p.input_spike_width, p.exposure, &mut rng);
    let opts = RunOptions {
        mode,
        read_dev: prep.config.variability.read_dev,
        record_trace: true,
        ..RunOptions::default()
    };
    let r = simulate(prep.crossbar.conductance(), p, &trains, &opts, &mut rng)?;
    let trace = r
        .trace
        .ok_or_else(|| SslcaError::Internal("trace was not recorded".into()))?;
    Ok((trains, trace))
}

/// Stream index of a test unit, for replaying it with [`trace_unit`].
pub fn test_stream(image: usize, unit: usize, units_per_image: usize) -> u64 {
    TEST_STREAM + (image * units_per_image + unit) as u64
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Prepared, Evaluation)> {
    let prep = prepare(cfg)?;
    let eval = evaluate(&prep, cfg.mode, &cfg.variability)?;
    Ok((prep, eval))
}

#[derive(Serialize)]
struct ParamsFile<'a> {
    schema: u32,
    name: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a ExperimentConfig,
    params: &'a NetworkParams,
    history: &'a [EpochStats],
    warnings: &'a [String],
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes `params.json`, `codes.jsonl`, `metrics.csv` and, when a trace
/// was recorded, `traces.csv` under the run directory.
pub fn write_outputs(prep: &Prepared, eval: &Evaluation) -> Result<PathBuf> {
    let cfg = &prep.config;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    let hash = cfg.hash();
    let params = ParamsFile {
        schema: SCHEMA_VERSION,
        name: &cfg.name,
        seed: cfg.seed,
        config_hash: hash.clone(),
        config: cfg,
        params: &prep.params,
        history: &prep.history,
        warnings: &prep.warnings,
    };
    fs::write(dir.join("params.json"), serde_json::to_string_pretty(&params)?)?;
    let mut w = create(&dir.join("codes.jsonl"))?;
    for rec in &eval.codes {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    let mut w = create(&dir.join("metrics.csv"))?;
    writeln!(w, "name,seed,config_hash,{}", Metrics::CSV_HEADER)?;
    writeln!(w, "{},{},{hash},{}", cfg.name, cfg.seed, eval.metrics.csv_row())?;
    w.flush()?;
    if let Some(trace) = &eval.trace {
        let mut w = create(&dir.join("traces.csv"))?;
        trace.write_csv(cfg.evaluation.trace_samples, &mut w)?;
        w.flush()?;
    }
    Ok(dir)
}

/// Saves the trained crossbar with its optimizer and homeostasis state.
pub fn write_checkpoint(prep: &Prepared) -> Result<PathBuf> {
    let dir = prep.config.run_dir();
    fs::create_dir_all(&dir)?;
    let path = dir.join("crossbar.json");
    let ext = prep.train_state.as_ref().map(serde_json::to_value).transpose()?;
    prep.crossbar.save(&path, ext)?;
    let mut w = create(&dir.join("history.csv"))?;
    writeln!(w, "epoch,mean_spikes,mean_active,mean_rmse")?;
    for h in &prep.history {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.8}",
            h.epoch, h.mean_spikes, h.mean_active, h.mean_rmse
        )?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RfAvg,
    /// Maximum input duty cycle.
    KIn,
    /// Output duty cycle.
    KOut,
    ReadDev,
    WriteDevOnline,
    WriteDevOffline,
    Bias,
}

impl std::str::FromStr for SweepAxis {
    type Err = SslcaError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| SslcaError::Config(format!("unknown sweep axis '{s}'")))
    }
}

impl SweepAxis {
    pub fn apply(self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            SweepAxis::RfAvg => cfg.network.rf_avg = v,
            SweepAxis::KIn => cfg.network.k_max = v,
            SweepAxis::KOut => cfg.network.k_out = v,
            SweepAxis::ReadDev => cfg.variability.read_dev = v,
            SweepAxis::WriteDevOnline => cfg.variability.write_dev_online = v,
            SweepAxis::WriteDevOffline => cfg.variability.write_dev_offline = v,
            SweepAxis::Bias => cfg.network.bias = v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: Metrics,
    /// Accuracy relative to the same configuration without deviations.
    pub normalized_accuracy: Option<f64>,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "value,accuracy,normalized_accuracy,mean_rmse,per_input_j,mean_spikes,mean_active";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        let m = &self.metrics;
        format!(
            "{},{},{},{:.8},{:e},{:.6},{:.6}",
            self.value,
            opt(m.accuracy),
            opt(self.normalized_accuracy),
            m.mean_rmse,
            m.energy.per_input_j,
            m.mean_spikes,
            m.mean_active
        )
    }
}

/// Trained crossbars keyed by everything that influences training.
#[derive(Default)]
pub struct PreparedCache {
    entries: HashMap<String, Prepared>,
}

impl PreparedCache {
    fn key(cfg: &ExperimentConfig) -> String {
        let mut c = cfg.clone();
        c.variability.read_dev = 0.0;
        c.variability.write_dev_offline = 0.0;
        c.evaluation = EvalSpec::default();
        c.mode = RunMode::Inhibited;
        c.hash()
    }

    /// Prepared experiment for `cfg`, training only when no equivalent
    /// crossbar has been built yet.
    pub fn get(&mut self, cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Prepared> {
        let key = Self::key(cfg);
        if let Some(p) = self.entries.get(&key) {
            let mut p = p.clone();
            p.config = cfg.clone();
            p.params = calibrate_for(cfg, p.params.n_inputs)?;
            return Ok(p);
        }
        let p = prepare_with(cfg, train.clone(), test.clone())?;
        self.entries.insert(key, p.clone());
        Ok(p)
    }
}

/// Runs the experiment once per axis value. Each accuracy is normalised by
/// the same configuration with every deviation set to zero.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(SslcaError::Config("sweep needs at least one value".into()));
    }
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    let mut cache = PreparedCache::default();
    let mut baselines: HashMap<String, Metrics> = HashMap::new();
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        axis.apply(&mut c, v);
        c.validate()?;
        let prep = cache.get(&c, &train, &test)?;
        let metrics = evaluate(&prep, c.mode, &c.variability)?.metrics;
        let mut ideal = c.clone();
        ideal.variability = VariabilityConfig {
            seed: c.variability.seed,
            ..VariabilityConfig::none()
        };
        let key = ideal.hash();
        if c.variability.is_ideal() {
            baselines.entry(key.clone()).or_insert_with(|| metrics.clone());
        }
        let base = match baselines.get(&key) {
            Some(b) => b.clone(),
            None => {
                let p = cache.get(&ideal, &train, &test)?;
                let b = evaluate(&p, ideal.mode, &ideal.variability)?.metrics;
                baselines.insert(key, b.clone());
                b
            }
        };
        let normalized_accuracy = match (metrics.accuracy, base.accuracy) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        rows.push(SweepRow {
            value: v,
            metrics,
            normalized_accuracy,
        });
    }
    Ok(rows)
}

pub fn write_sweep(cfg: &ExperimentConfig, axis: SweepAxis, rows: &[SweepRow]) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    let axis_name = serde_json::to_value(axis)?.as_str().unwrap_or("axis").to_string();
    let path = dir.join(format!("sweep_{axis_name}.csv"));
    let mut w = create(&path)?;
    writeln!(w, "# config_hash={} seed={} axis={axis_name}", cfg.hash(), cfg.seed)?;
    writeln!(w, "{}", SweepRow::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(mode: RunMode) -> ExperimentConfig {
        ExperimentConfig {
            name: "unit".into(),
            dataset: DatasetSpec {
                kind: DatasetKind::Synthetic,
                scale: None,
                train: 40,
                test: 12,
                ..DatasetSpec::default()
            },
            network: CalibrationSpec {
                n_neurons: 8,
                rf_avg: 0.5,
                ..CalibrationSpec::default()
            },
            mode,
            training: Some(TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            }),
            evaluation: EvalSpec {
                slp: false,
                ..EvalSpec::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_round_trips_and_hashes_stably() {
        let cfg = synthetic(RunMode::Inhibited);
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 2;
        assert_ne!(other.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"schema": 1, "name": "x", "mode": "lca_reference"}"#).unwrap();
        assert_eq!(cfg.mode, RunMode::LcaReference);
        assert_eq!(cfg.network.n_neurons, 50);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            r#"{"schema": 9}"#,
            r#"{"schema": 1, "name": "a/b"}"#,
            r#"{"schema": 1, "mode": "sideways"}"#,
        ] {
            let e = ExperimentConfig::from_json(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }

    #[test]
    fn missing_data_is_a_data_error() {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec {
                dir: Some(PathBuf::from("/nonexistent/sslca")),
                ..DatasetSpec::default()
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(prepare(&cfg).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = synthetic(RunMode::Inhibited);
        let (_, a) = run_experiment(&cfg).unwrap();
        let (_, b) = run_experiment(&cfg).unwrap();
        assert_eq!(a.codes, b.codes);
        assert_eq!(a.metrics.csv_row(), b.metrics.csv_row());
        assert!(a.metrics.mean_spikes > 0.0);
        assert_eq!(a.metrics.n_units, 12);
    }

    #[test]
    fn every_mode_produces_codes() {
        for mode in [RunMode::Uninhibited, RunMode::Inhibited, RunMode::LcaReference] {
            let (_, e) = run_experiment(&synthetic(mode)).unwrap();
            assert_eq!(e.codes.len(), 12);
            assert!(e.metrics.mean_rmse.is_finite());
            assert_eq!(e.codes[0].counts.is_some(), mode != RunMode::LcaReference);
        }
    }

    #[test]
    fn trace_replays_the_encoded_unit() {
        let mut cfg = synthetic(RunMode::Inhibited);
        cfg.evaluation.trace = true;
        let (prep, e) = run_experiment(&cfg).unwrap();
        let x = &prep.test.images[0].data;
        let (_, trace) = trace_unit(&prep, x, RunMode::Inhibited, test_stream(0, 0, 1)).unwrap();
        assert!((trace.end_time() - prep.params.exposure).abs() < 1e-15);
        assert!(e.trace.is_some());
    }

    #[test]
    fn outputs_land_in_run_dir() {
        let mut cfg = synthetic(RunMode::Inhibited);
        let tmp = std::env::temp_dir().join(format!("sslca-exp-{}", std::process::id()));
        cfg.output = tmp.clone();
        cfg.evaluation.trace = true;
        let (prep, e) = run_experiment(&cfg).unwrap();
        let dir = write_outputs(&prep, &e).unwrap();
        assert_eq!(dir, tmp.join("unit").join("1"));
        for f in ["params.json", "codes.jsonl", "metrics.csv", "traces.csv"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let first = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        let (prep, e) = run_experiment(&cfg).unwrap();
        write_outputs(&prep, &e).unwrap();
        assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap(), first);
        let ck = write_checkpoint(&prep).unwrap();
        let (xb, ext) = Crossbar::load(&ck).unwrap();
        assert_eq!(&xb, &prep.crossbar);
        assert!(serde_json::from_value::<TrainState>(ext.unwrap()).is_ok());
        fs::remove_dir_all(&tmp).ok();
    }

    #[test]
    fn singleton_sweep_matches_a_run() {
        let cfg = synthetic(RunMode::Inhibited);
        let rows = sweep(&cfg, SweepAxis::RfAvg, &[cfg.network.rf_avg]).unwrap();
        let (_, e) = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].metrics, e.metrics);
    }

    #[test]
    fn axis_names_parse() {
        assert_eq!("read-dev".parse::<SweepAxis>().unwrap(), SweepAxis::ReadDev);
        assert_eq!("rf_avg".parse::<SweepAxis>().unwrap(), SweepAxis::RfAvg);
        assert!("volume".parse::<SweepAxis>().is_err());
    }
}
