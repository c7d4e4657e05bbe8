//! In-situ dictionary learning: residual Oja updates scaled by ADADELTA,
//! with threshold homeostasis for silent neurons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::NetworkParams;
use crate::codec::{code_to_coeffs, reconstruct, rmse, Normalization};
use crate::crossbar::{perturb_write, Crossbar, DeviceModel};
use crate::engine::{run, Mode, RunOptions};
use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;
use crate::reference::{lca_encode, Dictionary, LcaConfig};

/// `Δw_ij ∝ a_j·r_i` with residual `r = x − W·a`.
pub fn oja_update(weights: &Matrix, x: &[f64], a: &[f64]) -> Result<Matrix> {
    let (n, m) = weights.shape();
    if x.len() != n || a.len() != m {
        return Err(SslcaError::dims(
            format!("x of {n}, a of {m}"),
            format!("x of {}, a of {}", x.len(), a.len()),
        ));
    }
    let r = residual(weights, x, a);
    Ok(Matrix::from_fn(n, m, |i, j| a[j] * r[i]))
}

pub fn residual(weights: &Matrix, x: &[f64], a: &[f64]) -> Vec<f64> {
    let recon = weights.mul_vec(a);
    x.iter().zip(recon).map(|(xi, ri)| xi - ri).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    sq_grad: Vec<f64>,
    sq_delta: Vec<f64>,
}

impl Adadelta {
    pub fn new(len: usize, rho: f64, eps: f64) -> Self {
        Adadelta {
            rho,
            eps,
            sq_grad: vec![0.0; len],
            sq_delta: vec![0.0; len],
        }
    }

    /// Delta to add for an update direction (a descent direction, so the
    /// delta shares its sign).
    pub fn step(&mut self, direction: &[f64]) -> Vec<f64> {
        debug_assert_eq!(direction.len(), self.sq_grad.len());
        let (rho, eps) = (self.rho, self.eps);
        direction
            .iter()
            .zip(self.sq_grad.iter_mut().zip(self.sq_delta.iter_mut()))
            .map(|(&g, (eg, ed))| {
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let d = ((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *ed = rho * *ed + (1.0 - rho) * d * d;
                d
            })
            .collect()
    }

    pub fn accumulators(&self) -> (&[f64], &[f64]) {
        (&self.sq_grad, &self.sq_delta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomeostasisConfig {
    pub enabled: bool,
    pub threshold_patches: u32,
    pub decay: f64,
    pub floor: f64,
}

impl Default for HomeostasisConfig {
    fn default() -> Self {
        HomeostasisConfig {
            enabled: true,
            threshold_patches: 20,
            decay: 0.95,
            floor: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homeostasis {
    pub cfg: HomeostasisConfig,
    /// Patches since each neuron last fired.
    pub idle: Vec<u32>,
    /// Threshold multipliers in `(0, 1]`.
    pub scale: Vec<f64>,
}

impl Homeostasis {
    pub fn new(m: usize, cfg: HomeostasisConfig) -> Self {
        Homeostasis {
            cfg,
            idle: vec![0; m],
            scale: vec![1.0; m],
        }
    }

    /// Neurons that fired return to the nominal threshold; neurons silent for
    /// `threshold_patches` patches get their threshold lowered by `decay`.
    pub fn tick(&mut self, counts: &[u32]) {
        for ((c, idle), s) in counts.iter().zip(&mut self.idle).zip(&mut self.scale) {
            if *c > 0 {
                *idle = 0;
                *s = 1.0;
            } else {
                *idle += 1;
                if *idle >= self.cfg.threshold_patches {
                    *s = (*s * self.cfg.decay).max(self.cfg.floor);
                    *idle = 0;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub optimizer: Adadelta,
    pub homeostasis: Homeostasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Encoder {
    Engine { mode: Mode },
    Lca(LcaConfig),
}

impl Default for Encoder {
    fn default() -> Self {
        Encoder::Engine { mode: Mode::Inhibited }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub rho: f64,
    pub eps: f64,
    pub homeostasis: HomeostasisConfig,
    pub encoder: Encoder,
    pub normalization: Normalization,
    /// Read noise applied while encoding.
    pub read_dev: f64,
    /// Write noise applied to every programmed device.
    pub write_dev_online: f64,
    /// Let the learned weights fall to zero even though devices stop at
    /// the floor.
    pub zero_floor: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            rho: 0.95,
            eps: 1e-6,
            homeostasis: HomeostasisConfig::default(),
            encoder: Encoder::default(),
            normalization: Normalization::SumToOne,
            read_dev: 0.0,
            write_dev_online: 0.0,
            zero_floor: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_spikes: f64,
    pub mean_active: f64,
    pub mean_rmse: f64,
}

/// Weights drawn uniformly around `rf_avg`, never below the device floor.
pub fn init_crossbar<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    rf_avg: f64,
    device: DeviceModel,
    rng: &mut R,
) -> Result<Crossbar> {
    let lo = device.weight_floor();
    let hi = (2.0 * rf_avg - lo).clamp(lo, 1.0);
    let w = Matrix::from_fn(n, m, |_, _| if hi > lo { rng.gen_range(lo..hi) } else { lo });
    Crossbar::from_weights(&w, device)
}

/// Coefficients for one patch from the configured encoder.
pub fn encode<R: Rng + ?Sized>(
    crossbar: &Crossbar,
    params: &NetworkParams,
    x: &[f64],
    encoder: &Encoder,
    read_dev: f64,
    vfire_scale: Option<Vec<f64>>,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<f64>)> {
    match encoder {
        Encoder::Engine { mode } => {
            let opts = RunOptions {
                mode: *mode,
                read_dev,
                vfire_scale,
                ..RunOptions::default()
            };
            let r = run(crossbar, params, x, &opts, rng)?;
            let a = code_to_coeffs(&r.code.counts, Normalization::SumToOne, None)?;
            Ok((r.code.counts, a))
        }
        Encoder::Lca(cfg) => {
            let dict = Dictionary::new(crossbar.weights())?;
            let a = lca_encode(&dict, x, cfg)?;
            let counts = a.iter().map(|&v| (v > 0.0) as u32).collect();
            Ok((counts, a))
        }
    }
}

pub struct Trainer<'a> {
    pub crossbar: Crossbar,
    pub state: TrainState,
    params: &'a NetworkParams,
    cfg: &'a TrainConfig,
    weights: Matrix,
}

impl<'a> Trainer<'a> {
    pub fn new(crossbar: Crossbar, params: &'a NetworkParams, cfg: &'a TrainConfig) -> Result<Self> {
        if !(cfg.homeostasis.decay > 0.0 && cfg.homeostasis.decay < 1.0) {
            return Err(SslcaError::Config("homeostasis decay must lie in (0, 1)".into()));
        }
        if !(cfg.write_dev_online >= 0.0) {
            return Err(SslcaError::Config("write_dev_online must be >= 0".into()));
        }
        let (n, m) = (crossbar.rows(), crossbar.cols());
        let weights = crossbar.weights();
        Ok(Trainer {
            state: TrainState {
                optimizer: Adadelta::new(n * m, cfg.rho, cfg.eps),
                homeostasis: Homeostasis::new(m, cfg.homeostasis.clone()),
            },
            crossbar,
            params,
            cfg,
            weights,
        })
    }

    /// Presents one patch; returns its counts and training reconstruction RMSE.
    pub fn step<R: Rng + ?Sized>(&mut self, x: &[f64], rng: &mut R) -> Result<(Vec<u32>, f64)> {
        let scale = self
            .cfg
            .homeostasis
            .enabled
            .then(|| self.state.homeostasis.scale.clone());
        let (counts, mut a) = match &self.cfg.encoder {
            // the reference solver sees the learned weights directly
            Encoder::Lca(lca) => {
                let a = lca_encode(&Dictionary::new(self.weights.clone())?, x, lca)?;
                (a.iter().map(|&v| (v > 0.0) as u32).collect(), a)
            }
            enc => encode(&self.crossbar, self.params, x, enc, self.cfg.read_dev, scale, rng)?,
        };
        if self.cfg.normalization == Normalization::LeastSquares && matches!(self.cfg.encoder, Encoder::Engine { .. }) {
            a = code_to_coeffs(&counts, Normalization::LeastSquares, Some((&self.weights, x)))?;
        }
        let err = rmse(x, &reconstruct(&self.weights, &a));
        let dir = oja_update(&self.weights, x, &a)?;
        let delta = self.state.optimizer.step(dir.as_slice());
        let device = *self.crossbar.device();
        let floor = device.weight_floor();
        let lo = if self.cfg.zero_floor { 0.0 } else { floor };
        let m = self.weights.cols();
        for (k, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let (i, j) = (k / m, k % m);
            let w = (self.weights.get(i, j) + d).clamp(lo, 1.0);
            let g = device.clamp(perturb_write(
                w.max(floor) * device.g_max,
                self.cfg.write_dev_online,
                rng,
            ));
            self.crossbar.program(i, j, g);
            // below the floor the device is pinned and the learned value is kept
            self.weights.set(i, j, if w < floor { w } else { g / device.g_max });
        }
        if self.cfg.homeostasis.enabled {
            self.state.homeostasis.tick(&counts);
        }
        Ok((counts, err))
    }

    pub fn epoch<R: Rng + ?Sized>(&mut self, epoch: usize, patches: &[Vec<f64>], rng: &mut R) -> Result<EpochStats> {
        let mut stats = EpochStats {
            epoch,
            ..EpochStats::default()
        };
        for x in patches {
            let (counts, err) = self.step(x, rng)?;
            stats.mean_spikes += counts.iter().sum::<u32>() as f64;
            stats.mean_active += counts.iter().filter(|&&c| c > 0).count() as f64;
            stats.mean_rmse += err;
        }
        let n = patches.len().max(1) as f64;
        stats.mean_spikes /= n;
        stats.mean_active /= n;
        stats.mean_rmse /= n;
        Ok(stats)
    }
}

/// Full training loop over `patches` for `cfg.epochs` epochs.
pub fn train<R: Rng + ?Sized>(
    crossbar: Crossbar,
    patches: &[Vec<f64>],
    params: &NetworkParams,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Crossbar, TrainState, Vec<EpochStats>)> {
    if patches.is_empty() {
        return Err(SslcaError::Config("training set is empty".into()));
    }
    if let Some(p) = patches.iter().find(|p| p.len() != crossbar.rows()) {
        return Err(SslcaError::dims(
            format!("patches of length {}", crossbar.rows()),
            p.len(),
        ));
    }
    let mut t = Trainer::new(crossbar, params, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        history.push(t.epoch(e, patches, rng)?);
    }
    Ok((t.crossbar, t.state, history))
}
