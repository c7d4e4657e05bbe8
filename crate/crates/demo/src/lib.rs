//! WebAssembly bindings for a static demo page: calibrate a network, watch a
//! 4-input, 2-neuron network encode an input, and score code compression.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use sslca::calibration::{calibrate, CalibrationSpec};
use sslca::codec::{code_to_coeffs, compression, default_input_bits, reconstruct, rmse, Normalization};
use sslca::crossbar::{Crossbar, DeviceModel};
use sslca::engine::{run, Mode, NodeKind, RunOptions};
use sslca::Matrix;

fn to_js<T: Serialize>(v: &T) -> std::result::Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

fn err(e: sslca::SslcaError) -> JsError {
    JsError::new(&e.to_string())
}

/// Calibrated constants for a network; conductances in microsiemens.
#[wasm_bindgen]
pub fn calibrate_network(
    n_inputs: usize,
    rf_avg: f64,
    g_min_us: f64,
    g_max_us: f64,
    bias: f64,
) -> Result<String, JsError> {
    let spec = CalibrationSpec {
        n_inputs,
        device: DeviceModel {
            g_min: g_min_us * 1e-6,
            g_max: g_max_us * 1e-6,
            v_read: 0.7,
        },
        rf_avg,
        bias,
        ..CalibrationSpec::default()
    };
    to_js(&calibrate(&spec).map_err(err)?)
}

#[derive(Serialize)]
pub struct PairResult {
    pub counts: Vec<u32>,
    pub spikes: Vec<(f64, usize)>,
    pub reconstruction: Vec<f64>,
    pub rmse: f64,
    pub energy_pj: f64,
    pub v_fire: f64,
    /// `[t, v_neuron_0, v_neuron_1]` samples.
    pub trace: Vec<[f64; 3]>,
}

/// The two-neuron network: neuron 0 stores inputs 0 and 1, neuron 1 stores
/// inputs 2 and 3. Intensities are clamped to `[0, 1]`.
#[wasm_bindgen]
pub fn simulate_pair(intensities: Vec<f64>, inhibited: bool, seed: u64) -> Result<String, JsError> {
    if intensities.len() != 4 {
        return Err(JsError::new("expected 4 intensities"));
    }
    let x: Vec<f64> = intensities.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let device = DeviceModel::default();
    let w = Matrix::from_fn(4, 2, |i, j| if i / 2 == j { 1.0 } else { 0.0 });
    let xb = Crossbar::from_weights(&w, device).map_err(err)?;
    let rf_avg = 0.5 * (1.0 + device.weight_floor());
    let p = calibrate(&CalibrationSpec {
        n_inputs: 4,
        n_neurons: 2,
        rf_avg,
        ..CalibrationSpec::default()
    })
    .map_err(err)?;
    let opts = RunOptions {
        mode: if inhibited { Mode::Inhibited } else { Mode::Uninhibited },
        record_trace: true,
        ..RunOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = run(&xb, &p, &x, &opts, &mut rng).map_err(err)?;
    let view = xb.weights_zero_floor();
    let a = code_to_coeffs(&r.code.counts, Normalization::LeastSquares, Some((&view, &x))).map_err(err)?;
    let s_hat = reconstruct(&view, &a);
    let trace = r
        .trace
        .map(|tr| {
            tr.sample_times(300)
                .into_iter()
                .map(|t| {
                    let v = |j| tr.voltage(NodeKind::Neuron, j, t).unwrap_or(0.0);
                    [t, v(0), v(1)]
                })
                .collect()
        })
        .unwrap_or_default();
    to_js(&PairResult {
        counts: r.code.counts,
        spikes: r.spikes,
        rmse: rmse(&x, &s_hat),
        reconstruction: s_hat,
        energy_pj: r.energy.total_j() * 1e12,
        v_fire: p.v_fire,
        trace,
    })
}

/// Fraction of input bits saved by sending `active` neuron indices with
/// 4-bit counts instead of 8 bits per input scalar.
#[wasm_bindgen]
pub fn code_compression(active: usize, n_neurons: usize, n_scalars: usize) -> Result<f64, JsError> {
    let counts: Vec<u32> = (0..n_neurons).map(|j| (j < active) as u32).collect();
    compression(&counts, n_neurons, default_input_bits(n_scalars)).map_err(err)
}
