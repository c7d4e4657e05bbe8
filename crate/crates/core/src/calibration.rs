//! Analytic derivation of the circuit constants.
//!
//! The neuron capacitor charges through its column of the crossbar, so with
//! inputs replaced by their expected voltage every neuron follows
//!
//! ```text
//! C dV/dt = Q2 - Q1 V,   V(t) = (Q2/Q1)(1 - e^{-t Q1 / C}) + V0 e^{-t Q1 / C}
//! ```
//!
//! where `Q1 = Σ G_i` is the column conductance and `Q2 = V_cc Σ K_i G_i` the
//! match between stored receptive field and input. Firing threshold and
//! capacitance are chosen from an "average case" receptive field made only of
//! `g_max` / `g_min` devices; the inhibition resistor is the root of the
//! steady-state balance between back-charging during a spike and discharge by
//! input activity.

use serde::{Deserialize, Serialize};

use crate::crossbar::DeviceModel;
use crate::error::{Result, SslcaError};

/// 1 − e⁻¹, the fraction of the asymptotic voltage used for the threshold
/// and the default ratio between `rf_least` and `rf_avg`.
pub const ONE_MINUS_INV_E: f64 = 0.632_120_558_828_557_7;

/// Column conductance `q1` (S) and match current `q2` (A) of the average-case
/// receptive field.
pub fn compute_q(rf_stored: f64, rf_input: f64, device: &DeviceModel, k_max: f64, n: usize) -> Result<(f64, f64)> {
    let g = device.weight_floor();
    if !(rf_stored > g && rf_stored <= 1.0) {
        return Err(SslcaError::Domain(format!(
            "rf_stored={rf_stored} must lie in ({g:.6}, 1]"
        )));
    }
    if !(rf_input >= 0.0) {
        return Err(SslcaError::Domain(format!("rf_input={rf_input} must be >= 0")));
    }
    let n = n as f64;
    // share of the receptive field sitting at g_max
    let i_high = (rf_stored - g) / (1.0 - g);
    let i_low = 1.0 - i_high;
    let q1 = n * device.g_max * rf_stored;
    let q2 = n * device.v_read * device.g_max * k_max * (rf_input / rf_stored) * (i_high + i_low * g * g);
    Ok((q1, q2))
}

/// Threshold voltage and uninhibited neuron capacitance.
///
/// The threshold is `(1 − e⁻¹)·q2/q1` evaluated for the weakest input that
/// should still fire (`rf_least`); the capacitance makes the average case
/// reach that threshold after `t_fire`.
pub fn derive_uninhibited(
    rf_avg: f64,
    rf_least: f64,
    device: &DeviceModel,
    k_max: f64,
    n: usize,
    t_fire: f64,
) -> Result<(f64, f64)> {
    let (q1, q2) = compute_q(rf_avg, rf_least, device, k_max, n)?;
    if q2 <= 0.0 {
        return Err(SslcaError::Infeasible("rf_least produces no charging current".into()));
    }
    let v_fire = ONE_MINUS_INV_E * q2 / q1;
    let (q1, q2) = compute_q(rf_avg, rf_avg, device, k_max, n)?;
    let c = capacitance_for(q1, q2, v_fire, t_fire)?;
    Ok((v_fire, c))
}

/// Capacitance that brings a neuron from 0 V to `v_fire` in `t_fire`.
pub fn capacitance_for(q1: f64, q2: f64, v_fire: f64, t_fire: f64) -> Result<f64> {
    let x = v_fire * q1 / q2;
    if !(x < 1.0) || q2 <= 0.0 {
        return Err(SslcaError::Infeasible(format!(
            "average case never reaches v_fire (v_fire·q1/q2 = {x:.4} >= 1)"
        )));
    }
    Ok(-t_fire * q1 / (-x).ln_1p())
}

/// Outcome of [`solve_crossing_time`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Crossing {
    At(f64),
    Never,
}

impl Crossing {
    pub fn time(self) -> Option<f64> {
        match self {
            Crossing::At(t) => Some(t),
            Crossing::Never => None,
        }
    }
}

/// First time the closed-form charging curve reaches `v_target`.
pub fn solve_crossing_time(q1: f64, q2: f64, c: f64, v_start: f64, v_target: f64) -> Crossing {
    if v_start == v_target {
        return Crossing::At(0.0);
    }
    let v_inf = q2 / q1;
    let reachable = if v_start < v_target {
        v_inf > v_target
    } else {
        v_inf < v_target
    };
    if !reachable {
        return Crossing::Never;
    }
    Crossing::At((c / q1) * ((v_start - v_inf) / (v_target - v_inf)).ln())
}

/// Inputs for the inhibition balance.
#[derive(Clone, Copy, Debug)]
pub struct InhibitionInputs {
    pub v_cc: f64,
    pub v_fire: f64,
    pub c_uninhib: f64,
    /// `f(C) = c_fraction · C` is the inhibited neuron capacitance.
    pub c_fraction: f64,
    /// Average-case `(q1, q2)` with stored and input receptive field at `rf_avg`.
    pub q1: f64,
    pub q2: f64,
    pub t_fire: f64,
    pub t_spike: f64,
    pub c_inhib: f64,
    /// Equivalent resistance of the device that back-charges an inhibition capacitor.
    pub r_cb: f64,
    /// Duty cycle of the tracked input.
    pub k_i: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InhibitionParams {
    pub c_cb: f64,
    pub t_collect: f64,
    pub t_inhib: f64,
    pub r_inhib: f64,
}

const R_INHIB_LO: f64 = 1e2;
const R_INHIB_HI: f64 = 1e12;

/// `ln(LHS) − ln(RHS)` of the inhibition balance
/// `(V_cc/2)·e^{t_inhib B} = V_cc(1 − e^{−t_spike A}) / (1 − e^{−t_collect B − t_spike A})`
/// with `A = 1/(r_cb c_inhib)` and `B = k_i/(r_inhib c_inhib)`.
/// Strictly decreasing in `r_inhib`.
pub fn inhibition_residual(
    r_inhib: f64,
    v_cc: f64,
    t_collect: f64,
    t_inhib: f64,
    t_spike: f64,
    c_inhib: f64,
    r_cb: f64,
    k_i: f64,
) -> f64 {
    let a = 1.0 / (r_cb * c_inhib);
    let b = k_i / (r_inhib * c_inhib);
    let lhs = (0.5 * v_cc).ln() + t_inhib * b;
    let num = -(-t_spike * a).exp_m1();
    let den = -(-t_collect * b - t_spike * a).exp_m1();
    let rhs = v_cc.ln() + num.ln() - den.ln();
    lhs - rhs
}

pub fn derive_inhibited(inp: &InhibitionInputs) -> Result<InhibitionParams> {
    if !(inp.c_inhib > 0.0) || !(inp.r_cb > 0.0) {
        return Err(SslcaError::Domain("c_inhib and r_cb must be positive".into()));
    }
    if !(inp.c_fraction > 0.0 && inp.c_fraction < 1.0) {
        return Err(SslcaError::Domain(format!(
            "c_fraction={} must lie in (0, 1)",
            inp.c_fraction
        )));
    }
    let c_cb = inp.c_fraction * inp.c_uninhib;
    let t_collect = match solve_crossing_time(inp.q1, inp.q2, c_cb, 0.0, inp.v_fire) {
        Crossing::At(t) => t,
        Crossing::Never => return Err(SslcaError::Infeasible("average case never reaches v_fire".into())),
    };
    if t_collect >= inp.t_fire {
        return Err(SslcaError::Infeasible(format!(
            "t_collect={t_collect:e} leaves no room for inhibition within t_fire={:e}",
            inp.t_fire
        )));
    }
    let t_inhib = inp.t_fire - t_collect;
    let f = |ln_r: f64| {
        inhibition_residual(
            ln_r.exp(),
            inp.v_cc,
            t_collect,
            t_inhib,
            inp.t_spike,
            inp.c_inhib,
            inp.r_cb,
            inp.k_i,
        )
    };
    let r_inhib = bisect_decreasing(f, R_INHIB_LO.ln(), R_INHIB_HI.ln())
        .ok_or_else(|| {
            SslcaError::Infeasible(format!(
                "inhibition balance has no root for r_inhib in [{R_INHIB_LO:e}, {R_INHIB_HI:e}] ohm"
            ))
        })?
        .exp();
    Ok(InhibitionParams {
        c_cb,
        t_collect,
        t_inhib,
        r_inhib,
    })
}

/// Root of a decreasing function on `[lo, hi]`, or `None` without a sign change.
fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let f_lo = f(lo);
    let f_hi = f(hi);
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * mid.abs().max(1.0) {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// How the inhibition capacitor is sized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum InhibCapacitor {
    /// `c_inhib = t_spike / r_cb`: an average-case row charges with one time
    /// constant per output spike.
    UnitChargeTime,
    /// `c_inhib = c_cb`.
    MatchNeuron,
    /// Explicit value in farads.
    Farads(f64),
}

impl Default for InhibCapacitor {
    fn default() -> Self {
        InhibCapacitor::UnitChargeTime
    }
}

/// Everything needed to calibrate one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSpec {
    pub n_inputs: usize,
    pub n_neurons: usize,
    pub device: DeviceModel,
    pub k_max: f64,
    pub rf_avg: f64,
    /// Defaults to `(1 − e⁻¹)·rf_avg`.
    pub rf_least: Option<f64>,
    pub exposure: f64,
    pub target_spikes: f64,
    /// Output duty cycle `t_spike / (t_fire + t_spike)`.
    pub k_out: f64,
    pub input_spike_width: f64,
    pub bias: f64,
    pub c_fraction: f64,
    pub c_inhib: InhibCapacitor,
    /// Defaults to `1 / (g_max · rf_avg)`.
    pub r_cb: Option<f64>,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            n_inputs: 192,
            n_neurons: 128,
            device: DeviceModel::default(),
            k_max: 0.5,
            rf_avg: 0.4,
            rf_least: None,
            exposure: 10e-9,
            target_spikes: 10.0,
            k_out: 0.2,
            input_spike_width: 0.4e-9,
            bias: 0.0,
            c_fraction: 0.5,
            c_inhib: InhibCapacitor::default(),
            r_cb: None,
        }
    }
}

impl CalibrationSpec {
    pub fn cycle(&self) -> f64 {
        self.exposure / self.target_spikes
    }

    pub fn t_fire(&self) -> f64 {
        (1.0 - self.k_out) * self.cycle()
    }

    pub fn t_spike(&self) -> f64 {
        self.k_out * self.cycle()
    }

    fn validate(&self) -> Result<()> {
        self.device.validate()?;
        if self.n_inputs == 0 || self.n_neurons == 0 {
            return Err(SslcaError::Config(
                "network needs at least one input and one neuron".into(),
            ));
        }
        if !(self.k_max > 0.0 && self.k_max < 1.0) {
            return Err(SslcaError::Config(format!("k_max={} must lie in (0, 1)", self.k_max)));
        }
        if !(self.k_out > 0.0 && self.k_out < 1.0) {
            return Err(SslcaError::Config(format!("k_out={} must lie in (0, 1)", self.k_out)));
        }
        if !(self.bias >= 0.0 && self.bias < 1.0) {
            return Err(SslcaError::Config(format!("bias={} must lie in [0, 1)", self.bias)));
        }
        if !(self.exposure > 0.0 && self.target_spikes > 0.0 && self.input_spike_width > 0.0) {
            return Err(SslcaError::Config("timings must be positive".into()));
        }
        Ok(())
    }
}

/// Calibrated circuit constants for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub n_inputs: usize,
    pub n_neurons: usize,
    pub v_cc: f64,
    pub k_max: f64,
    pub rf_avg: f64,
    pub rf_least: f64,
    pub v_fire: f64,
    /// Neuron capacitance without inhibition.
    pub c_uninhib: f64,
    /// Neuron capacitance with inhibition.
    pub c_cb: f64,
    pub c_inhib: f64,
    pub r_inhib: f64,
    pub r_cb: f64,
    pub t_fire: f64,
    pub t_spike: f64,
    pub t_collect: f64,
    pub t_inhib: f64,
    pub input_spike_width: f64,
    pub bias: f64,
    pub target_spikes: f64,
    pub exposure: f64,
}

impl NetworkParams {
    /// Checks the invariants the simulator relies on.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_fire", self.v_fire),
            ("c_uninhib", self.c_uninhib),
            ("c_cb", self.c_cb),
            ("c_inhib", self.c_inhib),
            ("r_inhib", self.r_inhib),
            ("t_fire", self.t_fire),
            ("t_spike", self.t_spike),
            ("t_collect", self.t_collect),
            ("t_inhib", self.t_inhib),
            ("input_spike_width", self.input_spike_width),
            ("exposure", self.exposure),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SslcaError::Config(format!(
                    "network parameter {name}={v} is not calibrated"
                )));
            }
        }
        if self.v_fire >= self.v_cc {
            return Err(SslcaError::Config("v_fire must be below v_cc".into()));
        }
        if !(self.bias >= 0.0 && self.bias < 1.0) {
            return Err(SslcaError::Config(format!("bias={} must lie in [0, 1)", self.bias)));
        }
        if ((self.t_collect + self.t_inhib) - self.t_fire).abs() > 1e-9 * self.t_fire {
            return Err(SslcaError::Config("t_collect + t_inhib must equal t_fire".into()));
        }
        Ok(())
    }
}

/// Runs the whole derivation: threshold, capacitances, inhibition timing and resistor.
pub fn calibrate(spec: &CalibrationSpec) -> Result<NetworkParams> {
    spec.validate()?;
    let d = &spec.device;
    let rf_least = spec.rf_least.unwrap_or(ONE_MINUS_INV_E * spec.rf_avg);
    let t_fire = spec.t_fire();
    let t_spike = spec.t_spike();
    let (v_fire, c_uninhib) = derive_uninhibited(spec.rf_avg, rf_least, d, spec.k_max, spec.n_inputs, t_fire)?;
    let (q1, q2) = compute_q(spec.rf_avg, spec.rf_avg, d, spec.k_max, spec.n_inputs)?;
    let r_cb = spec.r_cb.unwrap_or(1.0 / (d.g_max * spec.rf_avg));
    let c_cb = spec.c_fraction * c_uninhib;
    let c_inhib = match spec.c_inhib {
        InhibCapacitor::UnitChargeTime => t_spike / r_cb,
        InhibCapacitor::MatchNeuron => c_cb,
        InhibCapacitor::Farads(c) => c,
    };
    let inh = derive_inhibited(&InhibitionInputs {
        v_cc: d.v_read,
        v_fire,
        c_uninhib,
        c_fraction: spec.c_fraction,
        q1,
        q2,
        t_fire,
        t_spike,
        c_inhib,
        r_cb,
        k_i: spec.k_max * spec.rf_avg,
    })?;
    let params = NetworkParams {
        n_inputs: spec.n_inputs,
        n_neurons: spec.n_neurons,
        v_cc: d.v_read,
        k_max: spec.k_max,
        rf_avg: spec.rf_avg,
        rf_least,
        v_fire,
        c_uninhib,
        c_cb: inh.c_cb,
        c_inhib,
        r_inhib: inh.r_inhib,
        r_cb,
        t_fire,
        t_spike,
        t_collect: inh.t_collect,
        t_inhib: inh.t_inhib,
        input_spike_width: spec.input_spike_width,
        bias: spec.bias,
        target_spikes: spec.target_spikes,
        exposure: spec.exposure,
    };
    params.validate()?;
    Ok(params)
}

/// One published reference row: inputs plus expected threshold and inhibited
/// neuron capacitance.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReferenceRow {
    pub row: usize,
    pub n: usize,
    pub rf_avg: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub v_fire: f64,
    pub c_cb: f64,
}

/// Example parameters for an inhibited network (`k_max = 0.5`, `V_cc = 0.7 V`,
/// `t_fire = 0.8 ns`).
pub const REFERENCE_ROWS: [ReferenceRow; 8] = [
    ReferenceRow {
        row: 1,
        n: 192,
        rf_avg: 0.4,
        g_min: 4.830918e-06,
        g_max: 1.923077e-05,
        v_fire: 0.087154,
        c_cb: 1.158099e-12,
    },
    ReferenceRow {
        row: 2,
        n: 192,
        rf_avg: 0.4,
        g_min: 4.830918e-07,
        g_max: 1.923077e-06,
        v_fire: 0.087154,
        c_cb: 1.158099e-13,
    },
    ReferenceRow {
        row: 3,
        n: 192,
        rf_avg: 0.4,
        g_min: 4.830918e-08,
        g_max: 1.923077e-07,
        v_fire: 0.087154,
        c_cb: 1.158099e-14,
    },
    ReferenceRow {
        row: 4,
        n: 192,
        rf_avg: 0.4,
        g_min: 4.830918e-08,
        g_max: 1.923077e-06,
        v_fire: 0.134582,
        c_cb: 1.158099e-13,
    },
    ReferenceRow {
        row: 5,
        n: 192,
        rf_avg: 0.4,
        g_min: 4.830918e-08,
        g_max: 1.923077e-05,
        v_fire: 0.139325,
        c_cb: 1.158099e-12,
    },
    ReferenceRow {
        row: 6,
        n: 48,
        rf_avg: 0.4,
        g_min: 4.830918e-06,
        g_max: 1.923077e-05,
        v_fire: 0.087154,
        c_cb: 2.895247e-13,
    },
    ReferenceRow {
        row: 7,
        n: 48,
        rf_avg: 0.6,
        g_min: 4.830918e-06,
        g_max: 1.923077e-05,
        v_fire: 0.116431,
        c_cb: 4.342871e-13,
    },
    ReferenceRow {
        row: 8,
        n: 48,
        rf_avg: 0.8,
        g_min: 4.830918e-06,
        g_max: 1.923077e-05,
        v_fire: 0.131069,
        c_cb: 5.790494e-13,
    },
];

impl ReferenceRow {
    pub fn spec(&self) -> CalibrationSpec {
        CalibrationSpec {
            n_inputs: self.n,
            device: DeviceModel {
                g_min: self.g_min,
                g_max: self.g_max,
                v_read: 0.7,
            },
            rf_avg: self.rf_avg,
            ..CalibrationSpec::default()
        }
    }
}

/// Result of recomputing one reference row.
#[derive(Clone, Debug, Serialize)]
pub struct TableCheckRow {
    pub reference: ReferenceRow,
    pub params: NetworkParams,
    pub v_fire_ok: bool,
    pub c_cb_ok: bool,
}

impl TableCheckRow {
    pub fn passed(&self) -> bool {
        self.v_fire_ok && self.c_cb_ok
    }
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - mag);
    (x * scale).round() / scale
}

pub fn same_to_sig(a: f64, b: f64, digits: i32) -> bool {
    let (ra, rb) = (round_sig(a, digits), round_sig(b, digits));
    (ra - rb).abs() <= 1e-9 * ra.abs().max(rb.abs())
}

/// Recomputes every reference row and compares threshold and inhibited
/// capacitance to three significant figures.
pub fn table_check() -> Result<Vec<TableCheckRow>> {
    REFERENCE_ROWS
        .iter()
        .map(|r| {
            let params = calibrate(&r.spec())?;
            Ok(TableCheckRow {
                reference: *r,
                v_fire_ok: same_to_sig(params.v_fire, r.v_fire, 3),
                c_cb_ok: same_to_sig(params.c_cb, r.c_cb, 3),
                params,
            })
        })
        .collect()
}
