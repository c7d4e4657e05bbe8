use serde::{Deserialize, Serialize};

/// Static power of one column's comparator and header logic (W).
pub const COMPARATOR_POWER_W: f64 = 2.2e-6;

/// Energy spent during one exposure, split by where it is dissipated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub crossbar_j: f64,
    pub comparator_j: f64,
    pub cap_reset_j: f64,
    pub per_input_j: f64,
}

impl EnergyReport {
    pub fn total_j(&self) -> f64 {
        self.crossbar_j + self.comparator_j + self.cap_reset_j
    }

    pub(crate) fn finish(mut self, n_inputs: usize) -> Self {
        self.per_input_j = self.total_j() / n_inputs.max(1) as f64;
        self
    }

    /// Component-wise sum; `per_input_j` is summed too, so averages over
    /// exposures stay consistent.
    pub fn add(&mut self, other: &EnergyReport) {
        self.crossbar_j += other.crossbar_j;
        self.comparator_j += other.comparator_j;
        self.cap_reset_j += other.cap_reset_j;
        self.per_input_j += other.per_input_j;
    }

    pub fn scale(&mut self, k: f64) {
        self.crossbar_j *= k;
        self.comparator_j *= k;
        self.cap_reset_j *= k;
        self.per_input_j *= k;
    }
}

pub fn comparator_energy(n_neurons: usize, dt: f64) -> f64 {
    COMPARATOR_POWER_W * n_neurons as f64 * dt
}

/// `∫ e^{-2t/τ} dt` over `[0, dt]`, i.e. `τ/2·(1 − e^{−2dt/τ})`.
#[inline]
fn decay_sq_integral(tau: f64, dt: f64) -> f64 {
    if tau.is_infinite() {
        dt
    } else {
        -0.5 * tau * (-2.0 * dt / tau).exp_m1()
    }
}

/// Dissipation in one column's devices over `dt` while the neuron relaxes
/// from `v0` towards `v_inf = v_cc·ga/q1` with time constant `tau = C/q1`.
///
/// `ga` is the conductance of rows held at `v_cc`; the remaining `q1 − ga` is
/// grounded. The cross term of the squared drop vanishes because the column
/// current at the asymptote is zero.
pub fn column_energy(v_cc: f64, ga: f64, q1: f64, v0: f64, tau: f64, dt: f64) -> f64 {
    if dt <= 0.0 || q1 <= 0.0 {
        return 0.0;
    }
    let gap = neg_expm1(dt / tau);
    let v_inf = v_cc * ga / q1;
    let s0 = ga * (v_cc - v_inf).powi(2) + (q1 - ga).max(0.0) * v_inf * v_inf;
    let d = v0 - v_inf;
    s0 * dt + q1 * d * d * 0.5 * tau * gap * (2.0 - gap)
}

/// `1 − e^{−x}` for `x ≥ 0`, with a short series for the tiny steps
/// between closely spaced input edges.
#[inline]
pub(crate) fn neg_expm1(x: f64) -> f64 {
    if x < 5e-3 {
        let x2 = x * x;
        x - x2 * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0 + x2 * x2 / 720.0)
    } else {
        1.0 - (-x).exp()
    }
}

/// Dissipation in one device of conductance `g` charging a capacitor from
/// `v0` towards `v_cc` with time constant `tau = c/g` for `dt`.
pub fn charge_energy(v_cc: f64, g: f64, v0: f64, tau: f64, dt: f64) -> f64 {
    if dt <= 0.0 || g <= 0.0 {
        return 0.0;
    }
    let d = v_cc - v0;
    g * d * d * decay_sq_integral(tau, dt)
}
