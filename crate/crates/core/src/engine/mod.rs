//! Event-driven simulator.
//!
//! Between events every node is an RC relaxation with a constant target, so
//! the state is advanced with exact exponentials. Events are input edges,
//! threshold crossings, the end of an output spike, and inhibition
//! capacitors discharging below `V_cc/2`.
//!
//! Circuit semantics:
//! - every row stays attached to every column; rows that are not currently
//!   delivering a spike are grounded, so neuron `j` relaxes towards
//!   `V_cc·ga_j/q1_j` with `ga_j` the conductance of active rows and `q1_j`
//!   the whole column.
//! - a crossing resets every neuron to 0 V, credits the winner and opens a
//!   window of `t_spike` during which inputs are ignored.
//! - in inhibited mode the winner drives `V_cc` back through its column during
//!   that window, charging each row's inhibition capacitor through `g_{i,j*}`.
//!   A row is blocked while its capacitor sits above `V_cc/2`; the capacitor
//!   discharges through `r_inhib` only while the row's input spike is high.

mod energy;
mod trace;

use energy::neg_expm1;
pub use energy::{charge_energy, column_energy, comparator_energy, EnergyReport, COMPARATOR_POWER_W};
pub use trace::{NodeKind, NodeSegment, Trace, TraceSegment};

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::NetworkParams;
use crate::crossbar::{perturb_read, Crossbar};
use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;
use crate::spikegen::{generate_all, SpikeTrain};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Uninhibited,
    #[default]
    Inhibited,
}

/// Output spike counts of one exposure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub counts: Vec<u32>,
    pub exposure: f64,
}

impl SparseCode {
    pub fn zeros(m: usize, exposure: f64) -> Self {
        SparseCode {
            counts: vec![0; m],
            exposure,
        }
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn active(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Non-zero `(index, count)` pairs.
    pub fn sparse_pairs(&self) -> Vec<(usize, u32)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, &c)| (j, c))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub mode: Mode,
    /// Uniform half-width of read noise, resampled after every output spike.
    pub read_dev: f64,
    pub record_trace: bool,
    /// Per-neuron threshold multipliers in `(0, 1]`.
    pub vfire_scale: Option<Vec<f64>>,
    /// Crossings closer than this are treated as simultaneous (s).
    pub tie_tolerance: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: Mode::Inhibited,
            read_dev: 0.0,
            record_trace: false,
            vfire_scale: None,
            tie_tolerance: 1e-15,
        }
    }
}

impl RunOptions {
    pub fn with_mode(mode: Mode) -> Self {
        RunOptions {
            mode,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub code: SparseCode,
    pub energy: EnergyReport,
    /// `(time, column)` of every output spike.
    pub spikes: Vec<(f64, usize)>,
    pub trace: Option<Trace>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    InputEdge { row: usize, high: bool },
    Crossing { col: usize },
    SpikeEnd { col: usize },
    Unblock { row: usize },
    End,
}

/// Generates input trains for `intensities` and simulates one exposure.
pub fn run<R: Rng + ?Sized>(
    crossbar: &Crossbar,
    params: &NetworkParams,
    intensities: &[f64],
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunResult> {
    if intensities.len() != crossbar.rows() {
        return Err(SslcaError::dims(
            format!("{} intensities", crossbar.rows()),
            intensities.len(),
        ));
    }
    params.validate()?;
    let trains = generate_all(
        intensities,
        params.k_max,
        params.bias,
        params.input_spike_width,
        params.exposure,
        rng,
    );
    simulate(crossbar.conductance(), params, &trains, opts, rng)
}

/// Simulates one exposure driven by explicit input trains.
pub fn simulate<R: Rng + ?Sized>(
    conductance: &Matrix,
    params: &NetworkParams,
    trains: &[SpikeTrain],
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunResult> {
    let mut sim = Simulator::new(conductance, params, trains, opts, rng)?;
    while sim.advance_to_event()? != Event::End {}
    Ok(sim.finish())
}

/// Scheduled unblock `(time, row)`, ordered by time then row.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Pending(f64, usize);

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

#[derive(Clone, Copy, Debug)]
struct RowInhib {
    seg: NodeSegment,
    unblock_at: f64,
}

pub struct Simulator<'a, R: Rng + ?Sized> {
    params: &'a NetworkParams,
    base: &'a Matrix,
    geff: Matrix,
    mode: Mode,
    read_dev: f64,
    tie_tol: f64,
    c_neuron: f64,
    v_fire: Vec<f64>,
    rng: &'a mut R,
    edges: Vec<(f64, usize, bool)>,
    next_edge: usize,
    t: f64,
    v: Vec<f64>,
    v_next: Vec<f64>,
    rate: Vec<f64>,
    inv_q1: Vec<f64>,
    v_inf_col: Vec<f64>,
    s0_sum: f64,
    pending_j: f64,
    in_on: Vec<bool>,
    blocked: Vec<bool>,
    inhib: Vec<RowInhib>,
    unblock_queue: BinaryHeap<Reverse<Pending>>,
    firing: Option<(usize, f64)>,
    ga: Vec<f64>,
    q1: Vec<f64>,
    counts: Vec<u32>,
    spikes: Vec<(f64, usize)>,
    energy: EnergyReport,
    trace: Option<Trace>,
}

impl<'a, R: Rng + ?Sized> Simulator<'a, R> {
    pub fn new(
        conductance: &'a Matrix,
        params: &'a NetworkParams,
        trains: &[SpikeTrain],
        opts: &RunOptions,
        rng: &'a mut R,
    ) -> Result<Self> {
        params.validate()?;
        let (n, m) = conductance.shape();
        if trains.len() != n {
            return Err(SslcaError::dims(format!("{n} spike trains"), trains.len()));
        }
        if !(opts.read_dev >= 0.0) {
            return Err(SslcaError::Config("read_dev must be >= 0".into()));
        }
        let v_fire = match &opts.vfire_scale {
            Some(s) => {
                if s.len() != m {
                    return Err(SslcaError::dims(format!("{m} threshold multipliers"), s.len()));
                }
                if s.iter().any(|&k| !(k > 0.0 && k <= 1.0)) {
                    return Err(SslcaError::Config("threshold multipliers must lie in (0, 1]".into()));
                }
                s.iter().map(|k| k * params.v_fire).collect()
            }
            None => vec![params.v_fire; m],
        };
        let mut edges: Vec<(f64, usize, bool)> = trains
            .iter()
            .enumerate()
            .flat_map(|(i, tr)| tr.transitions().map(move |(t, h)| (t, i, h)))
            .filter(|&(t, _, _)| t < params.exposure)
            .collect();
        // falling edges first at equal times
        edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        let c_neuron = match opts.mode {
            Mode::Inhibited => params.c_cb,
            Mode::Uninhibited => params.c_uninhib,
        };
        let geff = if opts.read_dev > 0.0 {
            perturb_read(conductance, opts.read_dev, rng)
        } else {
            conductance.clone()
        };
        let mut sim = Simulator {
            params,
            base: conductance,
            geff,
            mode: opts.mode,
            read_dev: opts.read_dev,
            tie_tol: opts.tie_tolerance,
            c_neuron,
            v_fire,
            rng,
            edges,
            next_edge: 0,
            t: 0.0,
            v: vec![0.0; m],
            v_next: vec![0.0; m],
            rate: vec![0.0; m],
            inv_q1: vec![0.0; m],
            v_inf_col: vec![0.0; m],
            s0_sum: 0.0,
            pending_j: 0.0,
            in_on: vec![false; n],
            blocked: vec![false; n],
            inhib: vec![
                RowInhib {
                    seg: NodeSegment::hold(0.0, 0.0),
                    unblock_at: f64::INFINITY,
                };
                n
            ],
            unblock_queue: BinaryHeap::new(),
            firing: None,
            ga: vec![0.0; m],
            q1: vec![0.0; m],
            counts: vec![0; m],
            spikes: Vec::new(),
            energy: EnergyReport::default(),
            trace: opts.record_trace.then(Trace::default),
        };
        sim.recompute_sums();
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn neuron_voltages(&self) -> &[f64] {
        &self.v
    }

    pub fn inhib_voltage(&self, row: usize) -> f64 {
        self.inhib[row].seg.at(self.t)
    }

    pub fn row_active(&self, row: usize) -> bool {
        self.in_on[row] && !self.blocked[row] && self.firing.is_none()
    }

    pub fn firing(&self) -> Option<(usize, f64)> {
        self.firing
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    fn n(&self) -> usize {
        self.in_on.len()
    }

    fn m(&self) -> usize {
        self.v.len()
    }

    fn recompute_sums(&mut self) {
        let m = self.m();
        self.ga.iter_mut().for_each(|x| *x = 0.0);
        self.q1.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..self.n() {
            let active = self.row_active(i);
            let row = self.geff.row(i);
            for j in 0..m {
                self.q1[j] += row[j];
                if active {
                    self.ga[j] += row[j];
                }
            }
        }
        for j in 0..m {
            self.rate[j] = self.q1[j] / self.c_neuron;
            self.inv_q1[j] = if self.q1[j] > 0.0 { 1.0 / self.q1[j] } else { 0.0 };
        }
        self.refresh_columns();
    }

    fn add_row(&mut self, i: usize, sign: f64) {
        for (a, &g) in self.ga.iter_mut().zip(self.geff.row(i)) {
            *a = (*a + sign * g).max(0.0);
        }
        self.refresh_columns();
    }

    /// Rebuilds the per-column asymptotes and static power after `ga` or
    /// `q1` change.
    fn refresh_columns(&mut self) {
        let v_cc = self.params.v_cc;
        let mut s0_sum = 0.0;
        for j in 0..self.v.len() {
            let (q1, ga) = (self.q1[j], self.ga[j]);
            if q1 > 0.0 {
                let vi = v_cc * ga * self.inv_q1[j];
                self.v_inf_col[j] = vi;
                s0_sum += ga * (v_cc - vi).powi(2) + (q1 - ga).max(0.0) * vi * vi;
            }
        }
        self.s0_sum = s0_sum;
    }

    fn tau(&self, j: usize) -> f64 {
        if self.q1[j] > 0.0 {
            self.c_neuron / self.q1[j]
        } else {
            f64::INFINITY
        }
    }

    fn v_inf(&self, j: usize) -> f64 {
        if self.q1[j] > 0.0 {
            self.params.v_cc * self.ga[j] / self.q1[j]
        } else {
            self.v[j]
        }
    }

    /// Earliest threshold crossing among columns that reach their threshold
    /// within the projected interval, as `(time, column)`.
    fn next_crossing(&self) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..self.m() {
            let vf = self.v_fire[j];
            if self.v_next[j] < vf && self.v[j] < vf {
                continue;
            }
            let dt = if self.v[j] >= vf {
                0.0
            } else {
                let vi = self.v_inf(j);
                if vi <= vf {
                    continue;
                }
                self.tau(j) * ((vi - self.v[j]) / (vi - vf)).ln()
            };
            let tj = self.t + dt;
            match best {
                Some((tb, _)) if tj >= tb - self.tie_tol => {}
                _ => best = Some((tj, j)),
            }
        }
        best
    }

    fn next_unblock(&mut self) -> Option<(f64, usize)> {
        if self.firing.is_some() || self.mode == Mode::Uninhibited {
            return None;
        }
        // entries go stale when a row's schedule changes; drop them lazily
        while let Some(&Reverse(Pending(t, i))) = self.unblock_queue.peek() {
            if self.inhib[i].unblock_at == t {
                return Some((t, i));
            }
            self.unblock_queue.pop();
        }
        None
    }

    fn set_unblock(&mut self, i: usize, t: f64) {
        self.inhib[i].unblock_at = t;
        if t.is_finite() {
            self.unblock_queue.push(Reverse(Pending(t, i)));
        }
    }

    fn push_segment(&mut self, t1: f64) {
        let Some(trace) = self.trace.as_mut() else { return };
        if t1 <= self.t && !trace.segments.is_empty() {
            return;
        }
        let t0 = self.t;
        let neurons = (0..self.v.len())
            .map(|j| {
                if self.firing.is_some() {
                    NodeSegment::hold(t0, self.v[j])
                } else {
                    let tau = if self.q1[j] > 0.0 {
                        self.c_neuron / self.q1[j]
                    } else {
                        f64::INFINITY
                    };
                    let vi = if self.q1[j] > 0.0 {
                        self.params.v_cc * self.ga[j] / self.q1[j]
                    } else {
                        self.v[j]
                    };
                    NodeSegment {
                        t_ref: t0,
                        v_ref: self.v[j],
                        target: vi,
                        rate: 1.0 / tau,
                    }
                }
            })
            .collect();
        let inhib = self.inhib.iter().map(|r| r.seg).collect();
        trace.segments.push(TraceSegment { t0, t1, neurons, inhib });
    }

    /// Neuron voltages and crossbar energy after `dt`, without committing.
    fn project(&mut self, dt: f64) {
        let mut e = 0.0;
        for j in 0..self.v.len() {
            let rate = self.rate[j];
            if rate <= 0.0 || dt <= 0.0 {
                self.v_next[j] = self.v[j];
                continue;
            }
            let gap = neg_expm1(dt * rate);
            let d = self.v[j] - self.v_inf_col[j];
            self.v_next[j] = self.v[j] - d * gap;
            e += d * d * gap * (2.0 - gap);
        }
        // q1·τ = C for every column
        self.pending_j = self.s0_sum * dt.max(0.0) + 0.5 * self.c_neuron * e;
    }

    /// Moves to `t1` using the projection made for this interval.
    fn commit(&mut self, t1: f64) -> Result<()> {
        let dt = t1 - self.t;
        if dt < 0.0 {
            return Err(SslcaError::Internal(format!(
                "time went backwards from {:e} to {t1:e}",
                self.t
            )));
        }
        self.push_segment(t1);
        if dt > 0.0 && self.firing.is_none() {
            self.energy.crossbar_j += self.pending_j;
            std::mem::swap(&mut self.v, &mut self.v_next);
        }
        self.t = t1;
        Ok(())
    }

    /// Evaluates row `i`'s inhibition capacitor at the current time and makes
    /// that the new reference point, accruing charging energy.
    fn materialize(&mut self, i: usize) -> f64 {
        let t = self.t;
        let seg = self.inhib[i].seg;
        let v = seg.at(t);
        if seg.rate > 0.0 && seg.target > seg.v_ref {
            let g = seg.rate * self.params.c_inhib;
            self.energy.crossbar_j += charge_energy(self.params.v_cc, g, seg.v_ref, 1.0 / seg.rate, t - seg.t_ref);
            self.energy.cap_reset_j += 0.5 * self.params.c_inhib * (v * v - seg.v_ref * seg.v_ref);
        }
        self.inhib[i].seg = NodeSegment::hold(t, v);
        v
    }

    /// Sets row `i` to discharge (input high) or hold, outside output spikes.
    fn set_idle_dynamics(&mut self, i: usize) {
        let half = 0.5 * self.params.v_cc;
        let r = &mut self.inhib[i];
        let v = r.seg.v_ref;
        let t = if self.in_on[i] && v > 0.0 {
            let rate = 1.0 / (self.params.r_inhib * self.params.c_inhib);
            r.seg.target = 0.0;
            r.seg.rate = rate;
            if self.blocked[i] {
                r.seg.t_ref + (v / half).ln() / rate
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        self.set_unblock(i, t);
    }

    /// Advances to and applies the next event.
    pub fn advance_to_event(&mut self) -> Result<Event> {
        let end = self.params.exposure;
        if self.t >= end {
            return Ok(Event::End);
        }
        let t_edge = self.edges.get(self.next_edge).map_or(f64::INFINITY, |e| e.0);
        let unblock = self.next_unblock();
        let t_end = self.firing.map_or(f64::INFINITY, |f| f.1);
        let t_unblock = unblock.map_or(f64::INFINITY, |u| u.0);
        let t_next = t_edge.min(t_end).min(t_unblock).min(end).max(self.t);
        if self.firing.is_none() {
            // voltages only rise or fall monotonically between events, so a
            // crossing inside the interval shows up at its end
            self.project(t_next - self.t);
            if let Some((tc, col)) = self.next_crossing() {
                let tc = tc.clamp(self.t, t_next);
                self.project(tc - self.t);
                self.commit(tc)?;
                self.on_crossing(col);
                return Ok(Event::Crossing { col });
            }
        }
        self.commit(t_next)?;
        if t_next >= end {
            self.close();
            Ok(Event::End)
        } else if t_end <= t_next {
            let col = self.firing.map(|f| f.0).unwrap_or(0);
            self.on_spike_end();
            Ok(Event::SpikeEnd { col })
        } else if t_unblock <= t_next {
            let row = unblock.map(|u| u.1).unwrap_or(0);
            self.on_unblock(row);
            Ok(Event::Unblock { row })
        } else {
            let (_, row, high) = self.edges[self.next_edge];
            self.next_edge += 1;
            self.on_edge(row, high);
            Ok(Event::InputEdge { row, high })
        }
    }

    fn on_crossing(&mut self, col: usize) {
        self.v[col] = self.v_fire[col];
        let sum_sq: f64 = self.v.iter().map(|v| v * v).sum();
        self.energy.cap_reset_j += 0.5 * self.c_neuron * sum_sq;
        self.v.iter_mut().for_each(|v| *v = 0.0);
        self.counts[col] += 1;
        self.spikes.push((self.t, col));
        self.firing = Some((col, self.t + self.params.t_spike));
        self.ga.iter_mut().for_each(|a| *a = 0.0);
        self.refresh_columns();
        if self.mode == Mode::Inhibited {
            let c = self.params.c_inhib;
            let v_cc = self.params.v_cc;
            for i in 0..self.n() {
                self.materialize(i);
                let g = self.geff.get(i, col);
                let r = &mut self.inhib[i];
                r.seg.target = v_cc;
                r.seg.rate = g / c;
                r.unblock_at = f64::INFINITY;
            }
            self.unblock_queue.clear();
        }
    }

    fn on_spike_end(&mut self) {
        self.firing = None;
        if self.mode == Mode::Inhibited {
            self.unblock_queue.clear();
            let half = 0.5 * self.params.v_cc;
            for i in 0..self.n() {
                let v = self.materialize(i);
                self.blocked[i] = v > half;
                self.set_idle_dynamics(i);
            }
        }
        if self.read_dev > 0.0 {
            self.geff = perturb_read(self.base, self.read_dev, self.rng);
        }
        self.recompute_sums();
    }

    fn on_unblock(&mut self, row: usize) {
        self.materialize(row);
        self.blocked[row] = false;
        self.set_idle_dynamics(row);
        if self.row_active(row) {
            self.add_row(row, 1.0);
        }
    }

    fn on_edge(&mut self, row: usize, high: bool) {
        let was_active = self.row_active(row);
        if self.mode == Mode::Inhibited && self.firing.is_none() {
            self.materialize(row);
        }
        self.in_on[row] = high;
        if self.mode == Mode::Inhibited && self.firing.is_none() {
            self.set_idle_dynamics(row);
        }
        let now_active = self.row_active(row);
        if now_active != was_active {
            self.add_row(row, if now_active { 1.0 } else { -1.0 });
        }
    }

    /// Settles energy of a spike window cut short by the end of the exposure.
    fn close(&mut self) {
        if self.firing.is_some() && self.mode == Mode::Inhibited {
            for i in 0..self.n() {
                self.materialize(i);
            }
        }
    }

    pub fn finish(mut self) -> RunResult {
        let m = self.m();
        let n = self.n();
        self.energy.comparator_j = comparator_energy(m, self.params.exposure);
        RunResult {
            code: SparseCode {
                counts: self.counts,
                exposure: self.params.exposure,
            },
            energy: self.energy.finish(n),
            spikes: self.spikes,
            trace: self.trace,
        }
    }
}
