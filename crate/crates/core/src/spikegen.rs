//! Stochastic input spike trains.
//!
//! Each input line is a train of fixed-width pulses at `V_cc`. Gaps are drawn
//! uniformly so that the expected fraction of time spent high equals the duty
//! cycle, and the first pulse starts at a random phase.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// `k_max · (bias + (1 − bias)·k)`.
pub fn duty_cycle(k: f64, k_max: f64, bias: f64) -> f64 {
    k_max * (bias + (1.0 - bias) * k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    /// Ordered, disjoint `(t_on, t_off)` pulses inside `[0, duration]`.
    pub edges: Vec<(f64, f64)>,
    pub duration: f64,
}

impl SpikeTrain {
    pub fn empty(duration: f64) -> Self {
        SpikeTrain {
            edges: Vec::new(),
            duration,
        }
    }

    /// A line held at `V_cc` for the whole exposure.
    pub fn constant(duration: f64) -> Self {
        SpikeTrain {
            edges: vec![(0.0, duration)],
            duration,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn high_time(&self) -> f64 {
        self.edges.iter().map(|(a, b)| b - a).sum()
    }

    /// Measured duty cycle over the whole duration.
    pub fn empirical_duty(&self) -> f64 {
        if self.duration > 0.0 {
            self.high_time() / self.duration
        } else {
            0.0
        }
    }

    pub fn is_on(&self, t: f64) -> bool {
        // edges are sorted, so a binary search finds the last pulse starting at or before t
        let idx = self.edges.partition_point(|&(on, _)| on <= t);
        idx > 0 && t < self.edges[idx - 1].1
    }

    /// Edge times `(time, goes_high)` in order.
    pub fn transitions(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.edges.iter().flat_map(|&(a, b)| [(a, true), (b, false)])
    }
}

/// Generates one train. A duty cycle of zero yields an empty train and one of
/// at least one a constant line.
pub fn generate<R: Rng + ?Sized>(k: f64, k_max: f64, bias: f64, width: f64, duration: f64, rng: &mut R) -> SpikeTrain {
    let d = duty_cycle(k.clamp(0.0, 1.0), k_max, bias);
    if d <= 0.0 || duration <= 0.0 || width <= 0.0 {
        return SpikeTrain::empty(duration);
    }
    if d >= 1.0 {
        return SpikeTrain::constant(duration);
    }
    let mean_gap = width * (1.0 / d - 1.0);
    let period = width / d;
    let mut edges = Vec::with_capacity((duration / period) as usize + 2);
    let mut t = rng.gen::<f64>() * period;
    while t < duration {
        let off = (t + width).min(duration);
        edges.push((t, off));
        t += width + rng.gen::<f64>() * 2.0 * mean_gap;
    }
    SpikeTrain { edges, duration }
}

/// One train per input intensity, drawn in row order from `rng`.
pub fn generate_all<R: Rng + ?Sized>(
    intensities: &[f64],
    k_max: f64,
    bias: f64,
    width: f64,
    duration: f64,
    rng: &mut R,
) -> Vec<SpikeTrain> {
    intensities
        .iter()
        .map(|&k| generate(k, k_max, bias, width, duration, rng))
        .collect()
}

/// CSV dump with columns `row,t_on_s,t_off_s`.
pub fn write_edges_csv<W: Write>(trains: &[SpikeTrain], mut w: W) -> Result<()> {
    writeln!(w, "row,t_on_s,t_off_s")?;
    for (i, tr) in trains.iter().enumerate() {
        for &(a, b) in &tr.edges {
            writeln!(w, "{i},{a:e},{b:e}")?;
        }
    }
    Ok(())
}
