use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Closed-form trajectory of one node: `target + (v_ref − target)·e^{−rate·(t − t_ref)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NodeSegment {
    pub t_ref: f64,
    pub v_ref: f64,
    pub target: f64,
    pub rate: f64,
}

impl NodeSegment {
    pub fn hold(t_ref: f64, v: f64) -> Self {
        NodeSegment {
            t_ref,
            v_ref: v,
            target: v,
            rate: 0.0,
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        if self.rate == 0.0 {
            self.v_ref
        } else {
            self.target + (self.v_ref - self.target) * (-self.rate * (t - self.t_ref)).exp()
        }
    }
}

/// Voltages of every node between two consecutive events.
#[derive(Clone, Debug, Serialize)]
pub struct TraceSegment {
    pub t0: f64,
    pub t1: f64,
    pub neurons: Vec<NodeSegment>,
    pub inhib: Vec<NodeSegment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Neuron,
    Inhib,
}

impl NodeKind {
    pub fn label(self) -> &'static str {
        match self {
            NodeKind::Neuron => "neuron",
            NodeKind::Inhib => "inhib",
        }
    }
}

/// Piecewise-analytic record of a run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Trace {
    pub segments: Vec<TraceSegment>,
}

impl Trace {
    fn segment_at(&self, t: f64) -> Option<&TraceSegment> {
        if self.segments.is_empty() {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.t0 <= t);
        let s = &self.segments[idx.saturating_sub(1)];
        Some(s)
    }

    /// Voltage of a node at time `t`. Right-continuous at resets.
    pub fn voltage(&self, kind: NodeKind, index: usize, t: f64) -> Option<f64> {
        let s = self.segment_at(t)?;
        let nodes = match kind {
            NodeKind::Neuron => &s.neurons,
            NodeKind::Inhib => &s.inhib,
        };
        nodes.get(index).map(|n| n.at(t.min(s.t1)))
    }

    pub fn end_time(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    pub fn n_neurons(&self) -> usize {
        self.segments.first().map_or(0, |s| s.neurons.len())
    }

    pub fn n_inhib(&self) -> usize {
        self.segments.first().map_or(0, |s| s.inhib.len())
    }

    /// Sample times: a uniform grid of `samples` points plus every event time.
    pub fn sample_times(&self, samples: usize) -> Vec<f64> {
        let end = self.end_time();
        let mut ts: Vec<f64> = (0..samples)
            .map(|k| end * k as f64 / (samples.max(2) - 1) as f64)
            .collect();
        ts.extend(self.segments.iter().map(|s| s.t0));
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// CSV with columns `time_s,node_type,node_index,volts`.
    pub fn write_csv<W: Write>(&self, samples: usize, mut w: W) -> Result<()> {
        writeln!(w, "time_s,node_type,node_index,volts")?;
        for t in self.sample_times(samples) {
            for (kind, n) in [(NodeKind::Neuron, self.n_neurons()), (NodeKind::Inhib, self.n_inhib())] {
                for i in 0..n {
                    let v = self.voltage(kind, i, t).unwrap_or(0.0);
                    writeln!(w, "{t:e},{},{i},{v:e}", kind.label())?;
                }
            }
        }
        Ok(())
    }
}
