//! Brute-force references shared by integration and acceptance tests.

#![allow(dead_code)]

use sslca::calibration::NetworkParams;
use sslca::engine::Mode;
use sslca::spikegen::SpikeTrain;
use sslca::Matrix;

/// Fixed-step integration of the same circuit the event-driven engine models.
pub struct DenseRun {
    pub counts: Vec<u32>,
    pub spikes: Vec<f64>,
    /// `(t, neuron volts, inhibition volts)` on the step grid.
    pub samples: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

pub fn dense_simulate(
    g: &Matrix,
    p: &NetworkParams,
    trains: &[SpikeTrain],
    mode: Mode,
    dt: f64,
    sample_every: usize,
) -> DenseRun {
    let (n, m) = g.shape();
    let inhibited = mode == Mode::Inhibited;
    let c = if inhibited { p.c_cb } else { p.c_uninhib };
    let half = 0.5 * p.v_cc;
    let discharge = 1.0 / (p.r_inhib * p.c_inhib);
    let q1: Vec<f64> = (0..m).map(|j| (0..n).map(|i| g.get(i, j)).sum()).collect();

    let mut v = vec![0.0; m];
    let mut vc = vec![0.0; n];
    let mut blocked = vec![false; n];
    let mut firing: Option<(usize, f64)> = None;
    let mut out = DenseRun {
        counts: vec![0; m],
        spikes: Vec::new(),
        samples: Vec::new(),
    };

    // charge inhibition caps towards v_cc through the winner's column
    let charge = |vc: &mut [f64], col: usize, h: f64| {
        for i in 0..n {
            let k = (-g.get(i, col) / p.c_inhib * h).exp();
            vc[i] = p.v_cc + (vc[i] - p.v_cc) * k;
        }
    };

    let steps = (p.exposure / dt).ceil() as usize;
    for step in 0..steps {
        let t = step as f64 * dt;
        if step % sample_every == 0 {
            out.samples.push((t, v.clone(), vc.clone()));
        }
        let h = dt.min(p.exposure - t);
        if let Some((col, t_end)) = firing {
            if t + h < t_end {
                if inhibited {
                    charge(&mut vc, col, h);
                }
                continue;
            }
            if inhibited {
                charge(&mut vc, col, t_end - t);
                for i in 0..n {
                    blocked[i] = vc[i] > half;
                }
            }
            firing = None;
            // remainder of this step runs idle below, with a shortened width
            idle_step(
                g,
                p,
                trains,
                &q1,
                c,
                half,
                discharge,
                inhibited,
                t_end,
                t + h - t_end,
                &mut v,
                &mut vc,
                &mut blocked,
                &mut firing,
                &mut out,
            );
            continue;
        }
        idle_step(
            g,
            p,
            trains,
            &q1,
            c,
            half,
            discharge,
            inhibited,
            t,
            h,
            &mut v,
            &mut vc,
            &mut blocked,
            &mut firing,
            &mut out,
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn idle_step(
    g: &Matrix,
    p: &NetworkParams,
    trains: &[SpikeTrain],
    q1: &[f64],
    c: f64,
    half: f64,
    discharge: f64,
    inhibited: bool,
    t: f64,
    h: f64,
    v: &mut [f64],
    vc: &mut [f64],
    blocked: &mut [bool],
    firing: &mut Option<(usize, f64)>,
    out: &mut DenseRun,
) {
    if h <= 0.0 {
        return;
    }
    let (n, m) = g.shape();
    // a blocked row whose capacitor drops to v_cc/2 inside the step joins in
    // from that instant on
    let joins: Vec<f64> = (0..n)
        .map(|i| {
            if !blocked[i] {
                return t;
            }
            if vc[i] <= half {
                return t;
            }
            let need = (vc[i] / half).ln() / discharge;
            time_when_high_for(&trains[i], t, t + h, need).unwrap_or(f64::INFINITY)
        })
        .collect();
    let mut ga = vec![0.0; m];
    for i in 0..n {
        if joins[i] < t + h {
            let frac = high_time(&trains[i], joins[i], t + h) / h;
            for j in 0..m {
                ga[j] += frac * g.get(i, j);
            }
        }
    }
    let old = v.to_vec();
    for j in 0..m {
        if q1[j] > 0.0 {
            let target = p.v_cc * ga[j] / q1[j];
            v[j] = target + (v[j] - target) * (-q1[j] / c * h).exp();
        }
    }
    // the first column to cross within the step wins
    let mut winner: Option<(f64, usize)> = None;
    for j in 0..m {
        if v[j] >= p.v_fire {
            let frac = ((p.v_fire - old[j]) / (v[j] - old[j])).clamp(0.0, 1.0);
            if winner.map_or(true, |(f, _)| frac < f) {
                winner = Some((frac, j));
            }
        }
    }
    let t_idle = t + winner.map_or(h, |(f, _)| f * h);
    if inhibited {
        for i in 0..n {
            if vc[i] > 0.0 {
                vc[i] *= (-discharge * high_time(&trains[i], t, t_idle)).exp();
            }
            if blocked[i] && joins[i] <= t_idle {
                blocked[i] = false;
            }
        }
    }
    if let Some((frac, col)) = winner {
        let ts = t + frac * h;
        v.iter_mut().for_each(|x| *x = 0.0);
        out.counts[col] += 1;
        out.spikes.push(ts);
        let t_end = ts + p.t_spike;
        *firing = Some((col, t_end));
        if inhibited {
            let rest = (t + h).min(t_end) - ts;
            for i in 0..n {
                let k = (-g.get(i, col) / p.c_inhib * rest).exp();
                vc[i] = p.v_cc + (vc[i] - p.v_cc) * k;
            }
        }
    }
}

fn high_time(tr: &SpikeTrain, a: f64, b: f64) -> f64 {
    let start = tr.edges.partition_point(|&(_, off)| off <= a);
    tr.edges[start..]
        .iter()
        .take_while(|&&(on, _)| on < b)
        .map(|&(on, off)| off.min(b) - on.max(a))
        .sum()
}

/// Instant in `[a, b]` at which the train has been high for `need` seconds since `a`.
fn time_when_high_for(tr: &SpikeTrain, a: f64, b: f64, need: f64) -> Option<f64> {
    let start = tr.edges.partition_point(|&(_, off)| off <= a);
    let mut acc = 0.0;
    for &(on, off) in tr.edges[start..].iter().take_while(|&&(on, _)| on < b) {
        let (lo, hi) = (on.max(a), off.min(b));
        if acc + (hi - lo) >= need {
            return Some(lo + (need - acc));
        }
        acc += hi - lo;
    }
    None
}

/// Coordinate-descent lasso, `min ½‖s − Φa‖² + λ‖a‖₁`, optionally with `a ≥ 0`.
pub fn lasso_cd(phi: &Matrix, s: &[f64], lambda: f64, non_negative: bool, sweeps: usize) -> Vec<f64> {
    let (n, m) = phi.shape();
    let mut a = vec![0.0; m];
    let mut r = s.to_vec();
    let norms: Vec<f64> = (0..m).map(|j| (0..n).map(|i| phi.get(i, j).powi(2)).sum()).collect();
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for j in 0..m {
            if norms[j] == 0.0 {
                continue;
            }
            let rho: f64 = (0..n).map(|i| phi.get(i, j) * (r[i] + phi.get(i, j) * a[j])).sum();
            let z = if non_negative {
                (rho - lambda).max(0.0)
            } else {
                rho.signum() * (rho.abs() - lambda).max(0.0)
            } / norms[j];
            let d = z - a[j];
            if d != 0.0 {
                for i in 0..n {
                    r[i] -= phi.get(i, j) * d;
                }
                a[j] = z;
                moved = moved.max(d.abs());
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    a
}
