//! Non-spiking analog LCA.
//!
//! Internal states follow `τ u̇ = b − u − (ΦᵀΦ − I)·a` with `b = Φᵀs` and
//! `a = T_λ(u)`, integrated with forward Euler from `u = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;

/// Receptive fields as columns of an `N × M` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub phi: Matrix,
}

impl Dictionary {
    pub fn new(phi: Matrix) -> Result<Self> {
        if phi.cols() == 0 {
            return Err(SslcaError::Config("dictionary needs at least one column".into()));
        }
        if phi.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(SslcaError::Domain("dictionary has non-finite entries".into()));
        }
        Ok(Dictionary { phi })
    }

    pub fn n(&self) -> usize {
        self.phi.rows()
    }

    pub fn m(&self) -> usize {
        self.phi.cols()
    }

    pub fn reconstruct(&self, a: &[f64]) -> Vec<f64> {
        self.phi.mul_vec(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcaConfig {
    pub lambda: f64,
    pub tau: f64,
    pub dt: f64,
    pub max_steps: usize,
    /// Stop once `‖τ·u̇‖∞` falls below this.
    pub tol: f64,
    /// Clamp coefficients at zero.
    pub non_negative: bool,
}

impl Default for LcaConfig {
    fn default() -> Self {
        LcaConfig {
            lambda: 0.1,
            tau: 10e-3,
            dt: 0.1e-3,
            max_steps: 10_000,
            tol: 1e-6,
            non_negative: true,
        }
    }
}

impl LcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(SslcaError::Config(format!("lambda={} must be >= 0", self.lambda)));
        }
        if !(self.dt > 0.0 && self.dt < self.tau) {
            return Err(SslcaError::Config("LCA needs 0 < dt < tau".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SslcaError::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn threshold(u: f64, lambda: f64, non_negative: bool) -> f64 {
    if non_negative {
        (u - lambda).max(0.0)
    } else {
        u.signum() * (u.abs() - lambda).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcaOutcome {
    pub a: Vec<f64>,
    pub u: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

pub fn lca_encode(dict: &Dictionary, s: &[f64], cfg: &LcaConfig) -> Result<Vec<f64>> {
    Ok(lca_solve(dict, s, cfg, |_, _| {})?.a)
}

/// Runs the descent, calling `observe(step, a)` after every step.
pub fn lca_solve(
    dict: &Dictionary,
    s: &[f64],
    cfg: &LcaConfig,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<LcaOutcome> {
    cfg.validate()?;
    if s.len() != dict.n() {
        return Err(SslcaError::dims(format!("input of length {}", dict.n()), s.len()));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(SslcaError::Domain("input has non-finite entries".into()));
    }
    let m = dict.m();
    let b = dict.phi.tr_mul_vec(s);
    let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut u = vec![0.0; m];
    let mut a = vec![0.0; m];
    if b_norm == 0.0 {
        return Ok(LcaOutcome {
            a,
            u,
            steps: 0,
            converged: true,
        });
    }
    let gram = dict.phi.gram();
    let h = cfg.dt / cfg.tau;
    let mut du = vec![0.0; m];
    for step in 1..=cfg.max_steps {
        let mut worst = 0.0f64;
        for k in 0..m {
            let g = gram.row(k);
            let lateral: f64 = (0..m).map(|l| g[l] * a[l]).sum::<f64>() - a[k];
            du[k] = b[k] - u[k] - lateral;
            worst = worst.max(du[k].abs());
        }
        if worst < cfg.tol {
            return Ok(LcaOutcome {
                a,
                u,
                steps: step - 1,
                converged: true,
            });
        }
        for k in 0..m {
            u[k] += h * du[k];
            a[k] = threshold(u[k], cfg.lambda, cfg.non_negative);
        }
        observe(step, &a);
        let u_norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(u_norm <= 1e3 * b_norm) {
            return Err(SslcaError::Instability(format!(
                "LCA state diverged at step {step}; try a smaller dt/tau"
            )));
        }
    }
    Ok(LcaOutcome {
        a,
        u,
        steps: cfg.max_steps,
        converged: false,
    })
}

/// `½‖s − Φa‖² + λ·Σ|a_m|`.
pub fn sparse_energy(dict: &Dictionary, s: &[f64], a: &[f64], lambda: f64) -> f64 {
    let r = dict.reconstruct(a);
    let err: f64 = s.iter().zip(&r).map(|(x, y)| (x - y).powi(2)).sum();
    0.5 * err + lambda * a.iter().map(|x| x.abs()).sum::<f64>()
}
