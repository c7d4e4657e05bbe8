//! Spike counts to coefficients, reconstructions and the compression metric.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `a_j = counts_j / max(1, Σ counts)`.
    SumToOne,
    /// Counts scaled by the scalar `β` minimising `‖s − β·Φ·counts‖²`.
    LeastSquares,
}

impl FromStr for Normalization {
    type Err = SslcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_to_one" | "sum-to-one" => Ok(Normalization::SumToOne),
            "least_squares" | "least-squares" => Ok(Normalization::LeastSquares),
            other => Err(SslcaError::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

/// Converts counts to coefficients. Least squares needs the dictionary and
/// the input it should reconstruct.
pub fn code_to_coeffs(counts: &[u32], norm: Normalization, target: Option<(&Matrix, &[f64])>) -> Result<Vec<f64>> {
    let c: Vec<f64> = counts.iter().map(|&x| x as f64).collect();
    match norm {
        Normalization::SumToOne => {
            let total = c.iter().sum::<f64>().max(1.0);
            Ok(c.into_iter().map(|x| x / total).collect())
        }
        Normalization::LeastSquares => {
            let (phi, s) = target
                .ok_or_else(|| SslcaError::Config("least-squares normalization needs a dictionary and input".into()))?;
            if phi.cols() != c.len() || phi.rows() != s.len() {
                return Err(SslcaError::dims(
                    format!("{}x{} dictionary", s.len(), c.len()),
                    format!("{}x{}", phi.rows(), phi.cols()),
                ));
            }
            let r = phi.mul_vec(&c);
            let rr: f64 = r.iter().map(|x| x * x).sum();
            let beta = if rr > 0.0 {
                r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / rr
            } else {
                0.0
            };
            Ok(c.into_iter().map(|x| beta * x).collect())
        }
    }
}

pub fn reconstruct(phi: &Matrix, a: &[f64]) -> Vec<f64> {
    phi.mul_vec(a)
}

pub fn rmse(s: &[f64], s_hat: &[f64]) -> f64 {
    debug_assert_eq!(s.len(), s_hat.len());
    if s.is_empty() {
        return 0.0;
    }
    let se: f64 = s.iter().zip(s_hat).map(|(a, b)| (a - b).powi(2)).sum();
    (se / s.len() as f64).sqrt()
}

/// Bits to send each active neuron index plus a 4-bit count.
pub fn code_bits(active: usize, n_neurons: usize) -> f64 {
    active as f64 * ((n_neurons as f64).log2() + 4.0)
}

/// `1 − active·(log₂M + 4) / input_bits`; negative values mean expansion.
pub fn compression(counts: &[u32], n_neurons: usize, input_bits: f64) -> Result<f64> {
    if !(input_bits > 0.0) {
        return Err(SslcaError::Domain("input_bits must be positive".into()));
    }
    let active = counts.iter().filter(|&&c| c > 0).count();
    Ok(1.0 - code_bits(active, n_neurons) / input_bits)
}

/// Eight bits for every input scalar, colour channels included.
pub fn default_input_bits(n_scalars: usize) -> f64 {
    8.0 * n_scalars as f64
}
