//! Diagonal linear operators and the closed-form scalar quantities every
//! solver shares.
//!
//! Because the beam-domain channel entries are independent, every matrix in
//! the rate expressions (interference-plus-noise, DE auxiliaries, MM
//! derivative) is diagonal. All of them are stored as plain vectors of
//! diagonal entries and the log-determinants collapse to sums of scalar logs.

use thiserror::Error;

use crate::model::{ChannelStats, Mat, PowerAllocation, PowerModel};

/// Diagonal of a diagonal matrix, stored as a dense vector of entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagVec(pub Vec<f64>);

impl DiagVec {
    pub fn zeros(n: usize) -> Self {
        DiagVec(vec![0.0; n])
    }

    pub fn ones(n: usize) -> Self {
        DiagVec(vec![1.0; n])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Largest absolute entry-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &DiagVec) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Deref for DiagVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DiagVec {
    fn from(v: Vec<f64>) -> Self {
        DiagVec(v)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OpsError {
    #[error("dimension mismatch: omega is {rows}x{cols}, argument has length {arg}")]
    DimensionMismatch { rows: usize, cols: usize, arg: usize },
}

/// Forward coupling operator: the diagonal of `E{G diag(x) G^H}`.
///
/// Entry `n` is the row-`n` inner product `sum_m omega[n,m] * x[m]`; the
/// result has one entry per receive dimension.
pub fn pi_op(omega: &Mat, x: &[f64]) -> Result<DiagVec, OpsError> {
    if x.len() != omega.cols() {
        return Err(OpsError::DimensionMismatch { rows: omega.rows(), cols: omega.cols(), arg: x.len() });
    }
    let out = (0..omega.rows())
        .map(|n| omega.row(n).iter().zip(x).map(|(w, xi)| w * xi).sum())
        .collect();
    Ok(DiagVec(out))
}

/// Adjoint coupling operator: the diagonal of `E{G^H diag(y) G}`.
///
/// Entry `m` is the column-`m` inner product `sum_n omega[n,m] * y[n]`.
pub fn xi_op(omega: &Mat, y: &[f64]) -> Result<DiagVec, OpsError> {
    if y.len() != omega.rows() {
        return Err(OpsError::DimensionMismatch { rows: omega.rows(), cols: omega.cols(), arg: y.len() });
    }
    let mut out = vec![0.0; omega.cols()];
    for (n, &yn) in y.iter().enumerate() {
        for (m, w) in omega.row(n).iter().enumerate() {
            out[m] += w * yn;
        }
    }
    Ok(DiagVec(out))
}

/// Interference-plus-noise diagonal seen by user `k`:
/// `noise + sum_{i != k} pi_op(omega_k, lambda_i)`.
///
/// Every entry is at least the noise power.
pub fn kbar(stats: &ChannelStats, alloc: &PowerAllocation, k: usize) -> Result<DiagVec, OpsError> {
    let omega = &stats.user(k).omega;
    let mut out = vec![stats.noise_power; omega.rows()];
    for i in 0..stats.num_users() {
        if i == k {
            continue;
        }
        let lam = alloc.user(i);
        if lam.len() != omega.cols() {
            return Err(OpsError::DimensionMismatch { rows: omega.rows(), cols: omega.cols(), arg: lam.len() });
        }
        for (n, entry) in out.iter_mut().enumerate() {
            *entry += omega.row(n).iter().zip(lam).map(|(w, l)| w * l).sum::<f64>();
        }
    }
    Ok(DiagVec(out))
}

/// Interference log-determinant for user `k`: `sum_n ln(kbar[n])`.
pub fn rate_minus(stats: &ChannelStats, alloc: &PowerAllocation, k: usize) -> f64 {
    kbar(stats, alloc, k)
        .expect("allocation shape checked by caller")
        .iter()
        .map(|v| v.ln())
        .sum()
}

/// Gradient of the summed interference log-determinants with respect to the
/// powers of user `k`, evaluated at the expansion point `alloc`:
///
/// `d[m] = sum_{k' != k} sum_n omega_{k'}[n,m] / kbar_{k'}[n]`.
///
/// Zero when there is a single user.
pub fn delta_k(stats: &ChannelStats, alloc: &PowerAllocation, k: usize) -> DiagVec {
    let m_dim = stats.num_bs_antennas;
    let mut out = vec![0.0; m_dim];
    for kp in 0..stats.num_users() {
        if kp == k {
            continue;
        }
        let omega = &stats.user(kp).omega;
        let kb = kbar(stats, alloc, kp).expect("allocation shape checked by caller");
        for (n, &den) in kb.iter().enumerate() {
            let row = omega.row(n);
            for m in 0..m_dim {
                out[m] += row[m] / den;
            }
        }
    }
    DiagVec(out)
}

/// Energy efficiency of an allocation given the per-user net rates:
/// `sum(rates) / (xi * total_power + M * p_c + p_s)`.
pub fn ee_value(stats: &ChannelStats, pm: &PowerModel, alloc: &PowerAllocation, rates: &[f64]) -> f64 {
    let num: f64 = rates.iter().sum();
    num / pm.consumed(stats.num_bs_antennas, alloc.total_power())
}
