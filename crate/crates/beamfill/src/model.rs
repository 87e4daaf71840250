//! Core domain types shared by every solver: channel statistics, the affine
//! power consumption model, per-beam power allocations, and solver tolerances.
//!
//! Unit conventions: all powers are watts internally; dBm appears only at the
//! configuration boundary (see [`dbm_to_watts`]). Rates are natural-log (nats
//! per channel use); conversion to bits is left to the presentation layer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense row-major real matrix. Used for the per-user coupling matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Build from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Matrix with every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Row `r` as a contiguous slice of length `cols`.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scale(&self, factor: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Statistics of one user terminal: its receive dimension and the N_k x M
/// matrix of average beam-domain power gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    pub num_rx_antennas: usize,
    pub omega: Mat,
}

impl UserStats {
    pub fn new(omega: Mat) -> Self {
        Self { num_rx_antennas: omega.rows(), omega }
    }
}

/// The only channel knowledge the transmitter sees: one coupling matrix per
/// user plus the receiver noise power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub num_bs_antennas: usize,
    pub users: Vec<UserStats>,
    pub noise_power: f64,
}

impl ChannelStats {
    pub fn new(num_bs_antennas: usize, users: Vec<UserStats>, noise_power: f64) -> Self {
        Self { num_bs_antennas, users, noise_power }
    }

    #[inline]
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    #[inline]
    pub fn user(&self, k: usize) -> &UserStats {
        &self.users[k]
    }

    /// Rescale so the noise power becomes 1, dividing every coupling entry by
    /// the original noise power. Rates and allocations are invariant under
    /// this rescaling; it keeps intermediate products away from underflow
    /// when the physical noise floor is ~1e-14 W.
    pub fn normalize_noise(&self) -> ChannelStats {
        let s = self.noise_power;
        ChannelStats {
            num_bs_antennas: self.num_bs_antennas,
            users: self
                .users
                .iter()
                .map(|u| UserStats { num_rx_antennas: u.num_rx_antennas, omega: u.omega.scale(1.0 / s) })
                .collect(),
            noise_power: 1.0,
        }
    }
}

/// Affine power consumption model: total consumed power is
/// `xi * P_transmit + M * p_c + p_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// Transmit amplifier inefficiency (>= 1, dimensionless).
    pub xi: f64,
    /// Dynamic dissipation per BS antenna, watts.
    pub p_c: f64,
    /// Static circuit power, watts.
    pub p_s: f64,
    /// Transmit power budget, watts.
    pub p_max: f64,
}

impl PowerModel {
    /// Total consumed power for transmit power `p` with `m` BS antennas.
    #[inline]
    pub fn consumed(&self, m: usize, p: f64) -> f64 {
        self.xi * p + m as f64 * self.p_c + self.p_s
    }
}

/// Per-user nonnegative beam-power vectors (the diagonals of the transmit
/// covariance matrices in beam coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub lambdas: Vec<Vec<f64>>,
}

impl PowerAllocation {
    pub fn new(lambdas: Vec<Vec<f64>>) -> Self {
        Self { lambdas }
    }

    pub fn zeros(num_users: usize, num_beams: usize) -> Self {
        Self { lambdas: vec![vec![0.0; num_beams]; num_users] }
    }

    /// Spread `total` watts uniformly over all `num_users * num_beams` entries.
    pub fn uniform(num_users: usize, num_beams: usize, total: f64) -> Self {
        let per = total / (num_users * num_beams) as f64;
        Self { lambdas: vec![vec![per; num_beams]; num_users] }
    }

    #[inline]
    pub fn num_users(&self) -> usize {
        self.lambdas.len()
    }

    #[inline]
    pub fn user(&self, k: usize) -> &[f64] {
        &self.lambdas[k]
    }

    pub fn total_power(&self) -> f64 {
        self.lambdas.iter().map(|l| l.iter().sum::<f64>()).sum()
    }

    /// Shape check against channel statistics.
    pub fn matches(&self, stats: &ChannelStats) -> bool {
        self.lambdas.len() == stats.num_users()
            && self.lambdas.iter().all(|l| l.len() == stats.num_bs_antennas)
    }
}

/// Which allocation the DE auxiliaries are refreshed at: once per outer MM
/// iteration (the literal reading of the low-complexity algorithm) or once
/// per Dinkelbach iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeRefresh {
    Mm,
    Dinkelbach,
}

/// All solver tolerances and iteration caps in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Outer MM stop: relative change of the objective between iterations.
    pub eps_mm: f64,
    /// Dinkelbach stop in the reference solver: parametric objective residual.
    pub eps_dinkelbach: f64,
    /// DE fixed-point stop: max-norm residual of the Phi-tilde diagonals.
    pub eps_de: f64,
    /// Newton stop for the per-entry scalar roots: absolute iterate change.
    pub eps_newton: f64,
    /// Dinkelbach level stop in the water-filling solver: absolute eta change.
    pub eps_eta: f64,
    /// Bisection stop: absolute power-balance residual, watts.
    pub eps_power: f64,
    pub max_iter_mm: usize,
    pub max_iter_dinkelbach: usize,
    pub max_iter_de: usize,
    pub max_iter_newton: usize,
    pub max_iter_bisect: usize,
    /// Cap on Gauss-Seidel sweeps run to stabilize one inner subproblem.
    pub max_sweeps: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub de_refresh: DeRefresh,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_mm: 1e-4,
            eps_dinkelbach: 1e-9,
            eps_de: 1e-10,
            eps_newton: 1e-12,
            eps_eta: 1e-10,
            eps_power: 1e-8,
            max_iter_mm: 60,
            max_iter_dinkelbach: 200,
            max_iter_de: 500,
            max_iter_newton: 100,
            max_iter_bisect: 200,
            max_sweeps: 300,
            mc_samples: 10_000,
            seed: 1,
            de_refresh: DeRefresh::Mm,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Panics if any tolerance is non-positive or any iteration cap is zero.
    pub fn assert_valid(&self) {
        for (name, eps) in [
            ("eps_mm", self.eps_mm),
            ("eps_dinkelbach", self.eps_dinkelbach),
            ("eps_de", self.eps_de),
            ("eps_newton", self.eps_newton),
            ("eps_eta", self.eps_eta),
            ("eps_power", self.eps_power),
        ] {
            assert!(eps > 0.0, "{name} must be > 0, got {eps}");
        }
        for (name, cap) in [
            ("max_iter_mm", self.max_iter_mm),
            ("max_iter_dinkelbach", self.max_iter_dinkelbach),
            ("max_iter_de", self.max_iter_de),
            ("max_iter_newton", self.max_iter_newton),
            ("max_iter_bisect", self.max_iter_bisect),
            ("max_sweeps", self.max_sweeps),
            ("mc_samples", self.mc_samples),
        ] {
            assert!(cap >= 1, "{name} must be >= 1");
        }
    }
}

/// Violations reported by [`validate`].
#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("non-finite entry in omega of user {user} at ({row},{col})")]
    NonFiniteEntry { user: usize, row: usize, col: usize },
    #[error("negative entry in omega of user {user} at ({row},{col})")]
    NegativeEntry { user: usize, row: usize, col: usize },
    #[error("channel statistics contain no users")]
    EmptyUser,
    #[error("coupling matrix of user {user} is identically zero")]
    ZeroCouplingRowAll { user: usize },
    #[error("omega of user {user} has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    ShapeMismatch { user: usize, rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    #[error("noise power must be finite and > 0, got {0}")]
    BadNoisePower(f64),
    #[error("power model invalid: {0}")]
    BadPowerModel(String),
}

/// Convert dBm to watts: `10^((x - 30) / 10)`.
#[inline]
pub fn dbm_to_watts(x: f64) -> f64 {
    10f64.powf((x - 30.0) / 10.0)
}

/// Convert watts to dBm. Inverse of [`dbm_to_watts`] for positive arguments.
#[inline]
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Check every structural invariant of the channel statistics and the power
/// model; returns the first violation found.
pub fn validate(stats: &ChannelStats, pm: &PowerModel) -> Result<(), ValidationError> {
    if stats.users.is_empty() {
        return Err(ValidationError::EmptyUser);
    }
    if !(stats.noise_power.is_finite() && stats.noise_power > 0.0) {
        return Err(ValidationError::BadNoisePower(stats.noise_power));
    }
    if stats.num_bs_antennas == 0 {
        return Err(ValidationError::BadPowerModel("num_bs_antennas must be >= 1".into()));
    }
    for (k, u) in stats.users.iter().enumerate() {
        if u.num_rx_antennas == 0 || u.omega.rows() == 0 {
            return Err(ValidationError::EmptyUser);
        }
        if u.omega.rows() != u.num_rx_antennas || u.omega.cols() != stats.num_bs_antennas {
            return Err(ValidationError::ShapeMismatch {
                user: k,
                rows: u.omega.rows(),
                cols: u.omega.cols(),
                expected_rows: u.num_rx_antennas,
                expected_cols: stats.num_bs_antennas,
            });
        }
        let mut any_positive = false;
        for r in 0..u.omega.rows() {
            for c in 0..u.omega.cols() {
                let v = u.omega.get(r, c);
                if !v.is_finite() {
                    return Err(ValidationError::NonFiniteEntry { user: k, row: r, col: c });
                }
                if v < 0.0 {
                    return Err(ValidationError::NegativeEntry { user: k, row: r, col: c });
                }
                if v > 0.0 {
                    any_positive = true;
                }
            }
        }
        if !any_positive {
            return Err(ValidationError::ZeroCouplingRowAll { user: k });
        }
    }
    if !(pm.xi >= 1.0 && pm.xi.is_finite()) {
        return Err(ValidationError::BadPowerModel(format!("xi must be >= 1, got {}", pm.xi)));
    }
    if !(pm.p_c >= 0.0 && pm.p_s >= 0.0 && pm.p_c.is_finite() && pm.p_s.is_finite()) {
        return Err(ValidationError::BadPowerModel("p_c and p_s must be finite and >= 0".into()));
    }
    if !(pm.p_max >= 0.0 && pm.p_max.is_finite()) {
        return Err(ValidationError::BadPowerModel(format!("p_max must be finite and >= 0, got {}", pm.p_max)));
    }
    // xi >= 1 and p_max >= 0 already force a positive denominator unless
    // every constant term is zero.
    if pm.consumed(stats.num_bs_antennas, 0.0) <= 0.0 && pm.xi <= 0.0 {
        return Err(ValidationError::BadPowerModel("consumed power is not positive on [0, p_max]".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_user_stats() -> ChannelStats {
        ChannelStats::new(
            3,
            vec![
                UserStats::new(Mat::from_rows(2, 3, vec![1.0, 0.0, 2.0, 0.0, 3.0, 1.0])),
                UserStats::new(Mat::from_rows(1, 3, vec![0.5, 0.5, 0.5])),
            ],
            1.0,
        )
    }

    fn pm() -> PowerModel {
        PowerModel { xi: 5.0, p_c: 1.0, p_s: 10.0, p_max: 40.0 }
    }

    #[test]
    fn dbm_definition_points() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(0.0) - 0.001).abs() < 1e-18);
        // 10^(-13.5), checked against an arbitrary-precision evaluation
        let w = dbm_to_watts(-105.0);
        assert!((w - 3.1622776601683793e-14).abs() / 3.1622776601683793e-14 < 1e-12, "got {w:e}");
    }

    #[test]
    fn dbm_watts_roundtrip() {
        for x in [-120.0, -30.0, 0.0, 17.5, 46.0] {
            assert!((watts_to_dbm(dbm_to_watts(x)) - x).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn dbm_monotone_and_decade(x in -150.0f64..60.0) {
            let w = dbm_to_watts(x);
            prop_assert!(dbm_to_watts(x + 1.0) > w);
            let ten = dbm_to_watts(x + 10.0);
            prop_assert!((ten - 10.0 * w).abs() <= 1e-12 * ten.max(10.0 * w));
        }
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert_eq!(validate(&two_user_stats(), &pm()), Ok(()));
    }

    #[test]
    fn validate_rejects_nan() {
        let mut stats = two_user_stats();
        stats.users[0].omega.set(1, 2, f64::NAN);
        assert_eq!(
            validate(&stats, &pm()),
            Err(ValidationError::NonFiniteEntry { user: 0, row: 1, col: 2 })
        );
    }

    #[test]
    fn validate_rejects_negative() {
        let mut stats = two_user_stats();
        stats.users[1].omega.set(0, 0, -0.25);
        assert_eq!(
            validate(&stats, &pm()),
            Err(ValidationError::NegativeEntry { user: 1, row: 0, col: 0 })
        );
    }

    #[test]
    fn validate_rejects_all_zero_user() {
        let mut stats = two_user_stats();
        stats.users[1].omega = Mat::zeros(1, 3);
        assert_eq!(validate(&stats, &pm()), Err(ValidationError::ZeroCouplingRowAll { user: 1 }));
    }

    #[test]
    fn validate_rejects_shape_mismatch() {
        let mut stats = two_user_stats();
        stats.users[1].omega = Mat::zeros(1, 2);
        assert!(matches!(validate(&stats, &pm()), Err(ValidationError::ShapeMismatch { user: 1, .. })));
    }

    #[test]
    fn normalize_noise_rescales_omega() {
        let stats = ChannelStats::new(
            2,
            vec![UserStats::new(Mat::filled(1, 2, 4.0e-12))],
            1e-12,
        );
        let n = stats.normalize_noise();
        assert_eq!(n.noise_power, 1.0);
        assert!((n.users[0].omega.get(0, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn allocation_total_power() {
        let a = PowerAllocation::uniform(2, 4, 8.0);
        assert!((a.total_power() - 8.0).abs() < 1e-12);
        assert!(a.user(0).iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
