//! Monte-Carlo estimation of the ergodic rates and the energy efficiency,
//! plus the rotated-covariance check that beam-domain (diagonal) transmit
//! covariances are optimal.
//!
//! Sampling is reproducible: the stream for a given (user, sample index) is
//! derived deterministically from the seed, so serial and parallel runs draw
//! the identical set of channels, and comparisons between two allocations use
//! common random numbers by construction.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{ChannelStats, Mat, PowerAllocation, PowerModel, SolverConfig};
use crate::ops::{kbar, rate_minus};

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        McEstimate { mean, std_error: (var / n as f64).sqrt(), samples: n }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("sampled matrix was not positive definite (sample {sample}, user {user})")]
    NumericalFailure { sample: usize, user: usize },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic per-stream RNG derived from a seed and a path of ids
/// (user index, sample index, ...).
pub fn derive_rng(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix(seed);
    for &id in ids {
        s = splitmix(s ^ id.wrapping_mul(0x165667b19e3779f9).wrapping_add(0x2545f4914f6cdd1d));
    }
    ChaCha8Rng::seed_from_u64(s)
}

/// Draw one beam-domain channel realization: entry (n, m) is circularly
/// symmetric complex Gaussian with mean zero and variance `omega[n, m]`.
pub fn sample_beam_channel<R: Rng>(omega: &Mat, rng: &mut R) -> DMatrix<Complex64> {
    DMatrix::from_fn(omega.rows(), omega.cols(), |n, m| {
        let sd = (omega.get(n, m) / 2.0).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(sd * re, sd * im)
    })
}

/// Log-determinant of a Hermitian positive-definite matrix via Cholesky.
fn logdet_hpd(m: DMatrix<Complex64>) -> Option<f64> {
    let chol = m.cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>())
}

/// `log det(diag(kb) + (G sqrt(diag(lam))) (G sqrt(diag(lam)))^H)` for one draw.
fn sample_rate_plus(g: &DMatrix<Complex64>, lam: &[f64], kb: &[f64]) -> Option<f64> {
    let n = g.nrows();
    let mut a = g.clone_owned();
    for (m, &l) in lam.iter().enumerate() {
        let s = Complex64::new(l.sqrt(), 0.0);
        for r in 0..n {
            a[(r, m)] *= s;
        }
    }
    let mut s = &a * a.adjoint();
    for i in 0..n {
        s[(i, i)] += Complex64::new(kb[i], 0.0);
    }
    logdet_hpd(s)
}

/// Monte-Carlo estimate of the gross rate term
/// `E{log det(Kbar_k + G_k Lambda_k G_k^H)}` for user `k`.
pub fn mc_rate_plus(
    stats: &ChannelStats,
    alloc: &PowerAllocation,
    k: usize,
    cfg: &SolverConfig,
) -> Result<McEstimate, McError> {
    let omega = &stats.user(k).omega;
    let kb = kbar(stats, alloc, k).expect("allocation shape checked by caller");
    let lam = alloc.user(k);
    let mut values = Vec::with_capacity(cfg.mc_samples);
    for s in 0..cfg.mc_samples {
        let mut rng = derive_rng(cfg.seed, &[k as u64, s as u64]);
        let g = sample_beam_channel(omega, &mut rng);
        let v = sample_rate_plus(&g, lam, &kb).ok_or(McError::NumericalFailure { sample: s, user: k })?;
        values.push(v);
    }
    Ok(McEstimate::from_samples(&values))
}

/// Monte-Carlo estimate of the energy efficiency of an allocation:
/// summed net rates divided by the consumed power.
pub fn mc_ee(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<McEstimate, McError> {
    let denom = pm.consumed(stats.num_bs_antennas, alloc.total_power());
    let k_users = stats.num_users();
    let kbs: Vec<_> = (0..k_users).map(|k| kbar(stats, alloc, k).unwrap()).collect();
    let r_minus: Vec<f64> = (0..k_users).map(|k| rate_minus(stats, alloc, k)).collect();
    let mut values = Vec::with_capacity(cfg.mc_samples);
    for s in 0..cfg.mc_samples {
        let mut acc = 0.0;
        for k in 0..k_users {
            let mut rng = derive_rng(cfg.seed, &[k as u64, s as u64]);
            let g = sample_beam_channel(&stats.user(k).omega, &mut rng);
            let v = sample_rate_plus(&g, alloc.user(k), &kbs[k])
                .ok_or(McError::NumericalFailure { sample: s, user: k })?;
            acc += v - r_minus[k];
        }
        values.push(acc / denom);
    }
    Ok(McEstimate::from_samples(&values))
}

/// Energy-efficiency difference of one rotated covariance against the
/// diagonal (beam-domain) allocation, for one rotation.
#[derive(Debug, Clone, Copy)]
pub struct RotationDiff {
    /// Mean of (rotated EE - diagonal EE) over common channel samples.
    pub mean: f64,
    pub std_error: f64,
}

/// Report of the rotated-covariance validation.
#[derive(Debug, Clone)]
pub struct Prop1Report {
    pub ee_diagonal: f64,
    pub diffs: Vec<RotationDiff>,
    /// Largest mean EE excess of any rotation over the diagonal allocation.
    pub max_diff: f64,
    /// Standard error paired with `max_diff`.
    pub max_diff_std_error: f64,
}

impl Prop1Report {
    /// True when no rotation beats the diagonal allocation by more than
    /// `z` standard errors.
    pub fn passes(&self, z: f64) -> bool {
        self.diffs.iter().all(|d| d.mean <= z * d.std_error)
    }
}

/// Haar-distributed unitary matrix (QR of a complex Ginibre draw with the
/// R-diagonal phases folded into Q).
pub fn haar_unitary<R: Rng>(dim: usize, rng: &mut R) -> DMatrix<Complex64> {
    let ginibre = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let qr = ginibre.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// EE difference (rotated minus diagonal) for one fixed unitary, using
/// common channel samples for both evaluations.
pub fn rotation_ee_difference(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc: &PowerAllocation,
    psi: &DMatrix<Complex64>,
    cfg: &SolverConfig,
) -> Result<RotationDiff, McError> {
    let k_users = stats.num_users();
    let m_dim = stats.num_bs_antennas;
    let denom = pm.consumed(m_dim, alloc.total_power());

    // Rotated covariances share the diagonal allocation's trace; only the
    // diagonal entries of Psi Lambda Psi^H enter the interference terms.
    let rot_diag: Vec<Vec<f64>> = (0..k_users)
        .map(|i| {
            (0..m_dim)
                .map(|m| {
                    (0..m_dim)
                        .map(|j| psi[(m, j)].norm_sqr() * alloc.user(i)[j])
                        .sum()
                })
                .collect()
        })
        .collect();

    let kb_diag: Vec<_> = (0..k_users).map(|k| kbar(stats, alloc, k).unwrap()).collect();
    let mut kb_rot: Vec<Vec<f64>> = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let omega = &stats.user(k).omega;
        let mut v = vec![stats.noise_power; omega.rows()];
        for i in 0..k_users {
            if i == k {
                continue;
            }
            for (n, entry) in v.iter_mut().enumerate() {
                *entry += omega.row(n).iter().zip(&rot_diag[i]).map(|(w, d)| w * d).sum::<f64>();
            }
        }
        kb_rot.push(v);
    }
    let logdet_noise_diag: Vec<f64> =
        (0..k_users).map(|k| kb_diag[k].iter().map(|v| v.ln()).sum()).collect();
    let logdet_noise_rot: Vec<f64> =
        (0..k_users).map(|k| kb_rot[k].iter().map(|v| v.ln()).sum()).collect();

    let mut diffs = Vec::with_capacity(cfg.mc_samples);
    for s in 0..cfg.mc_samples {
        let mut acc = 0.0;
        for k in 0..k_users {
            let mut rng = derive_rng(cfg.seed, &[k as u64, s as u64]);
            let g = sample_beam_channel(&stats.user(k).omega, &mut rng);
            let rate_diag = sample_rate_plus(&g, alloc.user(k), &kb_diag[k])
                .ok_or(McError::NumericalFailure { sample: s, user: k })?
                - logdet_noise_diag[k];
            let g_rot = &g * psi;
            let rate_rot = sample_rate_plus(&g_rot, alloc.user(k), &kb_rot[k])
                .ok_or(McError::NumericalFailure { sample: s, user: k })?
                - logdet_noise_rot[k];
            acc += rate_rot - rate_diag;
        }
        diffs.push(acc / denom);
    }
    let est = McEstimate::from_samples(&diffs);
    Ok(RotationDiff { mean: est.mean, std_error: est.std_error })
}

/// Compare the beam-domain allocation against `num_rotations` random unitary
/// rotations of the transmit covariances, with common random numbers.
///
/// A rotation with `mean > 3 * std_error` would contradict the optimality of
/// diagonal covariances.
pub fn prop1_validate(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc: &PowerAllocation,
    num_rotations: usize,
    cfg: &SolverConfig,
) -> Result<Prop1Report, McError> {
    let ee_diag = mc_ee(stats, pm, alloc, cfg)?.mean;
    let mut diffs = Vec::with_capacity(num_rotations);
    for r in 0..num_rotations {
        let mut rng = derive_rng(cfg.seed, &[0x526f746174u64, r as u64]);
        let psi = haar_unitary(stats.num_bs_antennas, &mut rng);
        diffs.push(rotation_ee_difference(stats, pm, alloc, &psi, cfg)?);
    }
    let (max_diff, max_se) = diffs
        .iter()
        .map(|d| (d.mean, d.std_error))
        .fold((f64::NEG_INFINITY, 0.0), |acc, d| if d.0 > acc.0 { d } else { acc });
    Ok(Prop1Report { ee_diagonal: ee_diag, diffs, max_diff, max_diff_std_error: max_se })
}
