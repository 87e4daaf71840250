//! Deterministic-equivalent (DE) ergodic-rate computation.
//!
//! The per-user rate expectation is approximated by a small fixed-point
//! system in two diagonal auxiliaries (phi over transmit beams, phi-tilde
//! over receive dimensions). Because the beam-domain channel entries are
//! independent, the whole system stays diagonal:
//!
//! ```text
//! phi[m]       = 1 + lambda[m] * sum_n omega[n,m] / (phi_t[n] * kbar[n])
//! phi_t[n]     = 1 + (sum_m omega[n,m] * lambda[m] / phi[m]) / kbar[n]
//! gamma[m]     = sum_n omega[n,m] / (phi_t[n] * kbar[n])
//! gamma_t[n]   = sum_m omega[n,m] * lambda[m] / phi[m]
//! ```
//!
//! The DE rate then reads
//! `sum_m ln(1 + gamma[m] lambda[m]) + sum_n ln(gamma_t[n] + kbar[n]) - sum_n (1 - 1/phi_t[n])`.
//!
//! Plain Picard iteration from the all-ones initializer (the exact solution
//! at zero power) converges quickly; a damping factor is halved whenever the
//! residual oscillates.

use thiserror::Error;

use crate::model::{ChannelStats, PowerAllocation, SolverConfig};
use crate::ops::{kbar, DiagVec};

/// Converged DE auxiliaries for one user.
#[derive(Debug, Clone)]
pub struct DEState {
    /// Per-beam gain diagonal, length M.
    pub gamma: DiagVec,
    /// Per-receive-dimension gain diagonal, length N_k.
    pub gamma_tilde: DiagVec,
    /// Per-beam auxiliary, length M; entries >= 1.
    pub phi: DiagVec,
    /// Per-receive-dimension auxiliary, length N_k; entries >= 1.
    pub phi_tilde: DiagVec,
    /// Interference-plus-noise diagonal the state was solved against.
    pub kbar: DiagVec,
}

#[derive(Debug, Error, PartialEq)]
pub enum DeError {
    #[error("DE fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Solve the DE fixed point for user `k` at the given allocation.
///
/// The returned state reproduces itself under one more update to within the
/// configured residual (`eps_de`, max-norm over the phi-tilde diagonal).
pub fn de_fixed_point(
    stats: &ChannelStats,
    alloc: &PowerAllocation,
    k: usize,
    cfg: &SolverConfig,
) -> Result<DEState, DeError> {
    let omega = &stats.user(k).omega;
    let lambda = alloc.user(k);
    let kb = kbar(stats, alloc, k).expect("allocation shape checked by caller");
    let n_dim = omega.rows();
    let m_dim = omega.cols();

    let mut phi = vec![1.0; m_dim];
    let mut phi_t = vec![1.0; n_dim];
    let mut theta = 1.0; // damping factor, halved on oscillation
    let mut prev_residual = f64::INFINITY;
    let mut residual = f64::INFINITY;

    for it in 0..cfg.max_iter_de {
        // phi update from the current phi_tilde
        let mut phi_next = vec![0.0; m_dim];
        for m in 0..m_dim {
            let mut s = 0.0;
            for n in 0..n_dim {
                s += omega.get(n, m) / (phi_t[n] * kb[n]);
            }
            phi_next[m] = 1.0 + lambda[m] * s;
        }
        // phi_tilde update from the fresh phi
        let mut phi_t_next = vec![0.0; n_dim];
        for n in 0..n_dim {
            let mut s = 0.0;
            let row = omega.row(n);
            for m in 0..m_dim {
                s += row[m] * lambda[m] / phi_next[m];
            }
            phi_t_next[n] = 1.0 + s / kb[n];
        }

        residual = phi_t_next
            .iter()
            .zip(&phi_t)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        if theta >= 1.0 {
            phi = phi_next;
            phi_t = phi_t_next;
        } else {
            for m in 0..m_dim {
                phi[m] += theta * (phi_next[m] - phi[m]);
            }
            for n in 0..n_dim {
                phi_t[n] += theta * (phi_t_next[n] - phi_t[n]);
            }
        }

        if residual <= cfg.eps_de {
            return Ok(assemble_state(stats, alloc, k, &kb, &phi_t));
        }

        if it > 10 && residual > prev_residual {
            theta = (theta * 0.5).max(0.0625);
        }
        prev_residual = residual;
    }

    Err(DeError::NoConvergence { iterations: cfg.max_iter_de, residual })
}

/// Build the full state from a converged phi-tilde so the algebraic
/// identities `phi = 1 + gamma .* lambda` and `phi_t = 1 + gamma_t ./ kbar`
/// hold exactly.
fn assemble_state(
    stats: &ChannelStats,
    alloc: &PowerAllocation,
    k: usize,
    kb: &DiagVec,
    phi_t: &[f64],
) -> DEState {
    let omega = &stats.user(k).omega;
    let lambda = alloc.user(k);
    let n_dim = omega.rows();
    let m_dim = omega.cols();

    let mut gamma = vec![0.0; m_dim];
    for m in 0..m_dim {
        let mut s = 0.0;
        for n in 0..n_dim {
            s += omega.get(n, m) / (phi_t[n] * kb[n]);
        }
        gamma[m] = s;
    }
    let phi: Vec<f64> = (0..m_dim).map(|m| 1.0 + gamma[m] * lambda[m]).collect();
    let mut gamma_t = vec![0.0; n_dim];
    for n in 0..n_dim {
        let row = omega.row(n);
        let mut s = 0.0;
        for m in 0..m_dim {
            s += row[m] * lambda[m] / phi[m];
        }
        gamma_t[n] = s;
    }
    let phi_t_out: Vec<f64> = (0..n_dim).map(|n| 1.0 + gamma_t[n] / kb[n]).collect();

    DEState {
        gamma: gamma.into(),
        gamma_tilde: gamma_t.into(),
        phi: phi.into(),
        phi_tilde: phi_t_out.into(),
        kbar: kb.clone(),
    }
}

/// One full update of the fixed-point map applied to an existing state;
/// returns the max-norm change of the phi-tilde diagonal. Used to verify
/// that a returned state really is a fixed point.
pub fn fixed_point_residual(stats: &ChannelStats, alloc: &PowerAllocation, k: usize, state: &DEState) -> f64 {
    let omega = &stats.user(k).omega;
    let lambda = alloc.user(k);
    let kb = &state.kbar;
    let m_dim = omega.cols();
    let n_dim = omega.rows();
    let mut phi_next = vec![0.0; m_dim];
    for m in 0..m_dim {
        let mut s = 0.0;
        for n in 0..n_dim {
            s += omega.get(n, m) / (state.phi_tilde[n] * kb[n]);
        }
        phi_next[m] = 1.0 + lambda[m] * s;
    }
    let mut worst = 0.0f64;
    for n in 0..n_dim {
        let row = omega.row(n);
        let mut s = 0.0;
        for m in 0..m_dim {
            s += row[m] * lambda[m] / phi_next[m];
        }
        worst = worst.max((1.0 + s / kb[n] - state.phi_tilde[n]).abs());
    }
    worst
}

/// Solve the DE fixed point for every user.
pub fn solve_states(
    stats: &ChannelStats,
    alloc: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<Vec<DEState>, DeError> {
    (0..stats.num_users()).map(|k| de_fixed_point(stats, alloc, k, cfg)).collect()
}

/// DE of the gross rate term for user `k` at the state's allocation.
pub fn de_rate_plus(_stats: &ChannelStats, alloc: &PowerAllocation, k: usize, state: &DEState) -> f64 {
    let lambda = alloc.user(k);
    let beams: f64 = state
        .gamma
        .iter()
        .zip(lambda)
        .map(|(g, l)| (g * l).ln_1p())
        .sum();
    let rx: f64 = state
        .gamma_tilde
        .iter()
        .zip(state.kbar.iter())
        .map(|(gt, kb)| (gt + kb).ln())
        .sum();
    let correction: f64 = state.phi_tilde.iter().map(|p| 1.0 - 1.0 / p).sum();
    beams + rx - correction
}

/// Net DE rate (gross minus interference log-det) for user `k`.
pub fn de_rate_net(stats: &ChannelStats, alloc: &PowerAllocation, k: usize, state: &DEState) -> f64 {
    de_rate_plus(stats, alloc, k, state) - state.kbar.iter().map(|v| v.ln()).sum::<f64>()
}

/// Gradient of the user's own DE rate with respect to its beam powers:
/// `gamma[m] / (1 + gamma[m] * lambda[m])`.
///
/// The derivative of the auxiliaries with respect to the powers vanishes at
/// the fixed point, so the frozen-auxiliary expression is exact.
pub fn de_gradient_own(state: &DEState, lambda_k: &[f64]) -> DiagVec {
    state
        .gamma
        .iter()
        .zip(lambda_k)
        .map(|(g, l)| g / (1.0 + g * l))
        .collect::<Vec<_>>()
        .into()
}

/// Gradient of the other users' summed DE rates with respect to the beam
/// powers of user `k`:
///
/// `sum_{k' != k} sum_n omega_{k'}[n,m] / (gamma_t_{k'}[n] + kbar_{k'}[n])`.
///
/// Zero when there is a single user.
pub fn de_gradient_cross(
    stats: &ChannelStats,
    _alloc: &PowerAllocation,
    states: &[DEState],
    k: usize,
) -> DiagVec {
    let m_dim = stats.num_bs_antennas;
    let mut out = vec![0.0; m_dim];
    for kp in 0..stats.num_users() {
        if kp == k {
            continue;
        }
        let omega = &stats.user(kp).omega;
        let st = &states[kp];
        for n in 0..omega.rows() {
            let den = st.gamma_tilde[n] + st.kbar[n];
            let row = omega.row(n);
            for m in 0..m_dim {
                out[m] += row[m] / den;
            }
        }
    }
    out.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mat, UserStats};
    use crate::ops::rate_minus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SolverConfig {
        SolverConfig { eps_de: 1e-12, ..SolverConfig::default() }
    }

    #[test]
    fn zero_power_collapses() {
        let stats = ChannelStats::new(
            3,
            vec![UserStats::new(Mat::from_rows(2, 3, vec![1.0, 0.5, 2.0, 0.3, 3.0, 1.0]))],
            2.0,
        );
        let alloc = PowerAllocation::zeros(1, 3);
        let st = de_fixed_point(&stats, &alloc, 0, &cfg()).unwrap();
        assert!(st.phi.iter().all(|&p| p == 1.0));
        assert!(st.phi_tilde.iter().all(|&p| p == 1.0));
        assert!(st.gamma_tilde.iter().all(|&g| g == 0.0));
        // gamma = xi_op(omega, 1/kbar) with kbar = noise
        let expected: Vec<f64> = (0..3)
            .map(|m| (0..2).map(|n| stats.user(0).omega.get(n, m) / 2.0).sum())
            .collect();
        for (g, e) in st.gamma.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-14);
        }
        // zero power: gross DE rate equals the interference log-det
        let r = de_rate_plus(&stats, &alloc, 0, &st);
        assert!((r - rate_minus(&stats, &alloc, 0)).abs() < 1e-12);
    }

    #[test]
    fn scalar_closed_form() {
        // M = N = 1, K = 1, sigma2 = 1, omega = 2, lambda = 1:
        // phi solves phi^2 - phi - omega*lambda = 0 -> phi = 2.
        let stats = ChannelStats::new(1, vec![UserStats::new(Mat::from_rows(1, 1, vec![2.0]))], 1.0);
        let alloc = PowerAllocation::new(vec![vec![1.0]]);
        let st = de_fixed_point(&stats, &alloc, 0, &cfg()).unwrap();
        assert!((st.phi[0] - 2.0).abs() < 1e-10, "phi = {}", st.phi[0]);
        assert!((st.phi_tilde[0] - 2.0).abs() < 1e-10);
        assert!((st.gamma[0] - 1.0).abs() < 1e-10);
        assert!((st.gamma_tilde[0] - 1.0).abs() < 1e-10);
        let r = de_rate_plus(&stats, &alloc, 0, &st);
        assert!((r - 0.8862943611198906).abs() < 1e-9, "rate = {r}");
        // own gradient 1/(1+1) = 0.5
        let g = de_gradient_own(&st, alloc.user(0));
        assert!((g[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn scalar_closed_form_random_loads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let omega = rng.gen_range(0.1..5.0);
            let lam = rng.gen_range(0.0..4.0);
            let stats =
                ChannelStats::new(1, vec![UserStats::new(Mat::from_rows(1, 1, vec![omega]))], 1.0);
            let alloc = PowerAllocation::new(vec![vec![lam]]);
            let st = de_fixed_point(&stats, &alloc, 0, &cfg()).unwrap();
            let phi_expected = 0.5 * (1.0 + (1.0 + 4.0 * omega * lam).sqrt());
            assert!(
                (st.phi[0] - phi_expected).abs() < 1e-9,
                "phi {} vs {}",
                st.phi[0],
                phi_expected
            );
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng, k_users: usize, m_dim: usize, n_dim: usize) -> (ChannelStats, PowerAllocation) {
        let users = (0..k_users)
            .map(|_| {
                let data = (0..n_dim * m_dim).map(|_| rng.gen_range(0.05..3.0)).collect();
                UserStats::new(Mat::from_rows(n_dim, m_dim, data))
            })
            .collect();
        let stats = ChannelStats::new(m_dim, users, 1.0);
        let lambdas = (0..k_users)
            .map(|_| (0..m_dim).map(|_| rng.gen_range(0.0..1.5)).collect())
            .collect();
        (stats, PowerAllocation::new(lambdas))
    }

    #[test]
    fn converged_state_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let (stats, alloc) = random_instance(&mut rng, 3, 4, 2);
            let states = solve_states(&stats, &alloc, &cfg()).unwrap();
            for (k, st) in states.iter().enumerate() {
                let res = fixed_point_residual(&stats, &alloc, k, st);
                assert!(res <= cfg().eps_de, "user {k}: residual {res:e}");
                assert!(st.phi.iter().all(|&p| p >= 1.0));
                assert!(st.phi_tilde.iter().all(|&p| p >= 1.0));
                assert!(st.gamma.iter().all(|&g| g >= 0.0));
                assert!(st.gamma_tilde.iter().all(|&g| g >= 0.0));
            }
        }
    }

    #[test]
    fn net_rate_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let (stats, alloc) = random_instance(&mut rng, 2, 5, 3);
            let states = solve_states(&stats, &alloc, &cfg()).unwrap();
            for k in 0..2 {
                let net = de_rate_net(&stats, &alloc, k, &states[k]);
                assert!(net >= -1e-10, "net rate {net}");
            }
        }
    }

    /// Central finite differences of the DE rate with the fixed point
    /// re-solved at every perturbed allocation.
    fn fd_gradient(
        stats: &ChannelStats,
        alloc: &PowerAllocation,
        target: usize,
        wrt: usize,
        h: f64,
        own: bool,
    ) -> Vec<f64> {
        let m_dim = stats.num_bs_antennas;
        let mut out = vec![0.0; m_dim];
        let eval = |a: &PowerAllocation| -> f64 {
            if own {
                let st = de_fixed_point(stats, a, target, &cfg()).unwrap();
                de_rate_plus(stats, a, target, &st)
            } else {
                (0..stats.num_users())
                    .filter(|&kp| kp != wrt)
                    .map(|kp| {
                        let st = de_fixed_point(stats, a, kp, &cfg()).unwrap();
                        de_rate_plus(stats, a, kp, &st)
                    })
                    .sum()
            }
        };
        for m in 0..m_dim {
            let mut plus = alloc.clone();
            plus.lambdas[wrt][m] += h;
            let mut minus = alloc.clone();
            minus.lambdas[wrt][m] = (minus.lambdas[wrt][m] - h).max(0.0);
            let denom = plus.lambdas[wrt][m] - minus.lambdas[wrt][m];
            out[m] = (eval(&plus) - eval(&minus)) / denom;
        }
        out
    }

    #[test]
    fn own_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..3 {
            let (stats, alloc) = random_instance(&mut rng, 2, 4, 2);
            for k in 0..2 {
                let st = de_fixed_point(&stats, &alloc, k, &cfg()).unwrap();
                let g = de_gradient_own(&st, alloc.user(k));
                let fd = fd_gradient(&stats, &alloc, k, k, 1e-5, true);
                let scale = g.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-12);
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() / scale <= 1e-4, "own grad {a} vs fd {b}");
                }
            }
        }
    }

    #[test]
    fn cross_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..3 {
            let (stats, alloc) = random_instance(&mut rng, 2, 4, 2);
            for k in 0..2 {
                let states = solve_states(&stats, &alloc, &cfg()).unwrap();
                let g = de_gradient_cross(&stats, &alloc, &states, k);
                let fd = fd_gradient(&stats, &alloc, 0, k, 1e-5, false);
                let scale = g.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-12);
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() / scale <= 1e-4, "cross grad {a} vs fd {b}");
                }
            }
        }
    }

    #[test]
    fn cross_gradient_single_user_zero() {
        let stats = ChannelStats::new(2, vec![UserStats::new(Mat::filled(2, 2, 1.0))], 1.0);
        let alloc = PowerAllocation::uniform(1, 2, 2.0);
        let states = solve_states(&stats, &alloc, &cfg()).unwrap();
        let g = de_gradient_cross(&stats, &alloc, &states, 0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn own_gradient_at_zero_power_is_gamma() {
        let stats = ChannelStats::new(
            3,
            vec![UserStats::new(Mat::from_rows(2, 3, vec![1.0, 0.5, 2.0, 0.3, 3.0, 1.0]))],
            1.0,
        );
        let alloc = PowerAllocation::zeros(1, 3);
        let st = de_fixed_point(&stats, &alloc, 0, &cfg()).unwrap();
        let g = de_gradient_own(&st, alloc.user(0));
        for (a, b) in g.iter().zip(st.gamma.iter()) {
            assert_eq!(a, b);
        }
    }
}
