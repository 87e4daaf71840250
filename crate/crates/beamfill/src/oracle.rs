//! Independent reference solvers used to verify the water-filling module:
//! projected-gradient ascent for the concave fixed-level subproblems and
//! exhaustive grid search over tiny instances.
//!
//! These deliberately avoid the water-filling code paths: the objective and
//! gradient are evaluated from the DE states and linearization diagonals
//! directly, and the maximization is a plain projected gradient with Armijo
//! backtracking.

use thiserror::Error;

use crate::de::{de_rate_net, solve_states, DEState};
use crate::model::{ChannelStats, PowerAllocation, PowerModel, SolverConfig};
use crate::ops::DiagVec;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("projected gradient did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("grid search supports at most 3 power variables, instance has {0}")]
    InstanceTooLarge(usize),
    #[error(transparent)]
    De(#[from] crate::de::DeError),
    #[error(transparent)]
    Mc(#[from] crate::mc::McError),
}

/// Solution found by a reference solver.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub allocation: PowerAllocation,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Fixed-level subproblem objective, evaluated from first principles:
///
/// `sum_k [ sum_m ln(1+gamma λ) + sum_n ln(gamma_t + kbar(λ)) - <delta, λ> ]
///  - eta (xi sum λ + M p_c + p_s)`.
pub fn f6_objective(
    stats: &ChannelStats,
    states: &[DEState],
    deltas: &[DiagVec],
    pm: &PowerModel,
    eta: f64,
    alloc: &PowerAllocation,
) -> f64 {
    let mut total = 0.0;
    for k in 0..stats.num_users() {
        let lam = alloc.user(k);
        for m in 0..stats.num_bs_antennas {
            total += (states[k].gamma[m] * lam[m]).ln_1p() - deltas[k][m] * lam[m];
        }
        let omega = &stats.user(k).omega;
        for n in 0..omega.rows() {
            let mut kb = stats.noise_power;
            for i in 0..stats.num_users() {
                if i == k {
                    continue;
                }
                kb += omega.row(n).iter().zip(alloc.user(i)).map(|(w, l)| w * l).sum::<f64>();
            }
            total += (states[k].gamma_tilde[n] + kb).ln();
        }
    }
    total - eta * pm.consumed(stats.num_bs_antennas, alloc.total_power())
}

fn f6_gradient(
    stats: &ChannelStats,
    states: &[DEState],
    deltas: &[DiagVec],
    pm: &PowerModel,
    eta: f64,
    x: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let k_users = stats.num_users();
    let m_dim = stats.num_bs_antennas;
    // interference-plus-noise at the current point, per user and rx dim
    let kb: Vec<Vec<f64>> = (0..k_users)
        .map(|k| {
            let omega = &stats.user(k).omega;
            (0..omega.rows())
                .map(|n| {
                    let mut acc = stats.noise_power;
                    for i in 0..k_users {
                        if i == k {
                            continue;
                        }
                        acc += omega.row(n).iter().zip(&x[i]).map(|(w, l)| w * l).sum::<f64>();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    (0..k_users)
        .map(|k| {
            (0..m_dim)
                .map(|m| {
                    let g = states[k].gamma[m];
                    let mut grad = g / (1.0 + g * x[k][m]) - deltas[k][m] - eta * pm.xi;
                    for kp in 0..k_users {
                        if kp == k {
                            continue;
                        }
                        let omega = &stats.user(kp).omega;
                        for n in 0..omega.rows() {
                            grad += omega.get(n, m) / (states[kp].gamma_tilde[n] + kb[kp][n]);
                        }
                    }
                    grad
                })
                .collect()
        })
        .collect()
}

/// Euclidean projection onto the simplex `{y >= 0, sum y = c}`.
fn project_simplex(x: &[f64], c: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - c) / (j + 1) as f64;
        if j + 1 == sorted.len() || sorted[j + 1] <= t {
            tau = t;
            break;
        }
    }
    x.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// Projection onto `{y >= 0}` intersected with `{sum y <= c}` when a budget
/// is present.
fn project_feasible(x: &[f64], p_max: Option<f64>) -> Vec<f64> {
    let clamped: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
    match p_max {
        Some(c) if clamped.iter().sum::<f64>() > c => project_simplex(x, c),
        _ => clamped,
    }
}

fn flatten(x: &[Vec<f64>]) -> Vec<f64> {
    x.iter().flatten().copied().collect()
}

fn unflatten(v: &[f64], k_users: usize, m_dim: usize) -> Vec<Vec<f64>> {
    (0..k_users).map(|k| v[k * m_dim..(k + 1) * m_dim].to_vec()).collect()
}

/// Projected-gradient ascent with Armijo backtracking for the fixed-level
/// concave subproblem, over `{λ >= 0}` or `{λ >= 0, sum λ <= p_max}`.
///
/// Exits when the projected-gradient step (fixed unit step length) has
/// infinity norm below `1e-7 * scale`.
pub fn pg_solve_f6(
    stats: &ChannelStats,
    deltas: &[DiagVec],
    de_states: &[DEState],
    pm: &PowerModel,
    eta: f64,
    p_max: Option<f64>,
    alloc0: &PowerAllocation,
    _cfg: &SolverConfig,
) -> Result<OracleResult, OracleError> {
    let k_users = stats.num_users();
    let m_dim = stats.num_bs_antennas;
    let eval = |flat: &[f64]| -> f64 {
        let alloc = PowerAllocation::new(unflatten(flat, k_users, m_dim));
        f6_objective(stats, de_states, deltas, pm, eta, &alloc)
    };
    let grad = |flat: &[f64]| -> Vec<f64> {
        flatten(&f6_gradient(stats, de_states, deltas, pm, eta, &unflatten(flat, k_users, m_dim)))
    };

    let mut x = project_feasible(&flatten(&alloc0.lambdas), p_max);
    let mut fx = eval(&x);
    let g0 = grad(&x);
    let scale = g0.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let tol = 1e-7 * scale;
    let max_iter = 50_000;
    let mut step = 1.0 / scale;
    let mut residual = f64::INFINITY;

    for it in 0..max_iter {
        let g = grad(&x);
        // natural-map residual at unit step
        let probe: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + gi).collect();
        let projected = project_feasible(&probe, p_max);
        residual = projected
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            let alloc = PowerAllocation::new(unflatten(&x, k_users, m_dim));
            return Ok(OracleResult { allocation: alloc, objective: fx, iterations: it, kkt_residual: residual });
        }

        // Armijo backtracking along the projection arc
        step *= 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
            let cand = project_feasible(&trial, p_max);
            let dir_dot: f64 = cand.iter().zip(&x).zip(&g).map(|((c, xi), gi)| (c - xi) * gi).sum();
            let fc = eval(&cand);
            if fc >= fx + 1e-4 * dir_dot && fc.is_finite() {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // step collapsed to numerical noise; treat as converged if the
            // residual is already tiny relative to the scale
            if residual <= 1e3 * tol {
                let alloc = PowerAllocation::new(unflatten(&x, k_users, m_dim));
                return Ok(OracleResult { allocation: alloc, objective: fx, iterations: it, kkt_residual: residual });
            }
            return Err(OracleError::NoConvergence { iterations: it, residual });
        }
    }
    Err(OracleError::NoConvergence { iterations: max_iter, residual })
}

/// Metric used by the brute-force grid oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMetric {
    /// Deterministic-equivalent energy efficiency (default: deterministic).
    De,
    /// Monte-Carlo energy efficiency.
    Mc,
}

/// Exhaustive grid search of the energy efficiency over all allocations on
/// the grid `{0, δ, ..., p_max}` per power variable, `δ = p_max/resolution`.
/// Only instances with at most 3 total variables are accepted.
pub fn grid_search_ee(
    stats: &ChannelStats,
    pm: &PowerModel,
    resolution: usize,
    metric: GridMetric,
    cfg: &SolverConfig,
) -> Result<OracleResult, OracleError> {
    let k_users = stats.num_users();
    let m_dim = stats.num_bs_antennas;
    let vars = k_users * m_dim;
    if vars > 3 {
        return Err(OracleError::InstanceTooLarge(vars));
    }
    let delta = pm.p_max / resolution as f64;
    let mut best_ee = f64::NEG_INFINITY;
    let mut best = vec![0.0; vars];
    let mut idx = vec![0usize; vars];
    let mut evaluated = 0usize;
    loop {
        let point: Vec<f64> = idx.iter().map(|&i| i as f64 * delta).collect();
        if point.iter().sum::<f64>() <= pm.p_max + 1e-12 {
            let alloc = PowerAllocation::new(unflatten(&point, k_users, m_dim));
            let ee = match metric {
                GridMetric::De => {
                    let states = solve_states(stats, &alloc, cfg)?;
                    let rates: f64 =
                        (0..k_users).map(|k| de_rate_net(stats, &alloc, k, &states[k])).sum();
                    rates / pm.consumed(m_dim, alloc.total_power())
                }
                GridMetric::Mc => crate::mc::mc_ee(stats, pm, &alloc, cfg)?.mean,
            };
            evaluated += 1;
            if ee > best_ee {
                best_ee = ee;
                best = point;
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == vars {
                let allocation = PowerAllocation::new(unflatten(&best, k_users, m_dim));
                return Ok(OracleResult {
                    allocation,
                    objective: best_ee,
                    iterations: evaluated,
                    kkt_residual: f64::NAN,
                });
            }
            idx[pos] += 1;
            if idx[pos] <= resolution {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mat, UserStats};
    use crate::ops::delta_k;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn simplex_projection_basics() {
        let p = project_simplex(&[2.0, 1.0], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 0.0).abs() < 1e-12);
        let q = project_simplex(&[0.2, 0.2], 1.0);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((q[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pg_recovers_single_user_water_filling() {
        // K = 1 with prescribed gains: optimum is [1/(xi eta) - 1/gamma]^+.
        let stats = ChannelStats::new(2, vec![UserStats::new(Mat::filled(1, 2, 1.0))], 1.0);
        let alloc0 = PowerAllocation::zeros(1, 2);
        let states = vec![DEState {
            gamma: vec![4.0, 2.0].into(),
            gamma_tilde: vec![0.0].into(),
            phi: vec![1.0, 1.0].into(),
            phi_tilde: vec![1.0].into(),
            kbar: vec![1.0].into(),
        }];
        let deltas = vec![DiagVec::zeros(2)];
        let pm = PowerModel { xi: 1.0, p_c: 0.5, p_s: 1.0, p_max: 100.0 };
        let eta = 1.0;
        let res = pg_solve_f6(&stats, &deltas, &states, &pm, eta, None, &alloc0, &cfg()).unwrap();
        let expected = [0.75, 0.5];
        for (a, e) in res.allocation.user(0).iter().zip(expected) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn pg_zero_gain_returns_zero() {
        let stats = ChannelStats::new(2, vec![UserStats::new(Mat::filled(1, 2, 1.0))], 1.0);
        let states = vec![DEState {
            gamma: vec![0.0, 0.0].into(),
            gamma_tilde: vec![0.0].into(),
            phi: vec![1.0, 1.0].into(),
            phi_tilde: vec![1.0].into(),
            kbar: vec![1.0].into(),
        }];
        let deltas = vec![DiagVec::zeros(2)];
        let pm = PowerModel { xi: 1.0, p_c: 0.5, p_s: 1.0, p_max: 10.0 };
        let res = pg_solve_f6(&stats, &deltas, &states, &pm, 0.5, Some(10.0),
                              &PowerAllocation::uniform(1, 2, 4.0), &cfg()).unwrap();
        assert!(res.allocation.total_power() < 1e-6);
    }

    #[test]
    fn pg_respects_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let users = (0..2)
            .map(|_| {
                let data = (0..2 * 3).map(|_| rng.gen_range(0.2..2.0)).collect();
                UserStats::new(Mat::from_rows(2, 3, data))
            })
            .collect();
        let stats = ChannelStats::new(3, users, 1.0);
        let alloc = PowerAllocation::uniform(2, 3, 1.0);
        let states = crate::de::solve_states(&stats, &alloc, &cfg()).unwrap();
        let deltas: Vec<DiagVec> = (0..2).map(|k| delta_k(&stats, &alloc, k)).collect();
        let pm = PowerModel { xi: 2.0, p_c: 0.5, p_s: 1.0, p_max: 1.5 };
        let res = pg_solve_f6(&stats, &deltas, &states, &pm, 0.0, Some(pm.p_max), &alloc, &cfg()).unwrap();
        assert!(res.allocation.total_power() <= pm.p_max + 1e-9);
        assert!(res.allocation.lambdas.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn grid_rejects_large_instances() {
        let stats = ChannelStats::new(4, vec![UserStats::new(Mat::filled(1, 4, 1.0))], 1.0);
        let pm = PowerModel { xi: 1.0, p_c: 0.5, p_s: 1.0, p_max: 1.0 };
        assert!(matches!(
            grid_search_ee(&stats, &pm, 10, GridMetric::De, &cfg()),
            Err(OracleError::InstanceTooLarge(4))
        ));
    }

    #[test]
    fn grid_scalar_matches_golden_section() {
        let stats = ChannelStats::new(1, vec![UserStats::new(Mat::from_rows(1, 1, vec![3.0]))], 1.0);
        let pm = PowerModel { xi: 1.0, p_c: 1.0, p_s: 1.0, p_max: 5.0 };
        let ee_of = |lam: f64| -> f64 {
            let alloc = PowerAllocation::new(vec![vec![lam]]);
            let states = solve_states(&stats, &alloc, &cfg()).unwrap();
            de_rate_net(&stats, &alloc, 0, &states[0]) / pm.consumed(1, lam)
        };
        // golden-section search over [0, p_max]
        let (mut a, mut b) = (0.0f64, pm.p_max);
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if ee_of(c) >= ee_of(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let analytic = 0.5 * (a + b);
        let res = grid_search_ee(&stats, &pm, 400, GridMetric::De, &cfg()).unwrap();
        let delta = pm.p_max / 400.0;
        assert!(
            (res.allocation.user(0)[0] - analytic).abs() <= delta,
            "grid {} vs golden {}",
            res.allocation.user(0)[0],
            analytic
        );
    }

    #[test]
    fn grid_low_budget_prefers_small_power() {
        // With a tiny budget and weak channel the best point sits at low power.
        let stats = ChannelStats::new(1, vec![UserStats::new(Mat::from_rows(1, 1, vec![0.05]))], 1.0);
        let pm = PowerModel { xi: 1.0, p_c: 1.0, p_s: 1.0, p_max: 0.2 };
        let res = grid_search_ee(&stats, &pm, 50, GridMetric::De, &cfg()).unwrap();
        assert!(res.allocation.user(0)[0] <= pm.p_max + 1e-12);
    }
}
