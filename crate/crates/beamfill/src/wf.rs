//! The two iterative water-filling solvers for the per-MM-iteration
//! subproblems: unconstrained energy-efficiency maximization (a Dinkelbach
//! loop whose inner solution has water-filling structure) and sum-rate
//! maximization under a total power budget (bisection on the Lagrange
//! multiplier).
//!
//! Both solvers act on a [`Surrogate`]: the concave objective obtained by
//! freezing the DE auxiliary diagonals and linearizing the interference
//! log-determinants at the current MM expansion point. Per beam entry the
//! stationarity condition is a strictly decreasing scalar equation which is
//! solved with a safeguarded Newton-Raphson iteration; entries whose marginal
//! utility at zero falls below the water level stay at zero.

use thiserror::Error;

use crate::de::{solve_states, DEState};
use crate::model::{ChannelStats, DeRefresh, PowerAllocation, PowerModel, SolverConfig};
use crate::ops::{delta_k, DiagVec};

#[derive(Debug, Error, PartialEq)]
pub enum WfError {
    #[error("{loop_name} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { loop_name: &'static str, iterations: usize, residual: f64 },
    #[error(transparent)]
    De(#[from] crate::de::DeError),
}

/// Everything frozen at one MM expansion point: the expansion allocation,
/// its DE states, the interference-gradient diagonals, and the reference
/// log-determinants.
#[derive(Debug, Clone)]
pub struct MmExpansion {
    pub alloc: PowerAllocation,
    pub states: Vec<DEState>,
    pub deltas: Vec<DiagVec>,
    pub rate_minus_ref: Vec<f64>,
}

impl MmExpansion {
    /// Solve the DE fixed points at `alloc` and assemble the expansion data.
    pub fn at(stats: &ChannelStats, alloc: &PowerAllocation, cfg: &SolverConfig) -> Result<Self, crate::de::DeError> {
        let states = solve_states(stats, alloc, cfg)?;
        let deltas: Vec<DiagVec> = (0..stats.num_users()).map(|k| delta_k(stats, alloc, k)).collect();
        let rate_minus_ref = states
            .iter()
            .map(|st| st.kbar.iter().map(|v| v.ln()).sum())
            .collect();
        Ok(MmExpansion { alloc: alloc.clone(), states, deltas, rate_minus_ref })
    }

    /// Surrogate with the DE auxiliaries taken from the expansion point.
    pub fn surrogate<'a>(&self, stats: &'a ChannelStats) -> Surrogate<'a> {
        self.surrogate_with(stats, &self.states)
    }

    /// Surrogate with refreshed DE auxiliaries but the linearization kept at
    /// the expansion point.
    pub fn surrogate_with<'a>(&self, stats: &'a ChannelStats, states: &[DEState]) -> Surrogate<'a> {
        let gamma: Vec<Vec<f64>> = states.iter().map(|s| s.gamma.to_vec()).collect();
        let gamma_tilde: Vec<Vec<f64>> = states.iter().map(|s| s.gamma_tilde.to_vec()).collect();
        let delta: Vec<Vec<f64>> = self.deltas.iter().map(|d| d.to_vec()).collect();
        let mut const_term = 0.0;
        for k in 0..stats.num_users() {
            let phi_corr: f64 = states[k].phi_tilde.iter().map(|p| 1.0 - 1.0 / p).sum();
            let delta_dot: f64 = self.deltas[k]
                .iter()
                .zip(self.alloc.user(k))
                .map(|(d, l)| d * l)
                .sum();
            const_term += -phi_corr - self.rate_minus_ref[k] + delta_dot;
        }
        Surrogate { stats, gamma, gamma_tilde, delta, const_term }
    }
}

/// The concave inner objective shared by the water-filling solvers, the
/// reference solver, and the verification oracle:
///
/// ```text
/// N(lambda) = sum_k [ sum_m ln(1 + gamma[k][m] lambda[k][m])
///                   + sum_n ln(gamma_t[k][n] + kbar_k[n](lambda))
///                   - <delta[k], lambda[k]> ] + const_term
/// ```
///
/// `N` evaluated at the expansion allocation equals the DE net sum rate
/// there, so `N / consumed_power` is the DE energy efficiency at that point.
#[derive(Debug, Clone)]
pub struct Surrogate<'a> {
    pub stats: &'a ChannelStats,
    pub gamma: Vec<Vec<f64>>,
    pub gamma_tilde: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub const_term: f64,
}

impl<'a> Surrogate<'a> {
    /// Surrogate numerator at an arbitrary allocation.
    pub fn numerator(&self, alloc: &PowerAllocation) -> f64 {
        let stats = self.stats;
        let mut total = self.const_term;
        for k in 0..stats.num_users() {
            let lam = alloc.user(k);
            total += self.gamma[k]
                .iter()
                .zip(lam)
                .map(|(g, l)| (g * l).ln_1p())
                .sum::<f64>();
            total -= self.delta[k].iter().zip(lam).map(|(d, l)| d * l).sum::<f64>();
            let omega = &stats.user(k).omega;
            for n in 0..omega.rows() {
                let mut kb = stats.noise_power;
                for i in 0..stats.num_users() {
                    if i == k {
                        continue;
                    }
                    kb += omega.row(n).iter().zip(alloc.user(i)).map(|(w, l)| w * l).sum::<f64>();
                }
                total += (self.gamma_tilde[k][n] + kb).ln();
            }
        }
        total
    }

    /// Dinkelbach level at an allocation: numerator over consumed power.
    pub fn level(&self, pm: &PowerModel, alloc: &PowerAllocation) -> f64 {
        self.numerator(alloc) / pm.consumed(self.stats.num_bs_antennas, alloc.total_power())
    }
}

/// Scalar stationarity equation for one (user, beam) entry at a fixed water
/// level. `terms` carries one (base, weight) pair per interfered receive
/// dimension so the cross part reads `sum_j w_j / (base_j + w_j * x)`.
#[derive(Debug, Clone)]
pub struct ScalarKkt {
    pub gamma: f64,
    pub level: f64,
    pub terms: Vec<(f64, f64)>,
}

/// Value and derivative of the per-entry stationarity function
/// `gamma/(1+gamma x) - level + sum_j w_j/(base_j + w_j x)`.
///
/// The derivative is strictly negative wherever any coefficient is nonzero.
pub fn rho(x: f64, ctx: &ScalarKkt) -> (f64, f64) {
    let own_den = 1.0 + ctx.gamma * x;
    let mut value = ctx.gamma / own_den - ctx.level;
    let mut deriv = -(ctx.gamma * ctx.gamma) / (own_den * own_den);
    for &(base, w) in &ctx.terms {
        let den = base + w * x;
        value += w / den;
        deriv -= (w * w) / (den * den);
    }
    (value, deriv)
}

/// Safeguarded Newton-Raphson for a strictly decreasing `f` on `[0, hi_limit]`.
///
/// Returns 0 immediately when `f(0) <= 0` (the entry is inactive; ties are
/// assigned to the zero branch). Otherwise the root is bracketed by doubling
/// and Newton steps that leave the bracket, or hit a flat derivative, fall
/// back to bisection. Returns `hi_limit` when `f` is still positive there.
pub fn newton_root<F: Fn(f64) -> (f64, f64)>(
    f: F,
    x0: f64,
    hi_limit: f64,
    eps: f64,
    max_iter: usize,
) -> Result<f64, WfError> {
    let (v0, _) = f(0.0);
    if v0 <= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = x0.max(1e-3).min(hi_limit);
    let mut iterations = 0usize;
    loop {
        let (v, _) = f(hi);
        if v < 0.0 {
            break;
        }
        lo = hi;
        if hi >= hi_limit {
            return Ok(hi_limit);
        }
        hi = (hi * 2.0).min(hi_limit);
        iterations += 1;
        if iterations > 200 {
            return Ok(hi_limit);
        }
    }

    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    let mut step = f64::INFINITY;
    for _ in 0..max_iter {
        let (v, dv) = f(x);
        if v > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = if dv < 0.0 { x - v / dv } else { f64::NAN };
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        step = (next - x).abs();
        x = next;
        if step <= eps || (hi - lo) <= eps {
            return Ok(x);
        }
    }
    Err(WfError::NoConvergence { loop_name: "newton", iterations: max_iter, residual: step })
}

/// Mutable per-sweep workspace: the current entry powers and, per user and
/// receive dimension, the accumulated noise-plus-interference term
/// `t[k][n] = noise + sum_{l != k} sum_m x[l][m] * omega_k[n,m]`.
pub struct WfWorkspace {
    pub x: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
}

impl WfWorkspace {
    pub fn new(stats: &ChannelStats, alloc: &PowerAllocation) -> Self {
        let x: Vec<Vec<f64>> = (0..stats.num_users()).map(|k| alloc.user(k).to_vec()).collect();
        let mut ws = WfWorkspace { x, t: Vec::new() };
        ws.rebuild_interference(stats);
        ws
    }

    fn rebuild_interference(&mut self, stats: &ChannelStats) {
        self.t = (0..stats.num_users())
            .map(|k| {
                let omega = &stats.user(k).omega;
                (0..omega.rows())
                    .map(|n| {
                        let mut acc = stats.noise_power;
                        for l in 0..stats.num_users() {
                            if l == k {
                                continue;
                            }
                            acc += omega.row(n).iter().zip(&self.x[l]).map(|(w, v)| w * v).sum::<f64>();
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
    }

    pub fn total_power(&self) -> f64 {
        self.x.iter().map(|row| row.iter().sum::<f64>()).sum()
    }

    pub fn allocation(&self) -> PowerAllocation {
        PowerAllocation::new(self.x.clone())
    }

    /// Cross-term list for entry (k, m): one (base, weight) pair per receive
    /// dimension of every other user, with this entry's own contribution
    /// removed from the base.
    fn scalar_terms(&self, stats: &ChannelStats, surr: &Surrogate, k: usize, m: usize) -> Vec<(f64, f64)> {
        let mut terms = Vec::new();
        let x_km = self.x[k][m];
        for kp in 0..stats.num_users() {
            if kp == k {
                continue;
            }
            let omega = &stats.user(kp).omega;
            for n in 0..omega.rows() {
                let w = omega.get(n, m);
                if w == 0.0 {
                    continue;
                }
                let base = surr.gamma_tilde[kp][n] + self.t[kp][n] - w * x_km;
                terms.push((base, w));
            }
        }
        terms
    }

    /// One Gauss-Seidel sweep over every (user, beam) entry at a fixed water
    /// level offset (`xi * eta` or `mu`); returns the largest entry change.
    fn sweep(
        &mut self,
        stats: &ChannelStats,
        surr: &Surrogate,
        penalty: f64,
        x_cap: f64,
        cfg: &SolverConfig,
    ) -> Result<f64, WfError> {
        let mut max_change = 0.0f64;
        for k in 0..stats.num_users() {
            for m in 0..stats.num_bs_antennas {
                let ctx = ScalarKkt {
                    gamma: surr.gamma[k][m],
                    level: surr.delta[k][m] + penalty,
                    terms: self.scalar_terms(stats, surr, k, m),
                };
                let old = self.x[k][m];
                let root = newton_root(|x| rho(x, &ctx), old, x_cap, cfg.eps_newton, cfg.max_iter_newton)?;
                let new = root.max(0.0);
                let change = new - old;
                if change != 0.0 {
                    self.x[k][m] = new;
                    for kp in 0..stats.num_users() {
                        if kp == k {
                            continue;
                        }
                        let omega = &stats.user(kp).omega;
                        for n in 0..omega.rows() {
                            self.t[kp][n] += omega.get(n, m) * change;
                        }
                    }
                    max_change = max_change.max(change.abs());
                }
            }
        }
        Ok(max_change)
    }

    /// Repeat sweeps until the entries stop moving, so the coupled
    /// stationarity system holds simultaneously rather than only
    /// entry-by-entry.
    fn stabilize(
        &mut self,
        stats: &ChannelStats,
        surr: &Surrogate,
        penalty: f64,
        x_cap: f64,
        cfg: &SolverConfig,
    ) -> Result<usize, WfError> {
        let tol = cfg.eps_newton * 10.0;
        let mut change = f64::INFINITY;
        for s in 0..cfg.max_sweeps {
            change = self.sweep(stats, surr, penalty, x_cap, cfg)?;
            if change <= tol {
                return Ok(s + 1);
            }
        }
        Err(WfError::NoConvergence { loop_name: "gauss-seidel sweep", iterations: cfg.max_sweeps, residual: change })
    }
}

/// Solve the fixed-level inner problem (the concave program at one Dinkelbach
/// level or one multiplier value) by stabilized Gauss-Seidel water-filling.
pub fn solve_inner_fixed_level(
    stats: &ChannelStats,
    surr: &Surrogate,
    penalty: f64,
    x_cap: f64,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<PowerAllocation, WfError> {
    let mut ws = WfWorkspace::new(stats, alloc0);
    ws.stabilize(stats, surr, penalty, x_cap, cfg)?;
    Ok(ws.allocation())
}

/// Result of the unconstrained-EE water-filling solver.
#[derive(Debug, Clone)]
pub struct EeWaterfillResult {
    pub alloc: PowerAllocation,
    pub eta: f64,
    pub iterations: usize,
    /// Dinkelbach level after each iteration, starting with the warm start.
    pub eta_trace: Vec<f64>,
}

/// Unconstrained energy-efficiency water-filling: a Dinkelbach loop whose
/// parametric concave subproblems are solved by Gauss-Seidel sweeps of
/// per-entry Newton roots. The level sequence is nondecreasing and the loop
/// stops when it settles to within `eps_eta`.
pub fn ee_waterfill(
    stats: &ChannelStats,
    expansion: &MmExpansion,
    pm: &PowerModel,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<EeWaterfillResult, WfError> {
    let x_cap = 1e4 * pm.p_max.max(1.0);
    let mut surr = expansion.surrogate(stats);
    let mut ws = WfWorkspace::new(stats, alloc0);
    let mut eta = surr.level(pm, alloc0);
    let mut eta_trace = vec![eta];

    for i in 0..cfg.max_iter_dinkelbach {
        if cfg.de_refresh == DeRefresh::Dinkelbach && i > 0 {
            let states = solve_states(stats, &ws.allocation(), cfg)?;
            surr = expansion.surrogate_with(stats, &states);
        }
        ws.stabilize(stats, &surr, pm.xi * eta, x_cap, cfg)?;
        let eta_next = surr.level(pm, &ws.allocation());
        let change = (eta_next - eta).abs();
        if cfg.de_refresh == DeRefresh::Mm {
            debug_assert!(
                eta_next >= eta - 1e-9 * (1.0 + eta.abs()),
                "Dinkelbach level decreased: {eta} -> {eta_next}"
            );
        }
        eta = eta_next;
        eta_trace.push(eta);
        if change <= cfg.eps_eta {
            return Ok(EeWaterfillResult { alloc: ws.allocation(), eta, iterations: i + 1, eta_trace });
        }
    }
    Err(WfError::NoConvergence {
        loop_name: "dinkelbach",
        iterations: cfg.max_iter_dinkelbach,
        residual: eta_trace[eta_trace.len() - 1] - eta_trace[eta_trace.len() - 2],
    })
}

/// Upper bound on the budget multiplier: above this level every entry's
/// marginal utility at zero power (with no interference) is non-positive,
/// so the water-filled allocation is identically zero.
pub fn mu_upper_bound(stats: &ChannelStats, surr: &Surrogate) -> f64 {
    let mut best = 0.0f64;
    for k in 0..stats.num_users() {
        for m in 0..stats.num_bs_antennas {
            let mut v = surr.gamma[k][m] - surr.delta[k][m];
            for kp in 0..stats.num_users() {
                if kp == k {
                    continue;
                }
                let omega = &stats.user(kp).omega;
                for n in 0..omega.rows() {
                    v += omega.get(n, m) / (surr.gamma_tilde[kp][n] + stats.noise_power);
                }
            }
            best = best.max(v);
        }
    }
    best
}

/// Result of the budget-constrained sum-rate water-filling solver.
#[derive(Debug, Clone)]
pub struct SrWaterfillResult {
    pub alloc: PowerAllocation,
    pub mu: f64,
    pub iterations: usize,
}

/// Sum-rate water-filling under a total power budget: bisection on the
/// multiplier with a stabilized sweep per trial value. When the water-filled
/// total at `mu = 0` already fits the budget the constraint is slack and
/// that solution is returned directly (complementary slackness).
pub fn sr_waterfill(
    stats: &ChannelStats,
    expansion: &MmExpansion,
    p_max: f64,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<SrWaterfillResult, WfError> {
    let surr = expansion.surrogate(stats);
    sr_waterfill_with(stats, &surr, p_max, alloc0, cfg)
}

/// Same as [`sr_waterfill`] but reusing an existing surrogate.
pub fn sr_waterfill_with(
    stats: &ChannelStats,
    surr: &Surrogate,
    p_max: f64,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<SrWaterfillResult, WfError> {
    let x_cap = 1.25 * p_max + 1.0;
    let mut ws = WfWorkspace::new(stats, alloc0);

    // mu = 0: if the unconstrained water level already fits, the budget
    // multiplier is zero and the bisection would never terminate.
    ws.stabilize(stats, surr, 0.0, x_cap, cfg)?;
    let p0 = ws.total_power();
    if p0 <= p_max + cfg.eps_power {
        return Ok(SrWaterfillResult { alloc: ws.allocation(), mu: 0.0, iterations: 0 });
    }

    let mut mu_lo = 0.0f64; // total power here >= p_max
    let mut mu_hi = mu_upper_bound(stats, surr); // all-zero allocation here
    let mut p_tot = p0;
    for it in 0..cfg.max_iter_bisect {
        let mu = 0.5 * (mu_lo + mu_hi);
        ws.stabilize(stats, surr, mu, x_cap, cfg)?;
        let p_prev = p_tot;
        p_tot = ws.total_power();
        // Total power is nonincreasing along the shrinking bracket.
        debug_assert!(
            (mu >= mu_lo || p_tot + 1e-9 >= p_prev) && (mu <= mu_hi || p_tot <= p_prev + 1e-9),
            "power not monotone in mu"
        );
        if (p_max - p_tot).abs() <= cfg.eps_power {
            return Ok(SrWaterfillResult { alloc: ws.allocation(), mu, iterations: it + 1 });
        }
        if p_tot < p_max {
            mu_hi = mu;
        } else {
            mu_lo = mu;
        }
    }
    Err(WfError::NoConvergence {
        loop_name: "bisection",
        iterations: cfg.max_iter_bisect,
        residual: (p_max - p_tot).abs(),
    })
}

/// Stationarity report for a returned allocation: largest |rho| over active
/// entries and largest positive rho(0) over inactive entries (which must be
/// non-positive for the zero branch to be optimal).
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    pub max_active_residual: f64,
    pub max_inactive_violation: f64,
}

/// Evaluate the per-entry stationarity system of a solution at water-level
/// offset `penalty` (`xi * eta` for the EE solver, `mu` for the sum-rate
/// solver).
pub fn kkt_report(
    stats: &ChannelStats,
    surr: &Surrogate,
    alloc: &PowerAllocation,
    penalty: f64,
) -> KktReport {
    let ws = WfWorkspace::new(stats, alloc);
    let mut active = 0.0f64;
    let mut inactive = 0.0f64;
    for k in 0..stats.num_users() {
        for m in 0..stats.num_bs_antennas {
            let ctx = ScalarKkt {
                gamma: surr.gamma[k][m],
                level: surr.delta[k][m] + penalty,
                terms: ws.scalar_terms(stats, surr, k, m),
            };
            let lam = alloc.user(k)[m];
            let (v, _) = rho(lam, &ctx);
            if lam > 0.0 {
                active = active.max(v.abs());
            } else {
                inactive = inactive.max(v.max(0.0));
            }
        }
    }
    KktReport { max_active_residual: active, max_inactive_violation: inactive }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mat, UserStats};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    /// Hand-built single-user surrogate with prescribed gains and no
    /// linearization slope.
    fn single_user_surrogate(stats: &ChannelStats, gamma: Vec<f64>) -> Surrogate<'_> {
        let n = stats.user(0).omega.rows();
        Surrogate {
            stats,
            gamma: vec![gamma],
            gamma_tilde: vec![vec![0.0; n]],
            delta: vec![vec![0.0; stats.num_bs_antennas]],
            const_term: 0.0,
        }
    }

    fn single_user_stats(m: usize) -> ChannelStats {
        ChannelStats::new(m, vec![UserStats::new(Mat::filled(1, m, 1.0))], 1.0)
    }

    #[test]
    fn rho_single_user_closed_form_root() {
        let ctx = ScalarKkt { gamma: 4.0, level: 1.0, terms: vec![] };
        let root = newton_root(|x| rho(x, &ctx), 0.0, 100.0, 1e-12, 100).unwrap();
        assert!((root - 0.75).abs() < 1e-10, "root {root}");
    }

    #[test]
    fn rho_derivative_matches_finite_differences() {
        let ctx = ScalarKkt {
            gamma: 2.5,
            level: 0.8,
            terms: vec![(1.3, 0.7), (2.0, 1.9), (4.5, 0.2)],
        };
        for &x in &[0.0, 0.1, 0.7, 3.0] {
            // rho is smooth on a neighborhood of [0, inf), so central
            // differences are valid at x = 0 too.
            let h = 1e-6;
            let (vp, _) = rho(x + h, &ctx);
            let (vm, _) = rho(x - h, &ctx);
            let fd = (vp - vm) / (2.0 * h);
            let (_, dv) = rho(x, &ctx);
            assert!(dv < 0.0);
            assert!((fd - dv).abs() <= 1e-8 * dv.abs().max(1.0), "x={x}: {fd} vs {dv}");
        }
    }

    #[test]
    fn newton_root_textbook() {
        let root = newton_root(|x| {
            let d = 1.0 + x;
            (1.0 / d - 0.5, -1.0 / (d * d))
        }, 0.0, 100.0, 1e-12, 100)
        .unwrap();
        assert!((root - 1.0).abs() < 1e-10);
    }

    #[test]
    fn newton_root_negative_root_projects_to_zero() {
        // f(0) < 0: the true root is negative, the projected answer is 0.
        let root = newton_root(|x| {
            let d = 1.0 + x;
            (1.0 / d - 2.0, -1.0 / (d * d))
        }, 0.5, 100.0, 1e-12, 100)
        .unwrap();
        assert_eq!(root, 0.0);
    }

    #[test]
    fn newton_root_coupled_residual() {
        let ctx = ScalarKkt {
            gamma: 3.0,
            level: 0.9,
            terms: vec![(1.1, 0.8), (0.9, 1.3)],
        };
        let root = newton_root(|x| rho(x, &ctx), 0.1, 1e4, 1e-12, 100).unwrap();
        let (v, _) = rho(root, &ctx);
        assert!(v.abs() <= 1e-8, "residual {v:e}");
    }

    #[test]
    fn ee_waterfill_single_user_closed_form() {
        // K = 1, gamma = (4, 2), delta = 0: for any converged level the
        // allocation is [1/(xi*eta) - 1/gamma]^+ entrywise, and eta is the
        // level of that allocation.
        let stats = single_user_stats(2);
        let surr = single_user_surrogate(&stats, vec![4.0, 2.0]);
        let pm = PowerModel { xi: 1.0, p_c: 0.5, p_s: 1.0, p_max: 10.0 };
        let cfg = cfg();
        let x_cap = 1e4 * pm.p_max;
        let mut ws = WfWorkspace::new(&stats, &PowerAllocation::uniform(1, 2, 1.0));
        let mut eta = surr.level(&pm, &PowerAllocation::uniform(1, 2, 1.0));
        for _ in 0..cfg.max_iter_dinkelbach {
            ws.stabilize(&stats, &surr, pm.xi * eta, x_cap, &cfg).unwrap();
            let next = surr.level(&pm, &ws.allocation());
            let done = (next - eta).abs() <= cfg.eps_eta;
            eta = next;
            if done {
                break;
            }
        }
        let alloc = ws.allocation();
        for (m, &g) in [4.0f64, 2.0].iter().enumerate() {
            let expected = (1.0 / (pm.xi * eta) - 1.0 / g).max(0.0);
            assert!(
                (alloc.user(0)[m] - expected).abs() < 1e-8,
                "beam {m}: {} vs {}",
                alloc.user(0)[m],
                expected
            );
        }
    }

    #[test]
    fn ee_waterfill_zero_channel_full_path() {
        let stats = single_user_stats(2);
        let expansion = MmExpansion {
            alloc: PowerAllocation::zeros(1, 2),
            states: vec![crate::de::de_fixed_point(&stats, &PowerAllocation::zeros(1, 2), 0, &cfg()).unwrap()],
            deltas: vec![DiagVec::zeros(2)],
            rate_minus_ref: vec![0.0],
        };
        // Zero out the gains to emulate a dead channel.
        let mut surr = expansion.surrogate(&stats);
        surr.gamma = vec![vec![0.0, 0.0]];
        surr.gamma_tilde = vec![vec![0.0]];
        let pm = PowerModel { xi: 1.0, p_c: 0.5, p_s: 1.0, p_max: 10.0 };
        let mut ws = WfWorkspace::new(&stats, &PowerAllocation::zeros(1, 2));
        ws.stabilize(&stats, &surr, 0.0, 1e4, &cfg()).unwrap();
        assert_eq!(ws.total_power(), 0.0);
        assert_eq!(surr.level(&pm, &ws.allocation()), 0.0);
    }

    fn random_expansion(
        rng: &mut ChaCha8Rng,
        k_users: usize,
        m_dim: usize,
        n_dim: usize,
    ) -> (ChannelStats, MmExpansion, PowerAllocation) {
        let users = (0..k_users)
            .map(|_| {
                let data = (0..n_dim * m_dim).map(|_| rng.gen_range(0.1..3.0)).collect();
                UserStats::new(Mat::from_rows(n_dim, m_dim, data))
            })
            .collect();
        let stats = ChannelStats::new(m_dim, users, 1.0);
        let lambdas = (0..k_users)
            .map(|_| (0..m_dim).map(|_| rng.gen_range(0.05..0.8)).collect())
            .collect();
        let alloc = PowerAllocation::new(lambdas);
        let expansion = MmExpansion::at(&stats, &alloc, &cfg()).unwrap();
        (stats, expansion, alloc)
    }

    #[test]
    fn ee_waterfill_monotone_eta_and_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..4 {
            let (stats, expansion, alloc) = random_expansion(&mut rng, 2, 4, 2);
            let pm = PowerModel { xi: 5.0, p_c: 0.5, p_s: 2.0, p_max: 6.0 };
            let res = ee_waterfill(&stats, &expansion, &pm, &alloc, &cfg()).unwrap();
            for w in res.eta_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "eta decreased: {} -> {}", w[0], w[1]);
            }
            let surr = expansion.surrogate(&stats);
            let report = kkt_report(&stats, &surr, &res.alloc, pm.xi * res.eta);
            assert!(report.max_active_residual <= 1e-6, "active {:e}", report.max_active_residual);
            assert!(report.max_inactive_violation <= 1e-9, "inactive {:e}", report.max_inactive_violation);
            assert!(res.alloc.lambdas.iter().flatten().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn mu_upper_bound_single_user() {
        let stats = single_user_stats(2);
        let surr = single_user_surrogate(&stats, vec![4.0, 2.0]);
        assert_eq!(mu_upper_bound(&stats, &surr), 4.0);
        // positive delta lowers the bound
        let mut with_delta = surr.clone();
        with_delta.delta = vec![vec![0.5, 0.1]];
        assert_eq!(mu_upper_bound(&stats, &with_delta), 3.5);
    }

    #[test]
    fn mu_at_upper_bound_gives_zero_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (stats, expansion, alloc) = random_expansion(&mut rng, 2, 3, 2);
        let surr = expansion.surrogate(&stats);
        let mu_max = mu_upper_bound(&stats, &surr);
        let mut ws = WfWorkspace::new(&stats, &alloc);
        ws.stabilize(&stats, &surr, mu_max, 100.0, &cfg()).unwrap();
        assert_eq!(ws.total_power(), 0.0);
    }

    #[test]
    fn sr_waterfill_classic_two_level() {
        let stats = single_user_stats(2);
        let surr = single_user_surrogate(&stats, vec![4.0, 2.0]);
        let res = sr_waterfill_with(&stats, &surr, 1.0, &PowerAllocation::zeros(1, 2), &cfg()).unwrap();
        assert!((res.alloc.user(0)[0] - 0.625).abs() < 1e-6, "lam0 {}", res.alloc.user(0)[0]);
        assert!((res.alloc.user(0)[1] - 0.375).abs() < 1e-6, "lam1 {}", res.alloc.user(0)[1]);
        assert!((res.mu - 1.1428571428571428).abs() < 1e-6, "mu {}", res.mu);
        assert!((res.alloc.total_power() - 1.0).abs() <= cfg().eps_power);
    }

    #[test]
    fn sr_waterfill_slack_budget() {
        // With a large linearization slope the unconstrained optimum is
        // small; a generous budget leaves the constraint slack and mu = 0.
        let stats = single_user_stats(2);
        let mut surr = single_user_surrogate(&stats, vec![4.0, 2.0]);
        surr.delta = vec![vec![1.0, 1.0]];
        let res = sr_waterfill_with(&stats, &surr, 50.0, &PowerAllocation::zeros(1, 2), &cfg()).unwrap();
        assert_eq!(res.mu, 0.0);
        // unconstrained roots: gamma/(1+gamma x) = 1 -> x = (gamma-1)/gamma
        assert!((res.alloc.user(0)[0] - 0.75).abs() < 1e-8);
        assert!((res.alloc.user(0)[1] - 0.5).abs() < 1e-8);
        assert!(res.alloc.total_power() < 50.0);
    }

    #[test]
    fn sr_waterfill_budget_binds_and_kkt_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..4 {
            let (stats, expansion, alloc) = random_expansion(&mut rng, 2, 4, 2);
            let p_max = 2.0;
            let res = sr_waterfill(&stats, &expansion, p_max, &alloc, &cfg()).unwrap();
            let surr = expansion.surrogate(&stats);
            if res.mu > 0.0 {
                assert!((res.alloc.total_power() - p_max).abs() <= cfg().eps_power);
            } else {
                assert!(res.alloc.total_power() <= p_max + cfg().eps_power);
            }
            let report = kkt_report(&stats, &surr, &res.alloc, res.mu);
            assert!(report.max_active_residual <= 1e-6, "active {:e}", report.max_active_residual);
            assert!(report.max_inactive_violation <= 1e-9);
        }
    }

    #[test]
    fn sr_total_power_nonincreasing_in_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let (stats, expansion, alloc) = random_expansion(&mut rng, 2, 3, 2);
        let surr = expansion.surrogate(&stats);
        let mu_max = mu_upper_bound(&stats, &surr);
        let mut prev = f64::INFINITY;
        for i in 0..8 {
            let mu = mu_max * i as f64 / 7.0;
            let mut ws = WfWorkspace::new(&stats, &alloc);
            ws.stabilize(&stats, &surr, mu, 100.0, &cfg()).unwrap();
            let p = ws.total_power();
            assert!(p <= prev + 1e-9, "power increased at mu={mu}: {p} > {prev}");
            prev = p;
        }
    }
}
