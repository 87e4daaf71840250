//! Outer optimization loops: the low-complexity path (per iteration, an
//! unconstrained water-filling solve that falls back to a budget-bound
//! sum-rate solve when it overshoots the power budget), the reference path
//! (Dinkelbach iterations whose concave subproblems go to the
//! projected-gradient oracle), and plain sum-rate maximization.
//!
//! Each outer iteration linearizes the interference log-determinants at the
//! current point and freezes the DE auxiliaries there, maximizes the
//! resulting concave-over-affine ratio, then re-linearizes. The traced
//! objective is recomputed from a fresh DE fixed point at every iterate, so
//! the trace reflects the true surrogate-free value.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::de::{de_rate_net, solve_states, DeError};
use crate::model::{ChannelStats, PowerAllocation, PowerModel, SolverConfig};
use crate::oracle::{pg_solve_f6, OracleError};
use crate::wf::{ee_waterfill, sr_waterfill, sr_waterfill_with, MmExpansion, WfError};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Wf(#[from] WfError),
    #[error(transparent)]
    De(#[from] DeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("outer loop did not converge after {iterations} iterations (last change {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("allocation shape does not match channel statistics")]
    ShapeMismatch,
}

/// Which subproblem produced the adopted allocation in one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Unconstrained optimum was feasible and adopted.
    P1,
    /// Unconstrained optimum overshot the budget; budget-bound sum-rate
    /// solution adopted.
    P2,
}

/// One outer-iteration record.
#[derive(Debug, Clone)]
pub struct MmIterRecord {
    /// Energy efficiency (nats/joule) of the iterate, from a fresh DE solve.
    pub ee: f64,
    /// DE sum rate (nats) of the iterate.
    pub sum_rate: f64,
    pub total_power: f64,
    /// Total transmit power of the unconstrained solve (branch decision).
    pub p1_power: Option<f64>,
    pub inner_iterations: usize,
    pub branch: Option<Branch>,
    pub wall: Duration,
}

/// Full history of one solve.
#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    pub records: Vec<MmIterRecord>,
    /// Dinkelbach level sequence of each outer iteration (when applicable).
    pub eta_traces: Vec<Vec<f64>>,
}

impl SolveTrace {
    pub fn ee_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ee).collect()
    }

    pub fn sum_rate_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.sum_rate).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// Energy efficiency of an allocation from fresh DE fixed points.
pub fn de_ee(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<f64, DeError> {
    Ok(de_sum_rate(stats, alloc, cfg)? / pm.consumed(stats.num_bs_antennas, alloc.total_power()))
}

/// DE net sum rate of an allocation from fresh DE fixed points.
pub fn de_sum_rate(stats: &ChannelStats, alloc: &PowerAllocation, cfg: &SolverConfig) -> Result<f64, DeError> {
    let states = solve_states(stats, alloc, cfg)?;
    Ok((0..stats.num_users()).map(|k| de_rate_net(stats, alloc, k, &states[k])).sum())
}

fn ee_from_expansion(stats: &ChannelStats, pm: &PowerModel, exp: &MmExpansion) -> (f64, f64) {
    let sum_rate: f64 =
        (0..stats.num_users()).map(|k| de_rate_net(stats, &exp.alloc, k, &exp.states[k])).sum();
    let ee = sum_rate / pm.consumed(stats.num_bs_antennas, exp.alloc.total_power());
    (ee, sum_rate)
}

fn zero_solution(stats: &ChannelStats) -> (PowerAllocation, SolveTrace) {
    let alloc = PowerAllocation::zeros(stats.num_users(), stats.num_bs_antennas);
    let trace = SolveTrace {
        records: vec![MmIterRecord {
            ee: 0.0,
            sum_rate: 0.0,
            total_power: 0.0,
            p1_power: None,
            inner_iterations: 0,
            branch: None,
            wall: Duration::ZERO,
        }],
        eta_traces: Vec::new(),
    };
    (alloc, trace)
}

/// Low-complexity energy-efficiency maximization (the primary solve path).
///
/// Per outer iteration: freeze the DE auxiliaries and the interference
/// linearization, solve the unconstrained EE subproblem by Dinkelbach
/// water-filling, and adopt it if its transmit power fits the budget;
/// otherwise transmission at full budget is optimal for this iteration and
/// the budget-bound sum-rate water-filling solution is adopted instead.
pub fn solve_ee_lowcomplexity(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<(PowerAllocation, SolveTrace), SolveError> {
    if !alloc0.matches(stats) {
        return Err(SolveError::ShapeMismatch);
    }
    if pm.p_max <= 0.0 {
        return Ok(zero_solution(stats));
    }

    let mut current = alloc0.clone();
    let mut expansion = MmExpansion::at(stats, &current, cfg)?;
    let (mut ee, sum_rate) = ee_from_expansion(stats, pm, &expansion);
    let mut trace = SolveTrace::default();
    trace.records.push(MmIterRecord {
        ee,
        sum_rate,
        total_power: current.total_power(),
        p1_power: None,
        inner_iterations: 0,
        branch: None,
        wall: Duration::ZERO,
    });

    let mut last_change = f64::INFINITY;
    for _ in 0..cfg.max_iter_mm {
        let started = Instant::now();
        let p1 = ee_waterfill(stats, &expansion, pm, &current, cfg)?;
        let p1_power = p1.alloc.total_power();
        let (next, branch, inner_iterations, eta_trace) = if p1_power <= pm.p_max {
            (p1.alloc, Branch::P1, p1.iterations, p1.eta_trace)
        } else {
            let sr = sr_waterfill(stats, &expansion, pm.p_max, &current, cfg)?;
            (sr.alloc, Branch::P2, p1.iterations + sr.iterations, p1.eta_trace)
        };

        let next_expansion = MmExpansion::at(stats, &next, cfg)?;
        let (ee_next, sum_rate_next) = ee_from_expansion(stats, pm, &next_expansion);
        if ee_next < ee {
            // The surrogate step stopped improving the true objective; treat
            // as converged at the previous iterate.
            return Ok((current, trace));
        }
        trace.records.push(MmIterRecord {
            ee: ee_next,
            sum_rate: sum_rate_next,
            total_power: next.total_power(),
            p1_power: Some(p1_power),
            inner_iterations,
            branch: Some(branch),
            wall: started.elapsed(),
        });
        trace.eta_traces.push(eta_trace);

        last_change = (ee_next - ee).abs();
        let converged = last_change <= cfg.eps_mm * ee.abs().max(f64::MIN_POSITIVE);
        current = next;
        expansion = next_expansion;
        ee = ee_next;
        if converged {
            return Ok((current, trace));
        }
    }
    Err(SolveError::NoConvergence { iterations: cfg.max_iter_mm, residual: last_change })
}

/// Reference energy-efficiency maximization: the same outer linearization,
/// but each Dinkelbach subproblem (budget included) is handed to the
/// projected-gradient solver. Used to cross-check the water-filling path.
pub fn solve_ee_reference(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<(PowerAllocation, SolveTrace), SolveError> {
    if !alloc0.matches(stats) {
        return Err(SolveError::ShapeMismatch);
    }
    if pm.p_max <= 0.0 {
        return Ok(zero_solution(stats));
    }

    let mut current = alloc0.clone();
    let mut expansion = MmExpansion::at(stats, &current, cfg)?;
    let (mut ee, sum_rate) = ee_from_expansion(stats, pm, &expansion);
    let mut trace = SolveTrace::default();
    trace.records.push(MmIterRecord {
        ee,
        sum_rate,
        total_power: current.total_power(),
        p1_power: None,
        inner_iterations: 0,
        branch: None,
        wall: Duration::ZERO,
    });

    let mut last_change = f64::INFINITY;
    for _ in 0..cfg.max_iter_mm {
        let started = Instant::now();
        let surr = expansion.surrogate(stats);
        let mut inner = current.clone();
        let mut eta = surr.level(pm, &inner);
        let mut eta_trace = vec![eta];
        let mut dinkelbach_iters = 0usize;
        for i in 0..cfg.max_iter_dinkelbach {
            let res = pg_solve_f6(
                stats,
                &expansion.deltas,
                &expansion.states,
                pm,
                eta,
                Some(pm.p_max),
                &inner,
                cfg,
            )?;
            inner = res.allocation;
            // Classical Dinkelbach residual: the parametric optimum value at
            // the previous level. Non-negative, and below eps at the fixed
            // point of the level update.
            let f_residual = surr.numerator(&inner)
                - eta * pm.consumed(stats.num_bs_antennas, inner.total_power());
            eta = surr.level(pm, &inner);
            eta_trace.push(eta);
            dinkelbach_iters = i + 1;
            if f_residual <= cfg.eps_dinkelbach {
                break;
            }
        }

        let next_expansion = MmExpansion::at(stats, &inner, cfg)?;
        let (ee_next, sum_rate_next) = ee_from_expansion(stats, pm, &next_expansion);
        if ee_next < ee {
            return Ok((current, trace));
        }
        trace.records.push(MmIterRecord {
            ee: ee_next,
            sum_rate: sum_rate_next,
            total_power: inner.total_power(),
            p1_power: None,
            inner_iterations: dinkelbach_iters,
            branch: None,
            wall: started.elapsed(),
        });
        trace.eta_traces.push(eta_trace);

        last_change = (ee_next - ee).abs();
        let converged = last_change <= cfg.eps_mm * ee.abs().max(f64::MIN_POSITIVE);
        current = inner;
        expansion = next_expansion;
        ee = ee_next;
        if converged {
            return Ok((current, trace));
        }
    }
    Err(SolveError::NoConvergence { iterations: cfg.max_iter_mm, residual: last_change })
}

/// Sum-rate maximization: the outer linearization loop with the budget-bound
/// water-filling subproblem at every iteration (the degenerate case of the
/// fractional objective with a constant denominator).
pub fn solve_sumrate(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
) -> Result<(PowerAllocation, SolveTrace), SolveError> {
    if !alloc0.matches(stats) {
        return Err(SolveError::ShapeMismatch);
    }
    if pm.p_max <= 0.0 {
        return Ok(zero_solution(stats));
    }

    let mut current = alloc0.clone();
    let mut expansion = MmExpansion::at(stats, &current, cfg)?;
    let (ee0, mut sum_rate) = ee_from_expansion(stats, pm, &expansion);
    let mut trace = SolveTrace::default();
    trace.records.push(MmIterRecord {
        ee: ee0,
        sum_rate,
        total_power: current.total_power(),
        p1_power: None,
        inner_iterations: 0,
        branch: None,
        wall: Duration::ZERO,
    });

    let mut last_change = f64::INFINITY;
    for _ in 0..cfg.max_iter_mm {
        let started = Instant::now();
        let sr = sr_waterfill(stats, &expansion, pm.p_max, &current, cfg)?;
        let next_expansion = MmExpansion::at(stats, &sr.alloc, cfg)?;
        let (ee_next, sum_rate_next) = ee_from_expansion(stats, pm, &next_expansion);
        if sum_rate_next < sum_rate {
            return Ok((current, trace));
        }
        trace.records.push(MmIterRecord {
            ee: ee_next,
            sum_rate: sum_rate_next,
            total_power: sr.alloc.total_power(),
            p1_power: None,
            inner_iterations: sr.iterations,
            branch: Some(Branch::P2),
            wall: started.elapsed(),
        });

        last_change = (sum_rate_next - sum_rate).abs();
        let converged = last_change <= cfg.eps_mm * sum_rate.abs().max(f64::MIN_POSITIVE);
        current = sr.alloc;
        expansion = next_expansion;
        sum_rate = sum_rate_next;
        if converged {
            return Ok((current, trace));
        }
    }
    Err(SolveError::NoConvergence { iterations: cfg.max_iter_mm, residual: last_change })
}

/// One point of the auxiliary power curve.
#[derive(Debug, Clone, Copy)]
pub struct PowerCurvePoint {
    pub p_t: f64,
    /// Best linearized sum rate at transmit power `p_t`.
    pub f_value: f64,
    /// `f_value / (xi * p_t + M * p_c + p_s)`.
    pub varsigma: f64,
}

/// Sweep the transmit-power axis: for each grid value, maximize the
/// linearized sum rate under that budget and report the rate and the
/// rate-to-consumed-power ratio. The linearization is taken at the zero
/// allocation so the curve starts exactly at the origin.
pub fn auxiliary_power_curve(
    stats: &ChannelStats,
    pm: &PowerModel,
    cfg: &SolverConfig,
    grid: &[f64],
) -> Result<Vec<PowerCurvePoint>, SolveError> {
    let zero = PowerAllocation::zeros(stats.num_users(), stats.num_bs_antennas);
    let expansion = MmExpansion::at(stats, &zero, cfg)?;
    let surr = expansion.surrogate(stats);
    let mut out = Vec::with_capacity(grid.len());
    for &p_t in grid {
        let (f_value, alloc_power) = if p_t <= 0.0 {
            (0.0, 0.0)
        } else {
            let sr = sr_waterfill_with(stats, &surr, p_t, &zero, cfg)?;
            (surr.numerator(&sr.alloc), sr.alloc.total_power())
        };
        debug_assert!(alloc_power <= p_t + cfg.eps_power);
        let varsigma = if p_t <= 0.0 { 0.0 } else { f_value / pm.consumed(stats.num_bs_antennas, p_t) };
        out.push(PowerCurvePoint { p_t, f_value, varsigma });
    }
    Ok(out)
}
