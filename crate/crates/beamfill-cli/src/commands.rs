//! The four batch commands: single solves, parameter sweeps, DE-vs-MC
//! validation, and convergence traces. Every command writes deterministic
//! CSV/JSON given the same configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use beamfill::mc::{derive_rng, mc_rate_plus, prop1_validate};
use beamfill::model::{watts_to_dbm, ChannelStats, PowerAllocation, PowerModel, SolverConfig};
use beamfill::solver::{
    solve_ee_lowcomplexity, solve_ee_reference, solve_sumrate, Branch, SolveTrace,
};
use beamfill::synth::{generate, load_stats, save_alloc};
use beamfill::{de, validate};
use rand::Rng;

use crate::config::{Algorithm, ConfigError, Objective, Resolved};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] beamfill::synth::SynthError),
    #[error("invalid inputs: {0}")]
    Validation(#[from] beamfill::model::ValidationError),
    #[error(transparent)]
    Solve(#[from] beamfill::solver::SolveError),
    #[error(transparent)]
    Mc(#[from] beamfill::mc::McError),
    #[error(transparent)]
    De(#[from] beamfill::de::DeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solve(_) => 2,
            _ => 1,
        }
    }
}

/// 17-significant-digit float formatting for CSV cells: round-trips f64.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn branch_str(b: Option<Branch>) -> &'static str {
    match b {
        Some(Branch::P1) => "p1",
        Some(Branch::P2) => "p2",
        None => "-",
    }
}

/// Load or generate the channel statistics, normalized if requested.
fn resolve_stats(cfg: &Resolved) -> Result<ChannelStats, CliError> {
    let stats = match (&cfg.stats_file, cfg.scenario_spec()) {
        (Some(path), _) => load_stats(path)?,
        (None, Some(spec)) => generate(&spec)?,
        (None, None) => generate(&Resolved { scenario: Some(Default::default()), ..cfg.clone() }
            .scenario_spec()
            .expect("default scenario"))?,
    };
    let pm = cfg.power.to_model();
    validate(&stats, &pm)?;
    Ok(if cfg.run.normalize { stats.normalize_noise() } else { stats })
}

/// Initial allocation of restart `r`: uniform at the full budget for the
/// first restart, then uniform at log-uniformly drawn fractions of it.
fn restart_init(stats: &ChannelStats, pm: &PowerModel, seed: u64, r: usize) -> PowerAllocation {
    let scale = if r == 0 {
        1.0
    } else {
        let mut rng = derive_rng(seed, &[0x52455354, r as u64]);
        let log_lo = 0.05f64.ln();
        let u: f64 = rng.gen_range(0.0..1.0);
        (log_lo * (1.0 - u)).exp()
    };
    PowerAllocation::uniform(stats.num_users(), stats.num_bs_antennas, pm.p_max * scale)
}

struct RunOutcome {
    alloc: PowerAllocation,
    trace: SolveTrace,
    /// Final traced objective of each restart (EE or sum rate).
    restart_objectives: Vec<f64>,
}

fn solve_once(
    stats: &ChannelStats,
    pm: &PowerModel,
    alloc0: &PowerAllocation,
    cfg: &SolverConfig,
    objective: Objective,
    algorithm: Algorithm,
) -> Result<(PowerAllocation, SolveTrace), CliError> {
    let out = match (objective, algorithm) {
        (Objective::Ee, Algorithm::Lowcomplexity) => solve_ee_lowcomplexity(stats, pm, alloc0, cfg)?,
        (Objective::Ee, Algorithm::Reference) => solve_ee_reference(stats, pm, alloc0, cfg)?,
        (Objective::Sumrate, _) => solve_sumrate(stats, pm, alloc0, cfg)?,
    };
    Ok(out)
}

fn run_restarts(
    stats: &ChannelStats,
    pm: &PowerModel,
    cfg: &Resolved,
    solver_cfg: &SolverConfig,
) -> Result<RunOutcome, CliError> {
    let mut best: Option<(f64, PowerAllocation, SolveTrace)> = None;
    let mut objectives = Vec::with_capacity(cfg.run.restarts);
    for r in 0..cfg.run.restarts {
        let alloc0 = restart_init(stats, pm, cfg.run.seed, r);
        let (alloc, trace) = solve_once(stats, pm, &alloc0, solver_cfg, cfg.run.objective, cfg.run.algorithm)?;
        let objective = match cfg.run.objective {
            Objective::Ee => trace.records.last().map(|rec| rec.ee).unwrap_or(0.0),
            Objective::Sumrate => trace.records.last().map(|rec| rec.sum_rate).unwrap_or(0.0),
        };
        objectives.push(objective);
        if best.as_ref().map(|(b, _, _)| objective > *b).unwrap_or(true) {
            best = Some((objective, alloc, trace));
        }
    }
    let (_, alloc, trace) = best.expect("restarts >= 1");
    Ok(RunOutcome { alloc, trace, restart_objectives: objectives })
}

pub fn run_solve(cfg: &Resolved) -> Result<(), CliError> {
    cfg.check()?;
    let stats = resolve_stats(cfg)?;
    let pm = cfg.power.to_model();
    let solver_cfg = cfg.solver_config();
    let outcome = run_restarts(&stats, &pm, cfg, &solver_cfg)?;

    fs::create_dir_all(&cfg.run.out)?;
    save_alloc(&outcome.alloc, &cfg.run.out.join("allocation.json"))?;

    let last = outcome.trace.records.last().expect("nonempty trace");
    let mean_obj =
        outcome.restart_objectives.iter().sum::<f64>() / outcome.restart_objectives.len() as f64;
    let mut csv = String::new();
    let mut header = "command,objective,algorithm,m,k,pmax_dbm,seed,restarts,\
ee_nats_per_joule,ee_bits_per_joule,objective_best,objective_mean,sum_rate_nats,\
total_power_w,branch,mm_iterations"
        .to_string();
    if cfg.run.timing {
        header.push_str(",wall_time_s");
    }
    let _ = writeln!(csv, "{header}");
    let objective_name = match cfg.run.objective {
        Objective::Ee => "ee",
        Objective::Sumrate => "sumrate",
    };
    let algorithm_name = match cfg.run.algorithm {
        Algorithm::Lowcomplexity => "lowcomplexity",
        Algorithm::Reference => "reference",
    };
    let best_obj = outcome
        .restart_objectives
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut row = format!(
        "solve,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        objective_name,
        algorithm_name,
        stats.num_bs_antennas,
        stats.num_users(),
        fmt(watts_to_dbm(pm.p_max)),
        cfg.run.seed,
        cfg.run.restarts,
        fmt(last.ee),
        fmt(last.ee / LN2),
        fmt(best_obj),
        fmt(mean_obj),
        fmt(last.sum_rate),
        fmt(last.total_power),
        branch_str(last.branch),
        outcome.trace.iterations(),
    );
    if cfg.run.timing {
        let total: f64 = outcome.trace.records.iter().map(|r| r.wall.as_secs_f64()).sum();
        row.push(',');
        row.push_str(&fmt(total));
    }
    let _ = writeln!(csv, "{row}");
    fs::write(cfg.run.out.join("summary.csv"), csv)?;
    Ok(())
}

pub const SWEEP_HEADER: &str = "pmax_dbm,m,pc_dbm,objective,ee_nats_per_joule,\
ee_bits_per_joule,sum_rate_nats,total_power_w,branch,mm_iterations";

pub fn run_sweep(cfg: &Resolved) -> Result<(), CliError> {
    cfg.check()?;
    let m_list = cfg.sweep.m_list.clone().unwrap_or_default();
    if cfg.stats_file.is_some() && !m_list.is_empty() {
        return Err(ConfigError::Invalid(
            "m_list sweeps require a generated scenario, not a stats file".into(),
        )
        .into());
    }
    let pm_base = cfg.power.to_model();
    let pc_list = cfg
        .sweep
        .pc_dbm_list
        .clone()
        .unwrap_or_else(|| vec![watts_to_dbm(pm_base.p_c)]);
    let m_values: Vec<Option<usize>> = if m_list.is_empty() {
        vec![None]
    } else {
        m_list.iter().map(|&m| Some(m)).collect()
    };

    // Cross product in deterministic order; rows computed in parallel but
    // written in grid order.
    let mut points = Vec::new();
    for &m in &m_values {
        for &pc_dbm in &pc_list {
            for &pmax_dbm in &cfg.sweep.pmax_dbm_grid {
                for objective in [Objective::Ee, Objective::Sumrate] {
                    points.push((m, pc_dbm, pmax_dbm, objective));
                }
            }
        }
    }

    let rows: Result<Vec<String>, CliError> = points
        .par_iter()
        .map(|&(m, pc_dbm, pmax_dbm, objective)| {
            let mut local = cfg.clone();
            if let Some(m) = m {
                let mut sc = local.scenario.clone().unwrap_or_default();
                sc.m = m;
                local.scenario = Some(sc);
            }
            local.power.p_c_dbm = pc_dbm;
            local.power.p_max_dbm = pmax_dbm;
            local.run.objective = objective;
            let stats = resolve_stats(&local)?;
            let pm = local.power.to_model();
            let solver_cfg = local.solver_config();
            let outcome = run_restarts(&stats, &pm, &local, &solver_cfg)?;
            let last = outcome.trace.records.last().expect("nonempty trace");
            Ok(format!(
                "{},{},{},{},{},{},{},{},{},{}",
                fmt(pmax_dbm),
                stats.num_bs_antennas,
                fmt(pc_dbm),
                match objective {
                    Objective::Ee => "ee",
                    Objective::Sumrate => "sumrate",
                },
                fmt(last.ee),
                fmt(last.ee / LN2),
                fmt(last.sum_rate),
                fmt(last.total_power),
                branch_str(last.branch),
                outcome.trace.iterations(),
            ))
        })
        .collect();

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for row in rows? {
        csv.push_str(&row);
        csv.push('\n');
    }
    fs::create_dir_all(&cfg.run.out)?;
    fs::write(cfg.run.out.join("sweep.csv"), csv)?;
    Ok(())
}

pub fn run_validate(cfg: &Resolved) -> Result<(), CliError> {
    cfg.check()?;
    let stats = resolve_stats(cfg)?;
    let pm = cfg.power.to_model();
    let solver_cfg = cfg.solver_config();
    let alloc = PowerAllocation::uniform(stats.num_users(), stats.num_bs_antennas, pm.p_max);

    let mut csv = String::from("user,de_rate_plus_nats,mc_rate_plus_nats,mc_std_error_nats,rel_gap\n");
    for k in 0..stats.num_users() {
        let state = de::de_fixed_point(&stats, &alloc, k, &solver_cfg)?;
        let de_rate = de::de_rate_plus(&stats, &alloc, k, &state);
        let mc = mc_rate_plus(&stats, &alloc, k, &solver_cfg)?;
        let gap = (de_rate - mc.mean).abs() / mc.mean.abs().max(f64::MIN_POSITIVE);
        let _ = writeln!(csv, "{k},{},{},{},{}", fmt(de_rate), fmt(mc.mean), fmt(mc.std_error), fmt(gap));
    }
    fs::create_dir_all(&cfg.run.out)?;
    fs::write(cfg.run.out.join("validate.csv"), csv)?;

    // Rotated-covariance check only at small antenna counts, where the dense
    // per-sample evaluation is affordable.
    if stats.num_bs_antennas <= 8 && cfg.validate.rotations > 0 {
        let report = prop1_validate(&stats, &pm, &alloc, cfg.validate.rotations, &solver_cfg)?;
        let mut prop1 = String::from("rotation,diff_mean,diff_std_error\n");
        for (r, d) in report.diffs.iter().enumerate() {
            let _ = writeln!(prop1, "{r},{},{}", fmt(d.mean), fmt(d.std_error));
        }
        let _ = writeln!(
            prop1,
            "max,{},{}",
            fmt(report.max_diff),
            fmt(report.max_diff_std_error)
        );
        fs::write(cfg.run.out.join("prop1.csv"), prop1)?;
    }
    Ok(())
}

pub fn run_trace(cfg: &Resolved) -> Result<(), CliError> {
    cfg.check()?;
    let stats = resolve_stats(cfg)?;
    let pm = cfg.power.to_model();
    let solver_cfg = cfg.solver_config();
    let alloc0 = restart_init(&stats, &pm, cfg.run.seed, 0);
    let (_, trace) = solve_once(&stats, &pm, &alloc0, &solver_cfg, cfg.run.objective, cfg.run.algorithm)?;

    let mut mm = String::from(
        "iter,ee_nats_per_joule,ee_bits_per_joule,sum_rate_nats,total_power_w,branch,p1_power_w,inner_iterations\n",
    );
    for (i, r) in trace.records.iter().enumerate() {
        let _ = writeln!(
            mm,
            "{i},{},{},{},{},{},{},{}",
            fmt(r.ee),
            fmt(r.ee / LN2),
            fmt(r.sum_rate),
            fmt(r.total_power),
            branch_str(r.branch),
            r.p1_power.map(fmt).unwrap_or_else(|| "-".into()),
            r.inner_iterations,
        );
    }
    let mut eta = String::from("mm_iter,inner_iter,eta_nats_per_joule\n");
    for (l, inner) in trace.eta_traces.iter().enumerate() {
        for (i, v) in inner.iter().enumerate() {
            let _ = writeln!(eta, "{},{},{}", l + 1, i, fmt(*v));
        }
    }
    fs::create_dir_all(&cfg.run.out)?;
    fs::write(cfg.run.out.join("mm_trace.csv"), mm)?;
    fs::write(cfg.run.out.join("eta_trace.csv"), eta)?;
    Ok(())
}

/// Write the scenario's generated statistics to a JSON file (utility
/// subcommand so sweeps and external tools can share identical inputs).
pub fn run_gen_stats(cfg: &Resolved, path: &Path) -> Result<(), CliError> {
    let spec = cfg
        .scenario_spec()
        .ok_or_else(|| ConfigError::Invalid("gen-stats needs a scenario section".into()))?;
    let stats = generate(&spec)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    beamfill::synth::save_stats(&stats, path)?;
    Ok(())
}
