//! Batch front-end: single solves, parameter sweeps, DE-vs-MC validation,
//! and convergence traces, configured by a TOML file with per-flag overrides.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use beamfill::model::DeRefresh;
use beamfill::synth::Profile;
use config::{Algorithm, FileConfig, Objective, Resolved};

#[derive(Parser)]
#[command(name = "beamfill", version, about = "Beam-domain EE power allocation from channel statistics")]
struct Cli {
    /// TOML configuration file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for result files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// RNG seed controlling scenario generation, sampling, and restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Transmit power budget in dBm.
    #[arg(long, global = true)]
    pmax_dbm: Option<f64>,

    /// Optimization objective.
    #[arg(long, value_enum, global = true)]
    objective: Option<Objective>,

    /// Solve path: water-filling or the projected-gradient reference.
    #[arg(long, value_enum, global = true)]
    algorithm: Option<Algorithm>,

    /// Number of initialization points (best objective wins).
    #[arg(long, global = true)]
    restarts: Option<usize>,

    /// Monte-Carlo sample count.
    #[arg(long, global = true)]
    mc_samples: Option<usize>,

    /// When the DE auxiliaries are refreshed: mm | dinkelbach.
    #[arg(long, global = true)]
    de_refresh: Option<String>,

    /// Channel statistics JSON file (instead of a generated scenario).
    #[arg(long, global = true)]
    stats: Option<PathBuf>,

    /// Disable rescaling of the noise power to 1.
    #[arg(long, global = true)]
    no_normalize: bool,

    /// Include wall-time columns (makes outputs non-reproducible).
    #[arg(long, global = true)]
    timing: bool,

    /// BS antenna count of the generated scenario.
    #[arg(long, global = true)]
    m: Option<usize>,

    /// User count of the generated scenario.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Receive antennas per user of the generated scenario.
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Coupling profile of the generated scenario.
    #[arg(long, global = true)]
    profile: Option<String>,

    /// Pathloss of the generated scenario, dB.
    #[arg(long, global = true)]
    pathloss_db: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One solve; writes summary.csv and allocation.json.
    Solve,
    /// Budget/antenna/circuit-power sweeps; writes sweep.csv.
    Sweep {
        /// Budget grid in dBm, comma separated.
        #[arg(long, value_delimiter = ',')]
        pmax_dbm_grid: Option<Vec<f64>>,
        /// Antenna counts to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        m_list: Option<Vec<usize>>,
        /// Per-antenna circuit powers in dBm, comma separated.
        #[arg(long, value_delimiter = ',')]
        pc_dbm_list: Option<Vec<f64>>,
    },
    /// DE-vs-MC rate comparison and rotated-covariance check.
    Validate {
        /// Number of random unitary rotations (0 disables).
        #[arg(long)]
        rotations: Option<usize>,
    },
    /// Convergence traces; writes mm_trace.csv and eta_trace.csv.
    Trace,
    /// Generate the scenario's statistics JSON.
    GenStats {
        /// Destination path.
        #[arg(long, default_value = "stats.json")]
        path: PathBuf,
    },
}

fn resolve(cli: &Cli, file: FileConfig) -> Result<Resolved, config::ConfigError> {
    let mut r = Resolved {
        scenario: file.scenario,
        stats_file: file.stats_file,
        power: file.power,
        solver: file.solver,
        run: file.run,
        sweep: file.sweep,
        validate: file.validate,
    };
    if let Some(out) = &cli.out {
        r.run.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        r.run.seed = seed;
    }
    if let Some(p) = cli.pmax_dbm {
        r.power.p_max_dbm = p;
    }
    if let Some(o) = cli.objective {
        r.run.objective = o;
    }
    if let Some(a) = cli.algorithm {
        r.run.algorithm = a;
    }
    if let Some(n) = cli.restarts {
        r.run.restarts = n;
    }
    if let Some(s) = cli.mc_samples {
        r.solver.mc_samples = Some(s);
    }
    if let Some(refresh) = &cli.de_refresh {
        r.run.de_refresh = match refresh.as_str() {
            "mm" => DeRefresh::Mm,
            "dinkelbach" => DeRefresh::Dinkelbach,
            other => {
                return Err(config::ConfigError::Invalid(format!(
                    "unknown de-refresh mode '{other}' (expected mm or dinkelbach)"
                )))
            }
        };
    }
    if let Some(stats) = &cli.stats {
        r.stats_file = Some(stats.clone());
        r.scenario = None;
    }
    if cli.no_normalize {
        r.run.normalize = false;
    }
    if cli.timing {
        r.run.timing = true;
    }
    let needs_scenario =
        cli.m.is_some() || cli.k.is_some() || cli.n.is_some() || cli.profile.is_some() || cli.pathloss_db.is_some();
    if needs_scenario {
        let mut sc = r.scenario.clone().unwrap_or_default();
        if let Some(m) = cli.m {
            sc.m = m;
        }
        if let Some(k) = cli.k {
            sc.k = k;
        }
        if let Some(n) = cli.n {
            sc.n = n;
        }
        if let Some(p) = &cli.profile {
            sc.profile = match p.as_str() {
                "uniform" => Profile::Uniform,
                "exponential-beam" => Profile::ExponentialBeam,
                "sparse-beam" => Profile::SparseBeam,
                other => {
                    return Err(config::ConfigError::Invalid(format!(
                        "unknown profile '{other}'"
                    )))
                }
            };
        }
        if let Some(pl) = cli.pathloss_db {
            sc.pathloss_db = pl;
        }
        r.scenario = Some(sc);
        r.stats_file = None;
    }
    Ok(r)
}

fn main() {
    let cli = Cli::parse();
    let file = match config::load_file(cli.config.as_ref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    let mut resolved = match resolve(&cli, file) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };

    let result = match &cli.command {
        Command::Solve => commands::run_solve(&resolved),
        Command::Sweep { pmax_dbm_grid, m_list, pc_dbm_list } => {
            if let Some(g) = pmax_dbm_grid {
                resolved.sweep.pmax_dbm_grid = g.clone();
            }
            if let Some(m) = m_list {
                resolved.sweep.m_list = Some(m.clone());
            }
            if let Some(pc) = pc_dbm_list {
                resolved.sweep.pc_dbm_list = Some(pc.clone());
            }
            commands::run_sweep(&resolved)
        }
        Command::Validate { rotations } => {
            if let Some(r) = rotations {
                resolved.validate.rotations = *r;
            }
            commands::run_validate(&resolved)
        }
        Command::Trace => commands::run_trace(&resolved),
        Command::GenStats { path } => commands::run_gen_stats(&resolved, path),
    };

    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
