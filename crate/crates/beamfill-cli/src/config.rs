//! Run configuration: a TOML file sets scenario, power model, solver
//! tolerances, and run options; command-line flags override individual
//! fields.

use std::path::PathBuf;

use serde::Deserialize;

use beamfill::model::{dbm_to_watts, DeRefresh, PowerModel, SolverConfig};
use beamfill::synth::{Profile, ScenarioSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config file: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ee,
    Sumrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lowcomplexity,
    Reference,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub stats_file: Option<PathBuf>,
    #[serde(default)]
    pub power: PowerSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default)]
    pub beam_centers: Option<Vec<f64>>,
    #[serde(default)]
    pub angular_spreads: Option<Vec<f64>>,
    #[serde(default = "default_pathloss")]
    pub pathloss_db: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_power_dbm: f64,
}

fn default_profile() -> Profile {
    Profile::ExponentialBeam
}

fn default_pathloss() -> f64 {
    -120.0
}

fn default_noise_dbm() -> f64 {
    -105.0
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            m: 16,
            k: 4,
            n: 2,
            profile: default_profile(),
            beam_centers: None,
            angular_spreads: None,
            pathloss_db: default_pathloss(),
            noise_power_dbm: default_noise_dbm(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_pc_dbm")]
    pub p_c_dbm: f64,
    #[serde(default = "default_ps_dbm")]
    pub p_s_dbm: f64,
    #[serde(default = "default_pmax_dbm")]
    pub p_max_dbm: f64,
}

fn default_xi() -> f64 {
    5.0
}
fn default_pc_dbm() -> f64 {
    30.0
}
fn default_ps_dbm() -> f64 {
    40.0
}
fn default_pmax_dbm() -> f64 {
    46.0
}

impl Default for PowerSection {
    fn default() -> Self {
        PowerSection {
            xi: default_xi(),
            p_c_dbm: default_pc_dbm(),
            p_s_dbm: default_ps_dbm(),
            p_max_dbm: default_pmax_dbm(),
        }
    }
}

impl PowerSection {
    pub fn to_model(&self) -> PowerModel {
        PowerModel {
            xi: self.xi,
            p_c: dbm_to_watts(self.p_c_dbm),
            p_s: dbm_to_watts(self.p_s_dbm),
            p_max: dbm_to_watts(self.p_max_dbm),
        }
    }
}

/// Mirrors [`SolverConfig`] with every field optional in the file.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub eps_mm: Option<f64>,
    pub eps_dinkelbach: Option<f64>,
    pub eps_de: Option<f64>,
    pub eps_newton: Option<f64>,
    pub eps_eta: Option<f64>,
    pub eps_power: Option<f64>,
    pub max_iter_mm: Option<usize>,
    pub max_iter_dinkelbach: Option<usize>,
    pub max_iter_de: Option<usize>,
    pub max_iter_newton: Option<usize>,
    pub max_iter_bisect: Option<usize>,
    pub max_sweeps: Option<usize>,
    pub mc_samples: Option<usize>,
}

impl SolverSection {
    pub fn to_config(&self, seed: u64, de_refresh: DeRefresh) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            eps_mm: self.eps_mm.unwrap_or(d.eps_mm),
            eps_dinkelbach: self.eps_dinkelbach.unwrap_or(d.eps_dinkelbach),
            eps_de: self.eps_de.unwrap_or(d.eps_de),
            eps_newton: self.eps_newton.unwrap_or(d.eps_newton),
            eps_eta: self.eps_eta.unwrap_or(d.eps_eta),
            eps_power: self.eps_power.unwrap_or(d.eps_power),
            max_iter_mm: self.max_iter_mm.unwrap_or(d.max_iter_mm),
            max_iter_dinkelbach: self.max_iter_dinkelbach.unwrap_or(d.max_iter_dinkelbach),
            max_iter_de: self.max_iter_de.unwrap_or(d.max_iter_de),
            max_iter_newton: self.max_iter_newton.unwrap_or(d.max_iter_newton),
            max_iter_bisect: self.max_iter_bisect.unwrap_or(d.max_iter_bisect),
            max_sweeps: self.max_sweeps.unwrap_or(d.max_sweeps),
            mc_samples: self.mc_samples.unwrap_or(d.mc_samples),
            seed,
            de_refresh,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_de_refresh")]
    pub de_refresh: DeRefresh,
    #[serde(default)]
    pub timing: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_objective() -> Objective {
    Objective::Ee
}
fn default_algorithm() -> Algorithm {
    Algorithm::Lowcomplexity
}
fn default_seed() -> u64 {
    1
}
fn default_restarts() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_de_refresh() -> DeRefresh {
    DeRefresh::Mm
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            objective: default_objective(),
            algorithm: default_algorithm(),
            seed: default_seed(),
            restarts: default_restarts(),
            normalize: true,
            de_refresh: default_de_refresh(),
            timing: false,
            out: default_out(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_pmax_grid")]
    pub pmax_dbm_grid: Vec<f64>,
    #[serde(default)]
    pub m_list: Option<Vec<usize>>,
    #[serde(default)]
    pub pc_dbm_list: Option<Vec<f64>>,
}

fn default_pmax_grid() -> Vec<f64> {
    vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { pmax_dbm_grid: default_pmax_grid(), m_list: None, pc_dbm_list: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_rotations")]
    pub rotations: usize,
}

fn default_rotations() -> usize {
    50
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { rotations: default_rotations() }
    }
}

/// Fully resolved configuration after merging file and flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Option<ScenarioSection>,
    pub stats_file: Option<PathBuf>,
    pub power: PowerSection,
    pub solver: SolverSection,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub validate: ValidateSection,
}

impl Resolved {
    pub fn solver_config(&self) -> SolverConfig {
        let cfg = self.solver.to_config(self.run.seed, self.run.de_refresh);
        cfg.assert_valid();
        cfg
    }

    pub fn scenario_spec(&self) -> Option<ScenarioSpec> {
        self.scenario.as_ref().map(|s| ScenarioSpec {
            m: s.m,
            k: s.k,
            n: s.n,
            profile: s.profile,
            beam_centers: s.beam_centers.clone(),
            angular_spreads: s.angular_spreads.clone(),
            pathloss_db: s.pathloss_db,
            noise_power_dbm: s.noise_power_dbm,
            seed: self.run.seed,
        })
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.stats_file.is_some() && self.scenario.is_some() {
            return Err(ConfigError::Invalid(
                "exactly one statistics source: give either a scenario or stats_file, not both".into(),
            ));
        }
        if self.sweep.pmax_dbm_grid.is_empty() {
            return Err(ConfigError::Invalid("sweep grid must be nonempty".into()));
        }
        if self.sweep.pmax_dbm_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::Invalid("sweep grid must be strictly increasing".into()));
        }
        if self.run.restarts == 0 {
            return Err(ConfigError::Invalid("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn load_file(path: Option<&PathBuf>) -> Result<FileConfig, ConfigError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(toml::from_str(&text)?)
        }
    }
}
