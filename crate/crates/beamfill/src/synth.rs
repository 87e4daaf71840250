//! Synthetic channel-statistics generation and JSON file I/O.
//!
//! The generator replaces a geometric channel simulator with three coupling
//! profiles (uniform, exponential beam, sparse beam), normalized so the mean
//! entry matches a prescribed pathloss. Generation is deterministic per seed.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mc::derive_rng;
use crate::model::{dbm_to_watts, ChannelStats, Mat, PowerAllocation, UserStats};

/// Shape of the per-user coupling matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Every entry equal: no beam selectivity.
    Uniform,
    /// Gains decay exponentially with distance from a per-user beam center.
    ExponentialBeam,
    /// All gain concentrated in a contiguous beam window, zero elsewhere.
    SparseBeam,
}

/// Parameters of a synthetic scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub profile: Profile,
    /// Per-user beam center in beam indices; default spreads users evenly.
    #[serde(default)]
    pub beam_centers: Option<Vec<f64>>,
    /// Per-user angular spread in beam indices; default M/8.
    #[serde(default)]
    pub angular_spreads: Option<Vec<f64>>,
    #[serde(default = "default_pathloss_db")]
    pub pathloss_db: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_power_dbm: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_pathloss_db() -> f64 {
    -120.0
}

fn default_noise_dbm() -> f64 {
    -105.0
}

impl ScenarioSpec {
    pub fn new(m: usize, k: usize, n: usize, profile: Profile, seed: u64) -> Self {
        ScenarioSpec {
            m,
            k,
            n,
            profile,
            beam_centers: None,
            angular_spreads: None,
            pathloss_db: default_pathloss_db(),
            noise_power_dbm: default_noise_dbm(),
            seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generate channel statistics from a scenario description.
///
/// The per-user matrix follows the requested profile, gets multiplicative
/// per-entry jitter (except for the uniform profile), and is rescaled so the
/// total gain equals `N * M * 10^(pathloss_db / 10)`.
pub fn generate(spec: &ScenarioSpec) -> Result<ChannelStats, SynthError> {
    if spec.m == 0 || spec.k == 0 || spec.n == 0 {
        return Err(SynthError::InvalidSpec("m, k, n must all be >= 1".into()));
    }
    for (name, v) in [("beam_centers", &spec.beam_centers), ("angular_spreads", &spec.angular_spreads)] {
        if let Some(list) = v {
            if list.len() != spec.k {
                return Err(SynthError::InvalidSpec(format!(
                    "{name} has {} entries, expected {}",
                    list.len(),
                    spec.k
                )));
            }
        }
    }

    let target_total = spec.n as f64 * spec.m as f64 * 10f64.powf(spec.pathloss_db / 10.0);
    let mut users = Vec::with_capacity(spec.k);
    for k in 0..spec.k {
        let center = spec
            .beam_centers
            .as_ref()
            .map(|c| c[k])
            .unwrap_or((k as f64 + 0.5) * spec.m as f64 / spec.k as f64);
        let spread = spec
            .angular_spreads
            .as_ref()
            .map(|s| s[k])
            .unwrap_or((spec.m as f64 / 8.0).max(1.0));
        if spread <= 0.0 {
            return Err(SynthError::InvalidSpec(format!("angular spread of user {k} must be > 0")));
        }

        let base: Vec<f64> = (0..spec.m)
            .map(|m| match spec.profile {
                Profile::Uniform => 1.0,
                Profile::ExponentialBeam => (-((m as f64 - center).abs()) / spread).exp(),
                Profile::SparseBeam => {
                    if (m as f64 - center).abs() <= spread {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
            .collect();
        if base.iter().all(|&b| b == 0.0) {
            return Err(SynthError::InvalidSpec(format!(
                "sparse window of user {k} covers no beams (center {center}, spread {spread})"
            )));
        }

        let mut rng = derive_rng(spec.seed, &[0x53594e54, k as u64]);
        let mut omega = Mat::zeros(spec.n, spec.m);
        for n in 0..spec.n {
            for m in 0..spec.m {
                let jitter = match spec.profile {
                    Profile::Uniform => 1.0,
                    _ => rng.gen_range(0.5..1.5),
                };
                omega.set(n, m, base[m] * jitter);
            }
        }
        let total: f64 = omega.data().iter().sum();
        let scale = target_total / total;
        for v in omega.data_mut() {
            *v *= scale;
        }
        users.push(UserStats::new(omega));
    }

    Ok(ChannelStats::new(spec.m, users, dbm_to_watts(spec.noise_power_dbm)))
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    #[serde(rename = "M")]
    m: usize,
    sigma2: f64,
    users: Vec<UserFile>,
}

#[derive(Serialize, Deserialize)]
struct UserFile {
    #[serde(rename = "N")]
    n: usize,
    /// Row-major N x M gains.
    omega: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AllocFile {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    lambdas: Vec<Vec<f64>>,
}

/// Serialize channel statistics to the JSON interchange format.
pub fn stats_to_json(stats: &ChannelStats) -> String {
    let file = StatsFile {
        m: stats.num_bs_antennas,
        sigma2: stats.noise_power,
        users: stats
            .users
            .iter()
            .map(|u| UserFile { n: u.num_rx_antennas, omega: u.omega.data().to_vec() })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("serialization cannot fail")
}

/// Parse channel statistics from the JSON interchange format.
pub fn stats_from_json(text: &str) -> Result<ChannelStats, SynthError> {
    let file: StatsFile = serde_json::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
    let mut users = Vec::with_capacity(file.users.len());
    for (k, u) in file.users.into_iter().enumerate() {
        if u.omega.len() != u.n * file.m {
            return Err(SynthError::Parse(format!(
                "user {k}: omega has {} entries, declared N x M = {} x {}",
                u.omega.len(),
                u.n,
                file.m
            )));
        }
        users.push(UserStats { num_rx_antennas: u.n, omega: Mat::from_rows(u.n, file.m, u.omega) });
    }
    Ok(ChannelStats::new(file.m, users, file.sigma2))
}

pub fn save_stats(stats: &ChannelStats, path: &Path) -> Result<(), SynthError> {
    Ok(fs::write(path, stats_to_json(stats))?)
}

pub fn load_stats(path: &Path) -> Result<ChannelStats, SynthError> {
    stats_from_json(&fs::read_to_string(path)?)
}

pub fn alloc_to_json(alloc: &PowerAllocation) -> String {
    let m = alloc.lambdas.first().map(|l| l.len()).unwrap_or(0);
    let file = AllocFile { k: alloc.num_users(), m, lambdas: alloc.lambdas.clone() };
    serde_json::to_string_pretty(&file).expect("serialization cannot fail")
}

pub fn alloc_from_json(text: &str) -> Result<PowerAllocation, SynthError> {
    let file: AllocFile = serde_json::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
    if file.lambdas.len() != file.k {
        return Err(SynthError::Parse(format!(
            "declared K = {} but {} power vectors present",
            file.k,
            file.lambdas.len()
        )));
    }
    for (k, l) in file.lambdas.iter().enumerate() {
        if l.len() != file.m {
            return Err(SynthError::Parse(format!(
                "user {k}: power vector has {} entries, declared M = {}",
                l.len(),
                file.m
            )));
        }
    }
    Ok(PowerAllocation::new(file.lambdas))
}

pub fn save_alloc(alloc: &PowerAllocation, path: &Path) -> Result<(), SynthError> {
    Ok(fs::write(path, alloc_to_json(alloc))?)
}

pub fn load_alloc(path: &Path) -> Result<PowerAllocation, SynthError> {
    alloc_from_json(&fs::read_to_string(path)?)
}
