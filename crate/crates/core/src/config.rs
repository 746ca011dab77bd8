//! TOML experiment configuration.
//!
//! ```toml
//! scenario = "single_mode"      # single_mode | bipartite | full_rho
//! seed = 7
//! runs = 100000                 # trials per efficiency (and phase)
//!
//! [state]
//! kind = "coherent"
//! mean = 5.39
//! truncation = 30               # Fock truncation of the ground truth
//!
//! [grid]
//! eta_max = 0.66
//! count = 30
//!
//! [em]
//! truncation = 20
//! max_iterations = 100000
//!
//! [paths]
//! data = "clicks.csv"
//! reference = "truth.json"
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detection::EfficiencyGrid;
use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::full_rho::{DisplacementSetting, FullRhoConfig};
use crate::io::{load_json, StateFile};
use crate::states::{
    bs_superposition_joint, coherent_density_matrix, coherent_distribution,
    multithermal_joint_split, thermal_density_matrix, thermal_distribution, DensityMatrix,
    JointPhotonDistribution, PhotonDistribution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    SingleMode,
    Bipartite,
    FullRho,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "single_mode" => Ok(Scenario::SingleMode),
            "bipartite" => Ok(Scenario::Bipartite),
            "full_rho" => Ok(Scenario::FullRho),
            _ => Err(Error::Config(format!(
                "unknown scenario `{s}` (single_mode, bipartite, full_rho)"
            ))),
        }
    }
}

/// Ground-truth state. Which kinds apply depends on the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    /// Poissonian statistics (single mode) or the real-amplitude coherent
    /// state `|sqrt(mean)>` (full_rho).
    Coherent {
        mean: f64,
    },
    /// Coherent state with a complex amplitude (full_rho).
    CoherentAmplitude {
        re: f64,
        im: f64,
    },
    Thermal {
        mean: f64,
    },
    Fock {
        n: usize,
    },
    Distribution {
        probs: Vec<f64>,
    },
    Multithermal {
        n_ave: f64,
        modes: usize,
        #[serde(default = "half")]
        transmittance: f64,
    },
    /// Single photon split by a beam splitter.
    BeamSplitter {
        transmittance: f64,
    },
    /// JSON state file.
    File {
        path: PathBuf,
    },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateConfig {
    #[serde(flatten)]
    pub spec: StateSpec,
    /// Fock truncation of the generated truth.
    pub truncation: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// `eta_max * mu / K`, `mu = 1..=K`.
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Explicit {
        etas: Vec<f64>,
    },
    Generated {
        eta_max: f64,
        count: usize,
        #[serde(default)]
        spacing: Spacing,
    },
}

impl GridSpec {
    pub fn build(&self) -> Result<EfficiencyGrid> {
        match self {
            GridSpec::Explicit { etas } => EfficiencyGrid::new(etas.clone()),
            GridSpec::Generated {
                eta_max,
                count,
                spacing: Spacing::Linear,
            } => EfficiencyGrid::linear(*eta_max, *count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplacementConfig {
    /// `|alpha|`.
    pub magnitude: f64,
    /// Number of equally spaced phases `N_phi`.
    pub phases: usize,
}

impl DisplacementConfig {
    pub fn build(&self) -> Result<DisplacementSetting> {
        DisplacementSetting::uniform(self.magnitude, self.phases)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Click data: written by `simulate`, read by `reconstruct`.
    pub data: Option<PathBuf>,
    /// Ground truth for fidelity traces and difference maps.
    pub reference: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Scenario,
    pub state: Option<StateConfig>,
    pub grid: Option<GridSpec>,
    #[serde(default = "default_runs")]
    pub runs: u64,
    #[serde(default)]
    pub seed: u64,
    /// Write noise-free frequencies instead of sampled counts.
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub em: EmConfig,
    pub displacement: Option<DisplacementConfig>,
    #[serde(default)]
    pub full_rho: FullRhoConfig,
    /// Fock range used to evaluate displaced distributions when simulating.
    #[serde(default = "default_simulation_truncation")]
    pub simulation_truncation: usize,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_runs() -> u64 {
    100_000
}

fn default_simulation_truncation() -> usize {
    60
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::default(),
            state: None,
            grid: None,
            runs: default_runs(),
            seed: 0,
            exact: false,
            em: EmConfig::default(),
            displacement: None,
            full_rho: FullRhoConfig::default(),
            simulation_truncation: default_simulation_truncation(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses the file, resolves relative paths against its directory and
    /// checks that referenced input files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.check_inputs_exist()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(StateConfig {
            spec: StateSpec::File { path },
            ..
        }) = self.state.as_mut()
        {
            fix(path);
        }
        for p in [
            self.paths.data.as_mut(),
            self.paths.reference.as_mut(),
            self.paths.output_dir.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// State and reference files must exist; the data path may be an output.
    pub fn check_inputs_exist(&self) -> Result<()> {
        let mut inputs = Vec::new();
        if let Some(StateConfig {
            spec: StateSpec::File { path },
            ..
        }) = &self.state
        {
            inputs.push(path);
        }
        inputs.extend(self.paths.reference.as_ref());
        for p in inputs {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Fields needed to simulate this scenario.
    pub fn validate_for_simulation(&self) -> Result<()> {
        if self.state.is_none() {
            return Err(Error::Config("simulation needs a [state] section".into()));
        }
        if self.grid.is_none() {
            return Err(Error::Config("simulation needs a [grid] section".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be positive".into()));
        }
        self.validate_common()
    }

    pub fn validate_for_reconstruction(&self) -> Result<()> {
        self.validate_common()
    }

    fn validate_common(&self) -> Result<()> {
        self.em.validate()?;
        if self.scenario == Scenario::FullRho && self.displacement.is_none() {
            return Err(Error::Config(
                "full_rho scenario needs a [displacement] section".into(),
            ));
        }
        if let Some(g) = &self.grid {
            g.build()?;
        }
        Ok(())
    }

    fn truth_truncation(&self, fallback: usize) -> usize {
        self.state
            .as_ref()
            .and_then(|s| s.truncation)
            .unwrap_or(fallback)
    }

    fn spec(&self) -> Result<&StateSpec> {
        self.state
            .as_ref()
            .map(|s| &s.spec)
            .ok_or_else(|| Error::Config("no [state] section".into()))
    }

    pub fn truth_distribution(&self) -> Result<PhotonDistribution> {
        let n = self.truth_truncation(self.em.truncation);
        Ok(match self.spec()? {
            StateSpec::Coherent { mean } => coherent_distribution(*mean, n)?.state,
            StateSpec::Thermal { mean } => thermal_distribution(*mean, n)?.state,
            StateSpec::Fock { n: k } => PhotonDistribution::fock(*k, n)?,
            StateSpec::Distribution { probs } => PhotonDistribution::new(probs.clone())?,
            StateSpec::File { path } => match load_json::<StateFile>(path)? {
                StateFile::PhotonDistribution(d) => d,
                StateFile::DensityMatrix(r) => r.photon_distribution()?,
                StateFile::JointPhotonDistribution(_) => {
                    return Err(Error::Config(
                        "a two-mode state cannot drive a single-mode scenario".into(),
                    ))
                }
            },
            other => return Err(unsupported(other, Scenario::SingleMode)),
        })
    }

    pub fn truth_joint(&self) -> Result<JointPhotonDistribution> {
        let n = self.truth_truncation(self.em.truncation);
        Ok(match self.spec()? {
            StateSpec::Multithermal {
                n_ave,
                modes,
                transmittance,
            } => multithermal_joint_split(*n_ave, *modes, *transmittance, n)?.state,
            StateSpec::BeamSplitter { transmittance } => bs_superposition_joint(*transmittance)?,
            StateSpec::File { path } => match load_json::<StateFile>(path)? {
                StateFile::JointPhotonDistribution(j) => j,
                _ => {
                    return Err(Error::Config(
                        "the bipartite scenario needs a joint_photon_distribution state file"
                            .into(),
                    ))
                }
            },
            other => return Err(unsupported(other, Scenario::Bipartite)),
        })
    }

    pub fn truth_density_matrix(&self) -> Result<DensityMatrix> {
        let n = self.truth_truncation(self.full_rho.hilbert_truncation);
        Ok(match self.spec()? {
            StateSpec::Coherent { mean } => {
                if *mean < 0.0 {
                    return Err(Error::Config("coherent mean must be >= 0".into()));
                }
                coherent_density_matrix(Complex64::new(mean.sqrt(), 0.0), n)?.state
            }
            StateSpec::CoherentAmplitude { re, im } => {
                coherent_density_matrix(Complex64::new(*re, *im), n)?.state
            }
            StateSpec::Thermal { mean } => thermal_density_matrix(*mean, n)?.state,
            StateSpec::Fock { n: k } => {
                DensityMatrix::from_distribution(&PhotonDistribution::fock(*k, n)?)
            }
            StateSpec::Distribution { probs } => {
                DensityMatrix::from_distribution(&PhotonDistribution::new(probs.clone())?)
            }
            StateSpec::File { path } => match load_json::<StateFile>(path)? {
                StateFile::DensityMatrix(r) => r,
                StateFile::PhotonDistribution(d) => DensityMatrix::from_distribution(&d),
                StateFile::JointPhotonDistribution(_) => {
                    return Err(Error::Config(
                        "a two-mode state cannot drive the full_rho scenario".into(),
                    ))
                }
            },
            other => return Err(unsupported(other, Scenario::FullRho)),
        })
    }
}

fn unsupported(spec: &StateSpec, scenario: Scenario) -> Error {
    Error::Config(format!(
        "state {spec:?} is not available for scenario {scenario:?}"
    ))
}
