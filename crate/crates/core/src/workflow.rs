//! End-to-end pipelines behind the command-line tool: simulate click data,
//! reconstruct from it, and turn reports into plot-ready tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bipartite::em_reconstruct_joint;
use crate::config::{ExperimentConfig, Scenario};
use crate::detection::{
    bipartite_off_probabilities, off_probability, BipartiteClickData, ClickSampler,
    OffFrequencyData,
};
use crate::em::em_reconstruct;
use crate::error::{Error, Result};
use crate::full_rho::{
    absolute_difference, exact_phase_scan, reconstruct_density_matrix, simulate_phase_scan,
};
use crate::io::{self, ReportFile, StateFile};
use crate::states::{DensityMatrix, JointPhotonDistribution, PhotonDistribution};

pub const DATA_FILE: &str = "clicks.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECONSTRUCTION_MANIFEST_FILE: &str = "reconstruction-manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const DENSITY_MATRIX_FILE: &str = "density_matrix.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const DISTRIBUTION_FILE: &str = "distribution.csv";
pub const JOINT_FILE: &str = "joint.csv";
pub const DELTA_FILE: &str = "delta.csv";
pub const DENSITY_CSV_FILE: &str = "density_matrix.csv";
pub const OFF_FREQUENCY_FILE: &str = "off_frequency.csv";

/// Everything needed to regenerate a set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub config: ExperimentConfig,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    fn new(config: &ExperimentConfig, files: Vec<PathBuf>) -> Self {
        Manifest {
            generator: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            config: config.clone(),
            files,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub data: PathBuf,
    pub truth: PathBuf,
    pub manifest: PathBuf,
}

fn data_path(config: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    config
        .paths
        .data
        .clone()
        .unwrap_or_else(|| out_dir.join(DATA_FILE))
}

/// Simulates the configured scenario and writes the click data, the ground
/// truth and a manifest. Deterministic for a fixed seed.
pub fn simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<SimulationOutput> {
    config.validate_for_simulation()?;
    let grid = config
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("no [grid] section".into()))?
        .build()?;
    let etas = grid.etas();
    let data = data_path(config, out_dir);
    let truth_path = out_dir.join(TRUTH_FILE);
    let mut sampler = ClickSampler::new(config.seed);
    match config.scenario {
        Scenario::SingleMode => {
            let truth = config.truth_distribution()?;
            let clicks = if config.exact {
                OffFrequencyData::exact(&truth, etas)?
            } else {
                sampler.off_data(&truth, etas, config.runs)?
            };
            io::save_off_data(&data, &clicks)?;
            io::save_json(&truth_path, &StateFile::PhotonDistribution(truth))?;
        }
        Scenario::Bipartite => {
            let truth = config.truth_joint()?;
            let probs = etas
                .iter()
                .map(|&eta| bipartite_off_probabilities(&truth, eta))
                .collect::<Result<Vec<_>>>()?;
            let clicks = if config.exact {
                BipartiteClickData::from_probabilities(
                    etas,
                    &probs,
                    crate::detection::NOISE_FREE_RUNS,
                )?
            } else {
                sampler.bipartite_data(etas, &probs, config.runs)?
            };
            io::save_bipartite_data(&data, &clicks)?;
            io::save_json(&truth_path, &StateFile::JointPhotonDistribution(truth))?;
        }
        Scenario::FullRho => {
            let truth = config.truth_density_matrix()?;
            let setting = config
                .displacement
                .as_ref()
                .ok_or_else(|| Error::Config("no [displacement] section".into()))?
                .build()?;
            let n = config.simulation_truncation;
            let blocks = if config.exact {
                exact_phase_scan(&truth, &setting, etas, n)?
            } else {
                simulate_phase_scan(&truth, &setting, etas, config.runs, config.seed, n)?
            };
            io::save_phase_scan(&data, &blocks)?;
            io::save_json(&truth_path, &StateFile::DensityMatrix(truth))?;
        }
    }
    let manifest = out_dir.join(MANIFEST_FILE);
    io::save_json(
        &manifest,
        &Manifest::new(config, vec![data.clone(), truth_path.clone()]),
    )?;
    Ok(SimulationOutput {
        data,
        truth: truth_path,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionOutput {
    pub report: ReportFile,
    pub converged: bool,
    pub files: Vec<PathBuf>,
}

fn load_reference(path: Option<&PathBuf>) -> Result<Option<StateFile>> {
    path.map(|p| io::load_json::<StateFile>(p)).transpose()
}

fn reference_distribution(state: StateFile, truncation: usize) -> Result<PhotonDistribution> {
    match state {
        StateFile::PhotonDistribution(d) => d.resized(truncation),
        StateFile::DensityMatrix(r) => r.photon_distribution()?.resized(truncation),
        StateFile::JointPhotonDistribution(_) => {
            Err(Error::Config("reference is a two-mode distribution".into()))
        }
    }
}

fn reference_joint(state: StateFile, truncation: usize) -> Result<JointPhotonDistribution> {
    match state {
        StateFile::JointPhotonDistribution(j) => j.resized(truncation),
        _ => Err(Error::Config(
            "reference must be a joint_photon_distribution".into(),
        )),
    }
}

fn reference_density(state: StateFile, truncation: usize) -> Result<DensityMatrix> {
    match state {
        StateFile::DensityMatrix(r) => r.resized(truncation),
        StateFile::PhotonDistribution(d) => {
            DensityMatrix::from_distribution(&d).resized(truncation)
        }
        StateFile::JointPhotonDistribution(_) => {
            Err(Error::Config("reference is a two-mode distribution".into()))
        }
    }
}

/// Reconstructs from `config.paths.data` and writes `report.json` plus the
/// convergence trace (or the density matrix for `full_rho`).
pub fn reconstruct(config: &ExperimentConfig, out_dir: &Path) -> Result<ReconstructionOutput> {
    config.validate_for_reconstruction()?;
    let data = config
        .paths
        .data
        .clone()
        .ok_or_else(|| Error::Config("no click data given (paths.data or --data)".into()))?;
    if !data.exists() {
        return Err(Error::Config(format!(
            "click data {} does not exist",
            data.display()
        )));
    }
    let reference = load_reference(config.paths.reference.as_ref())?;
    let report_path = out_dir.join(REPORT_FILE);
    let mut files = vec![report_path.clone()];
    let (report, converged) = match config.scenario {
        Scenario::SingleMode => {
            let clicks = io::load_off_data(&data)?;
            let r = reference
                .map(|s| reference_distribution(s, config.em.truncation))
                .transpose()?;
            let report = em_reconstruct(&clicks, &config.em, r.as_ref())?;
            let trace = out_dir.join(TRACE_FILE);
            io::write_trace_csv(&trace, &report)?;
            files.push(trace);
            let converged = report.converged;
            (ReportFile::SingleMode(report), converged)
        }
        Scenario::Bipartite => {
            let clicks = io::load_bipartite_data(&data)?;
            let r = reference
                .map(|s| reference_joint(s, config.em.truncation))
                .transpose()?;
            let report = em_reconstruct_joint(&clicks, &config.em, r.as_ref())?;
            let trace = out_dir.join(TRACE_FILE);
            io::write_trace_csv(&trace, &report)?;
            files.push(trace);
            let converged = report.converged;
            (ReportFile::Bipartite(report), converged)
        }
        Scenario::FullRho => {
            let blocks = io::load_phase_scan(&data)?;
            let setting = config
                .displacement
                .as_ref()
                .ok_or_else(|| Error::Config("no [displacement] section".into()))?
                .build()?;
            let report =
                reconstruct_density_matrix(&blocks, &setting, &config.em, &config.full_rho)?;
            let rho_path = out_dir.join(DENSITY_MATRIX_FILE);
            io::save_json(
                &rho_path,
                &StateFile::DensityMatrix(report.density_matrix.clone()),
            )?;
            files.push(rho_path);
            if let Some(r) = reference {
                let truth = reference_density(r, config.full_rho.hilbert_truncation)?;
                let delta = out_dir.join(DELTA_FILE);
                io::write_grid_csv(
                    &delta,
                    &absolute_difference(&report.density_matrix, &truth)?,
                )?;
                files.push(delta);
            }
            let converged = report.converged;
            (ReportFile::FullRho(report), converged)
        }
    };
    io::save_json(&report_path, &report)?;
    let manifest = out_dir.join(RECONSTRUCTION_MANIFEST_FILE);
    let mut recorded = files.clone();
    recorded.push(data);
    io::save_json(&manifest, &Manifest::new(config, recorded))?;
    files.push(manifest);
    Ok(ReconstructionOutput {
        report,
        converged,
        files,
    })
}

/// Plot-ready tables from a saved report. `reference` adds the difference
/// map for density matrices; `data` adds measured-versus-model off
/// frequencies for single-mode reports.
pub fn report(
    report_path: &Path,
    reference: Option<&Path>,
    data: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let report: ReportFile = io::load_json(report_path)?;
    let mut files = Vec::new();
    match &report {
        ReportFile::SingleMode(r) => {
            let trace = out_dir.join(TRACE_FILE);
            io::write_trace_csv(&trace, r)?;
            let dist = out_dir.join(DISTRIBUTION_FILE);
            io::write_distribution_csv(&dist, &r.distribution, &r.fisher_variances)?;
            files.extend([trace, dist]);
            if let Some(d) = data {
                let clicks = io::load_off_data(d)?;
                let model = clicks
                    .etas()
                    .iter()
                    .map(|&eta| off_probability(&r.distribution, eta))
                    .collect::<Result<Vec<_>>>()?;
                let out = out_dir.join(OFF_FREQUENCY_FILE);
                io::write_off_frequency_csv(&out, &clicks, &model)?;
                files.push(out);
            }
        }
        ReportFile::Bipartite(r) => {
            let trace = out_dir.join(TRACE_FILE);
            io::write_trace_csv(&trace, r)?;
            let joint = out_dir.join(JOINT_FILE);
            io::write_joint_csv(&joint, &r.distribution, &r.fisher_variances)?;
            files.extend([trace, joint]);
        }
        ReportFile::FullRho(r) => {
            let rho = out_dir.join(DENSITY_CSV_FILE);
            io::write_density_matrix_csv(&rho, &r.density_matrix)?;
            files.push(rho);
            if let Some(p) = reference {
                let truth = reference_density(io::load_json(p)?, r.density_matrix.truncation())?;
                let delta = out_dir.join(DELTA_FILE);
                io::write_grid_csv(&delta, &absolute_difference(&r.density_matrix, &truth)?)?;
                files.push(delta);
            }
        }
    }
    Ok(files)
}
