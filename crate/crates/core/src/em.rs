//! Maximum-likelihood reconstruction of a single-mode photon distribution
//! from off frequencies measured over a sweep of quantum efficiencies.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detection::{design_matrix_for, OffFrequencyData};
use crate::error::{Error, Result};
use crate::linpos::{LinposModel, RunOutcome};
use crate::states::PhotonDistribution;

pub use crate::linpos::StopReason;

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Uniform,
    /// Nonnegative weights over the unknowns, normalized before use.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Fock truncation `N`; the joint reconstruction uses `(N+1)^2` unknowns.
    pub truncation: usize,
    pub max_iterations: usize,
    pub epsilon_threshold: f64,
    pub init: Init,
    /// Trace stride; the last iteration is always recorded.
    pub record_diagnostics_every: usize,
    pub stall_window: usize,
    pub stall_tolerance: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            truncation: 20,
            max_iterations: 100_000,
            epsilon_threshold: 1e-7,
            init: Init::Uniform,
            record_diagnostics_every: 1,
            stall_window: 100,
            stall_tolerance: 1e-12,
        }
    }
}

impl EmConfig {
    pub fn with_truncation(truncation: usize) -> Self {
        EmConfig {
            truncation,
            ..EmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_threshold.is_nan() || self.epsilon_threshold <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon_threshold must be positive, got {}",
                self.epsilon_threshold
            )));
        }
        if self.stall_tolerance.is_nan() || self.stall_tolerance <= 0.0 {
            return Err(Error::Config("stall_tolerance must be positive".into()));
        }
        if self.record_diagnostics_every == 0 {
            return Err(Error::Config(
                "record_diagnostics_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of an EM reconstruction. `T` is the reconstructed distribution
/// ([`PhotonDistribution`] or
/// [`JointPhotonDistribution`](crate::states::JointPhotonDistribution)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport<T> {
    pub distribution: T,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub converged: bool,
    /// Fewer distinct efficiencies than unknowns per mode.
    pub underdetermined: bool,
    pub final_epsilon: f64,
    /// Binomial (single-mode) or four-outcome multinomial (two-mode)
    /// log-likelihood of the counts at the estimate; `None` stands for minus
    /// infinity (an observed event has zero model probability).
    pub log_likelihood: Option<f64>,
    pub trace_iterations: Vec<usize>,
    pub epsilon_trace: Vec<f64>,
    /// LINPOS log-likelihood `sum_mu f_mu ln l_mu`, the functional the
    /// iteration ascends.
    pub loglik_trace: Vec<f64>,
    pub fidelity_trace: Option<Vec<f64>>,
    /// `sigma_n^2`; `None` flags an unbounded variance.
    pub fisher_variances: Vec<Option<f64>>,
    pub diagnostics: Vec<String>,
}

impl<T> ReconstructionReport<T> {
    pub(crate) fn assemble(
        distribution: T,
        run: RunOutcome,
        underdetermined: bool,
        log_likelihood: f64,
        fisher_variances: Vec<Option<f64>>,
    ) -> Self {
        let mut diagnostics = run.diagnostics;
        if underdetermined {
            diagnostics.push(
                "fewer distinct efficiencies than unknowns: the model is underdetermined".into(),
            );
        }
        ReconstructionReport {
            distribution,
            iterations_used: run.iterations_used,
            stop_reason: run.stop_reason,
            converged: run.stop_reason.is_converged(),
            underdetermined,
            final_epsilon: run.final_epsilon,
            log_likelihood: log_likelihood.is_finite().then_some(log_likelihood),
            trace_iterations: run.trace_iterations,
            epsilon_trace: run.epsilon_trace,
            loglik_trace: run.loglik_trace,
            fidelity_trace: run.fidelity_trace,
            fisher_variances,
            diagnostics,
        }
    }

    pub fn final_fidelity(&self) -> Option<f64> {
        self.fidelity_trace.as_ref().and_then(|t| t.last().copied())
    }
}

pub(crate) fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn check_shapes(
    dist: &PhotonDistribution,
    data: &OffFrequencyData,
    a: &DMatrix<f64>,
) -> Result<()> {
    if a.nrows() != data.len() || a.ncols() != dist.probs().len() {
        return Err(Error::domain(format!(
            "design matrix is {}x{}, expected {}x{}",
            a.nrows(),
            a.ncols(),
            data.len(),
            dist.probs().len()
        )));
    }
    Ok(())
}

fn model(data: &OffFrequencyData, a: &DMatrix<f64>) -> Result<LinposModel> {
    LinposModel::new(a, data.frequencies(), data.etas())
}

/// One EM update of `current` against the observed off frequencies,
/// renormalized to unit sum.
pub fn em_step(
    current: &PhotonDistribution,
    data: &OffFrequencyData,
    a: &DMatrix<f64>,
) -> Result<PhotonDistribution> {
    check_shapes(current, data, a)?;
    let m = model(data, a)?;
    let predicted = m.predict(current.probs());
    let mut next = vec![0.0; m.cols()];
    m.step_into(current.probs(), &predicted, &mut next)?;
    Ok(PhotonDistribution::from_normalized_unchecked(next))
}

/// Mean absolute gap `K^-1 sum_mu |f_mu - p_mu|`.
pub fn error_parameter(
    dist: &PhotonDistribution,
    data: &OffFrequencyData,
    a: &DMatrix<f64>,
) -> Result<f64> {
    check_shapes(dist, data, a)?;
    let m = model(data, a)?;
    Ok(m.epsilon(&m.predict(dist.probs())))
}

pub(crate) fn bhattacharyya(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.max(0.0) * y.max(0.0)).sqrt())
        .sum::<f64>()
        .min(1.0)
}

/// Overlap `sum_n sqrt(a_n b_n)`. Entries beyond the shorter support count
/// as zero.
pub fn fidelity(a: &PhotonDistribution, b: &PhotonDistribution) -> f64 {
    bhattacharyya(a.probs(), b.probs())
}

/// Binomial log-likelihood
/// `sum_mu [n0 ln p_mu + (n - n0) ln(1 - p_mu)]`; minus infinity when an
/// observed outcome has zero model probability.
pub fn log_likelihood(dist: &PhotonDistribution, data: &OffFrequencyData) -> Result<f64> {
    let mut acc = 0.0;
    for r in data.records() {
        let p = crate::detection::off_probability(dist, r.eta)?;
        let on = r.runs - r.off_counts;
        if r.off_counts > 0 {
            if p <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc += r.off_counts as f64 * p.ln();
        }
        if on > 0 {
            if p >= 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc += on as f64 * (1.0 - p).ln();
        }
    }
    Ok(acc)
}

/// LINPOS log-likelihood `sum_mu f_mu ln l_mu` with
/// `l_mu = p_mu / sum_lambda p_lambda`.
pub fn linpos_log_likelihood(
    dist: &PhotonDistribution,
    data: &OffFrequencyData,
    a: &DMatrix<f64>,
) -> Result<f64> {
    check_shapes(dist, data, a)?;
    let m = model(data, a)?;
    Ok(m.objective(&m.predict(dist.probs())))
}

/// Asymptotic variances `sigma_n^2 = (K F_n)^-1` at `dist`.
pub fn fisher_variances(
    dist: &PhotonDistribution,
    data: &OffFrequencyData,
    a: &DMatrix<f64>,
) -> Result<Vec<Option<f64>>> {
    check_shapes(dist, data, a)?;
    let m = model(data, a)?;
    Ok(m.fisher_variances(dist.probs(), data.len()))
}

/// Iterates [`em_step`] from the configured starting point until the error
/// parameter drops below the threshold, the residual stalls, or the
/// iteration budget runs out.
pub fn em_reconstruct(
    data: &OffFrequencyData,
    config: &EmConfig,
    reference: Option<&PhotonDistribution>,
) -> Result<ReconstructionReport<PhotonDistribution>> {
    if data.is_empty() {
        return Err(Error::domain(
            "no off-frequency records to reconstruct from",
        ));
    }
    let n = config.truncation;
    let etas = data.etas();
    let a = design_matrix_for(&etas, n);
    let m = model(data, &a)?;
    let reference = reference.map(|r| r.resized(n)).transpose()?;
    let run = m.run(config, reference.as_ref().map(|r| r.probs()))?;
    let dist = PhotonDistribution::from_normalized_unchecked(run.estimate.clone());
    let fisher = m.fisher_variances(dist.probs(), data.len());
    let ll = log_likelihood(&dist, data)?;
    let underdetermined = distinct_count(&etas) < n + 1;
    Ok(ReconstructionReport::assemble(
        dist,
        run,
        underdetermined,
        ll,
        fisher,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{design_matrix_for, EfficiencyGrid, OffRecord};

    fn exact(dist: &PhotonDistribution, etas: &[f64]) -> OffFrequencyData {
        OffFrequencyData::exact(dist, etas).unwrap()
    }

    #[test]
    fn fixed_point_is_preserved() {
        let truth = PhotonDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let etas = EfficiencyGrid::linear(0.9, 6).unwrap().etas().to_vec();
        let data = exact(&truth, &etas);
        let a = design_matrix_for(&etas, 2);
        let next = em_step(&truth, &data, &a).unwrap();
        for (x, y) in next.probs().iter().zip(truth.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(error_parameter(&truth, &data, &a).unwrap() < 1e-14);
    }

    #[test]
    fn vacuum_data_drifts_to_vacuum() {
        // boundary optimum: EM approaches it sublinearly
        let etas = EfficiencyGrid::linear(0.8, 8).unwrap().etas().to_vec();
        let data = exact(&PhotonDistribution::vacuum(4), &etas);
        let config = EmConfig {
            max_iterations: 20_000,
            ..EmConfig::with_truncation(4)
        };
        let report = em_reconstruct(&data, &config, None).unwrap();
        assert!(report.distribution.probs()[0] > 0.999);
        let lls = &report.loglik_trace;
        assert!(lls.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn error_parameter_uniform_against_vacuum_data() {
        // f = 1; p(eta) = (1/3)(1 + (1-eta) + (1-eta)^2)
        let etas = [0.25, 0.5];
        let data = exact(&PhotonDistribution::vacuum(2), &etas);
        let a = design_matrix_for(&etas, 2);
        let eps = error_parameter(&PhotonDistribution::uniform(2), &data, &a).unwrap();
        let gap = |x: f64| 1.0 - (1.0 + x + x * x) / 3.0;
        assert!((eps - 0.5 * (gap(0.75) + gap(0.5))).abs() < 1e-15);
    }

    #[test]
    fn fidelity_bounds() {
        let p = PhotonDistribution::new(vec![0.3, 0.7]).unwrap();
        assert!((fidelity(&p, &p) - 1.0).abs() < 1e-15);
        let d0 = PhotonDistribution::fock(0, 1).unwrap();
        let d1 = PhotonDistribution::fock(1, 1).unwrap();
        assert_eq!(fidelity(&d0, &d1), 0.0);
    }

    #[test]
    fn zero_probability_with_observed_offs_is_degenerate() {
        // eta = 1 and a state with no vacuum: p = 0, but offs were observed.
        let data = OffFrequencyData::new(vec![
            OffRecord {
                eta: 1.0,
                runs: 10,
                off_counts: 4,
            },
            OffRecord {
                eta: 0.5,
                runs: 10,
                off_counts: 5,
            },
        ])
        .unwrap();
        let a = design_matrix_for(&data.etas(), 1);
        let one = PhotonDistribution::fock(1, 1).unwrap();
        match em_step(&one, &data, &a) {
            Err(Error::DegenerateModel { eta, .. }) => assert_eq!(eta, 1.0),
            other => panic!("expected degenerate model, got {other:?}"),
        }
        assert_eq!(log_likelihood(&one, &data).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn single_record_is_underdetermined() {
        let data = OffFrequencyData::new(vec![OffRecord {
            eta: 0.5,
            runs: 1000,
            off_counts: 400,
        }])
        .unwrap();
        let report = em_reconstruct(&data, &EmConfig::with_truncation(3), None).unwrap();
        assert!(report.underdetermined);
        assert!(report.fisher_variances.iter().all(Option::is_none));
    }

    #[test]
    fn empty_data_is_rejected() {
        let data = OffFrequencyData::new(vec![]).unwrap();
        assert!(matches!(
            em_reconstruct(&data, &EmConfig::default(), None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn budget_exhaustion_is_flagged_not_raised() {
        let etas = EfficiencyGrid::linear(0.6, 10).unwrap().etas().to_vec();
        let truth = PhotonDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let data = exact(&truth, &etas);
        let config = EmConfig {
            truncation: 3,
            max_iterations: 5,
            ..EmConfig::default()
        };
        let report = em_reconstruct(&data, &config, Some(&truth)).unwrap();
        assert!(!report.converged);
        assert_eq!(report.stop_reason, StopReason::MaxIterations);
        assert_eq!(report.iterations_used, 5);
        assert_eq!(report.epsilon_trace.len(), 5);
        assert_eq!(report.fidelity_trace.as_ref().unwrap().len(), 5);
    }

    #[test]
    fn trace_stride_keeps_last_iteration() {
        let etas = EfficiencyGrid::linear(0.6, 10).unwrap().etas().to_vec();
        let truth = PhotonDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let data = exact(&truth, &etas);
        let config = EmConfig {
            truncation: 3,
            max_iterations: 25,
            record_diagnostics_every: 10,
            ..EmConfig::default()
        };
        let report = em_reconstruct(&data, &config, None).unwrap();
        assert_eq!(report.trace_iterations, vec![10, 20, 25]);
    }
}
