//! Full density-matrix reconstruction from phase-modulated displaced on/off
//! data.
//!
//! The signal is mixed with a local oscillator of amplitude
//! `alpha = |alpha| e^{i phi}`, which displaces it. For each phase the
//! displaced photon distribution `p_n(alpha)` is reconstructed (normally by
//! EM from on/off data), its discrete Fourier components in `phi` pick out
//! one diagonal band `<m+s|rho|m>` each, and a least-squares inversion of the
//! linear map `G^(s)` recovers that band.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{check_eta, ClickSampler, OffFrequencyData, OffRecord};
use crate::em::{em_reconstruct, EmConfig};
use crate::error::{Error, Result};
use crate::special::{bernoulli_weight, ln_factorial};
use crate::states::{DensityMatrix, PhotonDistribution, Truncated};
use crate::StopReason;

/// Largest accepted condition number of a `G^(s)` matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance on the spacing of the phase grid.
const PHASE_SPACING_TOL: f64 = 1e-9;

/// Neglected weight in the efficiency-corrected `G` series.
const EFFICIENCY_TAIL_TOL: f64 = 1e-12;

/// Extra rows summed beyond `N` before the tail check in [`g_matrix_eta`].
const EFFICIENCY_MIN_EXTRA_ROWS: usize = 20;
const EFFICIENCY_MAX_EXTRA_ROWS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSetting {
    magnitude: f64,
    phases: Vec<f64>,
}

impl DisplacementSetting {
    /// Validates `|alpha| >= 0` and a uniform phase grid
    /// `phi_j = phi_0 + 2 pi j / N_phi` inside `[0, 2 pi)`.
    pub fn new(magnitude: f64, phases: Vec<f64>) -> Result<Self> {
        if !magnitude.is_finite() || magnitude < 0.0 {
            return Err(Error::domain(format!(
                "displacement magnitude must be finite and >= 0, got {magnitude}"
            )));
        }
        if phases.is_empty() {
            return Err(Error::domain("at least one phase is required"));
        }
        check_uniform_phases(&phases)?;
        Ok(DisplacementSetting { magnitude, phases })
    }

    /// `N_phi` phases `2 pi j / N_phi`.
    pub fn uniform(magnitude: f64, count: usize) -> Result<Self> {
        let phases = (0..count)
            .map(|j| 2.0 * PI * j as f64 / count as f64)
            .collect();
        DisplacementSetting::new(magnitude, phases)
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Largest sideband resolvable on this grid, `(N_phi - 1) / 2`.
    pub fn max_resolvable_sideband(&self) -> usize {
        (self.phases.len() - 1) / 2
    }

    pub fn alpha(&self, j: usize) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.phases[j])
    }
}

fn check_uniform_phases(phases: &[f64]) -> Result<()> {
    let count = phases.len() as f64;
    let step = 2.0 * PI / count;
    for (j, &phi) in phases.iter().enumerate() {
        if !phi.is_finite() || !(0.0..2.0 * PI).contains(&phi) {
            return Err(Error::domain(format!("phase {phi} outside [0, 2 pi)")));
        }
        let expected = (phases[0] + step * j as f64).rem_euclid(2.0 * PI);
        let mut diff = (phi - expected).abs();
        diff = diff.min(2.0 * PI - diff);
        if diff > PHASE_SPACING_TOL {
            return Err(Error::domain(format!(
                "phases must be equally spaced by 2 pi / {}: phase {j} is {phi}, expected {expected}",
                phases.len()
            )));
        }
    }
    Ok(())
}

/// Signed logarithmic accumulator: terms arrive as `(sign, ln|term|)` and
/// are summed relative to the largest magnitude, with compensation.
struct LogSum {
    terms: Vec<(f64, f64)>,
}

impl LogSum {
    fn new() -> Self {
        LogSum { terms: Vec::new() }
    }

    fn push(&mut self, sign: f64, ln_abs: f64) {
        if ln_abs.is_finite() {
            self.terms.push((sign, ln_abs));
        }
    }

    fn value(&self) -> f64 {
        let Some(top) = self.terms.iter().map(|t| t.1).reduce(f64::max) else {
            return 0.0;
        };
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for &(sign, ln_abs) in &self.terms {
            let x = sign * (ln_abs - top).exp();
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
        }
        (sum + comp) * top.exp()
    }
}

/// `ln |alpha|^p` with `0^0 = 1`; `None` when the power vanishes.
fn ln_power(ln_magnitude: f64, p: usize) -> Option<f64> {
    if p == 0 {
        Some(0.0)
    } else if ln_magnitude == f64::NEG_INFINITY {
        None
    } else {
        Some(p as f64 * ln_magnitude)
    }
}

/// `c_nk = sum_j (-1)^j |alpha|^(n+k-2j) sqrt(n! k!) / (j! (n-j)! (k-j)!)`,
/// so that `<k|D(alpha)|n> = e^{-|alpha|^2/2} c_nk e^{i(k-n) phi}`.
fn displaced_amplitudes(magnitude: f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let ln_a = magnitude.ln();
    DMatrix::from_fn(rows, cols, |n, k| {
        let mut acc = LogSum::new();
        let prefactor = 0.5 * (ln_factorial(n) + ln_factorial(k));
        for j in 0..=n.min(k) {
            if let Some(lp) = ln_power(ln_a, n + k - 2 * j) {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc.push(
                    sign,
                    prefactor + lp - ln_factorial(j) - ln_factorial(n - j) - ln_factorial(k - j),
                );
            }
        }
        acc.value()
    })
}

/// Unnormalized displaced photon probabilities
/// `p_n(alpha) = <n, alpha| rho |n, alpha>` for `n = 0..=N`,
/// `|n, alpha> = D(alpha)|n>`, `D(alpha) = exp(alpha a^dag - alpha^* a)`.
/// The values sum to one minus the weight above `N`.
pub fn displaced_fock_weights(
    rho: &DensityMatrix,
    alpha: Complex64,
    truncation: usize,
) -> Result<Vec<f64>> {
    let n0 = rho.truncation();
    if truncation < n0 {
        return Err(Error::domain(format!(
            "evaluation truncation {truncation} is below the state truncation {n0}"
        )));
    }
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::domain("displacement amplitude must be finite"));
    }
    let magnitude = alpha.norm();
    let phi = alpha.arg();
    let c = displaced_amplitudes(magnitude, truncation + 1, n0 + 1);
    let damping = (-magnitude * magnitude).exp();
    let phases: Vec<Complex64> = (0..=n0)
        .map(|m| Complex64::from_polar(1.0, m as f64 * phi))
        .collect();
    let elements = rho.matrix();
    Ok((0..=truncation)
        .map(|n| {
            let v: Vec<Complex64> = (0..=n0).map(|m| phases[m] * c[(n, m)]).collect();
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..=n0 {
                let mut row = Complex64::new(0.0, 0.0);
                for m in 0..=n0 {
                    row += elements[(k, m)] * v[m];
                }
                acc += v[k].conj() * row;
            }
            damping * acc.re
        })
        .collect())
}

/// [`displaced_fock_weights`] renormalized on `0..=N`, with the weight
/// beyond `N` reported as the tail.
pub fn displaced_fock_probabilities(
    rho: &DensityMatrix,
    alpha: Complex64,
    truncation: usize,
) -> Result<Truncated<PhotonDistribution>> {
    let mut weights = displaced_fock_weights(rho, alpha, truncation)?;
    let head: f64 = weights.iter().sum();
    // cancellation can leave tiny negatives on vanishing entries
    weights.iter_mut().for_each(|w| *w = w.max(0.0));
    Ok(Truncated {
        state: PhotonDistribution::from_weights(weights)?,
        tail_mass: (1.0 - head).max(0.0),
    })
}

/// `p_n^(s) = N_phi^-1 sum_j p_n(phi_j) e^{i s phi_j}`, one row of
/// `p_by_phase` per phase.
pub fn fourier_components(
    p_by_phase: &DMatrix<f64>,
    phases: &[f64],
    s: i64,
) -> Result<Vec<Complex64>> {
    let count = phases.len();
    if p_by_phase.nrows() != count {
        return Err(Error::domain(format!(
            "{} probability rows for {count} phases",
            p_by_phase.nrows()
        )));
    }
    if count == 0 {
        return Err(Error::domain("no phases"));
    }
    check_uniform_phases(phases)?;
    let limit = (count as i64 - 1) / 2;
    if s.abs() > limit {
        return Err(Error::domain(format!(
            "sideband {s} not resolvable with {count} phases (|s| <= {limit})"
        )));
    }
    let weights: Vec<Complex64> = phases
        .iter()
        .map(|&phi| Complex64::from_polar(1.0 / count as f64, s as f64 * phi))
        .collect();
    Ok((0..p_by_phase.ncols())
        .map(|n| {
            weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * p_by_phase[(j, n)])
                .sum()
        })
        .collect())
}

/// `G^(s)` of shape `(N+1) x (n0+1-s)`:
///
/// ```text
/// G_nm = e^{-|a|^2} n! sqrt(m! (m+s)!)
///        sum_{j<=min(n,m+s)} sum_{l<=min(n,m)} (-1)^(j+l) |a|^(2(m+n-j-l)+s)
///        / (j! (n-j)! (m+s-j)! l! (n-l)! (m-l)!)
/// ```
pub fn g_matrix(s: usize, magnitude: f64, truncation: usize, n0: usize) -> Result<DMatrix<f64>> {
    check_g_args(s, magnitude, truncation, n0)?;
    let ln_a = magnitude.ln();
    let cols = n0 + 1 - s;
    Ok(DMatrix::from_fn(truncation + 1, cols, |n, m| {
        let mut acc = LogSum::new();
        let prefactor = -magnitude * magnitude
            + ln_factorial(n)
            + 0.5 * (ln_factorial(m) + ln_factorial(m + s));
        for j in 0..=n.min(m + s) {
            let lj = ln_factorial(j) + ln_factorial(n - j) + ln_factorial(m + s - j);
            for l in 0..=n.min(m) {
                let Some(lp) = ln_power(ln_a, 2 * (m + n - j - l) + s) else {
                    continue;
                };
                let ll = ln_factorial(l) + ln_factorial(n - l) + ln_factorial(m - l);
                let sign = if (j + l) % 2 == 0 { 1.0 } else { -1.0 };
                acc.push(sign, prefactor + lp - lj - ll);
            }
        }
        acc.value()
    }))
}

fn check_g_args(s: usize, magnitude: f64, truncation: usize, n0: usize) -> Result<()> {
    if !magnitude.is_finite() || magnitude < 0.0 {
        return Err(Error::domain(format!(
            "displacement magnitude must be finite and >= 0, got {magnitude}"
        )));
    }
    if s > n0 {
        return Err(Error::domain(format!(
            "sideband {s} exceeds the state truncation {n0}"
        )));
    }
    if truncation < n0 {
        return Err(Error::domain(format!(
            "evaluation truncation {truncation} is below the state truncation {n0}"
        )));
    }
    Ok(())
}

/// Efficiency-corrected `G^(s)(|alpha|, eta)_nm = sum_k M_nk(eta) G^(s)_km`
/// with the Bernoulli kernel `M_nk = C(k,n) eta^n (1-eta)^(k-n)`. The series
/// over `k` runs at least 20 rows past `N` and until the last row adds less
/// than `1e-12` to every entry.
pub fn g_matrix_eta(
    s: usize,
    magnitude: f64,
    eta: f64,
    truncation: usize,
    n0: usize,
) -> Result<DMatrix<f64>> {
    check_eta(eta)?;
    check_g_args(s, magnitude, truncation, n0)?;
    let rows = truncation + 1;
    let cols = n0 + 1 - s;
    let mut extra = EFFICIENCY_MIN_EXTRA_ROWS;
    loop {
        let last_k = truncation + extra;
        let g = g_matrix(s, magnitude, last_k, n0)?;
        let row_contribution = |k: usize| {
            (0..rows)
                .flat_map(|n| (0..cols).map(move |m| (n, m)))
                .map(|(n, m)| (bernoulli_weight(n, k, eta) * g[(k, m)]).abs())
                .fold(0.0, f64::max)
        };
        if row_contribution(last_k) < EFFICIENCY_TAIL_TOL
            && row_contribution(last_k - 1) < EFFICIENCY_TAIL_TOL
        {
            return Ok(DMatrix::from_fn(rows, cols, |n, m| {
                (n..=last_k)
                    .map(|k| bernoulli_weight(n, k, eta) * g[(k, m)])
                    .sum()
            }));
        }
        if extra >= EFFICIENCY_MAX_EXTRA_ROWS {
            return Err(Error::domain(format!(
                "efficiency-corrected G did not converge within {extra} extra rows"
            )));
        }
        extra *= 2;
    }
}

/// Moore-Penrose inverse `F = (G^T G)^-1 G^T` of a tall full-rank matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    /// Ratio of extreme singular values of `G`.
    pub condition: f64,
}

/// SVD-based pseudo-inverse; fails with [`Error::IllConditioned`] for rank
/// deficient input or a condition number above [`MAX_CONDITION`].
pub fn pseudo_inverse(g: &DMatrix<f64>) -> Result<PseudoInverse> {
    let (rows, cols) = g.shape();
    if cols == 0 || rows < cols {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let svd = g.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let max = sigma.max();
    let min = sigma.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut f = v_t.transpose();
    for (c, s) in sigma.iter().enumerate() {
        f.column_mut(c).scale_mut(1.0 / s);
    }
    Ok(PseudoInverse {
        matrix: f * u.transpose(),
        condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullRhoConfig {
    /// Fock truncation `n0` of the reconstructed matrix.
    pub hilbert_truncation: usize,
    /// Highest band `s` reconstructed; farther bands are left at zero.
    pub max_sideband: usize,
    /// When set, the supplied distributions are the detected-count
    /// statistics at this efficiency and `G(|alpha|, eta)` is inverted.
    pub detector_efficiency: Option<f64>,
}

impl Default for FullRhoConfig {
    fn default() -> Self {
        FullRhoConfig {
            hilbert_truncation: 12,
            max_sideband: 2,
            detector_efficiency: None,
        }
    }
}

/// Click data for one local-oscillator phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBlock {
    pub phase: f64,
    pub data: OffFrequencyData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: f64,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub converged: bool,
    pub final_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRhoReport {
    pub density_matrix: DensityMatrix,
    /// Trace of the assembled matrix before renormalization.
    pub trace_before_normalization: f64,
    /// Largest `|R - R^dag|` entry before the final Hermitization.
    pub hermiticity_deviation: f64,
    /// Total weight removed by clipping negative diagonal entries.
    pub clipped_mass: f64,
    /// Condition number of `G^(s)`, indexed by `s`.
    pub condition_numbers: Vec<f64>,
    /// Empty for the analytic route.
    pub phase_reports: Vec<PhaseReport>,
    pub converged: bool,
}

/// Reconstruction from known displaced distributions, one row of
/// `p_by_phase` (`N_phi x (N+1)`) per phase. No EM step is involved.
pub fn reconstruct_from_distributions(
    p_by_phase: &DMatrix<f64>,
    setting: &DisplacementSetting,
    config: &FullRhoConfig,
) -> Result<FullRhoReport> {
    let n0 = config.hilbert_truncation;
    let truncation = p_by_phase
        .ncols()
        .checked_sub(1)
        .ok_or_else(|| Error::domain("displaced distributions have no photon-number entries"))?;
    if config.max_sideband > n0 {
        return Err(Error::domain(format!(
            "max_sideband {} exceeds the Hilbert truncation {n0}",
            config.max_sideband
        )));
    }
    if config.max_sideband > setting.max_resolvable_sideband() {
        return Err(Error::domain(format!(
            "max_sideband {} needs at least {} phases, got {}",
            config.max_sideband,
            2 * config.max_sideband + 1,
            setting.phases().len()
        )));
    }
    let dim = n0 + 1;
    let mut raw = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    let mut condition_numbers = Vec::with_capacity(config.max_sideband + 1);
    for s in 0..=config.max_sideband {
        let g = match config.detector_efficiency {
            Some(eta) => g_matrix_eta(s, setting.magnitude(), eta, truncation, n0)?,
            None => g_matrix(s, setting.magnitude(), truncation, n0)?,
        };
        let f = pseudo_inverse(&g)?;
        condition_numbers.push(f.condition);
        let p_s = fourier_components(p_by_phase, setting.phases(), s as i64)?;
        for m in 0..dim - s {
            let value: Complex64 = (0..=truncation).map(|n| p_s[n] * f.matrix[(m, n)]).sum();
            raw[(m + s, m)] = value;
            if s > 0 {
                raw[(m, m + s)] = value.conj();
            }
        }
    }
    Ok(finish(raw, condition_numbers, Vec::new()))
}

/// Hermitization, diagonal clipping and trace renormalization.
fn finish(
    raw: DMatrix<Complex64>,
    condition_numbers: Vec<f64>,
    phase_reports: Vec<PhaseReport>,
) -> FullRhoReport {
    let adjoint = raw.adjoint();
    let hermiticity_deviation = (&raw - &adjoint)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let mut m = (&raw + &adjoint).scale(0.5);
    let trace_before_normalization = m.diagonal().iter().map(|z| z.re).sum();
    let mut clipped_mass = 0.0;
    for i in 0..m.nrows() {
        let d = m[(i, i)].re;
        if d < 0.0 {
            clipped_mass -= d;
        }
        m[(i, i)] = Complex64::new(d.max(0.0), 0.0);
    }
    let trace: f64 = m.diagonal().iter().map(|z| z.re).sum();
    if trace > 0.0 {
        m.unscale_mut(trace);
    }
    let converged = phase_reports.iter().all(|p| p.converged);
    FullRhoReport {
        density_matrix: DensityMatrix::from_unchecked(m),
        trace_before_normalization,
        hermiticity_deviation,
        clipped_mass,
        condition_numbers,
        phase_reports,
        converged,
    }
}

/// Pipeline on measured click data: EM per phase (in parallel), Fourier
/// components, least-squares inversion per band, Hermitian assembly.
/// `em_config.truncation` sets the photon-number range `N` of the displaced
/// distributions. Phase blocks must match `setting.phases()` in order.
pub fn reconstruct_density_matrix(
    blocks: &[PhaseBlock],
    setting: &DisplacementSetting,
    em_config: &EmConfig,
    config: &FullRhoConfig,
) -> Result<FullRhoReport> {
    if blocks.len() != setting.phases().len() {
        return Err(Error::domain(format!(
            "{} phase blocks for {} phases",
            blocks.len(),
            setting.phases().len()
        )));
    }
    for (j, (b, phi)) in blocks.iter().zip(setting.phases()).enumerate() {
        if (b.phase - phi).abs() > PHASE_SPACING_TOL {
            return Err(Error::domain(format!(
                "phase block {j} has phase {} but the setting expects {phi}",
                b.phase
            )));
        }
    }
    let reports = blocks
        .par_iter()
        .map(|b| em_reconstruct(&b.data, em_config, None))
        .collect::<Result<Vec<_>>>()?;
    let n = em_config.truncation;
    let p_by_phase = DMatrix::from_fn(blocks.len(), n + 1, |j, k| {
        reports[j].distribution.probs()[k]
    });
    let phase_reports = blocks
        .iter()
        .zip(&reports)
        .map(|(b, r)| PhaseReport {
            phase: b.phase,
            iterations_used: r.iterations_used,
            stop_reason: r.stop_reason,
            converged: r.converged,
            final_epsilon: r.final_epsilon,
        })
        .collect();
    let mut report = reconstruct_from_distributions(&p_by_phase, setting, config)?;
    report.converged = reports.iter().all(|r| r.converged);
    report.phase_reports = phase_reports;
    Ok(report)
}

/// Noise-free phase scan: exact off frequencies of the displaced state at
/// every phase and efficiency. `truncation` bounds the displaced
/// distribution used to evaluate them.
pub fn exact_phase_scan(
    rho: &DensityMatrix,
    setting: &DisplacementSetting,
    etas: &[f64],
    truncation: usize,
) -> Result<Vec<PhaseBlock>> {
    (0..setting.phases().len())
        .map(|j| {
            let p = displaced_fock_probabilities(rho, setting.alpha(j), truncation)?.state;
            Ok(PhaseBlock {
                phase: setting.phases()[j],
                data: OffFrequencyData::exact(&p, etas)?,
            })
        })
        .collect()
}

/// Sampled phase scan with `runs` trials per phase and efficiency. Phases
/// are drawn in order from one seeded stream.
pub fn simulate_phase_scan(
    rho: &DensityMatrix,
    setting: &DisplacementSetting,
    etas: &[f64],
    runs: u64,
    seed: u64,
    truncation: usize,
) -> Result<Vec<PhaseBlock>> {
    let mut sampler = ClickSampler::new(seed);
    (0..setting.phases().len())
        .map(|j| {
            let p = displaced_fock_probabilities(rho, setting.alpha(j), truncation)?.state;
            Ok(PhaseBlock {
                phase: setting.phases()[j],
                data: sampler.off_data(&p, etas, runs)?,
            })
        })
        .collect()
}

/// Rebuilds per-phase blocks from flat `(phase, record)` rows, grouping
/// rows by phase in order of first appearance.
pub fn group_phase_records(rows: Vec<(f64, OffRecord)>) -> Result<Vec<PhaseBlock>> {
    let mut grouped: Vec<(f64, Vec<OffRecord>)> = Vec::new();
    for (phase, record) in rows {
        match grouped.iter_mut().find(|(p, _)| *p == phase) {
            Some((_, records)) => records.push(record),
            None => grouped.push((phase, vec![record])),
        }
    }
    grouped
        .into_iter()
        .map(|(phase, records)| {
            Ok(PhaseBlock {
                phase,
                data: OffFrequencyData::new(records)?,
            })
        })
        .collect()
}

/// `Delta_nm = |a_nm - b_nm|`.
pub fn absolute_difference(a: &DensityMatrix, b: &DensityMatrix) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::domain(format!(
            "matrices of dimension {} and {} cannot be compared",
            a.dim(),
            b.dim()
        )));
    }
    Ok((a.matrix() - b.matrix()).map(|z| z.norm()))
}
