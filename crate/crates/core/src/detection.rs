//! On/off detection at quantum efficiency `eta`.
//!
//! The off outcome of a detector with efficiency `eta` is the POVM element
//! `sum_n (1-eta)^n |n><n|`, so every off probability is linear in the
//! photon-number distribution with coefficients `A_n(eta) = (1-eta)^n`.
//! This module evaluates those probabilities for one and two modes, builds
//! the design matrix over an efficiency grid, and samples synthetic click
//! counts with a seeded ChaCha8 generator.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{bernoulli_weight, powi0};
use crate::states::{JointPhotonDistribution, PhotonDistribution};

/// Run count used to encode noise-free probabilities as integer counts. The
/// rounding error on a frequency is below `2^-51`.
pub const NOISE_FREE_RUNS: u64 = 1 << 50;

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::domain(format!(
            "quantum efficiency must lie in (0, 1], got {eta}"
        )));
    }
    Ok(())
}

/// Coefficient `A_n(eta) = (1 - eta)^n` of the off POVM element.
pub fn off_coefficient(eta: f64, n: usize) -> f64 {
    powi0(1.0 - eta, n)
}

/// Set of distinct efficiencies `eta_1..eta_K` in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EfficiencyGrid {
    etas: Vec<f64>,
}

impl TryFrom<Vec<f64>> for EfficiencyGrid {
    type Error = Error;
    fn try_from(etas: Vec<f64>) -> Result<Self> {
        EfficiencyGrid::new(etas)
    }
}

impl From<EfficiencyGrid> for Vec<f64> {
    fn from(g: EfficiencyGrid) -> Self {
        g.etas
    }
}

impl EfficiencyGrid {
    pub fn new(etas: Vec<f64>) -> Result<Self> {
        if etas.len() < 2 {
            return Err(Error::domain(format!(
                "efficiency grid needs at least two settings, got {}",
                etas.len()
            )));
        }
        for &eta in &etas {
            check_eta(eta)?;
        }
        let mut sorted = etas.clone();
        sorted.sort_by(f64::total_cmp);
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::domain(format!("efficiency {} appears twice", w[0])));
        }
        Ok(EfficiencyGrid { etas })
    }

    /// `eta_mu = eta_max * mu / K` for `mu = 1..=K`.
    pub fn linear(eta_max: f64, count: usize) -> Result<Self> {
        check_eta(eta_max)?;
        Self::new(
            (1..=count)
                .map(|mu| eta_max * mu as f64 / count as f64)
                .collect(),
        )
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }
}

/// One efficiency setting: `runs` trials of which `off_counts` gave no click.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffRecord {
    pub eta: f64,
    pub runs: u64,
    pub off_counts: u64,
}

impl OffRecord {
    pub fn frequency(&self) -> f64 {
        self.off_counts as f64 / self.runs as f64
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(format!("eta = {} outside (0, 1]", self.eta));
        }
        if self.runs == 0 {
            return Err("runs must be positive".into());
        }
        if self.off_counts > self.runs {
            return Err(format!(
                "off_counts {} exceeds runs {}",
                self.off_counts, self.runs
            ));
        }
        Ok(())
    }
}

/// Off-event counts over a sweep of efficiencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<OffRecord>", into = "Vec<OffRecord>")]
pub struct OffFrequencyData {
    records: Vec<OffRecord>,
}

impl TryFrom<Vec<OffRecord>> for OffFrequencyData {
    type Error = Error;
    fn try_from(records: Vec<OffRecord>) -> Result<Self> {
        OffFrequencyData::new(records)
    }
}

impl From<OffFrequencyData> for Vec<OffRecord> {
    fn from(d: OffFrequencyData) -> Self {
        d.records
    }
}

impl OffFrequencyData {
    pub fn new(records: Vec<OffRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.validate()
                .map_err(|message| Error::Validation { record: i, message })?;
        }
        Ok(OffFrequencyData { records })
    }

    /// Encodes off probabilities as counts over `runs` trials (rounded).
    pub fn from_probabilities(etas: &[f64], probs: &[f64], runs: u64) -> Result<Self> {
        if etas.len() != probs.len() {
            return Err(Error::domain("one probability per efficiency is required"));
        }
        let records = etas
            .iter()
            .zip(probs)
            .map(|(&eta, &p)| OffRecord {
                eta,
                runs,
                off_counts: (p.clamp(0.0, 1.0) * runs as f64).round() as u64,
            })
            .collect();
        Self::new(records)
    }

    /// Noise-free data for `dist` measured on `etas`.
    pub fn exact(dist: &PhotonDistribution, etas: &[f64]) -> Result<Self> {
        let probs = etas
            .iter()
            .map(|&eta| off_probability(dist, eta))
            .collect::<Result<Vec<_>>>()?;
        Self::from_probabilities(etas, &probs, NOISE_FREE_RUNS)
    }

    pub fn records(&self) -> &[OffRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn etas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eta).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.records.iter().map(OffRecord::frequency).collect()
    }
}

/// One efficiency setting of a two-detector experiment. `n01` counts events
/// where the first detector is off and the second clicks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BipartiteRecord {
    pub eta: f64,
    pub runs: u64,
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
}

impl BipartiteRecord {
    pub fn n11(&self) -> u64 {
        self.runs - self.n00 - self.n01 - self.n10
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(format!("eta = {} outside (0, 1]", self.eta));
        }
        if self.runs == 0 {
            return Err("runs must be positive".into());
        }
        let total = self
            .n00
            .checked_add(self.n01)
            .and_then(|s| s.checked_add(self.n10));
        match total {
            Some(t) if t <= self.runs => Ok(()),
            _ => Err(format!(
                "n00 + n01 + n10 = {} + {} + {} exceeds runs {}",
                self.n00, self.n01, self.n10, self.runs
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BipartiteRecord>", into = "Vec<BipartiteRecord>")]
pub struct BipartiteClickData {
    records: Vec<BipartiteRecord>,
}

impl TryFrom<Vec<BipartiteRecord>> for BipartiteClickData {
    type Error = Error;
    fn try_from(records: Vec<BipartiteRecord>) -> Result<Self> {
        BipartiteClickData::new(records)
    }
}

impl From<BipartiteClickData> for Vec<BipartiteRecord> {
    fn from(d: BipartiteClickData) -> Self {
        d.records
    }
}

impl BipartiteClickData {
    pub fn new(records: Vec<BipartiteRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.validate()
                .map_err(|message| Error::Validation { record: i, message })?;
        }
        Ok(BipartiteClickData { records })
    }

    /// Encodes outcome probabilities as rounded counts over `runs` trials.
    pub fn from_probabilities(
        etas: &[f64],
        probs: &[BipartiteProbabilities],
        runs: u64,
    ) -> Result<Self> {
        if etas.len() != probs.len() {
            return Err(Error::domain(
                "one probability triple per efficiency is required",
            ));
        }
        let count = |p: f64| (p.clamp(0.0, 1.0) * runs as f64).round() as u64;
        let records = etas
            .iter()
            .zip(probs)
            .map(|(&eta, p)| {
                let n00 = count(p.p00);
                let n01 = count(p.p01).min(runs - n00);
                let n10 = count(p.p10).min(runs - n00 - n01);
                BipartiteRecord {
                    eta,
                    runs,
                    n00,
                    n01,
                    n10,
                }
            })
            .collect();
        Self::new(records)
    }

    pub fn records(&self) -> &[BipartiteRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn etas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eta).collect()
    }

    /// Stacked frequencies `(f00 block, f01 block, f10 block)`, length `3K`.
    pub fn stacked_frequencies(&self) -> Vec<f64> {
        let f = |pick: fn(&BipartiteRecord) -> u64| {
            self.records
                .iter()
                .map(move |r| pick(r) as f64 / r.runs as f64)
        };
        f(|r| r.n00)
            .chain(f(|r| r.n01))
            .chain(f(|r| r.n10))
            .collect()
    }
}

/// `p0(eta) = sum_n (1 - eta)^n rho_n`
pub fn off_probability(dist: &PhotonDistribution, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(off_probability_unchecked(dist.probs(), eta))
}

pub(crate) fn off_probability_unchecked(probs: &[f64], eta: f64) -> f64 {
    // Horner in (1 - eta)
    let x = 1.0 - eta;
    probs
        .iter()
        .rev()
        .fold(0.0, |acc, p| acc * x + p)
        .clamp(0.0, 1.0)
}

/// `K x (N+1)` matrix with entries `(1 - eta_mu)^n`.
pub fn design_matrix(grid: &EfficiencyGrid, truncation: usize) -> DMatrix<f64> {
    design_matrix_for(grid.etas(), truncation)
}

/// [`design_matrix`] for an arbitrary (possibly repeated) list of efficiencies.
pub fn design_matrix_for(etas: &[f64], truncation: usize) -> DMatrix<f64> {
    DMatrix::from_fn(etas.len(), truncation + 1, |mu, n| {
        off_coefficient(etas[mu], n)
    })
}

/// Outcome probabilities of two on/off detectors; `p01` is "first off,
/// second on".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BipartiteProbabilities {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

pub fn bipartite_off_probabilities(
    joint: &JointPhotonDistribution,
    eta: f64,
) -> Result<BipartiteProbabilities> {
    check_eta(eta)?;
    let dim = joint.truncation() + 1;
    let a: Vec<f64> = (0..dim).map(|n| off_coefficient(eta, n)).collect();
    let (mut p00, mut p01, mut p10) = (0.0, 0.0, 0.0);
    for n in 0..dim {
        for k in 0..dim {
            let q = joint.get(n, k);
            p00 += a[n] * a[k] * q;
            p01 += a[n] * (1.0 - a[k]) * q;
            p10 += (1.0 - a[n]) * a[k] * q;
        }
    }
    Ok(BipartiteProbabilities {
        p00,
        p01,
        p10,
        p11: 1.0 - p00 - p01 - p10,
    })
}

/// Closed-form on/off statistics of `M`-mode multithermal light with mean
/// `n_ave` split by a beam splitter of transmittance `tau` (the first mode
/// receives the fraction `tau`).
pub fn multithermal_onoff_stats(
    n_ave: f64,
    modes: usize,
    transmittance: f64,
    eta: f64,
) -> Result<BipartiteProbabilities> {
    if !n_ave.is_finite() || n_ave <= 0.0 {
        return Err(Error::domain(format!(
            "multithermal mean photon number must be positive, got {n_ave}"
        )));
    }
    if modes == 0 {
        return Err(Error::domain("multithermal state needs at least one mode"));
    }
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(Error::domain(format!(
            "transmittance must lie in [0, 1], got {transmittance}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!(
            "efficiency must lie in [0, 1], got {eta}"
        )));
    }
    let m = modes as f64;
    let off = |mean: f64| (m / (m + eta * mean)).powf(m);
    let p00 = off(n_ave);
    let p01 = off(transmittance * n_ave) - p00;
    let p10 = off((1.0 - transmittance) * n_ave) - p00;
    Ok(BipartiteProbabilities {
        p00,
        p01,
        p10,
        p11: 1.0 - p00 - p01 - p10,
    })
}

/// Photon statistics seen through a lossy channel of transmission `eta`:
/// `P_k = sum_{n >= k} C(n,k) eta^k (1-eta)^(n-k) p_n`.
pub fn bernoulli_smear(dist: &PhotonDistribution, eta: f64) -> Result<PhotonDistribution> {
    check_eta(eta)?;
    // the channel preserves total mass inside the truncation
    Ok(PhotonDistribution::from_normalized_unchecked(
        bernoulli_smear_raw(dist.probs(), eta),
    ))
}

pub(crate) fn bernoulli_smear_raw(probs: &[f64], eta: f64) -> Vec<f64> {
    (0..probs.len())
        .map(|k| {
            probs
                .iter()
                .enumerate()
                .skip(k)
                .map(|(n, p)| bernoulli_weight(k, n, eta) * p)
                .sum()
        })
        .collect()
}

fn check_probability(p: f64, what: &str) -> Result<f64> {
    if !p.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(Error::domain(format!("{what} = {p} is not a probability")));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Seeded click sampler backed by ChaCha8. A sampler is not shared between
/// threads; independent seeds give independent streams.
#[derive(Debug, Clone)]
pub struct ClickSampler {
    rng: ChaCha8Rng,
}

impl ClickSampler {
    pub fn new(seed: u64) -> Self {
        ClickSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn binomial(&mut self, runs: u64, p: f64) -> u64 {
        if p <= 0.0 || runs == 0 {
            0
        } else if p >= 1.0 {
            runs
        } else {
            Binomial::new(runs, p)
                .expect("probability checked")
                .sample(&mut self.rng)
        }
    }

    /// Binomial number of off events in `runs` trials.
    pub fn off_counts(&mut self, p_off: f64, runs: u64) -> Result<u64> {
        let p = check_probability(p_off, "off probability")?;
        if runs == 0 {
            return Err(Error::domain("total_runs must be positive"));
        }
        Ok(self.binomial(runs, p))
    }

    /// Multinomial `(n00, n01, n10)` over the four two-detector outcomes.
    pub fn bipartite_counts(
        &mut self,
        p00: f64,
        p01: f64,
        p10: f64,
        runs: u64,
    ) -> Result<(u64, u64, u64)> {
        let p00 = check_probability(p00, "p00")?;
        let p01 = check_probability(p01, "p01")?;
        let p10 = check_probability(p10, "p10")?;
        if p00 + p01 + p10 > 1.0 + 1e-12 {
            return Err(Error::domain(format!(
                "p00 + p01 + p10 = {} exceeds 1",
                p00 + p01 + p10
            )));
        }
        if runs == 0 {
            return Err(Error::domain("total_runs must be positive"));
        }
        let conditional = |p: f64, used: f64| {
            let rest = 1.0 - used;
            if rest <= 0.0 {
                0.0
            } else {
                (p / rest).clamp(0.0, 1.0)
            }
        };
        let n00 = self.binomial(runs, p00);
        let n01 = self.binomial(runs - n00, conditional(p01, p00));
        let n10 = self.binomial(runs - n00 - n01, conditional(p10, p00 + p01));
        Ok((n00, n01, n10))
    }

    /// Simulates `runs` trials of `dist` at every efficiency of `etas`.
    pub fn off_data(
        &mut self,
        dist: &PhotonDistribution,
        etas: &[f64],
        runs: u64,
    ) -> Result<OffFrequencyData> {
        let records = etas
            .iter()
            .map(|&eta| {
                let p = off_probability(dist, eta)?;
                Ok(OffRecord {
                    eta,
                    runs,
                    off_counts: self.off_counts(p, runs)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        OffFrequencyData::new(records)
    }

    /// Samples click counts from per-efficiency outcome probabilities.
    pub fn bipartite_data(
        &mut self,
        etas: &[f64],
        probs: &[BipartiteProbabilities],
        runs: u64,
    ) -> Result<BipartiteClickData> {
        if etas.len() != probs.len() {
            return Err(Error::domain(
                "one probability triple per efficiency is required",
            ));
        }
        let records = etas
            .iter()
            .zip(probs)
            .map(|(&eta, p)| {
                let (n00, n01, n10) = self.bipartite_counts(p.p00, p.p01, p.p10, runs)?;
                Ok(BipartiteRecord {
                    eta,
                    runs,
                    n00,
                    n01,
                    n10,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        BipartiteClickData::new(records)
    }
}

/// One-shot binomial sample with its own seeded generator.
pub fn simulate_clicks(p_off: f64, total_runs: u64, seed: u64) -> Result<u64> {
    ClickSampler::new(seed).off_counts(p_off, total_runs)
}

/// One-shot multinomial sample of `(n00, n01, n10)`.
pub fn simulate_bipartite_clicks(
    p00: f64,
    p01: f64,
    p10: f64,
    total_runs: u64,
    seed: u64,
) -> Result<(u64, u64, u64)> {
    ClickSampler::new(seed).bipartite_counts(p00, p01, p10, total_runs)
}
