//! Joint photon-number reconstruction for two modes, each watched by an
//! on/off detector of the same efficiency.
//!
//! The joint distribution is flattened with `p = 1 + k + n (1 + N)` and the
//! three independent outcome frequencies per efficiency are stacked into a
//! `3K` vector, which turns the problem into the same LINPOS form as the
//! single-mode case.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detection::{off_coefficient, BipartiteClickData, EfficiencyGrid};
use crate::em::{distinct_count, EmConfig, ReconstructionReport};
use crate::error::{Error, Result};
use crate::linpos::LinposModel;
use crate::states::JointPhotonDistribution;

/// One-based flat index `p = 1 + k + n (1 + N)` of the joint grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatIndexMap {
    truncation: usize,
}

impl FlatIndexMap {
    pub fn new(truncation: usize) -> Self {
        FlatIndexMap { truncation }
    }

    pub fn len(&self) -> usize {
        (self.truncation + 1) * (self.truncation + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forward(&self, n: usize, k: usize) -> Result<usize> {
        if n > self.truncation || k > self.truncation {
            return Err(Error::domain(format!(
                "({n}, {k}) outside the truncation {}",
                self.truncation
            )));
        }
        Ok(1 + k + n * (1 + self.truncation))
    }

    /// `k = (p-1) mod (1+N)`, `n = (p-1-k) / (1+N)`.
    pub fn inverse(&self, p: usize) -> Result<(usize, usize)> {
        if p == 0 || p > self.len() {
            return Err(Error::domain(format!(
                "flat index {p} outside 1..={}",
                self.len()
            )));
        }
        let dim = 1 + self.truncation;
        let k = (p - 1) % dim;
        let n = (p - 1 - k) / dim;
        Ok((n, k))
    }
}

/// `3K x (N+1)^2` matrix mapping the flattened joint distribution onto the
/// stacked `(p00, p01, p10)` probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BMatrix {
    entries: DMatrix<f64>,
    settings: usize,
    truncation: usize,
}

impl BMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Number of efficiency settings `K`.
    pub fn settings(&self) -> usize {
        self.settings
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `g = B q`
    pub fn apply(&self, joint: &JointPhotonDistribution) -> Result<Vec<f64>> {
        if joint.truncation() != self.truncation {
            return Err(Error::domain(format!(
                "joint truncation {} does not match B built for {}",
                joint.truncation(),
                self.truncation
            )));
        }
        let q = nalgebra::DVector::from_column_slice(joint.flat());
        Ok((&self.entries * q).iter().copied().collect())
    }
}

pub fn build_b_matrix(grid: &EfficiencyGrid, truncation: usize) -> BMatrix {
    build_b_matrix_for(grid.etas(), truncation)
}

/// [`build_b_matrix`] for an arbitrary list of efficiencies.
pub fn build_b_matrix_for(etas: &[f64], truncation: usize) -> BMatrix {
    let k_settings = etas.len();
    let dim = truncation + 1;
    let mut entries = DMatrix::zeros(3 * k_settings, dim * dim);
    for (mu, &eta) in etas.iter().enumerate() {
        let a: Vec<f64> = (0..dim).map(|n| off_coefficient(eta, n)).collect();
        for n in 0..dim {
            for k in 0..dim {
                let col = k + n * dim;
                entries[(mu, col)] = a[n] * a[k];
                entries[(k_settings + mu, col)] = a[n] * (1.0 - a[k]);
                entries[(2 * k_settings + mu, col)] = (1.0 - a[n]) * a[k];
            }
        }
    }
    BMatrix {
        entries,
        settings: k_settings,
        truncation,
    }
}

fn model(data: &BipartiteClickData, b: &BMatrix) -> Result<LinposModel> {
    if b.settings() != data.len() {
        return Err(Error::domain(format!(
            "B has {} settings, data has {}",
            b.settings(),
            data.len()
        )));
    }
    let etas = data.etas();
    let row_eta = etas.iter().chain(&etas).chain(&etas).copied().collect();
    LinposModel::new(b.entries(), data.stacked_frequencies(), row_eta)
}

/// Four-outcome multinomial log-likelihood of the click counts.
pub fn joint_log_likelihood(
    joint: &JointPhotonDistribution,
    data: &BipartiteClickData,
) -> Result<f64> {
    let mut acc = 0.0;
    for r in data.records() {
        let p = crate::detection::bipartite_off_probabilities(joint, r.eta)?;
        for (count, prob) in [
            (r.n00, p.p00),
            (r.n01, p.p01),
            (r.n10, p.p10),
            (r.n11(), p.p11),
        ] {
            if count == 0 {
                continue;
            }
            if prob <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc += count as f64 * prob.ln();
        }
    }
    Ok(acc)
}

/// `(3K)^-1 sum_mu |h_mu - g_mu|`
pub fn joint_error_parameter(
    joint: &JointPhotonDistribution,
    data: &BipartiteClickData,
    b: &BMatrix,
) -> Result<f64> {
    let m = model(data, b)?;
    Ok(m.epsilon(&b.apply(joint)?))
}

/// `sigma_p^2 = (K F_p)^-1`, indexed by the zero-based flat index `p - 1`.
pub fn fisher_variances_joint(
    joint: &JointPhotonDistribution,
    data: &BipartiteClickData,
    b: &BMatrix,
) -> Result<Vec<Option<f64>>> {
    if joint.truncation() != b.truncation() {
        return Err(Error::domain("joint distribution and B truncations differ"));
    }
    let m = model(data, b)?;
    Ok(m.fisher_variances(joint.flat(), data.len()))
}

/// EM reconstruction of the joint photon distribution on `(N+1)^2` cells,
/// `N = config.truncation`.
pub fn em_reconstruct_joint(
    data: &BipartiteClickData,
    config: &EmConfig,
    reference: Option<&JointPhotonDistribution>,
) -> Result<ReconstructionReport<JointPhotonDistribution>> {
    if data.is_empty() {
        return Err(Error::domain("no click records to reconstruct from"));
    }
    let n = config.truncation;
    if let Some(r) = reference {
        if r.truncation() != n {
            return Err(Error::domain(format!(
                "reference truncation {} differs from the reconstruction truncation {n}",
                r.truncation()
            )));
        }
    }
    let etas = data.etas();
    let b = build_b_matrix_for(&etas, n);
    let m = model(data, &b)?;
    let run = m.run(config, reference.map(JointPhotonDistribution::flat))?;
    let joint = JointPhotonDistribution::from_normalized_unchecked(n, run.estimate.clone());
    let fisher = m.fisher_variances(joint.flat(), data.len());
    let ll = joint_log_likelihood(&joint, data)?;
    let underdetermined = distinct_count(&etas) < n + 1;
    Ok(ReconstructionReport::assemble(
        joint,
        run,
        underdetermined,
        ll,
        fisher,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_examples() {
        let map = FlatIndexMap::new(2);
        assert_eq!(map.forward(0, 0).unwrap(), 1);
        assert_eq!(map.forward(0, 1).unwrap(), 2);
        assert_eq!(map.forward(1, 0).unwrap(), 4);
        assert_eq!(map.forward(2, 2).unwrap(), 9);
        assert_eq!(map.inverse(4).unwrap(), (1, 0));
        assert!(map.inverse(0).is_err());
        assert!(map.inverse(10).is_err());
        assert!(map.forward(3, 0).is_err());
    }

    #[test]
    fn b_matrix_for_vacuum_truncation() {
        let b = build_b_matrix_for(&[0.3, 0.7], 0);
        assert_eq!(b.entries().shape(), (6, 1));
        let col: Vec<f64> = b.entries().column(0).iter().copied().collect();
        assert_eq!(col, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn b_matrix_hand_values() {
        // K = 1, eta = 1/2, N = 1: A = (1, 1/2); columns p = (00, 01, 10, 11)
        let b = build_b_matrix_for(&[0.5], 1);
        let e = b.entries();
        let rows = |r: usize| e.row(r).iter().copied().collect::<Vec<_>>();
        assert_eq!(rows(0), vec![1.0, 0.5, 0.5, 0.25]);
        assert_eq!(rows(1), vec![0.0, 0.5, 0.0, 0.25]);
        assert_eq!(rows(2), vec![0.0, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn reference_truncation_must_match() {
        let data = BipartiteClickData::new(vec![crate::detection::BipartiteRecord {
            eta: 0.5,
            runs: 10,
            n00: 5,
            n01: 2,
            n10: 2,
        }])
        .unwrap();
        let reference = JointPhotonDistribution::uniform(3);
        let config = EmConfig::with_truncation(2);
        assert!(em_reconstruct_joint(&data, &config, Some(&reference)).is_err());
    }
}
