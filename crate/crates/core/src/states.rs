//! Photon-number distributions, joint two-mode distributions and Fock-basis
//! density matrices, plus generators for the state families used as
//! simulation inputs and reconstruction ground truths.
//!
//! Every generator works on a truncated Fock space `0..=N`. The weight that
//! falls beyond `N` is computed, the retained part is renormalized, and the
//! discarded mass is returned next to the state in a [`Truncated`] wrapper.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::ln_factorial;

/// Tolerance on unit normalization and Hermiticity checks.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A generated state together with the probability mass that was cut off by
/// the Fock-space truncation before renormalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncated<T> {
    pub state: T,
    pub tail_mass: f64,
}

impl<T> Truncated<T> {
    pub fn into_state(self) -> T {
        self.state
    }
}

/// Photon-number distribution `rho_n`, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub struct PhotonDistribution {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistributionRepr {
    truncation: usize,
    probs: Vec<f64>,
}

impl TryFrom<DistributionRepr> for PhotonDistribution {
    type Error = Error;

    fn try_from(r: DistributionRepr) -> Result<Self> {
        if r.probs.len() != r.truncation + 1 {
            return Err(Error::domain(format!(
                "truncation {} does not match {} probabilities",
                r.truncation,
                r.probs.len()
            )));
        }
        PhotonDistribution::new(r.probs)
    }
}

impl From<PhotonDistribution> for DistributionRepr {
    fn from(d: PhotonDistribution) -> Self {
        DistributionRepr {
            truncation: d.truncation(),
            probs: d.probs,
        }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::domain("distribution needs at least one entry"));
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::domain(format!(
            "entry {i} = {w} is negative or not finite"
        )));
    }
    Ok(())
}

impl PhotonDistribution {
    /// Validates nonnegativity and unit sum (within [`NORMALIZATION_TOL`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_weights(&probs)?;
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::domain(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(PhotonDistribution { probs })
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::domain("weights sum to zero"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(PhotonDistribution { probs: weights })
    }

    pub(crate) fn from_normalized_unchecked(probs: Vec<f64>) -> Self {
        PhotonDistribution { probs }
    }

    pub fn uniform(truncation: usize) -> Self {
        let w = 1.0 / (truncation + 1) as f64;
        PhotonDistribution {
            probs: vec![w; truncation + 1],
        }
    }

    /// Fock state `|k><k|` on `0..=truncation`.
    pub fn fock(k: usize, truncation: usize) -> Result<Self> {
        if k > truncation {
            return Err(Error::domain(format!(
                "Fock index {k} exceeds truncation {truncation}"
            )));
        }
        let mut probs = vec![0.0; truncation + 1];
        probs[k] = 1.0;
        Ok(PhotonDistribution { probs })
    }

    pub fn vacuum(truncation: usize) -> Self {
        let mut probs = vec![0.0; truncation + 1];
        probs[0] = 1.0;
        PhotonDistribution { probs }
    }

    pub fn truncation(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Zero-pads or cuts (and renormalizes) to a new truncation.
    pub fn resized(&self, truncation: usize) -> Result<Self> {
        let mut probs = self.probs.clone();
        probs.resize(truncation + 1, 0.0);
        PhotonDistribution::from_weights(probs)
    }
}

/// Joint photon-number distribution `varrho_{nk}` of two modes on the grid
/// `(N+1) x (N+1)`. Storage is row-major in `n`, so the flat zero-based
/// index is `k + n (N+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct JointPhotonDistribution {
    truncation: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JointRepr {
    truncation: usize,
    /// `probs[n][k]`
    probs: Vec<Vec<f64>>,
}

impl TryFrom<JointRepr> for JointPhotonDistribution {
    type Error = Error;

    fn try_from(r: JointRepr) -> Result<Self> {
        let dim = r.truncation + 1;
        if r.probs.len() != dim || r.probs.iter().any(|row| row.len() != dim) {
            return Err(Error::domain(format!(
                "joint distribution must be {dim} x {dim}"
            )));
        }
        JointPhotonDistribution::new(r.truncation, r.probs.concat())
    }
}

impl From<JointPhotonDistribution> for JointRepr {
    fn from(j: JointPhotonDistribution) -> Self {
        let dim = j.truncation + 1;
        JointRepr {
            truncation: j.truncation,
            probs: j.probs.chunks(dim).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl JointPhotonDistribution {
    /// `flat` is row-major in `n` with length `(N+1)^2`.
    pub fn new(truncation: usize, flat: Vec<f64>) -> Result<Self> {
        Self::check_len(truncation, &flat)?;
        check_weights(&flat)?;
        let total: f64 = flat.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::domain(format!(
                "joint probabilities sum to {total}, expected 1"
            )));
        }
        Ok(JointPhotonDistribution {
            truncation,
            probs: flat,
        })
    }

    pub fn from_weights(truncation: usize, mut flat: Vec<f64>) -> Result<Self> {
        Self::check_len(truncation, &flat)?;
        check_weights(&flat)?;
        let total: f64 = flat.iter().sum();
        if total <= 0.0 {
            return Err(Error::domain("joint weights sum to zero"));
        }
        flat.iter_mut().for_each(|w| *w /= total);
        Ok(JointPhotonDistribution {
            truncation,
            probs: flat,
        })
    }

    fn check_len(truncation: usize, flat: &[f64]) -> Result<()> {
        let dim = truncation + 1;
        if flat.len() != dim * dim {
            return Err(Error::domain(format!(
                "joint distribution on truncation {truncation} needs {} entries, got {}",
                dim * dim,
                flat.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_normalized_unchecked(truncation: usize, probs: Vec<f64>) -> Self {
        JointPhotonDistribution { truncation, probs }
    }

    pub fn uniform(truncation: usize) -> Self {
        let len = (truncation + 1) * (truncation + 1);
        JointPhotonDistribution {
            truncation,
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        let dim = self.truncation + 1;
        if n >= dim || k >= dim {
            return 0.0;
        }
        self.probs[k + n * dim]
    }

    /// Flat view, zero-based index `k + n (N+1)`.
    pub fn flat(&self) -> &[f64] {
        &self.probs
    }

    /// Zero-pads or cuts (and renormalizes) to a new truncation.
    pub fn resized(&self, truncation: usize) -> Result<Self> {
        let dim = truncation + 1;
        let flat = (0..dim * dim).map(|i| self.get(i / dim, i % dim)).collect();
        JointPhotonDistribution::from_weights(truncation, flat)
    }

    /// Marginal of the first mode (index `n`).
    pub fn first_marginal(&self) -> Vec<f64> {
        let dim = self.truncation + 1;
        self.probs.chunks(dim).map(|row| row.iter().sum()).collect()
    }

    /// Marginal of the second mode (index `k`).
    pub fn second_marginal(&self) -> Vec<f64> {
        let dim = self.truncation + 1;
        let mut out = vec![0.0; dim];
        for row in self.probs.chunks(dim) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }
}

/// Density matrix in the Fock basis, `elements[(a, b)] = <a|rho|b>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityRepr", into = "DensityRepr")]
pub struct DensityMatrix {
    elements: DMatrix<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct DensityRepr {
    truncation: usize,
    /// `elements[row][col]` as `[re, im]` pairs.
    elements: Vec<Vec<Complex64>>,
}

impl TryFrom<DensityRepr> for DensityMatrix {
    type Error = Error;

    fn try_from(r: DensityRepr) -> Result<Self> {
        let dim = r.truncation + 1;
        if r.elements.len() != dim || r.elements.iter().any(|row| row.len() != dim) {
            return Err(Error::domain(format!(
                "density matrix must be {dim} x {dim}"
            )));
        }
        let m = DMatrix::from_fn(dim, dim, |a, b| r.elements[a][b]);
        DensityMatrix::new(m)
    }
}

impl From<DensityMatrix> for DensityRepr {
    fn from(d: DensityMatrix) -> Self {
        let dim = d.elements.nrows();
        DensityRepr {
            truncation: dim - 1,
            elements: (0..dim)
                .map(|a| (0..dim).map(|b| d.elements[(a, b)]).collect())
                .collect(),
        }
    }
}

impl DensityMatrix {
    /// Validates squareness, Hermiticity, unit trace and a nonnegative
    /// diagonal, all within [`NORMALIZATION_TOL`].
    pub fn new(elements: DMatrix<Complex64>) -> Result<Self> {
        let dim = elements.nrows();
        if dim == 0 || elements.ncols() != dim {
            return Err(Error::domain("density matrix must be square and nonempty"));
        }
        if elements
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::domain("density matrix has non-finite entries"));
        }
        for a in 0..dim {
            for b in a..dim {
                let d = (elements[(a, b)] - elements[(b, a)].conj()).norm();
                if d > NORMALIZATION_TOL {
                    return Err(Error::domain(format!(
                        "not Hermitian at ({a}, {b}): deviation {d:e}"
                    )));
                }
            }
            if elements[(a, a)].re < -NORMALIZATION_TOL {
                return Err(Error::domain(format!(
                    "negative diagonal entry {} at {a}",
                    elements[(a, a)].re
                )));
            }
        }
        let trace = elements.trace();
        if (trace.re - 1.0).abs() > NORMALIZATION_TOL || trace.im.abs() > NORMALIZATION_TOL {
            return Err(Error::domain(format!("trace is {trace}, expected 1")));
        }
        Ok(DensityMatrix { elements })
    }

    pub(crate) fn from_unchecked(elements: DMatrix<Complex64>) -> Self {
        DensityMatrix { elements }
    }

    pub fn from_distribution(dist: &PhotonDistribution) -> Self {
        let dim = dist.probs().len();
        let elements = DMatrix::from_fn(dim, dim, |a, b| {
            if a == b {
                Complex64::new(dist.probs()[a], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        DensityMatrix { elements }
    }

    pub fn truncation(&self) -> usize {
        self.elements.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    /// `<row|rho|col>`
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.elements[(row, col)]
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.elements
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.elements[(n, n)].re).collect()
    }

    /// `<m+s|rho|m>` for `m = 0..=N-s`.
    pub fn subdiagonal(&self, s: usize) -> Vec<Complex64> {
        let dim = self.dim();
        if s >= dim {
            return Vec::new();
        }
        (0..dim - s).map(|m| self.elements[(m + s, m)]).collect()
    }

    pub fn purity(&self) -> f64 {
        (&self.elements * &self.elements).trace().re
    }

    /// Zero-pads or cuts (and renormalizes the trace) to a new truncation.
    pub fn resized(&self, truncation: usize) -> Result<Self> {
        let dim = truncation + 1;
        let old = self.dim();
        let mut m = DMatrix::from_fn(dim, dim, |a, b| {
            if a < old && b < old {
                self.elements[(a, b)]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let trace: f64 = m.diagonal().iter().map(|z| z.re).sum();
        if trace <= 0.0 {
            return Err(Error::domain("no weight left inside the new truncation"));
        }
        m.unscale_mut(trace);
        Ok(DensityMatrix::from_unchecked(m))
    }

    pub fn photon_distribution(&self) -> Result<PhotonDistribution> {
        PhotonDistribution::from_weights(self.diagonal().iter().map(|p| p.max(0.0)).collect())
    }
}

fn check_mean(mean_photons: f64, what: &str) -> Result<()> {
    if !mean_photons.is_finite() || mean_photons < 0.0 {
        return Err(Error::domain(format!(
            "{what} mean photon number must be finite and nonnegative, got {mean_photons}"
        )));
    }
    Ok(())
}

/// Poisson weight `e^-l l^n / n!`.
fn poisson_weight(mean: f64, n: usize) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-mean + n as f64 * mean.ln() - ln_factorial(n)).exp()
}

/// Poisson mass above `truncation`, summed directly when the tail is small.
fn poisson_tail(mean: f64, truncation: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    if (truncation as f64) < mean + 1.0 {
        let head: f64 = (0..=truncation).map(|n| poisson_weight(mean, n)).sum();
        return (1.0 - head).max(0.0);
    }
    let mut tail = 0.0;
    let mut n = truncation + 1;
    loop {
        let w = poisson_weight(mean, n);
        tail += w;
        if w <= tail * 1e-17 || w == 0.0 || n > truncation + 100_000 {
            break;
        }
        n += 1;
    }
    tail
}

/// Poissonian photon statistics of a coherent state with the given mean.
pub fn coherent_distribution(
    mean_photons: f64,
    truncation: usize,
) -> Result<Truncated<PhotonDistribution>> {
    check_mean(mean_photons, "coherent")?;
    let weights = (0..=truncation)
        .map(|n| poisson_weight(mean_photons, n))
        .collect();
    Ok(Truncated {
        state: PhotonDistribution::from_weights(weights)?,
        tail_mass: poisson_tail(mean_photons, truncation),
    })
}

/// Bose-Einstein (geometric) photon statistics of a single-mode thermal state.
pub fn thermal_distribution(
    mean_photons: f64,
    truncation: usize,
) -> Result<Truncated<PhotonDistribution>> {
    check_mean(mean_photons, "thermal")?;
    let ratio = mean_photons / (1.0 + mean_photons);
    let weights = (0..=truncation)
        .map(|n| {
            if n == 0 {
                1.0 / (1.0 + mean_photons)
            } else {
                ratio.powi(n as i32) / (1.0 + mean_photons)
            }
        })
        .collect();
    Ok(Truncated {
        state: PhotonDistribution::from_weights(weights)?,
        tail_mass: if mean_photons == 0.0 {
            0.0
        } else {
            ratio.powi(truncation as i32 + 1)
        },
    })
}

/// Two-mode multithermal distribution behind a balanced beam splitter:
/// `M` thermal modes with total mean `n_ave`, split evenly between the two
/// detected modes. See [`multithermal_joint_split`].
pub fn multithermal_joint(
    n_ave: f64,
    modes: usize,
    truncation: usize,
) -> Result<Truncated<JointPhotonDistribution>> {
    multithermal_joint_split(n_ave, modes, 0.5, truncation)
}

/// Multithermal light (`M` modes, mean total photon number `n_ave`) split by
/// a beam splitter that sends each photon to the first mode with probability
/// `transmittance`:
///
/// ```text
/// varrho_nk = (n+k+M-1)! / (n! k! (M-1)!) (1 + n_ave/M)^-M (1 + M/n_ave)^-(n+k) t^n (1-t)^k
/// ```
///
/// Its on/off statistics are the closed form of
/// [`multithermal_onoff_stats`](crate::detection::multithermal_onoff_stats).
pub fn multithermal_joint_split(
    n_ave: f64,
    modes: usize,
    transmittance: f64,
    truncation: usize,
) -> Result<Truncated<JointPhotonDistribution>> {
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
    let m = modes as f64;
    let base = -m * (1.0 + n_ave / m).ln() - ln_factorial(modes - 1);
    let per_photon = -(1.0 + m / n_ave).ln();
    let dim = truncation + 1;
    let mut weights = vec![0.0; dim * dim];
    for n in 0..dim {
        for k in 0..dim {
            let split = match (n, k) {
                _ if transmittance == 0.0 && n > 0 => f64::NEG_INFINITY,
                _ if transmittance == 1.0 && k > 0 => f64::NEG_INFINITY,
                _ => {
                    let a = if n > 0 {
                        n as f64 * transmittance.ln()
                    } else {
                        0.0
                    };
                    let b = if k > 0 {
                        k as f64 * (1.0 - transmittance).ln()
                    } else {
                        0.0
                    };
                    a + b
                }
            };
            let ln_w = ln_factorial(n + k + modes - 1) - ln_factorial(n) - ln_factorial(k)
                + base
                + (n + k) as f64 * per_photon
                + split;
            weights[k + n * dim] = ln_w.exp();
        }
    }
    let head: f64 = weights.iter().sum();
    Ok(Truncated {
        state: JointPhotonDistribution::from_weights(truncation, weights)?,
        tail_mass: (1.0 - head).max(0.0),
    })
}

/// Single photon behind a beam splitter,
/// `sqrt(t)|0>|1> + sqrt(1-t)|1>|0>`, on the `N = 1` grid.
pub fn bs_superposition_joint(transmittance: f64) -> Result<JointPhotonDistribution> {
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(Error::domain(format!(
            "transmittance must lie in [0, 1], got {transmittance}"
        )));
    }
    JointPhotonDistribution::new(1, vec![0.0, transmittance, 1.0 - transmittance, 0.0])
}

/// Pure coherent state `|z><z|` on `0..=N`, renormalized to unit trace.
pub fn coherent_density_matrix(
    amplitude: Complex64,
    truncation: usize,
) -> Result<Truncated<DensityMatrix>> {
    if !amplitude.re.is_finite() || !amplitude.im.is_finite() {
        return Err(Error::domain("coherent amplitude must be finite"));
    }
    let dim = truncation + 1;
    let mut psi = Vec::with_capacity(dim);
    psi.push(Complex64::new((-amplitude.norm_sqr() / 2.0).exp(), 0.0));
    for n in 1..dim {
        let prev = psi[n - 1];
        psi.push(prev * amplitude / (n as f64).sqrt());
    }
    let norm: f64 = psi.iter().map(Complex64::norm_sqr).sum();
    let elements = DMatrix::from_fn(dim, dim, |a, b| psi[a] * psi[b].conj() / norm);
    Ok(Truncated {
        state: DensityMatrix::from_unchecked(elements),
        tail_mass: poisson_tail(amplitude.norm_sqr(), truncation),
    })
}

/// Diagonal thermal density matrix.
pub fn thermal_density_matrix(
    mean_photons: f64,
    truncation: usize,
) -> Result<Truncated<DensityMatrix>> {
    let t = thermal_distribution(mean_photons, truncation)?;
    Ok(Truncated {
        state: DensityMatrix::from_distribution(&t.state),
        tail_mass: t.tail_mass,
    })
}
