//! Independent reference computations shared by the oracle and acceptance
//! suites.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};

use onoff_core::detection::OffFrequencyData;
use onoff_core::states::{DensityMatrix, PhotonDistribution};

pub fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Gaussian elimination over the rationals.
pub fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Vec<BigRational> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero()).expect("singular");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] / &a[col][col];
            let pivot_row = a[col].clone();
            for (x, p) in a[r].iter_mut().zip(&pivot_row).skip(col) {
                *x -= &factor * p;
            }
            let delta = &factor * &b[col];
            b[r] -= delta;
        }
    }
    (0..n).map(|i| &b[i] / &a[i][i]).collect()
}

pub fn chebyshev_etas(count: usize) -> Vec<f64> {
    (0..count)
        .map(|mu| {
            let t = std::f64::consts::PI * (2 * mu + 1) as f64 / (2 * count) as f64;
            0.5 - 0.5 * t.cos()
        })
        .collect()
}

/// Square system `A rho = f` solved exactly over the rationals.
pub fn vandermonde_solution(etas: &[f64], data: &OffFrequencyData, n: usize) -> Vec<f64> {
    let a: Vec<Vec<BigRational>> = etas
        .iter()
        .map(|&eta| {
            let base = BigRational::one() - rational(eta);
            (0..=n)
                .map(|k| num_traits::pow::pow(base.clone(), k))
                .collect()
        })
        .collect();
    let f: Vec<BigRational> = data
        .records()
        .iter()
        .map(|r| BigRational::new(BigInt::from(r.off_counts), BigInt::from(r.runs)))
        .collect();
    solve_exact(a, f)
        .iter()
        .map(|x| x.to_f64().unwrap())
        .collect()
}

pub fn linear_truth(n: usize) -> PhotonDistribution {
    PhotonDistribution::from_weights((0..=n).map(|k| (n + 2 - k) as f64).collect()).unwrap()
}

/// `exp(alpha a^dag - alpha^* a)` on a padded space of dimension `dim`.
pub fn dense_displacement(alpha: Complex64, dim: usize) -> DMatrix<Complex64> {
    let mut generator = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for n in 0..dim - 1 {
        let s = ((n + 1) as f64).sqrt();
        generator[(n + 1, n)] = alpha * s;
        generator[(n, n + 1)] = -alpha.conj() * s;
    }
    generator.exp()
}

/// `<n| D^dag rho D |n>` through the dense operator.
pub fn dense_displaced_probabilities(
    rho: &DensityMatrix,
    alpha: Complex64,
    truncation: usize,
    padding: usize,
) -> Vec<f64> {
    let dim = truncation + padding + 1;
    let d = dense_displacement(alpha, dim);
    let mut big = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    big.view_mut((0, 0), (rho.dim(), rho.dim()))
        .copy_from(rho.matrix());
    let moved = d.adjoint() * big * &d;
    (0..=truncation).map(|n| moved[(n, n)].re).collect()
}

pub fn random_density_matrix(n0: usize, seed: u64) -> DensityMatrix {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dim = n0 + 1;
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let m = &a * a.adjoint();
    let trace: f64 = m.diagonal().iter().map(|z| z.re).sum();
    DensityMatrix::new(m.unscale(trace)).unwrap()
}

/// `F_n = sum_mu l_mu^-1 (d l_mu / d rho_n)^2` by central differences.
pub fn finite_difference_information(a: &DMatrix<f64>, rho: &[f64], n: usize, h: f64) -> f64 {
    let l = |x: &[f64]| {
        let p: Vec<f64> = (0..a.nrows())
            .map(|mu| (0..x.len()).map(|k| a[(mu, k)] * x[k]).sum())
            .collect();
        let total: f64 = p.iter().sum();
        p.into_iter().map(|v| v / total).collect::<Vec<_>>()
    };
    let mut up = rho.to_vec();
    let mut down = rho.to_vec();
    up[n] += h;
    down[n] -= h;
    let (lu, ld, l0) = (l(&up), l(&down), l(rho));
    (0..a.nrows())
        .map(|mu| {
            let d = (lu[mu] - ld[mu]) / (2.0 * h);
            d * d / l0[mu]
        })
        .sum()
}
