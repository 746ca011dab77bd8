//! Independent-route checks: every quantity here is recomputed by a
//! different method (exact rational arithmetic, dense matrix exponentials,
//! finite differences) and compared against the library.

mod common;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use common::*;

use onoff_core::bipartite::build_b_matrix_for;
use onoff_core::detection::{
    bernoulli_smear, bipartite_off_probabilities, design_matrix_for, multithermal_onoff_stats,
    EfficiencyGrid, OffFrequencyData,
};
use onoff_core::em::{em_reconstruct, em_step, fisher_variances, EmConfig};
use onoff_core::full_rho::{
    displaced_fock_weights, fourier_components, g_matrix, g_matrix_eta, pseudo_inverse,
    DisplacementSetting,
};
use onoff_core::states::{
    coherent_density_matrix, coherent_distribution, multithermal_joint_split, thermal_distribution,
    JointPhotonDistribution, PhotonDistribution,
};

#[test]
fn vandermonde_solution_is_em_fixed_point() {
    for n in 1..=5 {
        for truth in [
            linear_truth(n),
            coherent_distribution(0.4 * n as f64, n).unwrap().state,
        ] {
            let etas = chebyshev_etas(n + 1);
            let data = OffFrequencyData::exact(&truth, &etas).unwrap();
            let exact = vandermonde_solution(&etas, &data, n);
            let candidate = PhotonDistribution::new(exact.clone()).unwrap();
            let next = em_step(&candidate, &data, &design_matrix_for(&etas, n)).unwrap();
            for (k, (x, y)) in next.probs().iter().zip(&exact).enumerate() {
                assert!((x - y).abs() < 1e-12, "N = {n}, n = {k}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn em_converges_to_vandermonde_solution() {
    // N = 5 needs ~6e7 iterations for 1e-6; covered by the fixed-point check
    for n in 1..=4 {
        let truth = linear_truth(n);
        let etas = chebyshev_etas(n + 1);
        let data = OffFrequencyData::exact(&truth, &etas).unwrap();
        let exact = vandermonde_solution(&etas, &data, n);
        let config = EmConfig {
            epsilon_threshold: 1e-15,
            max_iterations: 3_000_000,
            stall_window: 0,
            record_diagnostics_every: 1_000_000,
            ..EmConfig::with_truncation(n)
        };
        let report = em_reconstruct(&data, &config, None).unwrap();
        for (k, (em, x)) in report.distribution.probs().iter().zip(&exact).enumerate() {
            assert!(
                (em - x).abs() < 1e-6,
                "N = {n}, n = {k}: EM {em} vs exact {x}"
            );
        }
    }
}

fn binomial(n: usize, k: usize) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn multithermal_joint_matches_rational_formula() {
    // M = 2, n_ave = 2, tau = 1/2:
    // varrho_nk = (n+k+1) (1/2)^(n+k+2) C(n+k, n) (1/2)^(n+k)
    let truncation = 16;
    let dim = truncation + 1;
    let quarter = BigRational::new(BigInt::from(1), BigInt::from(4));
    let mut weights = Vec::with_capacity(dim * dim);
    for n in 0..dim {
        for k in 0..dim {
            let w = BigRational::from_integer(BigInt::from(n + k + 1) * binomial(n + k, n))
                * &quarter
                * num_traits::pow::pow(quarter.clone(), n + k);
            weights.push(w);
        }
    }
    let total = weights.iter().fold(BigRational::zero(), |acc, w| acc + w);
    let got = multithermal_joint_split(2.0, 2, 0.5, truncation).unwrap();
    for (i, w) in weights.iter().enumerate() {
        let expected = (w / &total).to_f64().unwrap();
        let value = got.state.flat()[i];
        assert!(
            (value - expected).abs() < 1e-14,
            "cell {i}: {value} vs {expected}"
        );
    }
    let tail = (BigRational::one() - total).to_f64().unwrap();
    assert!((got.tail_mass - tail).abs() < 1e-12);
}

#[test]
fn multithermal_closed_form_matches_truncated_joint() {
    for (n_ave, modes, tau) in [(1.0, 2usize, 0.5), (2.0, 3, 0.6), (0.5, 1, 0.3)] {
        let joint = multithermal_joint_split(n_ave, modes, tau, 120).unwrap();
        assert!(joint.tail_mass < 1e-12);
        for eta in [0.05, 0.25, 0.7, 1.0] {
            let a = multithermal_onoff_stats(n_ave, modes, tau, eta).unwrap();
            let b = bipartite_off_probabilities(&joint.state, eta).unwrap();
            for (x, y) in [
                (a.p00, b.p00),
                (a.p01, b.p01),
                (a.p10, b.p10),
                (a.p11, b.p11),
            ] {
                assert!(
                    (x - y).abs() < 1e-10,
                    "n_ave {n_ave} M {modes} eta {eta}: {x} vs {y}"
                );
            }
        }
    }
}

#[test]
fn b_matrix_product_matches_direct_probabilities() {
    let joint = multithermal_joint_split(1.5, 2, 0.4, 6).unwrap().state;
    let etas = [0.1, 0.35, 0.8];
    let b = build_b_matrix_for(&etas, 6);
    let g = b.apply(&joint).unwrap();
    for (mu, &eta) in etas.iter().enumerate() {
        let p = bipartite_off_probabilities(&joint, eta).unwrap();
        assert!((g[mu] - p.p00).abs() < 1e-14);
        assert!((g[3 + mu] - p.p01).abs() < 1e-14);
        assert!((g[6 + mu] - p.p10).abs() < 1e-14);
    }
}

#[test]
fn displaced_probabilities_match_dense_operator() {
    let rho = random_density_matrix(4, 11);
    let alpha = Complex64::from_polar(0.7, std::f64::consts::PI / 3.0);
    let formula = displaced_fock_weights(&rho, alpha, 8).unwrap();
    let dense = dense_displaced_probabilities(&rho, alpha, 8, 6);
    for (n, (x, y)) in formula.iter().zip(&dense).enumerate() {
        assert!((x - y).abs() < 1e-8, "n = {n}: {x} vs {y}");
    }
}

#[test]
fn displaced_probabilities_match_dense_operator_over_range() {
    for (n0, magnitude, seed) in [(2usize, 0.3, 1u64), (4, 1.0, 2), (6, 1.5, 3), (6, 2.0, 4)] {
        let rho = random_density_matrix(n0, seed);
        let truncation = n0 + 12;
        for phi in [0.0, 1.1, 4.0] {
            let alpha = Complex64::from_polar(magnitude, phi);
            let formula = displaced_fock_weights(&rho, alpha, truncation).unwrap();
            let dense = dense_displaced_probabilities(&rho, alpha, truncation, 40);
            for (n, (x, y)) in formula.iter().zip(&dense).enumerate() {
                assert!(
                    (x - y).abs() < 1e-8,
                    "n0 {n0} |alpha| {magnitude} phi {phi} n {n}: {x} vs {y}"
                );
            }
        }
    }
}

#[test]
fn fourier_component_matches_dense_dft() {
    let rho = coherent_density_matrix(Complex64::new(0.5, 0.0), 8)
        .unwrap()
        .state;
    let setting = DisplacementSetting::uniform(0.1, 12).unwrap();
    let truncation = 12;
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|j| displaced_fock_weights(&rho, setting.alpha(j), truncation).unwrap())
        .collect();
    let p = DMatrix::from_fn(12, truncation + 1, |j, n| rows[j][n]);
    let got = fourier_components(&p, setting.phases(), 1).unwrap();
    let dense: Vec<Vec<f64>> = (0..12)
        .map(|j| dense_displaced_probabilities(&rho, setting.alpha(j), truncation, 30))
        .collect();
    for n in 0..=truncation {
        let mut expected = Complex64::new(0.0, 0.0);
        for (j, row) in dense.iter().enumerate() {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / 12.0;
            expected += Complex64::from_polar(row[n] / 12.0, phi);
        }
        assert!((got[n] - expected).norm() < 1e-8, "n = {n}");
    }
}

#[test]
fn g_matrix_matches_dense_matrix_elements() {
    // G^(s)_nm = <m+s|D|n> <m|D|n> for real alpha
    let (n0, truncation) = (5usize, 9usize);
    for magnitude in [0.1, 0.8, 1.33] {
        let d = dense_displacement(Complex64::new(magnitude, 0.0), truncation + 50);
        for s in 0..=3 {
            let g = g_matrix(s, magnitude, truncation, n0).unwrap();
            for n in 0..=truncation {
                for m in 0..=n0 - s {
                    let expected = (d[(m + s, n)] * d[(m, n)]).re;
                    assert!(
                        (g[(n, m)] - expected).abs() < 1e-10,
                        "|a| {magnitude} s {s} ({n},{m}): {} vs {expected}",
                        g[(n, m)]
                    );
                }
            }
        }
    }
}

#[test]
fn g_matrix_maps_bands_onto_fourier_components() {
    let rho = coherent_density_matrix(Complex64::from_polar(1.2, 0.4), 6)
        .unwrap()
        .state;
    let setting = DisplacementSetting::uniform(0.6, 15).unwrap();
    let truncation = 10;
    let p = DMatrix::from_fn(15, truncation + 1, |j, n| {
        displaced_fock_weights(&rho, setting.alpha(j), truncation).unwrap()[n]
    });
    for s in 0..=6 {
        let g = g_matrix(s, 0.6, truncation, 6).unwrap();
        let band = rho.subdiagonal(s);
        let fourier = fourier_components(&p, setting.phases(), s as i64).unwrap();
        for n in 0..=truncation {
            let predicted: Complex64 = (0..band.len()).map(|m| band[m] * g[(n, m)]).sum();
            assert!((predicted - fourier[n]).norm() < 1e-12, "s {s} n {n}");
        }
    }
}

#[test]
fn efficiency_corrected_g_matches_smeared_fourier_components() {
    let rho = coherent_density_matrix(Complex64::new(0.9, 0.3), 5)
        .unwrap()
        .state;
    let (magnitude, eta, truncation, wide) = (0.5, 0.7, 8usize, 60usize);
    let setting = DisplacementSetting::uniform(magnitude, 11).unwrap();
    let smeared: Vec<Vec<f64>> = (0..11)
        .map(|j| {
            let w = displaced_fock_weights(&rho, setting.alpha(j), wide).unwrap();
            let d = PhotonDistribution::from_weights(w).unwrap();
            bernoulli_smear(&d, eta).unwrap().probs().to_vec()
        })
        .collect();
    let p = DMatrix::from_fn(11, truncation + 1, |j, n| smeared[j][n]);
    for s in 0..=3 {
        let g = g_matrix_eta(s, magnitude, eta, truncation, 5).unwrap();
        let band = rho.subdiagonal(s);
        let fourier = fourier_components(&p, setting.phases(), s as i64).unwrap();
        for n in 0..=truncation {
            let predicted: Complex64 = (0..band.len()).map(|m| band[m] * g[(n, m)]).sum();
            assert!((predicted - fourier[n]).norm() < 1e-10, "s {s} n {n}");
        }
    }
}

#[test]
fn pseudo_inverse_is_left_inverse_for_paper_setting() {
    // G^(1), N = 8, n0 = 4, |alpha|^2 = 0.01
    let g = g_matrix(1, 0.1, 8, 4).unwrap();
    let f = pseudo_inverse(&g).unwrap();
    let id = &f.matrix * &g;
    let err = (id - DMatrix::identity(4, 4)).abs().max();
    assert!(
        err < 1e-8,
        "max |FG - I| = {err}, condition {}",
        f.condition
    );
}

#[test]
fn fisher_variances_match_finite_differences() {
    for (dist, eta_max, k) in [
        (coherent_distribution(2.0, 8).unwrap().state, 0.66, 20usize),
        (thermal_distribution(1.0, 6).unwrap().state, 0.9, 12),
        (
            PhotonDistribution::new(vec![0.027, 0.954, 0.019]).unwrap(),
            0.5,
            10,
        ),
    ] {
        let etas = EfficiencyGrid::linear(eta_max, k).unwrap().etas().to_vec();
        let data = OffFrequencyData::exact(&dist, &etas).unwrap();
        let a = design_matrix_for(&etas, dist.truncation());
        let variances = fisher_variances(&dist, &data, &a).unwrap();
        for (n, v) in variances.iter().enumerate() {
            let info = finite_difference_information(&a, dist.probs(), n, 1e-6);
            let from_library = 1.0 / (k as f64 * v.expect("bounded"));
            let rel = (from_library - info).abs() / info;
            assert!(
                rel < 1e-4,
                "n = {n}: {from_library} vs {info} (rel {rel:e})"
            );
        }
    }
}

#[test]
fn doubling_identical_settings_halves_variance() {
    let dist = coherent_distribution(1.5, 6).unwrap().state;
    let etas = EfficiencyGrid::linear(0.8, 10).unwrap().etas().to_vec();
    let doubled: Vec<f64> = etas.iter().chain(&etas).copied().collect();
    let once = OffFrequencyData::exact(&dist, &etas).unwrap();
    let twice = OffFrequencyData::exact(&dist, &doubled).unwrap();
    let v1 = fisher_variances(&dist, &once, &design_matrix_for(&etas, 6)).unwrap();
    let v2 = fisher_variances(&dist, &twice, &design_matrix_for(&doubled, 6)).unwrap();
    for (a, b) in v1.iter().zip(&v2) {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert!((b / a - 0.5).abs() < 1e-12);
    }
}

#[test]
fn joint_marginals_of_split_thermal_are_thermal() {
    // M = 1: each mode is thermal with mean n_ave / 2
    let joint: JointPhotonDistribution = multithermal_joint_split(1.2, 1, 0.5, 60).unwrap().state;
    let expected = thermal_distribution(0.6, 60).unwrap().state;
    for (x, y) in joint.first_marginal().iter().zip(expected.probs()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn exact_displaced_distributions_invert_to_the_state() {
    use onoff_core::full_rho::{reconstruct_from_distributions, FullRhoConfig};
    for (n0, magnitude, seed) in [(2usize, 0.4, 5u64), (4, 0.5, 6), (4, 0.9, 7)] {
        let rho = random_density_matrix(n0, seed);
        let setting = DisplacementSetting::uniform(magnitude, 2 * n0 + 1).unwrap();
        let truncation = n0 + 30;
        let p = DMatrix::from_fn(2 * n0 + 1, truncation + 1, |j, n| {
            displaced_fock_weights(&rho, setting.alpha(j), truncation).unwrap()[n]
        });
        let config = FullRhoConfig {
            hilbert_truncation: n0,
            max_sideband: n0,
            detector_efficiency: None,
        };
        let report = reconstruct_from_distributions(&p, &setting, &config).unwrap();
        let err = (report.density_matrix.matrix() - rho.matrix())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "n0 {n0} |alpha| {magnitude}: max error {err:e}");
        assert!((report.trace_before_normalization - 1.0).abs() < 1e-6);
        assert_eq!(report.clipped_mass, 0.0);
    }
}

#[test]
fn joint_em_fixed_point_matches_least_squares() {
    use onoff_core::bipartite::em_reconstruct_joint;
    use onoff_core::detection::BipartiteClickData;
    for (truth, k) in [
        (vec![0.1, 0.35, 0.25, 0.3], 4usize),
        (vec![0.05, 0.5, 0.4, 0.05], 6),
        (vec![0.4, 0.2, 0.2, 0.2], 9),
    ] {
        let joint = JointPhotonDistribution::new(1, truth).unwrap();
        let etas: Vec<f64> = (1..=k).map(|mu| mu as f64 / k as f64).collect();
        let probs: Vec<_> = etas
            .iter()
            .map(|&eta| bipartite_off_probabilities(&joint, eta).unwrap())
            .collect();
        let data = BipartiteClickData::from_probabilities(
            &etas,
            &probs,
            onoff_core::detection::NOISE_FREE_RUNS,
        )
        .unwrap();

        // least squares on g = B q with rows written out by hand
        let b = DMatrix::from_fn(3 * k, 4, |row, p| {
            let x = 1.0 - etas[row % k];
            let (n, kk) = (p / 2, p % 2);
            let (an, ak) = (x.powi(n as i32), x.powi(kk as i32));
            match row / k {
                0 => an * ak,
                1 => an * (1.0 - ak),
                _ => (1.0 - an) * ak,
            }
        });
        let g = nalgebra::DVector::from_iterator(
            3 * k,
            (0..3)
                .flat_map(|block| {
                    probs.iter().map(move |p| match block {
                        0 => p.p00,
                        1 => p.p01,
                        _ => p.p10,
                    })
                })
                .collect::<Vec<_>>(),
        );
        let ls = b.clone().svd(true, true).solve(&g, 1e-14).unwrap();

        let config = EmConfig {
            epsilon_threshold: 1e-14,
            max_iterations: 1_000_000,
            stall_window: 0,
            record_diagnostics_every: 1_000_000,
            ..EmConfig::with_truncation(1)
        };
        let report = em_reconstruct_joint(&data, &config, None).unwrap();
        for (p, (em, x)) in report.distribution.flat().iter().zip(ls.iter()).enumerate() {
            assert!(
                (em - x).abs() < 1e-6,
                "K = {k}, p = {}: EM {em} vs LS {x}",
                p + 1
            );
        }
    }
}
