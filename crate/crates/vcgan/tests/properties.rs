//! Property tests for the distribution and metric layers, plus the
//! statistical invariants that need independent oracles.

mod common;

use proptest::prelude::*;
use vcgan::diffcore::spectral::{spectral_normalize, SpectralState};
use vcgan::diffcore::Tensor;
use vcgan::metrics::{frechet_distance, inception_score_from_probs, matrix_sqrt_psd};
use vcgan::probdist::{
    fit_gaussian, kl_to_standard_normal, reparameterize, sample_truncated, DiagonalGaussian,
    TruncationRange,
};
use vcgan::rng::Rng;

#[test]
fn untruncated_sampling_matches_reparameterization_in_distribution() {
    // two-sample KS per coordinate at n = 10^4
    let d = DiagonalGaussian::new(vec![0.4f64, -1.1], vec![0.6, -0.8]).unwrap();
    let n = 10_000;
    let mut rng_a = Rng::from_seed(101);
    let mut rng_b = Rng::from_seed(707);
    let mut truncated = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut reparam = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..n {
        let z = sample_truncated(&d, TruncationRange::None, &mut rng_a).unwrap();
        truncated[0].push(z[0]);
        truncated[1].push(z[1]);
        let eps: Vec<f64> = (0..2).map(|_| rng_b.gaussian()).collect();
        let z = reparameterize(&d, &eps).unwrap();
        reparam[0].push(z[0]);
        reparam[1].push(z[1]);
    }
    for j in 0..2 {
        let (stat, p) = common::ks_two_sample(&truncated[j], &reparam[j]);
        assert!(p > 0.01, "coordinate {j}: KS stat {stat}, p {p}");
    }
}

#[test]
fn spectral_estimate_matches_singular_value_oracle() {
    let mut rng = Rng::from_seed(55);
    for trial in 0..5 {
        let rows = 8;
        let cols = 16;
        let w = Tensor::<f64>::randn(vec![rows, cols], 1.0, &mut rng);
        let mut state = SpectralState::new(rows, &mut rng);
        state.power_iterations = 50;
        let normalized = spectral_normalize(&w, &mut state).unwrap();
        let sigma_oracle = common::largest_singular_value(&w.data, rows, cols);
        let implied = {
            // sigma estimate = w / normalized ratio on the largest entry
            let idx = w
                .data
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap()
                .0;
            w.data[idx] / normalized.data[idx]
        };
        assert!(
            (implied - sigma_oracle).abs() / sigma_oracle < 0.01,
            "trial {trial}: estimate {implied} vs oracle {sigma_oracle}"
        );
        // the returned matrix has largest singular value 1 within 1%
        let post = common::largest_singular_value(&normalized.data, rows, cols);
        assert!((post - 1.0).abs() < 0.01, "normalized sigma {post}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative(
        mean in prop::collection::vec(-3.0f64..3.0, 1..6),
        logvar in prop::collection::vec(-3.0f64..3.0, 1..6),
    ) {
        let n = mean.len().min(logvar.len());
        let d = DiagonalGaussian::new(mean[..n].to_vec(), logvar[..n].to_vec()).unwrap();
        prop_assert!(kl_to_standard_normal(&d) >= -1e-12);
    }

    #[test]
    fn inception_score_is_between_one_and_class_count(
        rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 8..40),
    ) {
        let probs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let (mean, _) = inception_score_from_probs(&probs, 2).unwrap();
        prop_assert!(mean >= 1.0 - 1e-9);
        prop_assert!(mean <= 4.0 + 1e-9);
    }

    #[test]
    fn frechet_distance_is_a_symmetric_premetric(
        m1 in prop::collection::vec(-2.0f64..2.0, 2),
        m2 in prop::collection::vec(-2.0f64..2.0, 2),
        s1 in prop::collection::vec(0.1f64..2.0, 2),
        s2 in prop::collection::vec(0.1f64..2.0, 2),
        rho1 in -0.8f64..0.8,
        rho2 in -0.8f64..0.8,
    ) {
        let build = |m: &[f64], s: &[f64], rho: f64| {
            let cov = vec![
                s[0] * s[0],
                rho * s[0] * s[1],
                rho * s[0] * s[1],
                s[1] * s[1],
            ];
            vcgan::probdist::EmpiricalGaussian::new(m.to_vec(), cov, 10).unwrap()
        };
        let a = build(&m1, &s1, rho1);
        let b = build(&m2, &s2, rho2);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        let aa = frechet_distance(&a, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8);
        prop_assert!(aa.abs() < 1e-8);
    }

    #[test]
    fn matrix_sqrt_is_psd_and_squares_back(
        entries in prop::collection::vec(-1.5f64..1.5, 9),
    ) {
        // A = B B^T is symmetric PSD
        let n = 3;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    a[i * n + j] += entries[i * n + k] * entries[j * n + k];
                }
            }
        }
        let root = matrix_sqrt_psd(&a, n).unwrap();
        // symmetric as stored
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(root[i * n + j].to_bits(), root[j * n + i].to_bits());
            }
        }
        // eigenvalues of the root are nonnegative
        for ev in common::jacobi_eigenvalues(&root, n) {
            prop_assert!(ev > -1e-9);
        }
        // squaring reproduces A
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    sq[i * n + j] += root[i * n + k] * root[k * n + j];
                }
            }
        }
        let num: f64 = sq.iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        prop_assert!(num / den < 1e-6, "relative error {}", num / den);
    }

    #[test]
    fn fitted_covariance_is_symmetric_as_stored(
        raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..20),
    ) {
        let g = fit_gaussian(&raw).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(
                    g.covariance[i * 3 + j].to_bits(),
                    g.covariance[j * 3 + i].to_bits()
                );
            }
        }
    }
}
