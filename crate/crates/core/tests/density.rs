use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rip_core::estimator::{ln_gamma, loss_gradient, Dof, FitConfig, Kernel, SampleSet, StudentTEstimator};
use rip_core::types::time_grid;

#[test]
fn ln_gamma_matches_reference_table() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/ln_gamma_reference.csv");
    let text = std::fs::read_to_string(path).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 1000);
    for (x, y) in rows {
        assert!((ln_gamma(x).unwrap() - y).abs() <= 1e-10, "x = {x}");
    }
}

#[test]
fn ln_gamma_small_cases() {
    assert_eq!(ln_gamma(1.0).unwrap(), 0.0);
    assert!((ln_gamma(0.5).unwrap() - 0.5723649429247001).abs() < 1e-12);
    assert!((ln_gamma(10.0).unwrap() - 362880f64.ln()).abs() < 1e-11);
    assert!(ln_gamma(0.0).is_err());
    assert!(ln_gamma(-1.5).is_err());
}

#[test]
fn t_density_at_one_scale_unit() {
    let k = Kernel::new(Dof::Finite(3.0));
    let log = k.log_density(1.0, 0.0, 1.0);
    assert!((log - -1.5762529945270715653).abs() < 1e-13);
    assert!((log.exp() - 0.20674833578317201857).abs() < 1e-13);
}

/// Trapezoid mass on [μ - 50σ, μ + 50σ].
fn mass_within_50_sd(nu: f64) -> f64 {
    let k = Kernel::new(Dof::Finite(nu));
    let (mean, var) = (0.7, 0.25);
    let sd: f64 = 0.5;
    let n = 200_000;
    let h = 100.0 * sd / n as f64;
    let f = |i: usize| k.log_density(mean - 50.0 * sd + i as f64 * h, mean, var).exp();
    h * ((1..n).map(f).sum::<f64>() + 0.5 * (f(0) + f(n)))
}

#[test]
fn most_mass_lies_within_fifty_scales() {
    // Tail mass beyond 50σ is about 3e-5 for ν = 3 and negligible for ν = 30.
    let m3 = mass_within_50_sd(3.0);
    assert!(m3 < 1.0 && (1.0 - m3) < 1e-4, "{m3}");
    assert!((mass_within_50_sd(30.0) - 1.0).abs() < 1e-6);
}

#[test]
fn heavier_tails_than_the_gaussian() {
    let gauss = Kernel::new(Dof::Infinite);
    for nu in [1.25, 1.5, 3.0, 30.0] {
        let t = Kernel::new(Dof::Finite(nu));
        for r in [4.0, 6.0, 10.0] {
            assert!(t.log_density(r, 0.0, 1.0) > gauss.log_density(r, 0.0, 1.0), "nu = {nu}, r = {r}");
        }
        // Larger ν puts less weight far out.
        let heavier = Kernel::new(Dof::Finite(nu / 2.0));
        assert!(heavier.log_density(20.0, 0.0, 1.0) > t.log_density(20.0, 0.0, 1.0));
    }
}

#[test]
fn large_dof_gradient_approaches_gaussian() {
    let grid = time_grid(8).unwrap();
    let series: Vec<Vec<f64>> = (0..4).map(|q| grid.iter().map(|t| (q as f64 - 1.5) * 0.1 + t).collect()).collect();
    let samples = SampleSet::scalar(grid, &series).unwrap();
    let config = FitConfig { hidden: vec![8], harmonics: 2, ..FitConfig::default() };
    let est = StudentTEstimator::initialize(&config, &[0.4], &[0.05], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let g_inf = loss_gradient(&samples, &est.with_dof(Dof::Infinite)).unwrap();
    let g_big = loss_gradient(&samples, &est.with_dof(Dof::Finite(1e8))).unwrap();
    let scale = g_inf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in g_inf.iter().zip(&g_big) {
        assert!((a - b).abs() <= 1e-4 * scale.max(1.0), "{a} vs {b}");
    }
}
