use rip_core::experiments::rmse;
use rip_core::policy::synthetic::derive_seed;
use rip_core::policy::{make_task, TaskSpec};
use rip_core::{rip, rip_gauss, single_sample, FitConfig, PolicyConfig, SyntheticOracleConfig, TaskShape};

fn quiet(seed: u64, noise: f64) -> SyntheticOracleConfig {
    SyntheticOracleConfig { seed, noise, hallucination_prob: 0.0, ..Default::default() }
}

#[test]
fn noise_free_bundle_recovers_consensus() {
    for shape in TaskShape::ALL {
        let task = make_task(11, &TaskSpec::new(shape));
        let policy = PolicyConfig::synthetic(5, quiet(1, 0.0));
        let out = rip(&task.context, &policy, &FitConfig::desk()).unwrap();
        assert_eq!(out.trajectory.len(), task.consensus.len());
        for (a, b) in out.trajectory.actions().iter().zip(task.consensus.actions()) {
            let (x, y) = (a.to_channels(), b.to_channels());
            assert!(x.iter().zip(&y).all(|(u, v)| (u - v).abs() <= 1e-2), "{shape:?}");
        }
        let g = rip_gauss(&task.context, &policy, &FitConfig::desk()).unwrap();
        assert!(rmse(&g.trajectory, &out.trajectory) < 1e-2);
    }
}

#[test]
fn single_query_returns_that_sample() {
    let task = make_task(4, &TaskSpec::new(TaskShape::Push));
    let policy = PolicyConfig::synthetic(1, SyntheticOracleConfig { seed: 8, hallucination_prob: 0.0, ..Default::default() });
    let fit = FitConfig::desk().with_steps(1500);
    let one = single_sample(&task.context, &policy).unwrap();
    let agg = rip(&task.context, &policy, &fit).unwrap();
    assert_eq!(agg.samples, vec![one.trajectory.clone()]);
    assert!(rmse(&agg.trajectory, &one.trajectory) < 5e-3);
}

#[test]
fn planted_outlier_pulls_the_gaussian_fit_only() {
    let task = make_task(21, &TaskSpec::new(TaskShape::Reach));
    let oracle = SyntheticOracleConfig { planted: 1, hallucination_prob: 0.0, ..quiet(5, 0.005) };
    let policy = PolicyConfig::synthetic(5, oracle);
    let t = rip(&task.context, &policy, &FitConfig::desk()).unwrap();
    let g = rip_gauss(&task.context, &policy, &FitConfig::desk()).unwrap();
    let end = |traj: &rip_core::Trajectory| {
        let (a, b) = (traj.last().p0, task.consensus.last().p0);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    assert!(end(&t.trajectory) < 0.03, "t final error {}", end(&t.trajectory));
    assert!(end(&g.trajectory) > 0.015, "gauss final error {}", end(&g.trajectory));
}

#[test]
fn aggregation_beats_a_single_sample_without_outliers() {
    let (mut agg, mut one) = (0.0, 0.0);
    for seed in 0..20 {
        let shape = TaskShape::ALL[seed as usize % 3];
        let task = make_task(derive_seed(seed, 0), &TaskSpec::new(shape));
        let policy = PolicyConfig::synthetic(5, quiet(derive_seed(seed, 1), 0.005));
        let fit = FitConfig::desk().with_seed(derive_seed(seed, 2));
        agg += rmse(&rip(&task.context, &policy, &fit).unwrap().trajectory, &task.consensus);
        one += rmse(&single_sample(&task.context, &policy).unwrap().trajectory, &task.consensus);
    }
    assert!(agg <= one, "rip {agg} vs single {one}");
}
