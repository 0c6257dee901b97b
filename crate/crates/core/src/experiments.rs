//! Seeded desk-scale experiments against the synthetic oracle.
//!
//! A trial generates a task, runs one method and scores the result against
//! the task's consensus trajectory. Trials are independent and seeded from
//! (master seed, cell, trial), so running them in parallel never changes
//! the numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimator::gradcheck::{self, GradCheckReport};
use crate::estimator::{Dof, EstimatorError, FitConfig};
use crate::pipeline::{preprocess_context, run, Method, PipelineError, Preprocess};
use crate::policy::synthetic::derive_seed;
use crate::policy::{make_task, PolicyConfig, SyntheticOracleConfig, TaskShape, TaskSpec};
use crate::types::{resample, Trajectory};

/// Position tolerance of the success check (meters).
pub const SUCCESS_TOLERANCE: f64 = 0.02;

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Geometric stand-in for task success.
///
/// The final gripper position must be within `tolerance` of the reference's,
/// the gripper must open and close in the same order, and each gripper event
/// must happen within `tolerance` of where the reference has it (a grasp
/// that closes above the object picks nothing up).
pub fn is_success(output: &Trajectory, reference: &Trajectory, tolerance: f64) -> bool {
    if distance(output.last().p0, reference.last().p0) > tolerance {
        return false;
    }
    let (out_events, ref_events) = (output.gripper_transitions(), reference.gripper_transitions());
    if out_events.len() != ref_events.len() {
        return false;
    }
    out_events.iter().zip(&ref_events).all(|(&o, &r)| {
        let (oa, ra) = (&output.actions()[o + 1], &reference.actions()[r + 1]);
        oa.g == ra.g && distance(oa.p0, ra.p0) <= tolerance
    })
}

/// Root mean square error over the nine position coordinates, after
/// resampling `output` onto the reference's length.
pub fn rmse(output: &Trajectory, reference: &Trajectory) -> f64 {
    let output = if output.len() == reference.len() {
        output.clone()
    } else {
        resample(output, reference.len()).expect("reference has at least two steps")
    };
    let mut sum = 0.0;
    for (a, b) in output.actions().iter().zip(reference.actions()) {
        let (x, y) = (a.to_channels(), b.to_channels());
        sum += x[..9].iter().zip(&y[..9]).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    }
    (sum / (9 * reference.len()) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub rmse: f64,
    pub final_error: f64,
}

/// Everything one trial needs besides its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub method: Method,
    pub shape: TaskShape,
    pub high_rate: bool,
    pub demonstrations: usize,
    pub preprocess: Preprocess,
    pub policy: PolicyConfig,
    pub fit: FitConfig,
}

impl TrialSetup {
    /// Robust aggregation with the synthetic oracle on a standard task.
    pub fn synthetic(shape: TaskShape, query_count: usize, oracle: SyntheticOracleConfig, fit: FitConfig) -> Self {
        Self {
            method: Method::Rip,
            shape,
            high_rate: false,
            demonstrations: TaskSpec::new(shape).demonstrations,
            preprocess: Preprocess::None,
            policy: PolicyConfig::synthetic(query_count, oracle),
            fit,
        }
    }

    fn task_spec(&self) -> TaskSpec {
        let spec = if self.high_rate { TaskSpec::high_rate_pick() } else { TaskSpec::new(self.shape) };
        TaskSpec { demonstrations: self.demonstrations, ..spec }
    }
}

/// Runs one seeded trial. Task, oracle and fit seeds are all derived from `seed`.
pub fn run_trial(setup: &TrialSetup, seed: u64) -> Result<TrialOutcome, PipelineError> {
    let task = make_task(derive_seed(seed, 0), &setup.task_spec());
    let context = preprocess_context(&task.context, setup.preprocess)?;
    let mut policy = setup.policy.clone();
    policy.synthetic.seed = derive_seed(seed, 1);
    let fit = setup.fit.clone().with_seed(derive_seed(seed, 2));
    let out = run(setup.method, &context, &policy, &fit)?;
    Ok(TrialOutcome {
        success: is_success(&out.trajectory, &task.consensus, SUCCESS_TOLERANCE),
        rmse: rmse(&out.trajectory, &task.consensus),
        final_error: distance(out.trajectory.last().p0, task.consensus.last().p0),
    })
}

/// One sweep cell: (Q, ν) with `trials` seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub q: usize,
    pub nu: Dof,
    pub success_rate: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub n_trials: usize,
}

impl CellResult {
    pub const CSV_HEADER: &'static str = "Q,nu,success_rate,rmse_mean,rmse_std,n_trials";

    pub fn csv_row(&self) -> String {
        format!("{},{},{:.6},{:.6},{:.6},{}", self.q, self.nu, self.success_rate, self.rmse_mean, self.rmse_std, self.n_trials)
    }

    fn from_outcomes(q: usize, nu: Dof, outcomes: &[TrialOutcome]) -> Self {
        let n = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.success).count();
        let mean = outcomes.iter().map(|o| o.rmse).sum::<f64>() / n as f64;
        let var = if n > 1 { outcomes.iter().map(|o| (o.rmse - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { q, nu, success_rate: successes as f64 / n as f64, rmse_mean: mean, rmse_std: var.sqrt(), n_trials: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub qs: Vec<usize>,
    pub nus: Vec<Dof>,
    pub trials: usize,
    pub seed: u64,
    /// Task shapes, cycled over the trials of a cell.
    pub shapes: Vec<TaskShape>,
    pub oracle: SyntheticOracleConfig,
    pub fit: FitConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            qs: vec![2, 3, 5, 10],
            nus: vec![Dof::Finite(1.5)],
            trials: 50,
            seed: 0,
            shapes: TaskShape::ALL.to_vec(),
            oracle: SyntheticOracleConfig::default(),
            fit: FitConfig::desk(),
        }
    }
}

impl SweepSpec {
    /// Cells in row-major (Q outer, ν inner) order.
    pub fn cells(&self) -> Vec<(usize, Dof)> {
        self.qs.iter().flat_map(|&q| self.nus.iter().map(move |&nu| (q, nu))).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.qs.is_empty() || self.nus.is_empty() {
            return Err("sweep grid is empty".into());
        }
        if self.qs.contains(&0) {
            return Err("Q values must be at least 1".into());
        }
        if self.trials == 0 {
            return Err("trials per cell must be at least 1".into());
        }
        if self.shapes.is_empty() {
            return Err("no task shapes".into());
        }
        self.oracle.validate()
    }
}

/// Runs every (cell, trial) pair in parallel and aggregates per cell, in cell order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<CellResult>, PipelineError> {
    spec.validate().map_err(PipelineError::Config)?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..spec.trials).map(move |t| (c, t))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (q, nu) = cells[c];
            let shape = spec.shapes[t % spec.shapes.len()];
            let setup = TrialSetup::synthetic(shape, q, spec.oracle.clone(), spec.fit.clone().with_dof(nu));
            run_trial(&setup, derive_seed(derive_seed(spec.seed, c as u64), t as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(cells
        .iter()
        .zip(outcomes.chunks_exact(spec.trials))
        .map(|(&(q, nu), chunk)| CellResult::from_outcomes(q, nu, chunk))
        .collect())
}

/// Half-width of the 95% band for the difference of two proportions
/// estimated from `n` trials each, under the pooled null.
pub fn two_proportion_band(p_a: f64, p_b: f64, n: usize) -> f64 {
    let pooled = 0.5 * (p_a + p_b);
    1.96 * (pooled * (1.0 - pooled) * 2.0 / n as f64).sqrt()
}

/// Whether `p_a` exceeds `p_b` by more than the noise band.
pub fn clearly_greater(p_a: f64, p_b: f64, n: usize) -> bool {
    p_a - p_b > two_proportion_band(p_a, p_b, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownsampleRow {
    pub seed: u64,
    pub shape: TaskShape,
    pub uniform_success: bool,
    pub gripper_aware_success: bool,
    pub uniform_rmse: f64,
    pub gripper_aware_rmse: f64,
}

impl DownsampleRow {
    pub const CSV_HEADER: &'static str = "seed,shape,uniform_success,g_based_success,uniform_rmse,g_based_rmse";

    pub fn csv_row(&self) -> String {
        let shape = match self.shape {
            TaskShape::Reach => "reach",
            TaskShape::Push => "push",
            TaskShape::Pick => "pick",
        };
        format!(
            "{},{shape},{},{},{:.6},{:.6}",
            self.seed, self.uniform_success as u8, self.gripper_aware_success as u8, self.uniform_rmse, self.gripper_aware_rmse
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownsampleBenchSpec {
    pub seeds: usize,
    pub seed: u64,
    pub shape: TaskShape,
    pub target_len: usize,
    pub query_count: usize,
    pub oracle: SyntheticOracleConfig,
    pub fit: FitConfig,
}

impl Default for DownsampleBenchSpec {
    fn default() -> Self {
        Self {
            seeds: 50,
            seed: 0,
            shape: TaskShape::Pick,
            target_len: crate::downsample::DEFAULT_TARGET_LEN,
            query_count: crate::policy::DEFAULT_QUERY_COUNT,
            oracle: SyntheticOracleConfig::default(),
            fit: FitConfig::desk(),
        }
    }
}

/// Same task and oracle seed under both preprocessings, one row per seed.
///
/// Tasks are recorded at a high control rate so the demonstrations need
/// thinning before they fit in a prompt.
pub fn run_downsample_bench(spec: &DownsampleBenchSpec) -> Result<Vec<DownsampleRow>, PipelineError> {
    let jobs: Vec<(usize, Preprocess)> = (0..spec.seeds)
        .flat_map(|s| [(s, Preprocess::Uniform(spec.target_len)), (s, Preprocess::GripperAware(spec.target_len))])
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(s, preprocess)| {
            let setup = TrialSetup {
                high_rate: true,
                preprocess,
                ..TrialSetup::synthetic(spec.shape, spec.query_count, spec.oracle.clone(), spec.fit.clone())
            };
            run_trial(&setup, derive_seed(spec.seed, s as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(outcomes
        .chunks_exact(2)
        .enumerate()
        .map(|(s, pair)| DownsampleRow {
            seed: s as u64,
            shape: spec.shape,
            uniform_success: pair[0].success,
            gripper_aware_success: pair[1].success,
            uniform_rmse: pair[0].rmse,
            gripper_aware_rmse: pair[1].rmse,
        })
        .collect())
}

/// Success against the number of demonstrations in the prompt.
///
/// The synthetic oracle ignores everything but the nearest demonstration,
/// so this sweep is only informative with the remote backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSweepSpec {
    pub demos: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub shapes: Vec<TaskShape>,
    pub method: Method,
    pub policy: PolicyConfig,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoCellResult {
    pub demos: usize,
    pub success_rate: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub n_trials: usize,
}

impl DemoCellResult {
    pub const CSV_HEADER: &'static str = "demos,success_rate,rmse_mean,rmse_std,n_trials";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6},{}", self.demos, self.success_rate, self.rmse_mean, self.rmse_std, self.n_trials)
    }
}

/// Runs the demonstration-count sweep one trial at a time; each remote
/// trial already issues its Q queries concurrently.
pub fn run_demo_sweep(spec: &DemoSweepSpec) -> Result<Vec<DemoCellResult>, PipelineError> {
    if spec.demos.is_empty() || spec.demos.contains(&0) || spec.trials == 0 || spec.shapes.is_empty() {
        return Err(PipelineError::Config("demo sweep needs positive demo counts, trials and at least one shape".into()));
    }
    let mut cells = Vec::with_capacity(spec.demos.len());
    for (c, &demos) in spec.demos.iter().enumerate() {
        let outcomes = (0..spec.trials)
            .map(|t| {
                let setup = TrialSetup {
                    method: spec.method,
                    shape: spec.shapes[t % spec.shapes.len()],
                    high_rate: false,
                    demonstrations: demos,
                    preprocess: Preprocess::None,
                    policy: spec.policy.clone(),
                    fit: spec.fit.clone(),
                };
                run_trial(&setup, derive_seed(derive_seed(spec.seed, c as u64), t as u64))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let summary = CellResult::from_outcomes(spec.policy.query_count, spec.fit.dof, &outcomes);
        cells.push(DemoCellResult {
            demos,
            success_rate: summary.success_rate,
            rmse_mean: summary.rmse_mean,
            rmse_std: summary.rmse_std,
            n_trials: summary.n_trials,
        });
    }
    Ok(cells)
}

/// Gradient checks on `runs` random problems, cycling through `dofs`.
pub fn run_gradchecks(seed: u64, runs: usize, dofs: &[Dof]) -> Result<Vec<GradCheckReport>, EstimatorError> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let (samples, est) = gradcheck::random_problem(derive_seed(seed, i as u64), dofs[i % dofs.len()]);
            gradcheck::check(&samples, &est)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::make_consensus_task;

    #[test]
    fn consensus_is_a_success() {
        for shape in TaskShape::ALL {
            let (_, c) = make_consensus_task(1, shape);
            assert!(is_success(&c, &c, SUCCESS_TOLERANCE));
            assert_eq!(rmse(&c, &c), 0.0);
        }
    }

    #[test]
    fn shifted_output_fails() {
        let (_, c) = make_consensus_task(2, TaskShape::Pick);
        assert!(!is_success(&c.translated([0.03, 0.0, 0.0]), &c, SUCCESS_TOLERANCE));
        assert!(is_success(&c.translated([0.01, 0.0, 0.0]), &c, SUCCESS_TOLERANCE));
        assert!((rmse(&c.translated([0.03, 0.0, 0.0]), &c) - 0.03 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn missing_grasp_fails() {
        let (_, c) = make_consensus_task(2, TaskShape::Pick);
        let open: Vec<_> = c.actions().iter().map(|a| crate::types::Action { g: 0.0, ..*a }).collect();
        assert!(!is_success(&Trajectory::new(open).unwrap(), &c, SUCCESS_TOLERANCE));
    }

    #[test]
    fn band_shrinks_with_trials() {
        assert!(two_proportion_band(0.5, 0.5, 200) < two_proportion_band(0.5, 0.5, 50));
        assert_eq!(two_proportion_band(1.0, 1.0, 50), 0.0);
        assert!(clearly_greater(0.9, 0.5, 50));
        assert!(!clearly_greater(0.6, 0.5, 50));
    }

    #[test]
    fn demo_sweep_runs_on_the_oracle() {
        let spec = DemoSweepSpec {
            demos: vec![1, 4],
            trials: 1,
            seed: 3,
            shapes: vec![TaskShape::Reach],
            method: Method::Single,
            policy: PolicyConfig::synthetic(1, SyntheticOracleConfig { noise: 0.0, hallucination_prob: 0.0, ..Default::default() }),
            fit: FitConfig::desk(),
        };
        let cells = run_demo_sweep(&spec).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.success_rate == 1.0 && c.n_trials == 1));
        assert!(run_demo_sweep(&DemoSweepSpec { demos: vec![], ..spec }).is_err());
    }

    #[test]
    fn sweep_rejects_empty_grid() {
        let spec = SweepSpec { qs: vec![], ..Default::default() };
        assert!(run_sweep(&spec).is_err());
    }
}
