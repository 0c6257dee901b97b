//! Sample, align, fit, extract.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::downsample::{downsample, uniform_downsample, DownsampleError};
use crate::estimator::{extract_mean, fit, Dof, EstimatorError, FitConfig, SampleSet};
use crate::policy::{sample_trajectories, PolicyConfig, PolicyError, SampleSlot};
use crate::tokenizer::PolicyContext;
use crate::types::{align_to_longest, Demonstration, Trajectory, TrajectoryError};

/// Loss values kept at the end of the report's training curve.
pub const LOSS_TAIL_LEN: usize = 100;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("only {ok} of {total} samples decoded, {required} required")]
    TooFewSamples { ok: usize, total: usize, required: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Downsample(#[from] DownsampleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rip,
    RipGauss,
    Single,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rip" => Ok(Method::Rip),
            "rip_gauss" | "rip-gauss" => Ok(Method::RipGauss),
            "single" | "single_sample" => Ok(Method::Single),
            other => Err(format!("unknown method {other:?} (expected rip, rip_gauss or single)")),
        }
    }
}

/// How demonstrations are thinned before they go into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "target_len")]
pub enum Preprocess {
    None,
    Uniform(usize),
    GripperAware(usize),
}

/// Applies `mode` to every demonstration of `context`.
pub fn preprocess_context(context: &PolicyContext, mode: Preprocess) -> Result<PolicyContext, PipelineError> {
    let thin = |t: &Trajectory| -> Result<Trajectory, DownsampleError> {
        match mode {
            Preprocess::None => Ok(t.clone()),
            Preprocess::Uniform(n) => uniform_downsample(t, n),
            Preprocess::GripperAware(n) => downsample(t, n),
        }
    };
    let demonstrations = context
        .demonstrations
        .iter()
        .map(|d| Ok(Demonstration::new(d.keypoints.clone(), thin(&d.trajectory)?)?))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(PolicyContext { demonstrations, query_keypoints: context.query_keypoints.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub status: String,
    pub attempts: u32,
    pub len: Option<usize>,
}

impl From<&SampleSlot> for SampleRecord {
    fn from(slot: &SampleSlot) -> Self {
        Self { index: slot.index, status: slot.status(), attempts: slot.attempts, len: slot.trajectory().map(Trajectory::len) }
    }
}

/// Wall time per stage in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sample_ms: f64,
    pub align_ms: f64,
    pub fit_ms: f64,
    pub extract_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub policy: PolicyConfig,
    pub fit: Option<FitConfig>,
    pub query_count: usize,
    pub decoded: usize,
    pub failed: usize,
    pub samples: Vec<SampleRecord>,
    pub bundle_len: usize,
    pub final_loss: Option<f64>,
    pub loss_tail: Vec<f64>,
    pub timings: StageTimings,
    pub output_path: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    /// Every decoded sample, in query order.
    pub samples: Vec<Trajectory>,
    pub report: RunReport,
}

/// Runs one method end to end.
pub fn run(method: Method, context: &PolicyContext, policy: &PolicyConfig, fit_config: &FitConfig) -> Result<RunOutput, PipelineError> {
    match method {
        Method::Rip => rip(context, policy, fit_config),
        Method::RipGauss => rip_gauss(context, policy, fit_config),
        Method::Single => single_sample(context, policy),
    }
}

/// Robust aggregation of Q policy samples with the configured ν.
pub fn rip(context: &PolicyContext, policy: &PolicyConfig, fit_config: &FitConfig) -> Result<RunOutput, PipelineError> {
    aggregate(Method::Rip, context, policy, fit_config)
}

/// [`rip`] with a Gaussian likelihood.
pub fn rip_gauss(context: &PolicyContext, policy: &PolicyConfig, fit_config: &FitConfig) -> Result<RunOutput, PipelineError> {
    aggregate(Method::RipGauss, context, policy, &fit_config.clone().with_dof(Dof::Infinite))
}

fn aggregate(method: Method, context: &PolicyContext, policy: &PolicyConfig, fit_config: &FitConfig) -> Result<RunOutput, PipelineError> {
    fit_config.validate()?;
    let clock = Instant::now();
    let slots = sample_trajectories(context, policy)?;
    let sample_ms = ms(clock);

    let samples: Vec<Trajectory> = slots.iter().filter_map(|s| s.trajectory().cloned()).collect();
    if samples.len() < policy.min_decoded {
        return Err(PipelineError::TooFewSamples { ok: samples.len(), total: slots.len(), required: policy.min_decoded });
    }
    let clock = Instant::now();
    let bundle = align_to_longest(&samples)?;
    let set = SampleSet::from_bundle(&bundle);
    let align_ms = ms(clock);

    let clock = Instant::now();
    let outcome = fit(&set, fit_config)?;
    let fit_ms = ms(clock);

    let clock = Instant::now();
    let trajectory = extract_mean(&outcome.estimator, bundle.grid())?;
    let extract_ms = ms(clock);

    let report = RunReport {
        method,
        policy: policy.clone(),
        fit: Some(fit_config.clone()),
        query_count: policy.query_count,
        decoded: samples.len(),
        failed: slots.len() - samples.len(),
        samples: slots.iter().map(SampleRecord::from).collect(),
        bundle_len: bundle.steps(),
        final_loss: Some(outcome.final_loss),
        loss_tail: outcome.loss_tail(LOSS_TAIL_LEN).to_vec(),
        timings: StageTimings { sample_ms, align_ms, fit_ms, extract_ms },
        output_path: None,
    };
    Ok(RunOutput { trajectory, samples, report })
}

/// One policy query, returned as decoded.
pub fn single_sample(context: &PolicyContext, policy: &PolicyConfig) -> Result<RunOutput, PipelineError> {
    let one = PolicyConfig { query_count: 1, ..policy.clone() };
    let clock = Instant::now();
    let slots = sample_trajectories(context, &one)?;
    let sample_ms = ms(clock);
    let slot = &slots[0];
    // A lone failed query already surfaces as an error from the sampler.
    let trajectory = slot.trajectory().cloned().expect("sampler returns at least one decoded slot");
    let report = RunReport {
        method: Method::Single,
        policy: one,
        fit: None,
        query_count: 1,
        decoded: 1,
        failed: 0,
        samples: vec![SampleRecord::from(slot)],
        bundle_len: trajectory.len(),
        final_loss: None,
        loss_tail: vec![],
        timings: StageTimings { sample_ms, ..Default::default() },
        output_path: None,
    };
    Ok(RunOutput { samples: vec![trajectory.clone()], trajectory, report })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{make_consensus_task, SyntheticOracleConfig, TaskShape};

    fn quiet(q: usize) -> PolicyConfig {
        PolicyConfig::synthetic(q, SyntheticOracleConfig { noise: 0.0, hallucination_prob: 0.0, ..Default::default() })
    }

    #[test]
    fn single_sample_without_noise_is_consensus() {
        let (ctx, consensus) = make_consensus_task(3, TaskShape::Pick);
        let out = single_sample(&ctx, &quiet(5)).unwrap();
        assert_eq!(out.trajectory, consensus);
        assert_eq!(out.report.query_count, 1);
    }

    #[test]
    fn report_counts_sum_to_q() {
        let (ctx, _) = make_consensus_task(4, TaskShape::Reach);
        let out = rip(&ctx, &quiet(3), &FitConfig::desk().with_steps(50)).unwrap();
        assert_eq!(out.report.decoded + out.report.failed, 3);
        assert_eq!(out.report.samples.len(), 3);
        assert_eq!(out.trajectory.len(), out.report.bundle_len);
        assert!(out.report.final_loss.unwrap().is_finite());
    }

    #[test]
    fn gauss_alias_sets_infinite_dof() {
        let (ctx, _) = make_consensus_task(4, TaskShape::Reach);
        let out = rip_gauss(&ctx, &quiet(2), &FitConfig::desk().with_steps(20)).unwrap();
        assert_eq!(out.report.fit.unwrap().dof, Dof::Infinite);
        assert_eq!(out.report.method, Method::RipGauss);
    }

    #[test]
    fn preprocessing_thins_demonstrations() {
        let task = crate::policy::make_task(1, &crate::policy::TaskSpec::high_rate_pick());
        for mode in [Preprocess::Uniform(30), Preprocess::GripperAware(30)] {
            let ctx = preprocess_context(&task.context, mode).unwrap();
            assert!(ctx.demonstrations.iter().all(|d| d.trajectory.len() == 30));
        }
        assert_eq!(preprocess_context(&task.context, Preprocess::None).unwrap(), task.context);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("rip_gauss".parse::<Method>().unwrap(), Method::RipGauss);
        assert_eq!("single".parse::<Method>().unwrap(), Method::Single);
        assert!("mean".parse::<Method>().is_err());
    }
}
