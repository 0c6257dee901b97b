//! Robust aggregation of instant-policy trajectories.
//!
//! An instant policy (typically a language model prompted with a few
//! demonstrations) is queried several times for the same scene. Some answers
//! are hallucinated and land far from the rest. The sampled trajectories are
//! aligned on normalized time and a Student's t-regression is fitted to them;
//! its mean is a trajectory that follows the consistent samples and ignores
//! the outliers.

pub mod downsample;
pub mod estimator;
pub mod experiments;
pub mod pipeline;
pub mod policy;
pub mod tokenizer;
pub mod types;

pub use estimator::{extract_mean, fit, Dof, FitConfig, StudentTEstimator};
pub use pipeline::{rip, rip_gauss, single_sample, Method, RunReport};
pub use policy::{sample_trajectories, PolicyConfig, SyntheticOracleConfig, TaskShape};
pub use tokenizer::PolicyContext;
pub use types::{Action, Demonstration, KeypointSet, Point3, Trajectory, TrajectoryBundle};
