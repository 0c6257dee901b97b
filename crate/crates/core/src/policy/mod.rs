//! The instant policy: Q candidate trajectories for one context.

pub mod remote;
pub mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenError, Tokenizer};
use crate::types::Trajectory;
pub use remote::{RemoteClient, RemoteConfig};
pub use synthetic::{
    make_consensus_task, make_task, retarget, HallucinationMode, SyntheticOracle, SyntheticOracleConfig, SyntheticTask,
    TaskShape, TaskSpec,
};

/// Default number of policy queries per aggregation.
pub const DEFAULT_QUERY_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Remote,
    Synthetic,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(Backend::Remote),
            "synthetic" => Ok(Backend::Synthetic),
            other => Err(format!("unknown backend {other:?} (expected remote or synthetic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub backend: Backend,
    pub query_count: usize,
    /// Aggregation refuses to run on fewer decoded samples than this.
    pub min_decoded: usize,
    pub remote: RemoteConfig,
    pub synthetic: SyntheticOracleConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Synthetic,
            query_count: DEFAULT_QUERY_COUNT,
            min_decoded: 1,
            remote: RemoteConfig::default(),
            synthetic: SyntheticOracleConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn synthetic(query_count: usize, oracle: SyntheticOracleConfig) -> Self {
        Self { backend: Backend::Synthetic, query_count, synthetic: oracle, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.query_count == 0 {
            return Err(PolicyError::Config("query count must be at least 1".into()));
        }
        match self.backend {
            Backend::Remote => self.remote.validate(),
            Backend::Synthetic => self.synthetic.validate(),
        }
        .map_err(PolicyError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum SampleFailure {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed: {0}")]
    Malformed(String),
}

/// Outcome of one query, kept in query order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSlot {
    pub index: usize,
    pub attempts: u32,
    pub result: Result<Trajectory, SampleFailure>,
}

impl SampleSlot {
    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.result.as_ref().ok()
    }

    pub fn status(&self) -> String {
        match &self.result {
            Ok(_) => "ok".into(),
            Err(e) => e.to_string(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("invalid context: {0}")]
    Context(#[from] TokenError),
    #[error("every query failed, with transport errors: {}", .statuses.join("; "))]
    Transport { statuses: Vec<String> },
    #[error("every response was malformed: {}", .statuses.join("; "))]
    EmptyBundle { statuses: Vec<String> },
}

/// Issues the Q queries of `config` concurrently and returns one slot per query.
///
/// Individual failures stay in their slots. The call itself fails only when
/// no query produced a trajectory.
pub fn sample_trajectories(
    context: &crate::tokenizer::PolicyContext,
    config: &PolicyConfig,
) -> Result<Vec<SampleSlot>, PolicyError> {
    config.validate()?;
    context.validate()?;
    let q = config.query_count;
    let slots: Vec<SampleSlot> = match config.backend {
        Backend::Synthetic => {
            let oracle = SyntheticOracle::new(config.synthetic.clone()).map_err(PolicyError::Config)?;
            let planted = oracle.planted_slots(q);
            (0..q)
                .into_par_iter()
                .map(|i| SampleSlot { index: i, attempts: 1, result: Ok(oracle.sample(context, i, planted.contains(&i))) })
                .collect()
        }
        Backend::Remote => {
            let tokenizer = match &config.remote.preamble_path {
                Some(path) => Tokenizer::from_file(path)?,
                None => Tokenizer::default(),
            };
            let prompt = tokenizer.encode_context(context)?;
            let client = RemoteClient::new(config.remote.clone())?;
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..q)
                    .map(|i| {
                        let (client, prompt) = (&client, prompt.as_str());
                        scope.spawn(move || {
                            let (result, attempts) = client.query(prompt, i);
                            SampleSlot { index: i, attempts, result }
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("query thread panicked")).collect()
            })
        }
    };
    if slots.iter().all(|s| s.result.is_err()) {
        let statuses = slots.iter().map(|s| format!("query {}: {}", s.index, s.status())).collect();
        let any_transport = slots.iter().any(|s| matches!(s.result, Err(SampleFailure::Transport(_))));
        return Err(if any_transport { PolicyError::Transport { statuses } } else { PolicyError::EmptyBundle { statuses } });
    }
    Ok(slots)
}
