//! Student's t-regression over normalized time.
//!
//! Two networks map time `t ∈ [0, 1]` to a per-channel mean `μ(t)` and a raw
//! variance head `s(t)`, with `σ²(t) = softplus(s(t)) + VARIANCE_FLOOR`. They
//! are trained jointly by minimizing the negative log-likelihood of every
//! sampled point under a Student's t-distribution with fixed ν. Heavy tails
//! mean points far from the bulk of the bundle contribute a bounded pull on
//! `μ`, so a hallucinated trajectory barely moves the fitted mean. Setting ν to
//! infinity gives the Gaussian (least-squares) baseline.

mod adam;
pub mod density;
pub mod gradcheck;
pub mod network;
pub mod special;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{read_file, write_file, Action, Source, Trajectory, TrajectoryBundle, TrajectoryError, ACTION_DIM, GRIPPER_CHANNEL};

pub use adam::Adam;
pub use density::{Dof, Kernel, Term};
pub use network::{Mlp, TimeFeatures};
pub use special::{ln_gamma, LN_GAMMA_ACCURACY};

/// Lower bound added to every predicted variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Variance floor of the gripper channel: the variance of rounding to the nearest integer.
///
/// The gripper only ever takes the values 0 and 1. With the general floor,
/// steps where every sample agrees get a precision of 10⁶ and the fit
/// will rather write off a few closed-gripper steps as outliers than bend
/// the mean sharply enough to reach them.
pub const GRIPPER_VARIANCE_FLOOR: f64 = 1.0 / 12.0;

/// Version tag of the estimator parameter file.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("{function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("estimator file: {0}")]
    File(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Sampled values indexed by (trajectory q, step t, channel c) on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    grid: Vec<f64>,
    count: usize,
    channels: usize,
    values: Vec<f64>,
    floors: Vec<f64>,
}

impl SampleSet {
    /// `values` is laid out as `[q][t][c]`.
    pub fn new(grid: Vec<f64>, channels: usize, values: Vec<f64>) -> Result<Self, EstimatorError> {
        let per = grid.len() * channels;
        if grid.is_empty() || channels == 0 || values.is_empty() || values.len() % per != 0 {
            return Err(EstimatorError::Shape(format!(
                "{} values do not tile {} steps x {} channels",
                values.len(),
                grid.len(),
                channels
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite(format!("sample value {i}")));
        }
        Ok(Self { count: values.len() / per, grid, channels, values, floors: vec![VARIANCE_FLOOR; channels] })
    }

    /// One channel, one series per trajectory.
    pub fn scalar(grid: Vec<f64>, series: &[Vec<f64>]) -> Result<Self, EstimatorError> {
        if series.iter().any(|s| s.len() != grid.len()) {
            return Err(EstimatorError::Shape("series length differs from grid".into()));
        }
        Self::new(grid, 1, series.concat())
    }

    pub fn from_bundle(bundle: &TrajectoryBundle) -> Self {
        let values = bundle
            .trajectories()
            .iter()
            .flat_map(|t| t.actions().iter().flat_map(|a| a.to_channels()))
            .collect();
        let mut floors = vec![VARIANCE_FLOOR; ACTION_DIM];
        floors[GRIPPER_CHANNEL] = GRIPPER_VARIANCE_FLOOR;
        Self { grid: bundle.grid().to_vec(), count: bundle.count(), channels: ACTION_DIM, values, floors }
    }

    /// Replaces the per-channel variance floors used when fitting these samples.
    pub fn with_floors(mut self, floors: Vec<f64>) -> Result<Self, EstimatorError> {
        check_floors(&floors, self.channels)?;
        self.floors = floors;
        Ok(self)
    }

    pub fn floors(&self) -> &[f64] {
        &self.floors
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn steps(&self) -> usize {
        self.grid.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn value(&self, q: usize, t: usize, c: usize) -> f64 {
        self.values[(q * self.steps() + t) * self.channels + c]
    }

    /// Copy with every trajectory repeated `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        Self { values: self.values.repeat(times), count: self.count * times, ..self.clone() }
    }

    /// Copy with `offset` added to every value of every channel.
    pub fn shifted(&self, offset: f64) -> Self {
        Self { values: self.values.iter().map(|v| v + offset).collect(), ..self.clone() }
    }
}

/// Training hyperparameters. Defaults are the simulation settings: two hidden
/// layers of 64, ν = 1.5, batch 64, Adam at 1e-2 for 40 000 steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub hidden: Vec<usize>,
    pub dof: Dof,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Sinusoidal time features fed to both networks.
    pub harmonics: usize,
    /// Required absolute accuracy of log-gamma in the density constant.
    pub ln_gamma_tolerance: f64,
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over the training steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to `base * final_fraction`.
    Cosine { final_fraction: f64 },
}

impl LrSchedule {
    pub fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { final_fraction } => {
                let progress = step as f64 / total.max(2).saturating_sub(1) as f64;
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            dof: Dof::Finite(1.5),
            batch_size: 64,
            steps: 40_000,
            learning_rate: 1e-2,
            seed: 0,
            harmonics: 12,
            ln_gamma_tolerance: 1e-10,
            schedule: LrSchedule::Cosine { final_fraction: 0.01 },
        }
    }
}

impl FitConfig {
    /// Real-robot settings: 1e5 steps at learning rate 5e-2.
    pub fn real_robot() -> Self {
        Self { steps: 100_000, learning_rate: 5e-2, ..Self::default() }
    }

    /// Short schedule used by the benchmark sweeps.
    pub fn desk() -> Self {
        Self { steps: DESK_STEPS, ..Self::default() }
    }

    pub fn with_dof(mut self, dof: Dof) -> Self {
        self.dof = dof;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.steps == 0 {
            return bad("step count must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if let Dof::Finite(nu) = self.dof {
            if !(nu > 0.0 && nu.is_finite()) {
                return bad("degrees of freedom must be positive");
            }
        }
        if let LrSchedule::Cosine { final_fraction } = self.schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return bad("cosine final fraction must lie in [0, 1]");
            }
        }
        if !(self.ln_gamma_tolerance >= LN_GAMMA_ACCURACY) {
            return Err(EstimatorError::Config(format!(
                "log-gamma tolerance {} is tighter than the implementation's {LN_GAMMA_ACCURACY}",
                self.ln_gamma_tolerance
            )));
        }
        Ok(())
    }
}

/// Step count of [`FitConfig::desk`].
pub const DESK_STEPS: usize = 800;

fn check_floors(floors: &[f64], channels: usize) -> Result<(), EstimatorError> {
    if floors.len() != channels {
        return Err(EstimatorError::Shape(format!("{} variance floors for {channels} channels", floors.len())));
    }
    if floors.iter().any(|f| !(f.is_finite() && *f >= VARIANCE_FLOOR)) {
        return Err(EstimatorError::Config(format!("variance floors must be finite and at least {VARIANCE_FLOOR}")));
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Mean and variance networks plus the fixed degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTEstimator {
    features: TimeFeatures,
    mean: Mlp,
    variance: Mlp,
    kernel: Kernel,
    floors: Vec<f64>,
}

/// Network outputs on a set of time points, row-major `rows × channels`.
pub struct Evaluation {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    raw_variance: Vec<f64>,
    mean_acts: network::Activations,
    var_acts: network::Activations,
}

impl StudentTEstimator {
    /// Fresh estimator with random weights whose outputs start near
    /// `initial_mean` and `initial_variance` (one entry per channel).
    pub fn initialize<R: Rng + ?Sized>(
        config: &FitConfig,
        initial_mean: &[f64],
        initial_variance: &[f64],
        rng: &mut R,
    ) -> Result<Self, EstimatorError> {
        Self::initialize_with_floors(config, initial_mean, initial_variance, &vec![VARIANCE_FLOOR; initial_mean.len()], rng)
    }

    /// As [`initialize`](Self::initialize) with a variance floor per channel.
    pub fn initialize_with_floors<R: Rng + ?Sized>(
        config: &FitConfig,
        initial_mean: &[f64],
        initial_variance: &[f64],
        floors: &[f64],
        rng: &mut R,
    ) -> Result<Self, EstimatorError> {
        config.validate()?;
        if initial_mean.len() != initial_variance.len() || initial_mean.is_empty() {
            return Err(EstimatorError::Shape("initial mean/variance channel counts differ".into()));
        }
        check_floors(floors, initial_mean.len())?;
        let features = TimeFeatures { harmonics: config.harmonics };
        let mut sizes = vec![features.dim()];
        sizes.extend(&config.hidden);
        sizes.push(initial_mean.len());
        let mut mean = Mlp::new(&sizes, 0.1, rng);
        let mut variance = Mlp::new(&sizes, 0.1, rng);
        mean.output_bias_mut().copy_from_slice(initial_mean);
        for ((b, &v), &floor) in variance.output_bias_mut().iter_mut().zip(initial_variance).zip(floors) {
            *b = inverse_softplus((v - floor).max(1e-12));
        }
        Ok(Self { features, mean, variance, kernel: Kernel::new(config.dof), floors: floors.to_vec() })
    }

    pub fn from_parts(features: TimeFeatures, mean: Mlp, variance: Mlp, dof: Dof) -> Result<Self, EstimatorError> {
        if mean.inputs() != features.dim() || variance.inputs() != features.dim() {
            return Err(EstimatorError::Shape("network input does not match time features".into()));
        }
        if mean.outputs() != variance.outputs() {
            return Err(EstimatorError::Shape("mean and variance heads differ in channel count".into()));
        }
        let floors = vec![VARIANCE_FLOOR; mean.outputs()];
        Ok(Self { features, mean, variance, kernel: Kernel::new(dof), floors })
    }

    pub fn dof(&self) -> Dof {
        self.kernel.dof()
    }

    /// Same networks, different ν.
    pub fn with_dof(&self, dof: Dof) -> Self {
        Self { kernel: Kernel::new(dof), ..self.clone() }
    }

    pub fn channels(&self) -> usize {
        self.mean.outputs()
    }

    pub fn features(&self) -> TimeFeatures {
        self.features
    }

    pub fn mean_network(&self) -> &Mlp {
        &self.mean
    }

    pub fn variance_network(&self) -> &Mlp {
        &self.variance
    }

    pub fn param_count(&self) -> usize {
        self.mean.params().len() + self.variance.params().len()
    }

    /// Mean-network parameters followed by variance-network parameters.
    pub fn params(&self) -> Vec<f64> {
        [self.mean.params(), self.variance.params()].concat()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let (m, v) = params.split_at(self.mean.params().len());
        self.mean.params_mut().copy_from_slice(m);
        self.variance.params_mut().copy_from_slice(v);
    }

    /// Number of leading entries of [`Self::params`] that belong to the mean network.
    pub fn mean_param_count(&self) -> usize {
        self.mean.params().len()
    }

    pub fn evaluate(&self, times: &[f64]) -> Evaluation {
        let x = self.features.expand(times);
        let mean_acts = self.mean.forward(&x, times.len());
        let var_acts = self.variance.forward(&x, times.len());
        let raw_variance = var_acts.output().to_vec();
        Evaluation {
            means: mean_acts.output().to_vec(),
            variances: raw_variance.iter().zip(self.floors.iter().cycle()).map(|(&s, f)| softplus(s) + f).collect(),
            raw_variance,
            mean_acts,
            var_acts,
        }
    }

    pub fn mean_at(&self, t: f64) -> Vec<f64> {
        self.evaluate(&[t]).means
    }

    pub fn variance_at(&self, t: f64) -> Vec<f64> {
        self.evaluate(&[t]).variances
    }

    /// log S(a | t; ν) for one channel.
    pub fn log_density(&self, a: f64, t: f64, channel: usize) -> Result<f64, EstimatorError> {
        if channel >= self.channels() {
            return Err(EstimatorError::Shape(format!("channel {channel} of {}", self.channels())));
        }
        if !a.is_finite() || !t.is_finite() {
            return Err(EstimatorError::NonFinite(format!("log_density input a={a}, t={t}")));
        }
        let e = self.evaluate(&[t]);
        let (mean, var) = (e.means[channel], e.variances[channel]);
        let out = self.kernel.log_density(a, mean, var);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(EstimatorError::NonFinite(format!("log_density at t={t}, channel {channel}: mean {mean}, variance {var}")))
        }
    }

    /// Negative log-likelihood and its gradient over the selected `(q, t)`
    /// pairs, each term multiplied by `scale`.
    fn accumulate(&self, samples: &SampleSet, pairs: &PairsByStep, scale: f64) -> Result<(f64, Vec<f64>), EstimatorError> {
        let d = self.channels();
        if samples.channels() != d {
            return Err(EstimatorError::Shape(format!("samples have {} channels, estimator {d}", samples.channels())));
        }
        let times: Vec<f64> = pairs.steps.iter().map(|&t| samples.grid[t]).collect();
        let e = self.evaluate(&times);
        let mut d_mean = vec![0.0; times.len() * d];
        let mut d_raw = vec![0.0; times.len() * d];
        let mut loss = 0.0;
        for (row, (&t, qs)) in pairs.steps.iter().zip(&pairs.members).enumerate() {
            for c in 0..d {
                let k = row * d + c;
                let (mean, var) = (e.means[k], e.variances[k]);
                let dvar_draw = sigmoid(e.raw_variance[k]);
                for &q in qs {
                    let term = self.kernel.term(samples.value(q, t, c), mean, var);
                    loss += scale * term.nll;
                    d_mean[k] += scale * term.d_mean;
                    d_raw[k] += scale * term.d_var * dvar_draw;
                }
            }
        }
        if !loss.is_finite() {
            return Err(EstimatorError::NonFinite("negative log-likelihood".into()));
        }
        let mut grad = vec![0.0; self.param_count()];
        let (gm, gv) = grad.split_at_mut(self.mean.params().len());
        self.mean.backward(&e.mean_acts, &d_mean, gm);
        self.variance.backward(&e.var_acts, &d_raw, gv);
        Ok((loss, grad))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EstimatorFile {
            schema_version: SCHEMA_VERSION,
            dof: self.dof(),
            variance_floors: self.floors.clone(),
            features: self.features,
            mean: self.mean.clone(),
            variance: self.variance.clone(),
        })
        .expect("estimator serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EstimatorError> {
        let file: EstimatorFile = serde_json::from_str(text).map_err(|e| EstimatorError::File(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(EstimatorError::File(format!("unsupported schema version {}", file.schema_version)));
        }
        for net in [&file.mean, &file.variance] {
            Mlp::from_parts(net.sizes().to_vec(), net.params().to_vec())
                .ok_or_else(|| EstimatorError::File("parameter count does not match layer sizes".into()))?;
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(EstimatorError::File("non-finite parameter".into()));
            }
        }
        let mut est = Self::from_parts(file.features, file.mean, file.variance, file.dof)?;
        check_floors(&file.variance_floors, est.channels()).map_err(|e| EstimatorError::File(e.to_string()))?;
        est.floors = file.variance_floors;
        Ok(est)
    }

    pub fn variance_floors(&self) -> &[f64] {
        &self.floors
    }

    pub fn save(&self, path: &Path) -> Result<(), EstimatorError> {
        Ok(write_file(path, &self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, EstimatorError> {
        Self::from_json(&read_file(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct EstimatorFile {
    schema_version: u32,
    dof: Dof,
    variance_floors: Vec<f64>,
    features: TimeFeatures,
    mean: Mlp,
    variance: Mlp,
}

/// Selected `(q, t)` pairs grouped by step so each distinct time is evaluated once.
struct PairsByStep {
    steps: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl PairsByStep {
    fn all(samples: &SampleSet) -> Self {
        Self {
            steps: (0..samples.steps()).collect(),
            members: vec![(0..samples.count()).collect(); samples.steps()],
        }
    }

    fn sample<R: Rng + ?Sized>(samples: &SampleSet, batch: usize, rng: &mut R) -> Self {
        let mut members = vec![Vec::new(); samples.steps()];
        for _ in 0..batch {
            let q = rng.random_range(0..samples.count());
            let t = rng.random_range(0..samples.steps());
            members[t].push(q);
        }
        let steps: Vec<usize> = (0..samples.steps()).filter(|&t| !members[t].is_empty()).collect();
        let members = steps.iter().map(|&t| std::mem::take(&mut members[t])).collect();
        Self { steps, members }
    }

    fn len(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }
}

/// Σ_q Σ_t Σ_c −log S(a_{q,t,c} | t; ν).
pub fn nll_loss(samples: &SampleSet, estimator: &StudentTEstimator) -> Result<f64, EstimatorError> {
    Ok(estimator.accumulate(samples, &PairsByStep::all(samples), 1.0)?.0)
}

/// Exact gradient of [`nll_loss`] with respect to [`StudentTEstimator::params`].
pub fn loss_gradient(samples: &SampleSet, estimator: &StudentTEstimator) -> Result<Vec<f64>, EstimatorError> {
    Ok(estimator.accumulate(samples, &PairsByStep::all(samples), 1.0)?.1)
}

/// Fitted estimator plus its training curve.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub estimator: StudentTEstimator,
    /// Mean per-pair minibatch loss at every step.
    pub losses: Vec<f64>,
    /// Full-bundle [`nll_loss`] after the last step.
    pub final_loss: f64,
}

impl FitOutcome {
    /// Last `n` entries of the loss curve.
    pub fn loss_tail(&self, n: usize) -> &[f64] {
        &self.losses[self.losses.len().saturating_sub(n)..]
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-channel median of all samples and the mean squared deviation around it.
///
/// The starting variance covers the whole bundle, outliers included, so the
/// first steps behave like least squares; the t-likelihood then shrinks σ²
/// onto the consistent samples.
fn initial_moments(samples: &SampleSet) -> (Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(samples.channels());
    let mut vars = Vec::with_capacity(samples.channels());
    for c in 0..samples.channels() {
        let mut col: Vec<f64> = (0..samples.count())
            .flat_map(|q| (0..samples.steps()).map(move |t| (q, t)))
            .map(|(q, t)| samples.value(q, t, c))
            .collect();
        let m = median(&mut col);
        let spread = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
        means.push(m);
        vars.push(spread.max(MIN_INITIAL_VARIANCE));
    }
    (means, vars)
}

/// Lower bound on the starting variance so a flat channel still has gradient to follow.
const MIN_INITIAL_VARIANCE: f64 = 1e-4;

/// Minibatch Adam on the negative log-likelihood of `samples`.
pub fn fit(samples: &SampleSet, config: &FitConfig) -> Result<FitOutcome, EstimatorError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (init_mean, init_var) = initial_moments(samples);
    let mut est = StudentTEstimator::initialize_with_floors(config, &init_mean, &init_var, samples.floors(), &mut rng)?;

    let n_pairs = samples.count() * samples.steps();
    let full = (n_pairs <= config.batch_size).then(|| PairsByStep::all(samples));
    let split = est.mean_param_count();
    let mut opt_mean = Adam::new(split, config.learning_rate);
    let mut opt_var = Adam::new(est.param_count() - split, config.learning_rate);
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let sampled;
        let pairs = match &full {
            Some(all) => all,
            None => {
                sampled = PairsByStep::sample(samples, config.batch_size, &mut rng);
                &sampled
            }
        };
        let scale = 1.0 / pairs.len() as f64;
        let (loss, grad) = match est.accumulate(samples, pairs, scale) {
            Ok(v) => v,
            Err(EstimatorError::NonFinite(_)) => return Err(EstimatorError::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(EstimatorError::Diverged { step, loss });
        }
        losses.push(loss);
        let lr = config.learning_rate * config.schedule.factor(step, config.steps);
        opt_mean.set_learning_rate(lr);
        opt_var.set_learning_rate(lr);
        let (gm, gv) = grad.split_at(split);
        opt_mean.step(est.mean.params_mut(), gm);
        opt_var.step(est.variance.params_mut(), gv);
    }
    let final_loss = nll_loss(samples, &est).map_err(|_| EstimatorError::Diverged { step: config.steps, loss: f64::NAN })?;
    Ok(FitOutcome { estimator: est, losses, final_loss })
}

/// Fitted mean per channel at each grid point, `[t][c]`.
pub fn mean_curve(estimator: &StudentTEstimator, grid: &[f64]) -> Vec<Vec<f64>> {
    let d = estimator.channels();
    estimator.evaluate(grid).means.chunks_exact(d).map(<[f64]>::to_vec).collect()
}

/// The robust trajectory: μ(t) on `grid`, gripper thresholded at 0.5.
pub fn extract_mean(estimator: &StudentTEstimator, grid: &[f64]) -> Result<Trajectory, EstimatorError> {
    if estimator.channels() != ACTION_DIM {
        return Err(EstimatorError::Shape(format!("need {ACTION_DIM} channels, estimator has {}", estimator.channels())));
    }
    let actions = mean_curve(estimator, grid)
        .into_iter()
        .map(|mut c| {
            c[GRIPPER_CHANNEL] = if c[GRIPPER_CHANNEL] >= 0.5 { 1.0 } else { 0.0 };
            Action::from_channels(&c)
        })
        .collect();
    Ok(Trajectory::new(actions)?.with_source(Source::Aggregated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::time_grid;

    fn quick(dof: Dof, steps: usize) -> FitConfig {
        FitConfig { dof, steps, ..FitConfig::default() }
    }

    fn outlier_bundle() -> SampleSet {
        let grid = time_grid(20).unwrap();
        let mut series = vec![vec![0.0; 20]; 4];
        series.push(vec![10.0; 20]);
        SampleSet::scalar(grid, &series).unwrap()
    }

    #[test]
    fn nll_of_single_point() {
        let grid = vec![0.0, 1.0];
        let s = SampleSet::new(vec![0.3], 1, vec![0.7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = StudentTEstimator::initialize(&FitConfig::default(), &[0.1], &[0.5], &mut rng).unwrap();
        let expected = -est.log_density(0.7, 0.3, 0).unwrap();
        assert!((nll_loss(&s, &est).unwrap() - expected).abs() < 1e-12);
        assert!(SampleSet::scalar(grid, &[vec![1.0]]).is_err());
    }

    #[test]
    fn duplicating_bundle_doubles_loss() {
        let s = outlier_bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = StudentTEstimator::initialize(&FitConfig::default(), &[1.0], &[2.0], &mut rng).unwrap();
        let one = nll_loss(&s, &est).unwrap();
        let two = nll_loss(&s.repeated(2), &est).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-9 * one.abs());
    }

    #[test]
    fn loss_drops_when_mean_hits_common_value() {
        let grid = time_grid(5).unwrap();
        let s = SampleSet::scalar(grid, &vec![vec![0.25; 5]; 3]).unwrap();
        let config = FitConfig::default();
        let far = StudentTEstimator::initialize(&config, &[5.0], &[1.0], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let near = StudentTEstimator::initialize(&config, &[0.25], &[1.0], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(nll_loss(&s, &near).unwrap() < nll_loss(&s, &far).unwrap());
    }

    #[test]
    fn symmetric_bundle_gives_zero_mean_gradient() {
        // Mean net reduced to its bias (zero output weights) sitting at 1.0; samples at 1 ± δ.
        let grid = time_grid(6).unwrap();
        let series = vec![vec![1.3; 6], vec![0.7; 6], vec![1.05; 6], vec![0.95; 6]];
        let s = SampleSet::scalar(grid, &series).unwrap();
        let config = FitConfig { dof: Dof::Finite(1.5), ..FitConfig::default() };
        let mut est = StudentTEstimator::initialize(&config, &[1.0], &[0.2], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut p = est.params();
        let n_out_w = 64;
        let mean_len = est.mean_param_count();
        p[mean_len - 1 - n_out_w..mean_len - 1].iter_mut().for_each(|w| *w = 0.0);
        est.set_params(&p);
        for dof in [Dof::Finite(1.5), Dof::Infinite] {
            let g = loss_gradient(&s, &est.with_dof(dof)).unwrap();
            let worst = g[..mean_len].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-12, "{dof}: {worst}");
        }
    }

    #[test]
    fn fit_constant_bundle() {
        let grid = time_grid(15).unwrap();
        for c in [0.0, 0.42, -3.0] {
            let s = SampleSet::scalar(grid.clone(), &vec![vec![c; 15]; 5]).unwrap();
            let out = fit(&s, &quick(Dof::Finite(1.5), 500)).unwrap();
            let worst = mean_curve(&out.estimator, &grid).iter().map(|m| (m[0] - c).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-2 * c.abs().max(1.0), "c = {c}: {worst}");
        }
    }

    #[test]
    fn robust_location_on_planted_outlier() {
        let s = outlier_bundle();
        let grid = s.grid().to_vec();
        let t_fit = fit(&s, &quick(Dof::Finite(1.5), 1500)).unwrap();
        let worst = mean_curve(&t_fit.estimator, &grid).iter().map(|m| m[0].abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5, "t mean {worst}");

        let g_fit = fit(&s, &quick(Dof::Infinite, 1500)).unwrap();
        for m in &mean_curve(&g_fit.estimator, &grid)[1..19] {
            assert!((m[0] - 2.0).abs() <= 0.3, "gauss mean {}", m[0]);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let s = outlier_bundle();
        let a = fit(&s, &quick(Dof::Finite(1.5), 50)).unwrap();
        let b = fit(&s, &quick(Dof::Finite(1.5), 50)).unwrap();
        assert_eq!(a.estimator, b.estimator);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig { steps: 0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { learning_rate: -1.0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { hidden: vec![64, 0], ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { ln_gamma_tolerance: 1e-16, ..FitConfig::default() }.validate().is_err());
        let real = FitConfig::real_robot();
        assert_eq!((real.steps, real.learning_rate), (100_000, 5e-2));
        let sim = FitConfig::default();
        assert_eq!((sim.hidden.clone(), sim.batch_size, sim.steps, sim.learning_rate), (vec![64, 64], 64, 40_000, 1e-2));
        assert_eq!(sim.dof, Dof::Finite(1.5));
    }

    #[test]
    fn extract_thresholds_gripper() {
        let config = FitConfig::default();
        let mut mean = vec![0.1; ACTION_DIM];
        mean[GRIPPER_CHANNEL] = 0.9;
        let est = StudentTEstimator::initialize(&config, &mean, &[0.1; ACTION_DIM], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut p = est.params();
        // Zero the mean head's output weights so μ(t) is exactly the bias.
        let mean_len = est.mean_param_count();
        p[mean_len - ACTION_DIM - 64 * ACTION_DIM..mean_len - ACTION_DIM].iter_mut().for_each(|w| *w = 0.0);
        let mut est = est;
        est.set_params(&p);
        let grid = time_grid(7).unwrap();
        let traj = extract_mean(&est, &grid).unwrap();
        assert_eq!(traj.len(), 7);
        assert!(traj.actions().iter().all(|a| a.g == 1.0 && a.p0 == [0.1; 3]));
        assert_eq!(traj.source(), Some(Source::Aggregated));

        let scalar = StudentTEstimator::initialize(&config, &[0.0], &[1.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(extract_mean(&scalar, &grid), Err(EstimatorError::Shape(_))));
    }

    #[test]
    fn json_roundtrip() {
        let config = FitConfig::default();
        let est = StudentTEstimator::initialize(&config, &[0.0, 1.0], &[1.0, 2.0], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let back = StudentTEstimator::from_json(&est.to_json()).unwrap();
        assert_eq!(back, est);
        let gauss = est.with_dof(Dof::Infinite);
        assert_eq!(StudentTEstimator::from_json(&gauss.to_json()).unwrap().dof(), Dof::Infinite);
        let bumped = est.to_json().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(StudentTEstimator::from_json(&bumped), Err(EstimatorError::File(_))));

        let floored = StudentTEstimator::initialize_with_floors(&config, &[0.0, 1.0], &[1.0, 2.0], &[1e-6, 0.5], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let back = StudentTEstimator::from_json(&floored.to_json()).unwrap();
        assert_eq!(back.variance_floors(), &[1e-6, 0.5]);
    }

    #[test]
    fn gripper_channel_gets_its_own_floor() {
        let t = Trajectory::new(vec![Action::new([0.0; 3], [0.0; 3], [0.0; 3], 0.0); 4]).unwrap();
        let bundle = crate::types::align_to_longest(&[t.clone(), t]).unwrap();
        let set = SampleSet::from_bundle(&bundle);
        assert_eq!(set.floors()[GRIPPER_CHANNEL], GRIPPER_VARIANCE_FLOOR);
        assert_eq!(set.floors()[0], VARIANCE_FLOOR);
        let est = fit(&set, &FitConfig::desk().with_steps(200)).unwrap().estimator;
        assert!(est.variance_at(0.5)[GRIPPER_CHANNEL] >= GRIPPER_VARIANCE_FLOOR);
        assert!(set.clone().with_floors(vec![0.0; ACTION_DIM]).is_err());
        assert!(set.with_floors(vec![1.0; 3]).is_err());
    }

    #[test]
    fn log_density_rejects_bad_input() {
        let est = StudentTEstimator::initialize(&FitConfig::default(), &[0.0], &[1.0], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(matches!(est.log_density(f64::NAN, 0.5, 0), Err(EstimatorError::NonFinite(_))));
        assert!(matches!(est.log_density(0.0, 0.5, 3), Err(EstimatorError::Shape(_))));
        assert!(est.variance_at(0.3)[0] > 0.0);
    }
}
