//! Synthetic tasks and a hallucinating stand-in for a language-model policy.
//!
//! Every task is built from one object-relative motion template. Each
//! demonstration places the object somewhere else on the table and shifts
//! the template with it, and all keypoints are attached to the object. The
//! "instant policy" can therefore be imitated exactly by [`retarget`]: take
//! the demonstration whose keypoints sit closest to the query's and translate
//! it by the keypoint displacement. The oracle returns noisy copies of that
//! consensus, and with probability `hallucination_prob` a copy displaced far
//! away instead.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tokenizer::PolicyContext;
use crate::types::{resample, Action, Demonstration, KeypointSet, Point3, Source, Trajectory, DEFAULT_KEYPOINT_COUNT};

/// Mixes a base seed with an index into an independent stream seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskShape {
    /// Straight line to a hover point above the object; gripper stays open.
    Reach,
    /// Approach behind the object, pause, push it forward; gripper stays open.
    Push,
    /// Descend, close the gripper, lift.
    Pick,
}

impl TaskShape {
    pub const ALL: [TaskShape; 3] = [TaskShape::Reach, TaskShape::Push, TaskShape::Pick];
}

impl std::str::FromStr for TaskShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reach" => Ok(TaskShape::Reach),
            "push" => Ok(TaskShape::Push),
            "pick" => Ok(TaskShape::Pick),
            other => Err(format!("unknown task shape {other:?} (expected reach, push or pick)")),
        }
    }
}

/// Knobs of the task generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub shape: TaskShape,
    /// Inclusive range of trajectory lengths.
    pub len_range: (usize, usize),
    pub demonstrations: usize,
    pub keypoints: usize,
    /// Inclusive range of steps the gripper rests at the grasp point after closing (pick only).
    pub hold_steps: (usize, usize),
    /// Range of the share of steps spent lifting after the grasp (pick only).
    pub lift_fraction: (f64, f64),
}

impl TaskSpec {
    pub fn new(shape: TaskShape) -> Self {
        Self { shape, len_range: (20, 40), demonstrations: 3, keypoints: DEFAULT_KEYPOINT_COUNT, hold_steps: (2, 2), lift_fraction: (0.3, 0.3) }
    }

    /// Pick task recorded at a high control rate: a few hundred steps, a short
    /// rest after closing and a quick lift, so a plain fixed stride often
    /// lands its first closed sample mid-lift.
    pub fn high_rate_pick() -> Self {
        Self { len_range: (240, 360), hold_steps: (2, 10), lift_fraction: (0.04, 0.1), ..Self::new(TaskShape::Pick) }
    }
}

/// A generated task: the context handed to the policy and the ground truth it should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub context: PolicyContext,
    pub consensus: Trajectory,
}

const FINGER_HALF_WIDTH: f64 = 0.04;
const FINGER_LENGTH: f64 = 0.10;

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn lerp(a: Point3, b: Point3, f: f64) -> Point3 {
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, a[2] + (b[2] - a[2]) * f]
}

fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Gripper pose whose body sits at `body`, fingers spread across `yaw`.
fn pose(body: Point3, yaw: f64, g: f64) -> Action {
    let (s, c) = yaw.sin_cos();
    let across = [-s * FINGER_HALF_WIDTH, c * FINGER_HALF_WIDTH, 0.0];
    let tip = [body[0], body[1], body[2] - FINGER_LENGTH];
    Action::new(body, add(tip, across), sub(tip, across), g)
}

/// `n` evenly spaced points from `a` to `b`, both included when `n >= 2`.
fn segment(a: Point3, b: Point3, n: usize) -> Vec<Point3> {
    match n {
        0 => vec![],
        1 => vec![b],
        _ => (0..n).map(|i| lerp(a, b, i as f64 / (n - 1) as f64)).collect(),
    }
}

/// Object-relative template (object at the origin).
fn template<R: Rng + ?Sized>(spec: &TaskSpec, rng: &mut R) -> Trajectory {
    let len = rng.random_range(spec.len_range.0..=spec.len_range.1);
    let yaw = rng.random_range(-PI / 4.0..PI / 4.0);
    let start = [rng.random_range(-0.25..-0.15), rng.random_range(-0.15..0.15), rng.random_range(0.30..0.40)];
    let hover = FINGER_LENGTH + 0.02;
    let open = |p: Point3| pose(p, yaw, 0.0);
    let actions: Vec<Action> = match spec.shape {
        TaskShape::Reach => segment(start, [0.0, 0.0, hover], len).into_iter().map(open).collect(),
        TaskShape::Push => {
            let behind = [-0.08, 0.0, FINGER_LENGTH + 0.01];
            let ahead = [0.12, 0.0, FINGER_LENGTH + 0.01];
            let pause = 3;
            let approach = (len - pause) * 3 / 5;
            let push = len - pause - approach;
            let mut pts = segment(start, behind, approach);
            pts.extend(std::iter::repeat_n(behind, pause));
            pts.extend(segment(behind, ahead, push + 1).into_iter().skip(1));
            pts.into_iter().map(open).collect()
        }
        TaskShape::Pick => {
            let grasp = [0.0, 0.0, FINGER_LENGTH];
            let lifted = [0.0, 0.0, FINGER_LENGTH + 0.15];
            let fraction = if spec.lift_fraction.0 < spec.lift_fraction.1 {
                rng.random_range(spec.lift_fraction.0..spec.lift_fraction.1)
            } else {
                spec.lift_fraction.0
            };
            let lift = ((len as f64 * fraction).round() as usize).max(2);
            let hold = rng.random_range(spec.hold_steps.0..=spec.hold_steps.1);
            let descend = len - hold - lift;
            let mut out: Vec<Action> = segment(start, grasp, descend).into_iter().map(open).collect();
            out.extend(std::iter::repeat_n(pose(grasp, yaw, 1.0), hold));
            out.extend(segment(grasp, lifted, lift + 1).into_iter().skip(1).map(|p| pose(p, yaw, 1.0)));
            out
        }
    };
    debug_assert_eq!(actions.len(), len);
    Trajectory::new(actions).expect("template is well-formed")
}

fn object_position<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    [rng.random_range(0.35..0.65), rng.random_range(-0.25..0.25), 0.0]
}

/// Generates a task per `spec`; the consensus is [`retarget`] of the context.
pub fn make_task(seed: u64, spec: &TaskSpec) -> SyntheticTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tmpl = template(spec, &mut rng);
    let shape_points: Vec<Point3> = (0..spec.keypoints.max(1))
        .map(|_| [rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(0.0..0.06)])
        .collect();
    let keypoints_at = |o: Point3| KeypointSet::new(shape_points.iter().map(|p| add(*p, o)).collect()).expect("finite keypoints");

    let demonstrations = (0..spec.demonstrations.max(1))
        .map(|_| {
            let o = object_position(&mut rng);
            Demonstration::new(keypoints_at(o), tmpl.translated(o)).expect("binary gripper")
        })
        .collect();
    let query = keypoints_at(object_position(&mut rng));
    let context = PolicyContext::new(demonstrations, query).expect("consistent keypoint counts");
    let consensus = retarget(&context);
    SyntheticTask { context, consensus }
}

/// Ground-truth context and trajectory for a standard 20–40 step task.
pub fn make_consensus_task(seed: u64, shape: TaskShape) -> (PolicyContext, Trajectory) {
    let task = make_task(seed, &TaskSpec::new(shape));
    (task.context, task.consensus)
}

/// Nearest demonstration by keypoint centroid, shifted onto the query keypoints.
pub fn retarget(context: &PolicyContext) -> Trajectory {
    let target = context.query_keypoints.centroid();
    let nearest = context
        .demonstrations
        .iter()
        .min_by(|a, b| {
            norm(sub(a.keypoints.centroid(), target)).total_cmp(&norm(sub(b.keypoints.centroid(), target)))
        })
        .expect("validated context has demonstrations");
    let shift = sub(target, nearest.keypoints.centroid());
    nearest.trajectory.translated(shift).with_source(Source::Sampled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationMode {
    /// Consensus copy displaced by Δ in a random direction.
    Offset,
    /// Consensus displaced by Δ plus a drift that only moves further away.
    RandomWalk,
}

impl std::str::FromStr for HallucinationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "offset" => Ok(HallucinationMode::Offset),
            "random-walk" | "random_walk" => Ok(HallucinationMode::RandomWalk),
            other => Err(format!("unknown hallucination mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOracleConfig {
    pub seed: u64,
    /// Per-coordinate Gaussian noise σ_n (meters).
    pub noise: f64,
    pub hallucination_prob: f64,
    /// Hallucination displacement Δ (meters).
    pub hallucination_offset: f64,
    pub mode: HallucinationMode,
    /// Each sample's length is drawn from `consensus_len ± length_jitter`.
    pub length_jitter: usize,
    /// Number of slots forced to hallucinate, on top of `hallucination_prob`.
    pub planted: usize,
}

impl Default for SyntheticOracleConfig {
    fn default() -> Self {
        Self { seed: 0, noise: 0.005, hallucination_prob: 0.2, hallucination_offset: 0.14, mode: HallucinationMode::Offset, length_jitter: 0, planted: 0 }
    }
}

impl SyntheticOracleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(format!("noise must be non-negative, got {}", self.noise));
        }
        if !(self.hallucination_offset >= 0.0 && self.hallucination_offset.is_finite()) {
            return Err(format!("hallucination offset must be non-negative, got {}", self.hallucination_offset));
        }
        if !(0.0..=1.0).contains(&self.hallucination_prob) {
            return Err(format!("hallucination probability must lie in [0, 1], got {}", self.hallucination_prob));
        }
        Ok(())
    }
}

/// Deterministic hallucinating policy.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    config: SyntheticOracleConfig,
}

impl SyntheticOracle {
    pub fn new(config: SyntheticOracleConfig) -> Result<Self, String> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SyntheticOracleConfig {
        &self.config
    }

    /// Slots forced to hallucinate for a run of `count` queries.
    pub fn planted_slots(&self, count: usize) -> Vec<usize> {
        let mut slots: Vec<usize> = (0..count).collect();
        slots.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, u64::MAX)));
        slots.truncate(self.config.planted.min(count));
        slots
    }

    /// Answer to query `index`; `planted` forces a hallucination.
    pub fn sample(&self, context: &PolicyContext, index: usize, planted: bool) -> Trajectory {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
        let hallucinate = rng.random::<f64>() < cfg.hallucination_prob || planted;
        let jitter = if cfg.length_jitter > 0 {
            rng.random_range(-(cfg.length_jitter as i64)..=cfg.length_jitter as i64)
        } else {
            0
        };
        let consensus = retarget(context);
        let len = (consensus.len() as i64 + jitter).max(2) as usize;
        let base = resample(&consensus, len).expect("len >= 2");

        let dir = random_unit(&mut rng);
        let mut displacement = vec![[0.0; 3]; len];
        if hallucinate {
            let delta = cfg.hallucination_offset;
            match cfg.mode {
                HallucinationMode::Offset => displacement.iter_mut().for_each(|d| *d = scale(dir, delta)),
                HallucinationMode::RandomWalk => {
                    let step = Normal::new(0.0, delta / len as f64).expect("finite scale");
                    let mut w = scale(dir, delta);
                    for d in displacement.iter_mut() {
                        *d = w;
                        let mut inc = [step.sample(&mut rng), step.sample(&mut rng), step.sample(&mut rng)];
                        // Keep the drift from heading back toward the consensus.
                        let along = inc[0] * dir[0] + inc[1] * dir[1] + inc[2] * dir[2];
                        if along < 0.0 {
                            inc = sub(inc, scale(dir, 2.0 * along));
                        }
                        w = add(w, inc);
                    }
                }
            }
        }

        let noise = Normal::new(0.0, cfg.noise).expect("validated noise");
        let actions = base
            .actions()
            .iter()
            .zip(&displacement)
            .map(|(a, d)| {
                let mut jiggle = |p: Point3| {
                    let q = add(p, *d);
                    if cfg.noise > 0.0 {
                        [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng), q[2] + noise.sample(&mut rng)]
                    } else {
                        q
                    }
                };
                Action::new(jiggle(a.p0), jiggle(a.p1), jiggle(a.p2), a.g)
            })
            .collect();
        Trajectory::new(actions).expect("finite samples").with_source(Source::Sampled)
    }
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    loop {
        let v: Point3 = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let n = norm(v);
        if n > 1e-9 {
            return scale(v, 1.0 / n);
        }
    }
}

/// Mean over steps of the body-point distance between two equal-length trajectories.
pub fn mean_deviation(a: &Trajectory, b: &Trajectory) -> f64 {
    assert_eq!(a.len(), b.len(), "trajectories must share a length");
    let total: f64 = a.actions().iter().zip(b.actions()).map(|(x, y)| norm(sub(x.p0, y.p0))).sum();
    total / a.len() as f64
}
