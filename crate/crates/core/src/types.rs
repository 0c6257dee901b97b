//! Demonstration and trajectory data model.
//!
//! An [`Action`] is one end-effector pose written as three points (gripper
//! body and the two fingertips) plus a gripper flag, ten scalars in total.
//! Trajectories of different lengths are compared on a normalized time axis
//! in `[0, 1]`; [`align_bundle`] resamples them onto one common grid.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// Number of scalar channels in one action: three 3D points and the gripper.
pub const ACTION_DIM: usize = 10;

/// Index of the gripper channel in [`Action::to_channels`].
pub const GRIPPER_CHANNEL: usize = 9;

/// Default number of scene keypoints per observation.
pub const DEFAULT_KEYPOINT_COUNT: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory needs at least 2 actions, got {0}")]
    TooShort(usize),
    #[error("action {index}: non-finite coordinate")]
    NonFinite { index: usize },
    #[error("action {index}: gripper value {value} outside [0, 1]")]
    GripperRange { index: usize, value: f64 },
    #[error("action {index}: gripper value {value} is not 0 or 1")]
    GripperNotBinary { index: usize, value: f64 },
    #[error("keypoint set is empty")]
    NoKeypoints,
    #[error("keypoint {index}: non-finite coordinate")]
    NonFiniteKeypoint { index: usize },
    #[error("bundle needs at least one trajectory")]
    EmptyBundle,
    #[error("target length must be at least 2, got {0}")]
    BadTargetLength(usize),
    #[error("bundle trajectory {index} has length {len}, expected {expected}")]
    RaggedBundle { index: usize, len: usize, expected: usize },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed JSON: {0}")]
    Json(String),
}

/// A 3D point in meters, world frame.
pub type Point3 = [f64; 3];

/// One end-effector pose plus gripper state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub p0: Point3,
    pub p1: Point3,
    pub p2: Point3,
    /// 0 = open, 1 = closed. Fractional values only appear on raw estimator output.
    #[serde(serialize_with = "serialize_gripper")]
    pub g: f64,
}

fn serialize_gripper<S: Serializer>(g: &f64, s: S) -> Result<S::Ok, S::Error> {
    if *g == 0.0 || *g == 1.0 {
        s.serialize_u8(*g as u8)
    } else {
        s.serialize_f64(*g)
    }
}

impl Action {
    pub fn new(p0: Point3, p1: Point3, p2: Point3, g: f64) -> Self {
        Self { p0, p1, p2, g }
    }

    pub fn points(&self) -> [Point3; 3] {
        [self.p0, self.p1, self.p2]
    }

    /// Flattens to `[p0, p1, p2, g]`.
    pub fn to_channels(&self) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        for (k, p) in self.points().iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(p);
        }
        out[GRIPPER_CHANNEL] = self.g;
        out
    }

    pub fn from_channels(c: &[f64]) -> Self {
        assert!(c.len() >= ACTION_DIM, "need {ACTION_DIM} channels, got {}", c.len());
        Self {
            p0: [c[0], c[1], c[2]],
            p1: [c[3], c[4], c[5]],
            p2: [c[6], c[7], c[8]],
            g: c[GRIPPER_CHANNEL],
        }
    }

    /// Adds `offset` to all three points.
    pub fn translated(&self, offset: Point3) -> Self {
        let shift = |p: Point3| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
        Self { p0: shift(self.p0), p1: shift(self.p1), p2: shift(self.p2), g: self.g }
    }

    pub fn is_closed(&self) -> bool {
        self.g >= 0.5
    }

    fn check(&self, index: usize) -> Result<(), TrajectoryError> {
        if self.points().iter().flatten().any(|x| !x.is_finite()) {
            return Err(TrajectoryError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&self.g) {
            return Err(TrajectoryError::GripperRange { index, value: self.g });
        }
        Ok(())
    }
}

/// Where a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Demonstration,
    Sampled,
    Aggregated,
}

/// A time-ordered action sequence with at least two actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    actions: Vec<Action>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<Source>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    actions: Vec<Action>,
    #[serde(default)]
    source: Option<Source>,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = TrajectoryError;

    fn try_from(raw: RawTrajectory) -> Result<Self, Self::Error> {
        let mut t = Trajectory::new(raw.actions)?;
        t.source = raw.source;
        Ok(t)
    }
}

impl Trajectory {
    pub fn new(actions: Vec<Action>) -> Result<Self, TrajectoryError> {
        if actions.len() < 2 {
            return Err(TrajectoryError::TooShort(actions.len()));
        }
        for (i, a) in actions.iter().enumerate() {
            a.check(i)?;
        }
        Ok(Self { actions, source: None })
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = Some(source);
        self
    }

    pub fn source(&self) -> Option<Source> {
        self.source
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn first(&self) -> &Action {
        &self.actions[0]
    }

    pub fn last(&self) -> &Action {
        &self.actions[self.actions.len() - 1]
    }

    /// Demonstrations must carry a strictly binary gripper channel.
    pub fn check_binary_gripper(&self) -> Result<(), TrajectoryError> {
        match self.actions.iter().position(|a| a.g != 0.0 && a.g != 1.0) {
            Some(index) => Err(TrajectoryError::GripperNotBinary { index, value: self.actions[index].g }),
            None => Ok(()),
        }
    }

    /// Keeps the actions at `indices` (assumed sorted and in range).
    pub fn select(&self, indices: &[usize]) -> Result<Self, TrajectoryError> {
        let actions = indices.iter().map(|&i| self.actions[i]).collect();
        let mut t = Trajectory::new(actions)?;
        t.source = self.source;
        Ok(t)
    }

    pub fn translated(&self, offset: Point3) -> Self {
        Self {
            actions: self.actions.iter().map(|a| a.translated(offset)).collect(),
            source: self.source,
        }
    }

    /// Indices `t` where the gripper flips between `t` and `t + 1`.
    pub fn gripper_transitions(&self) -> Vec<usize> {
        self.actions
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].is_closed() != w[1].is_closed())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        serde_json::from_str(text).map_err(|e| TrajectoryError::Json(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        Self::from_json(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrajectoryError> {
        write_file(path, &self.to_json())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, TrajectoryError> {
    std::fs::read_to_string(path)
        .map_err(|e| TrajectoryError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), TrajectoryError> {
    std::fs::write(path, text)
        .map_err(|e| TrajectoryError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Scene keypoints in meters, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point3>", into = "Vec<Point3>")]
pub struct KeypointSet {
    points: Vec<Point3>,
}

impl TryFrom<Vec<Point3>> for KeypointSet {
    type Error = TrajectoryError;

    fn try_from(points: Vec<Point3>) -> Result<Self, Self::Error> {
        KeypointSet::new(points)
    }
}

impl From<KeypointSet> for Vec<Point3> {
    fn from(k: KeypointSet) -> Self {
        k.points
    }
}

impl KeypointSet {
    pub fn new(points: Vec<Point3>) -> Result<Self, TrajectoryError> {
        if points.is_empty() {
            return Err(TrajectoryError::NoKeypoints);
        }
        if let Some(index) = points.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(TrajectoryError::NonFiniteKeypoint { index });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }
}

/// One recorded demonstration: the observation keypoints and the action trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDemonstration")]
pub struct Demonstration {
    pub keypoints: KeypointSet,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

#[derive(Deserialize)]
struct RawDemonstration {
    keypoints: KeypointSet,
    #[serde(flatten)]
    trajectory: Trajectory,
}

impl TryFrom<RawDemonstration> for Demonstration {
    type Error = TrajectoryError;

    fn try_from(raw: RawDemonstration) -> Result<Self, Self::Error> {
        Demonstration::new(raw.keypoints, raw.trajectory)
    }
}

impl Demonstration {
    pub fn new(keypoints: KeypointSet, trajectory: Trajectory) -> Result<Self, TrajectoryError> {
        trajectory.check_binary_gripper()?;
        Ok(Self { keypoints, trajectory: trajectory.with_source(Source::Demonstration) })
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        serde_json::from_str(text).map_err(|e| TrajectoryError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("demonstration serializes")
    }
}

/// Normalized timesteps `(t - 1) / (T - 1)` for `t = 1..=T`.
pub fn normalize_time(trajectory: &Trajectory) -> Vec<f64> {
    time_grid(trajectory.len()).expect("trajectories have at least 2 actions")
}

/// Uniform grid on `[0, 1]` with `len` points.
pub fn time_grid(len: usize) -> Result<Vec<f64>, TrajectoryError> {
    if len < 2 {
        return Err(TrajectoryError::TooShort(len));
    }
    let last = (len - 1) as f64;
    Ok((0..len).map(|i| i as f64 / last).collect())
}

/// Q candidate trajectories resampled onto one normalized time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    trajectories: Vec<Trajectory>,
    grid: Vec<f64>,
}

impl TrajectoryBundle {
    /// Wraps trajectories that already share one length.
    pub fn from_aligned(trajectories: Vec<Trajectory>) -> Result<Self, TrajectoryError> {
        let first = trajectories.first().ok_or(TrajectoryError::EmptyBundle)?;
        let expected = first.len();
        for (index, t) in trajectories.iter().enumerate() {
            if t.len() != expected {
                return Err(TrajectoryError::RaggedBundle { index, len: t.len(), expected });
            }
        }
        Ok(Self { grid: time_grid(expected)?, trajectories })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Common length T*.
    pub fn steps(&self) -> usize {
        self.grid.len()
    }

    pub fn count(&self) -> usize {
        self.trajectories.len()
    }
}

/// Resamples every trajectory onto a shared uniform grid of `target_len` steps.
///
/// Positions are interpolated linearly in each trajectory's own normalized
/// time. The gripper holds the previous sample so it never takes a value the
/// source did not have. The first and last actions are copied exactly.
pub fn align_bundle(trajectories: &[Trajectory], target_len: usize) -> Result<TrajectoryBundle, TrajectoryError> {
    if trajectories.is_empty() {
        return Err(TrajectoryError::EmptyBundle);
    }
    if target_len < 2 {
        return Err(TrajectoryError::BadTargetLength(target_len));
    }
    let resampled = trajectories
        .iter()
        .map(|t| resample(t, target_len))
        .collect::<Result<Vec<_>, _>>()?;
    TrajectoryBundle::from_aligned(resampled)
}

/// Aligns to the longest member, which never discards samples.
pub fn align_to_longest(trajectories: &[Trajectory]) -> Result<TrajectoryBundle, TrajectoryError> {
    let longest = trajectories.iter().map(Trajectory::len).max().ok_or(TrajectoryError::EmptyBundle)?;
    align_bundle(trajectories, longest)
}

/// Resamples a single trajectory to `target_len` steps.
pub fn resample(trajectory: &Trajectory, target_len: usize) -> Result<Trajectory, TrajectoryError> {
    if target_len < 2 {
        return Err(TrajectoryError::BadTargetLength(target_len));
    }
    let src = trajectory.actions();
    let span = src.len() - 1;
    let out_span = target_len - 1;
    let actions = (0..target_len)
        .map(|j| {
            // Position j/out_span on the source axis is (j * span) / out_span; keep it rational
            // so grid points that coincide with source samples copy them bit for bit.
            let num = j * span;
            let i = num / out_span;
            let rem = num % out_span;
            if rem == 0 {
                return src[i];
            }
            let frac = rem as f64 / out_span as f64;
            let (a, b) = (&src[i], &src[i + 1]);
            let lerp = |p: Point3, q: Point3| {
                [p[0] + (q[0] - p[0]) * frac, p[1] + (q[1] - p[1]) * frac, p[2] + (q[2] - p[2]) * frac]
            };
            Action { p0: lerp(a.p0, b.p0), p1: lerp(a.p1, b.p1), p2: lerp(a.p2, b.p2), g: a.g }
        })
        .collect();
    let mut t = Trajectory::new(actions)?;
    t.source = trajectory.source;
    Ok(t)
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p0={:?} p1={:?} p2={:?} g={}", self.p0, self.p1, self.p2, self.g)
    }
}
