//! Gripper-aware downsampling of high-rate demonstrations.
//!
//! Plain uniform striding can skip the steps where the gripper closes or
//! opens. [`downsample`] first pins the episode endpoints and both sides of
//! every gripper transition, then thins the stretches in between.

use thiserror::Error;

use crate::types::{Trajectory, TrajectoryError};

/// Length most instant-policy prompts work well with.
pub const DEFAULT_TARGET_LEN: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DownsampleError {
    #[error("target length {target} is smaller than the {masked} masked key steps")]
    TargetBelowMask { target: usize, masked: usize },
    #[error("target length must be at least 2, got {0}")]
    TargetTooSmall(usize),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Zero-based indices that must survive downsampling: the first and last
/// steps and both `t` and `t + 1` of every gripper flip. Sorted, unique.
pub fn mask_key_steps(trajectory: &Trajectory) -> Vec<usize> {
    let mut mask = vec![0, trajectory.len() - 1];
    for t in trajectory.gripper_transitions() {
        mask.push(t);
        mask.push(t + 1);
    }
    mask.sort_unstable();
    mask.dedup();
    mask
}

/// Indices selected by [`downsample`].
pub fn downsample_indices(trajectory: &Trajectory, target_len: usize) -> Result<Vec<usize>, DownsampleError> {
    let len = trajectory.len();
    if len <= target_len {
        return Ok((0..len).collect());
    }
    let mask = mask_key_steps(trajectory);
    if target_len < mask.len() {
        return Err(DownsampleError::TargetBelowMask { target: target_len, masked: mask.len() });
    }

    let gaps: Vec<usize> = mask.windows(2).map(|w| w[1] - w[0] - 1).collect();
    let budget = allocate(target_len - mask.len(), &gaps);

    let mut out = Vec::with_capacity(target_len);
    for (seg, w) in mask.windows(2).enumerate() {
        out.push(w[0]);
        let (start, interior, take) = (w[0], gaps[seg], budget[seg]);
        // Evenly spaced interior points; spacing is at least one step since take <= interior.
        let spacing = (interior + 1) as f64 / (take + 1) as f64;
        out.extend((1..=take).map(|j| start + (j as f64 * spacing).round() as usize));
    }
    out.push(*mask.last().expect("mask holds the endpoints"));
    Ok(out)
}

/// Largest-remainder split of `budget` proportional to `sizes`; ties go to earlier segments.
fn allocate(budget: usize, sizes: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| budget * s / total).collect();
    let mut left = budget - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainders compared exactly as (budget * s) mod total.
    order.sort_by(|&a, &b| ((budget * sizes[b]) % total).cmp(&((budget * sizes[a]) % total)).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Thins `trajectory` to about `target_len` steps while keeping every masked key step.
pub fn downsample(trajectory: &Trajectory, target_len: usize) -> Result<Trajectory, DownsampleError> {
    let indices = downsample_indices(trajectory, target_len)?;
    Ok(trajectory.select(&indices)?)
}

/// Indices selected by [`uniform_downsample`].
pub fn uniform_indices(len: usize, target_len: usize) -> Result<Vec<usize>, DownsampleError> {
    if target_len < 2 {
        return Err(DownsampleError::TargetTooSmall(target_len));
    }
    if len <= target_len {
        return Ok((0..len).collect());
    }
    let stride = (len - 1) as f64 / (target_len - 1) as f64;
    Ok((0..target_len).map(|i| (i as f64 * stride).round() as usize).collect())
}

/// Fixed-stride subsampling that keeps the endpoints and ignores the gripper.
pub fn uniform_downsample(trajectory: &Trajectory, target_len: usize) -> Result<Trajectory, DownsampleError> {
    let indices = uniform_indices(trajectory.len(), target_len)?;
    Ok(trajectory.select(&indices)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Action;

    /// Trajectory whose x coordinate is the step index, gripper closed on `closed` (1-based, inclusive).
    fn traj(len: usize, closed: &[(usize, usize)]) -> Trajectory {
        let actions = (1..=len)
            .map(|t| {
                let g = closed.iter().any(|&(a, b)| (a..=b).contains(&t));
                Action::new([t as f64, 0.0, 0.0], [0.0; 3], [0.0; 3], if g { 1.0 } else { 0.0 })
            })
            .collect();
        Trajectory::new(actions).unwrap()
    }

    fn one_based(v: Vec<usize>) -> Vec<usize> {
        v.into_iter().map(|i| i + 1).collect()
    }

    #[test]
    fn mask_examples() {
        assert_eq!(one_based(mask_key_steps(&traj(100, &[]))), vec![1, 100]);
        assert_eq!(one_based(mask_key_steps(&traj(300, &[(151, 300)]))), vec![1, 150, 151, 300]);
        assert_eq!(one_based(mask_key_steps(&traj(60, &[(11, 40)]))), vec![1, 10, 11, 40, 41, 60]);
    }

    #[test]
    fn mask_dedups_transitions_at_edges() {
        assert_eq!(one_based(mask_key_steps(&traj(5, &[(2, 5)]))), vec![1, 2, 5]);
        assert_eq!(one_based(mask_key_steps(&traj(2, &[(2, 2)]))), vec![1, 2]);
    }

    #[test]
    fn short_input_is_identity() {
        let t = traj(25, &[(10, 12)]);
        assert_eq!(downsample(&t, 30).unwrap(), t);
        assert_eq!(uniform_downsample(&t, 30).unwrap(), t);
    }

    #[test]
    fn keeps_transition_at_300() {
        let t = traj(300, &[(151, 300)]);
        let out = downsample_indices(&t, 30).unwrap();
        for k in [0, 149, 150, 299] {
            assert!(out.contains(&k), "missing {k}");
        }
        assert!((26..=34).contains(&out.len()));
        assert!(out.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn no_transitions_is_uniform() {
        let t = traj(60, &[]);
        let out = downsample_indices(&t, 30).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!((out[0], out[29]), (0, 59));
        let steps: Vec<usize> = out.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|&s| s == 2 || s == 3), "{steps:?}");
    }

    #[test]
    fn target_below_mask_errors() {
        let t = traj(100, &[(10, 20), (30, 40)]);
        assert_eq!(
            downsample(&t, 5),
            Err(DownsampleError::TargetBelowMask { target: 5, masked: 10 })
        );
        assert!(downsample(&t, 10).is_ok());
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_indices(4, 2).unwrap(), vec![0, 3]);
        assert!(uniform_indices(10, 1).is_err());
        let t = traj(300, &[(151, 300)]);
        let idx = uniform_indices(300, 30).unwrap();
        assert!(!idx.contains(&149), "uniform stride happens to keep the last open step");
        let out = uniform_downsample(&t, 30).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!(out.first(), t.first());
        assert_eq!(out.last(), t.last());
    }

    #[test]
    fn allocation_favours_earlier_ties() {
        assert_eq!(allocate(1, &[5, 5]), vec![1, 0]);
        assert_eq!(allocate(3, &[2, 4]), vec![1, 2]);
        assert_eq!(allocate(0, &[0, 0]), vec![0, 0]);
    }
}
