//! Task scores: the pouring air column and the weighted cabinet score.

use crate::config::TaskId;
use crate::error::{Error, Result};
use crate::world::{Episode, LatchState, WorldState};

/// Weights of door slide, base displacement and base rotation.
pub const CABINET_WEIGHTS: (f64, f64, f64) = (0.3, 0.3, 0.4);

/// Remaining air column in metres; a spill scores the full container
/// height. Lower is better.
pub fn pour_metric(ep: &Episode) -> Result<f64> {
    if ep.task != TaskId::Pour {
        return Err(Error::TaskMismatch {
            expected: TaskId::Pour.to_string(),
            got: ep.task.to_string(),
        });
    }
    if ep.is_empty() {
        return Err(Error::Empty("episode"));
    }
    match ep.final_state() {
        WorldState::Pour(s) => Ok(air_column(s.container_params.height, s.fill_level, s.spilled)),
        WorldState::Latch(_) => unreachable!("task checked above"),
    }
}

pub fn air_column(height: f64, fill: f64, spilled: bool) -> f64 {
    if spilled {
        height
    } else {
        height * (1.0 - fill.clamp(0.0, 1.0))
    }
}

/// `alpha * d_slide + beta * d_disp + gamma * theta_rot`.
pub fn cabinet_score(d_slide: f64, d_disp: f64, theta_rot: f64, alpha: f64, beta: f64, gamma: f64) -> Result<f64> {
    for (name, v) in [("d_slide", d_slide), ("d_disp", d_disp), ("theta_rot", theta_rot)] {
        if !(v >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
        }
    }
    Ok(alpha * d_slide + beta * d_disp + gamma * theta_rot)
}

pub fn latch_score_of(s: &LatchState) -> f64 {
    let (a, b, g) = CABINET_WEIGHTS;
    a * (1.0 - s.door_position).max(0.0) + b * s.base_displacement.abs() + g * s.base_rotation.abs()
}

pub fn latch_score(ep: &Episode) -> Result<f64> {
    if ep.task != TaskId::Latch {
        return Err(Error::TaskMismatch {
            expected: TaskId::Latch.to_string(),
            got: ep.task.to_string(),
        });
    }
    if ep.is_empty() {
        return Err(Error::Empty("episode"));
    }
    match ep.final_state() {
        WorldState::Latch(s) => Ok(latch_score_of(&s)),
        WorldState::Pour(_) => unreachable!("task checked above"),
    }
}

/// The task's metric for an episode (lower is better for both).
pub fn episode_metric(ep: &Episode) -> Result<f64> {
    match ep.task {
        TaskId::Pour => pour_metric(ep),
        TaskId::Latch => latch_score(ep),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorldConfig;
    use crate::world;

    fn paper(a: f64, b: f64, c: f64) -> f64 {
        let (x, y, z) = CABINET_WEIGHTS;
        cabinet_score(a, b, c, x, y, z).unwrap()
    }

    #[test]
    fn cabinet_examples() {
        assert_eq!(paper(0.0, 0.0, 0.0), 0.0);
        assert!((paper(1.0, 1.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((paper(2.0, 0.0, 5.0) - 2.6).abs() < 1e-12);
        assert!(cabinet_score(-1.0, 0.0, 0.0, 0.3, 0.3, 0.4).is_err());
    }

    #[test]
    fn air_column_examples() {
        assert_eq!(air_column(0.1, 1.0, false), 0.0);
        assert_eq!(air_column(0.1, 0.0, false), 0.1);
        assert!((air_column(0.10, 0.6, false) - 0.04).abs() < 1e-12);
        assert_eq!(air_column(0.1, 0.9, true), 0.1);
    }

    #[test]
    fn expert_scores() {
        let cfg = WorldConfig::default();
        let (ep, ok) = world::expert_episode(&cfg, 11);
        assert!(ok);
        assert!(pour_metric(&ep).unwrap() <= cfg.expert_deadband * cfg.container.height);
        assert!(latch_score(&ep).is_err());
        let lcfg = WorldConfig {
            task: TaskId::Latch,
            ..WorldConfig::default()
        };
        let (ep, ok) = world::expert_episode(&lcfg, 11);
        assert!(ok);
        assert!(latch_score(&ep).unwrap() < 0.05);
        let untouched = world::latch::initial_state(&mut crate::rng::stream(0, "x"), &lcfg);
        assert!((latch_score_of(&untouched) - 0.3).abs() < 1e-12);
    }
}
