//! Pouring: a source cup carried by the end effector pours into an opaque
//! target container. The fill level is never rendered; it is only audible
//! as the pitch of a resonance tone while liquid flows.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::{self, Quat, Vec3};
use crate::config::{ContainerParams, WorldConfig};

pub const CUP_HEIGHT: f64 = 0.08;
pub const CUP_RADIUS: f64 = 0.03;
const HAND_SIZE: Vec3 = [0.06, 0.02, 0.04];
const HAND_OFFSET: Vec3 = [0.0, 0.045, 0.04];

/// Container all flow coefficients are quoted against.
pub const REFERENCE_CONTAINER: ContainerParams = ContainerParams {
    height: 0.10,
    radius_top: 0.04,
    radius_bottom: 0.035,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PourState {
    pub tilt_angle: f64,
    pub fill_level: f64,
    pub spilled: bool,
    /// Position (m) followed by a unit quaternion `(w, x, y, z)`.
    pub ee_pose: [f64; 7],
    pub container_params: ContainerParams,
    pub time_step: usize,
    /// Hidden per-episode flow coefficient (fill fraction per second per
    /// radian above threshold, for the reference container).
    pub flow_coef: f64,
    /// Oscillator phase carried across audio blocks.
    pub phase: f64,
}

/// Width of a flattened [`PourState`] record.
pub const POUR_STATE_WIDTH: usize = 14;

impl PourState {
    pub fn position(&self) -> Vec3 {
        [self.ee_pose[0], self.ee_pose[1], self.ee_pose[2]]
    }

    pub fn orientation(&self) -> Quat {
        [self.ee_pose[3], self.ee_pose[4], self.ee_pose[5], self.ee_pose[6]]
    }

    pub fn to_record(&self) -> Vec<f64> {
        let mut r = vec![self.tilt_angle, self.fill_level, self.spilled as u8 as f64];
        r.extend_from_slice(&self.ee_pose);
        r.extend([self.time_step as f64, self.flow_coef, self.phase, 0.0]);
        r
    }

    pub fn from_record(r: &[f64], container_params: ContainerParams) -> Self {
        let mut ee_pose = [0.0; 7];
        ee_pose.copy_from_slice(&r[3..10]);
        PourState {
            tilt_angle: r[0],
            fill_level: r[1],
            spilled: r[2] > 0.5,
            ee_pose,
            container_params,
            time_step: r[10] as usize,
            flow_coef: r[11],
            phase: r[12],
        }
    }
}

/// Canonical surface samples of the scene objects, drawn once per episode.
#[derive(Clone, Debug)]
pub struct PourScene {
    target: Vec<Vec3>,
    cup: Vec<Vec3>,
    hand: Vec<Vec3>,
}

impl PourScene {
    pub fn new<R: Rng>(rng: &mut R, cfg: &WorldConfig) -> Self {
        let n = cfg.raw_points;
        let n_target = n / 2;
        let n_cup = (n * 7) / 20;
        let n_hand = n - n_target - n_cup;
        let c = cfg.container;
        PourScene {
            target: geometry::sample_frustum(rng, n_target, c.height, c.radius_top, c.radius_bottom),
            cup: geometry::sample_frustum(rng, n_cup, CUP_HEIGHT, CUP_RADIUS, CUP_RADIUS),
            hand: geometry::sample_box(rng, n_hand, HAND_SIZE)
                .into_iter()
                .map(|p| geometry::add(p, HAND_OFFSET))
                .collect(),
        }
    }

    /// World-frame points for the given end-effector pose.
    pub fn render(&self, ee_pose: &[f64; 7]) -> Vec<Vec3> {
        let pos = [ee_pose[0], ee_pose[1], ee_pose[2]];
        let q = [ee_pose[3], ee_pose[4], ee_pose[5], ee_pose[6]];
        let mut out = self.target.clone();
        out.extend(
            self.cup
                .iter()
                .chain(&self.hand)
                .map(|&p| geometry::add(pos, geometry::rotate(q, p))),
        );
        out
    }
}

/// Pose the expert pours from.
pub fn pour_position(cfg: &WorldConfig) -> Vec3 {
    [0.0, 0.06, cfg.container.height + 0.05]
}

pub fn retreat_position(cfg: &WorldConfig) -> Vec3 {
    geometry::add(pour_position(cfg), [0.0, 0.10, 0.08])
}

pub fn default_crop() -> ([f64; 3], [f64; 3]) {
    ([-0.15, -0.15, -0.01], [0.15, 0.35, 0.40])
}

pub fn initial_state<R: Rng>(rng: &mut R, cfg: &WorldConfig) -> PourState {
    let p = pour_position(cfg);
    let pos = geometry::add(
        p,
        [
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.14..-0.06),
            rng.random_range(0.0..0.05),
        ],
    );
    PourState {
        tilt_angle: 0.0,
        fill_level: 0.0,
        spilled: false,
        ee_pose: [pos[0], pos[1], pos[2], 1.0, 0.0, 0.0, 0.0],
        container_params: cfg.container,
        time_step: 0,
        flow_coef: if cfg.flow_min < cfg.flow_max {
            rng.random_range(cfg.flow_min..cfg.flow_max)
        } else {
            cfg.flow_min
        },
        phase: 0.0,
    }
}

/// Clips a delta-pose command to the configured per-step bounds and
/// returns the translation and the normalized rotation increment.
pub fn clip_pose_delta(action: &[f64], cfg: &WorldConfig) -> (Vec3, Quat) {
    let lin = cfg.max_speed * cfg.dt();
    let half = (cfg.max_tilt_rate * cfg.dt() / 2.0).sin();
    let w_min = (cfg.max_tilt_rate * cfg.dt() / 2.0).cos();
    let get = |i: usize| action.get(i).copied().filter(|v| v.is_finite()).unwrap_or(0.0);
    let d = [get(0).clamp(-lin, lin), get(1).clamp(-lin, lin), get(2).clamp(-lin, lin)];
    let q = [get(3).clamp(w_min, 1.0), get(4).clamp(-half, half), get(5).clamp(-half, half), get(6).clamp(-half, half)];
    (d, geometry::quat_normalize(q))
}

/// Fill fraction per second for the current tilt.
pub fn flow_rate(state: &PourState, cfg: &WorldConfig) -> f64 {
    let scale = REFERENCE_CONTAINER.capacity() / state.container_params.capacity();
    state.flow_coef * scale * (state.tilt_angle - cfg.tilt_threshold).max(0.0)
}

pub fn resonance_frequency(fill: f64, cfg: &WorldConfig) -> f64 {
    cfg.f_min + fill * (cfg.f_max - cfg.f_min)
}

pub fn noise_std(cfg: &WorldConfig) -> f64 {
    if cfg.noise_free() {
        0.0
    } else {
        cfg.tone_amplitude / std::f64::consts::SQRT_2 * 10f64.powf(-cfg.snr_db / 20.0)
    }
}

pub(crate) fn add_noise<R: Rng>(block: &mut [f64], std: f64, rng: &mut R) {
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        for s in block.iter_mut() {
            *s += normal.sample(rng);
        }
    }
}

/// One control step. Returns the next state and the audio block recorded
/// during it; render the next observation with [`PourScene::render`].
pub fn pour_step<R: Rng>(state: &PourState, action: &[f64], cfg: &WorldConfig, noise_rng: &mut R) -> (PourState, Vec<f64>) {
    let (d, dq) = clip_pose_delta(action, cfg);
    let mut next = state.clone();
    let pos = geometry::add(state.position(), d);
    let q = geometry::quat_normalize(geometry::quat_mul(state.orientation(), dq));
    next.ee_pose = [pos[0], pos[1], pos[2], q[0], q[1], q[2], q[3]];
    next.tilt_angle = geometry::tilt_of(q);
    next.time_step += 1;

    let rate = flow_rate(&next, cfg);
    let mut block = vec![0.0; cfg.block_len()];
    if rate > 0.0 {
        let filled = state.fill_level + rate * cfg.dt();
        if filled > 1.0 {
            next.spilled = true;
        }
        next.fill_level = filled.min(1.0);
        let freq = resonance_frequency(next.fill_level, cfg);
        let w = std::f64::consts::TAU * freq / cfg.sample_rate as f64;
        for (i, s) in block.iter_mut().enumerate() {
            *s = cfg.tone_amplitude * (state.phase + w * i as f64).sin();
        }
        next.phase = (state.phase + w * block.len() as f64).rem_euclid(std::f64::consts::TAU);
    }
    add_noise(&mut block, noise_std(cfg), noise_rng);
    (next, block)
}

/// Whether the expert considers the pour complete.
pub fn pour_done(state: &PourState, cfg: &WorldConfig) -> bool {
    state.spilled || state.fill_level >= cfg.target_fill - cfg.expert_deadband / 2.0
}

/// Proportional pouring controller reading the hidden fill level.
pub fn pour_expert(state: &PourState, cfg: &WorldConfig) -> Vec<f64> {
    let dt = cfg.dt();
    let pos = state.position();
    let (goal, desired_tilt) = if pour_done(state, cfg) {
        (retreat_position(cfg), 0.0)
    } else {
        let p = pour_position(cfg);
        if geometry::norm(geometry::sub(p, pos)) > 0.005 && state.tilt_angle < 0.05 {
            (p, 0.0)
        } else {
            let excess = (cfg.expert_gain * (cfg.target_fill - state.fill_level)).clamp(0.0, cfg.max_pour_tilt);
            (p, cfg.tilt_threshold + excess)
        }
    };
    let d = geometry::step_toward(pos, goal, cfg.max_speed * dt);
    let max_rot = cfg.max_tilt_rate * dt;
    let dtheta = (desired_tilt - state.tilt_angle).clamp(-max_rot, max_rot);
    let dq = geometry::quat_axis_angle([1.0, 0.0, 0.0], dtheta);
    vec![d[0], d[1], d[2], dq[0], dq[1], dq[2], dq[3]]
}

/// The expert has finished pouring, tilted back, and reached the retreat pose.
pub fn pour_finished(state: &PourState, cfg: &WorldConfig) -> bool {
    pour_done(state, cfg)
        && state.tilt_angle < 1e-9
        && geometry::norm(geometry::sub(retreat_position(cfg), state.position())) < 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cfg() -> WorldConfig {
        WorldConfig {
            snr_db: f64::INFINITY,
            ..WorldConfig::default()
        }
    }

    fn at_pour_pose(cfg: &WorldConfig, tilt: f64, fill: f64, flow: f64) -> PourState {
        let p = pour_position(cfg);
        let q = geometry::quat_axis_angle([1.0, 0.0, 0.0], tilt);
        PourState {
            tilt_angle: tilt,
            fill_level: fill,
            spilled: false,
            ee_pose: [p[0], p[1], p[2], q[0], q[1], q[2], q[3]],
            container_params: cfg.container,
            time_step: 0,
            flow_coef: flow,
            phase: 0.0,
        }
    }

    const HOLD: [f64; 7] = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

    #[test]
    fn below_threshold_gives_no_flow_and_silence() {
        let c = cfg();
        let s = at_pour_pose(&c, c.tilt_threshold - 0.05, 0.3, 0.5);
        let (next, block) = pour_step(&s, &HOLD, &c, &mut rng::stream(0, "a"));
        assert_eq!(next.fill_level, 0.3);
        assert!(block.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_fill_integration() {
        let c = cfg();
        let s = at_pour_pose(&c, c.tilt_threshold + 0.1, 0.0, 0.5);
        let (next, _) = pour_step(&s, &HOLD, &c, &mut rng::stream(0, "a"));
        assert!((next.fill_level - 0.005).abs() < 1e-12, "{}", next.fill_level);
    }

    #[test]
    fn overflow_sets_spill_and_clamps() {
        let c = cfg();
        let s = at_pour_pose(&c, c.tilt_threshold + 0.4, 0.999, 0.5);
        let (next, _) = pour_step(&s, &HOLD, &c, &mut rng::stream(0, "a"));
        assert!(next.spilled);
        assert_eq!(next.fill_level, 1.0);
        let (after, _) = pour_step(&next, &pour_expert(&next, &c), &c, &mut rng::stream(1, "a"));
        assert!(after.spilled);
    }

    #[test]
    fn expert_stops_at_target_and_saturates_when_empty() {
        let c = WorldConfig {
            target_fill: 0.9,
            ..cfg()
        };
        let s = at_pour_pose(&c, c.tilt_threshold + 0.2, 0.9, 0.3);
        let a = pour_expert(&s, &c);
        let dq = [a[3], a[4], a[5], a[6]];
        let back = geometry::tilt_of(geometry::quat_mul(s.orientation(), dq));
        assert!(back < s.tilt_angle);

        let s = at_pour_pose(&c, 0.0, 0.0, 0.3);
        let a = pour_expert(&s, &c);
        let angle = 2.0 * a[4].atan2(a[3]);
        assert!((angle - c.max_tilt_rate * c.dt()).abs() < 1e-12);
    }

    #[test]
    fn record_roundtrip() {
        let c = cfg();
        let s = at_pour_pose(&c, 0.7, 0.25, 0.2);
        assert_eq!(PourState::from_record(&s.to_record(), c.container), s);
        assert_eq!(s.to_record().len(), POUR_STATE_WIDTH);
    }
}
