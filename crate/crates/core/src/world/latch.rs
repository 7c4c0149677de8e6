//! Latch closing: the gripper grasps a sliding door handle and pulls it to
//! the closed stop. The handle leaves the camera crop before the door
//! closes; closure is only observable as a single click in the audio.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::geometry::{self, Vec3};
use super::pour::{add_noise, clip_pose_delta, noise_std};
use crate::config::WorldConfig;

const BASE_SIZE: Vec3 = [0.45, 0.30, 0.02];
const DOOR_SIZE: Vec3 = [0.20, 0.01, 0.20];
const HANDLE_SIZE: Vec3 = [0.02, 0.03, 0.04];
const HAND_SIZE: Vec3 = [0.04, 0.03, 0.06];
const DOOR_OPEN_X: f64 = -0.15;
const HANDLE_OFFSET: Vec3 = [0.0, -0.03, 0.12];
/// Grasp succeeds within this distance of the handle.
const GRASP_RADIUS: f64 = 0.01;
/// Base displacement per meter of lateral motion while grasping.
const DISP_PER_METER: f64 = 0.5;
/// Base rotation (rad) per meter of sideways motion while grasping.
const ROT_PER_METER: f64 = 2.0;
const CLICK_SECONDS: f64 = 0.02;
const CLICK_AMPLITUDE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LatchState {
    /// 0 = open, 1 = fully closed.
    pub door_position: f64,
    pub base_displacement: f64,
    pub base_rotation: f64,
    pub click_emitted: bool,
    pub ee_pose: [f64; 7],
    pub gripper_closed: bool,
    /// The gripper holds the handle.
    pub engaged: bool,
    pub time_step: usize,
}

pub const LATCH_STATE_WIDTH: usize = 14;

impl LatchState {
    pub fn position(&self) -> Vec3 {
        [self.ee_pose[0], self.ee_pose[1], self.ee_pose[2]]
    }

    pub fn to_record(&self) -> Vec<f64> {
        let mut r = vec![
            self.door_position,
            self.base_displacement,
            self.base_rotation,
            self.click_emitted as u8 as f64,
        ];
        r.extend_from_slice(&self.ee_pose);
        r.extend([self.gripper_closed as u8 as f64, self.engaged as u8 as f64, self.time_step as f64]);
        r
    }

    pub fn from_record(r: &[f64]) -> Self {
        let mut ee_pose = [0.0; 7];
        ee_pose.copy_from_slice(&r[4..11]);
        LatchState {
            door_position: r[0],
            base_displacement: r[1],
            base_rotation: r[2],
            click_emitted: r[3] > 0.5,
            ee_pose,
            gripper_closed: r[11] > 0.5,
            engaged: r[12] > 0.5,
            time_step: r[13] as usize,
        }
    }

    pub fn proprio(&self) -> Vec<f64> {
        let mut p = self.ee_pose.to_vec();
        p.push(self.gripper_closed as u8 as f64);
        p
    }
}

pub fn handle_position(door: f64, cfg: &WorldConfig) -> Vec3 {
    [DOOR_OPEN_X + door * cfg.door_travel, HANDLE_OFFSET[1], HANDLE_OFFSET[2]]
}

pub(crate) fn retreat_position(cfg: &WorldConfig) -> Vec3 {
    geometry::add(handle_position(1.0, cfg), [0.0, -0.10, 0.08])
}

/// Crop box whose +x face the handle crosses at 70% closure.
pub fn default_crop(cfg: &WorldConfig) -> ([f64; 3], [f64; 3]) {
    let x_max = DOOR_OPEN_X + 0.7 * cfg.door_travel;
    ([-0.30, -0.25, -0.02], [x_max, 0.20, 0.40])
}

#[derive(Clone, Debug)]
pub struct LatchScene {
    base: Vec<Vec3>,
    door: Vec<Vec3>,
    handle: Vec<Vec3>,
    hand: Vec<Vec3>,
}

impl LatchScene {
    pub fn new<R: Rng>(rng: &mut R, cfg: &WorldConfig) -> Self {
        let n = cfg.raw_points;
        let n_base = n / 4;
        let n_door = n / 4;
        let n_handle = n / 4;
        let n_hand = n - n_base - n_door - n_handle;
        LatchScene {
            base: geometry::sample_box(rng, n_base, BASE_SIZE),
            door: geometry::sample_box(rng, n_door, DOOR_SIZE),
            handle: geometry::sample_box(rng, n_handle, HANDLE_SIZE),
            hand: geometry::sample_box(rng, n_hand, HAND_SIZE)
                .into_iter()
                .map(|p| geometry::add(p, [0.0, 0.0, 0.03]))
                .collect(),
        }
    }

    pub fn render(&self, state: &LatchState, cfg: &WorldConfig) -> Vec<Vec3> {
        // The cabinet frame is shifted along y and yawed by the base motion.
        let yaw = geometry::quat_axis_angle([0.0, 0.0, 1.0], state.base_rotation);
        let to_world = |p: Vec3| geometry::add(geometry::rotate(yaw, p), [0.0, state.base_displacement, 0.0]);
        let handle = handle_position(state.door_position, cfg);
        let door_center = [handle[0], 0.0, 0.11];
        let mut out: Vec<Vec3> = self.base.iter().map(|&p| to_world(p)).collect();
        out.extend(self.door.iter().map(|&p| to_world(geometry::add(p, door_center))));
        out.extend(self.handle.iter().map(|&p| to_world(geometry::add(p, handle))));
        let pos = state.position();
        let q = [state.ee_pose[3], state.ee_pose[4], state.ee_pose[5], state.ee_pose[6]];
        out.extend(self.hand.iter().map(|&p| geometry::add(pos, geometry::rotate(q, p))));
        out
    }
}

pub fn initial_state<R: Rng>(rng: &mut R, cfg: &WorldConfig) -> LatchState {
    let h = handle_position(0.0, cfg);
    let pos = geometry::add(
        h,
        [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.12..-0.06),
            rng.random_range(0.0..0.06),
        ],
    );
    LatchState {
        door_position: 0.0,
        base_displacement: 0.0,
        base_rotation: 0.0,
        click_emitted: false,
        ee_pose: [pos[0], pos[1], pos[2], 1.0, 0.0, 0.0, 0.0],
        gripper_closed: false,
        engaged: false,
        time_step: 0,
    }
}

pub fn latch_step<R: Rng>(state: &LatchState, action: &[f64], cfg: &WorldConfig, noise_rng: &mut R) -> (LatchState, Vec<f64>) {
    let (d, dq) = clip_pose_delta(action, cfg);
    let close_cmd = action.get(7).copied().filter(|v| v.is_finite()).unwrap_or(0.0) > 0.5;
    let mut next = state.clone();
    next.time_step += 1;

    let pos = geometry::add(state.position(), d);
    let q = geometry::quat_normalize(geometry::quat_mul(
        [state.ee_pose[3], state.ee_pose[4], state.ee_pose[5], state.ee_pose[6]],
        dq,
    ));
    next.ee_pose = [pos[0], pos[1], pos[2], q[0], q[1], q[2], q[3]];

    if state.engaged {
        let lateral = d[1].hypot(d[2]);
        next.base_displacement += DISP_PER_METER * lateral;
        next.base_rotation += ROT_PER_METER * d[1].abs();
        if state.door_position < 1.0 {
            let door = state.door_position + d[0] / cfg.door_travel;
            if door >= 1.0 - 1e-9 {
                // The door latches; any pull past the stop drags the cabinet.
                let excess = (door - 1.0).max(0.0) * cfg.door_travel;
                next.base_displacement += excess;
                next.door_position = 1.0;
            } else {
                next.door_position = door.max(0.0);
            }
        } else if d[0] > 0.0 {
            next.base_displacement += d[0];
        }
    }

    if close_cmd && !state.gripper_closed {
        let dist = geometry::norm(geometry::sub(pos, handle_position(next.door_position, cfg)));
        next.engaged = dist < GRASP_RADIUS;
    }
    if !close_cmd {
        next.engaged = false;
    }
    next.gripper_closed = close_cmd;

    let mut block = vec![0.0; cfg.block_len()];
    if next.door_position >= 1.0 && !state.click_emitted {
        next.click_emitted = true;
        let len = ((CLICK_SECONDS * cfg.sample_rate as f64) as usize).min(block.len());
        let decay = 0.15 * CLICK_SECONDS * cfg.sample_rate as f64;
        for (i, s) in block.iter_mut().take(len).enumerate() {
            let n: f64 = StandardNormal.sample(noise_rng);
            *s = CLICK_AMPLITUDE * (-(i as f64) / decay).exp() * n;
        }
    }
    add_noise(&mut block, noise_std(cfg), noise_rng);
    (next, block)
}

/// Approach, grasp, pull straight to the stop, release and back off.
pub fn latch_expert(state: &LatchState, cfg: &WorldConfig) -> Vec<f64> {
    let max_step = cfg.max_speed * cfg.dt();
    let pos = state.position();
    let (d, grip) = if state.door_position < 1.0 {
        if state.engaged {
            let remaining = (1.0 - state.door_position) * cfg.door_travel;
            ([remaining.min(max_step), 0.0, 0.0], 1.0)
        } else {
            let h = handle_position(state.door_position, cfg);
            let d = geometry::step_toward(pos, h, max_step);
            let arrived = geometry::norm(geometry::sub(h, pos)) < 1e-9;
            // Release a failed grasp, otherwise grasp once at the handle.
            let grip = if state.gripper_closed { 0.0 } else if arrived { 1.0 } else { 0.0 };
            (if arrived { [0.0; 3] } else { d }, grip)
        }
    } else if state.gripper_closed {
        ([0.0; 3], 0.0)
    } else {
        (geometry::step_toward(pos, retreat_position(cfg), max_step), 0.0)
    };
    vec![d[0], d[1], d[2], 1.0, 0.0, 0.0, 0.0, grip]
}

pub fn latch_finished(state: &LatchState, cfg: &WorldConfig) -> bool {
    state.door_position >= 1.0
        && !state.gripper_closed
        && geometry::norm(geometry::sub(retreat_position(cfg), state.position())) < 1e-9
}
