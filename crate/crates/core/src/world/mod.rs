//! Synthetic manipulation worlds emitting synchronized audio blocks, point
//! clouds and proprioception, plus scripted experts that read the hidden
//! simulator state.

pub mod geometry;
pub mod latch;
pub mod pour;

use ndarray::{Array2, Array3};
use rand::Rng;
use rayon::prelude::*;

pub use latch::LatchState;
pub use pour::PourState;

use crate::config::{ContainerParams, TaskId, WorldConfig};
use crate::error::{Error, Result};
use crate::rng;
use geometry::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub enum WorldState {
    Pour(PourState),
    Latch(LatchState),
}

impl WorldState {
    pub fn task(&self) -> TaskId {
        match self {
            WorldState::Pour(_) => TaskId::Pour,
            WorldState::Latch(_) => TaskId::Latch,
        }
    }

    pub fn to_record(&self) -> Vec<f64> {
        match self {
            WorldState::Pour(s) => s.to_record(),
            WorldState::Latch(s) => s.to_record(),
        }
    }
}

#[derive(Clone, Debug)]
enum Scene {
    Pour(pour::PourScene),
    Latch(latch::LatchScene),
}

/// One synchronized sensor reading.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub audio: Vec<f64>,
    pub points: Vec<Vec3>,
    pub proprio: Vec<f64>,
}

/// A running simulator instance.
#[derive(Clone, Debug)]
pub struct World {
    cfg: WorldConfig,
    seed: u64,
    state: WorldState,
    scene: Scene,
    noise: rng::Rng,
}

impl World {
    /// Fresh episode with a seeded random initial state.
    pub fn new(cfg: &WorldConfig, seed: u64) -> Self {
        let mut init = rng::stream(seed, "world.init");
        let state = match cfg.task {
            TaskId::Pour => WorldState::Pour(pour::initial_state(&mut init, cfg)),
            TaskId::Latch => WorldState::Latch(latch::initial_state(&mut init, cfg)),
        };
        Self::with_state(cfg, seed, state)
    }

    /// World starting from an explicit state.
    pub fn with_state(cfg: &WorldConfig, seed: u64, state: WorldState) -> Self {
        let mut render = rng::stream(seed, "world.render");
        let scene = match cfg.task {
            TaskId::Pour => Scene::Pour(pour::PourScene::new(&mut render, cfg)),
            TaskId::Latch => Scene::Latch(latch::LatchScene::new(&mut render, cfg)),
        };
        World {
            cfg: cfg.clone(),
            seed,
            state,
            scene,
            noise: rng::stream(seed, "world.audio"),
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn task(&self) -> TaskId {
        self.cfg.task
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn render(&self) -> Vec<Vec3> {
        match (&self.scene, &self.state) {
            (Scene::Pour(scene), WorldState::Pour(s)) => scene.render(&s.ee_pose),
            (Scene::Latch(scene), WorldState::Latch(s)) => scene.render(s, &self.cfg),
            _ => unreachable!("scene and state tasks always match"),
        }
    }

    pub fn proprio(&self) -> Vec<f64> {
        match &self.state {
            WorldState::Pour(s) => s.ee_pose.to_vec(),
            WorldState::Latch(s) => s.proprio(),
        }
    }

    /// Reading before any action: background noise only.
    pub fn initial_frame(&mut self) -> Frame {
        let mut audio = vec![0.0; self.cfg.block_len()];
        pour::add_noise(&mut audio, pour::noise_std(&self.cfg), &mut self.noise);
        Frame {
            audio,
            points: self.render(),
            proprio: self.proprio(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Frame {
        let audio = match &self.state {
            WorldState::Pour(s) => {
                let (next, audio) = pour::pour_step(s, action, &self.cfg, &mut self.noise);
                self.state = WorldState::Pour(next);
                audio
            }
            WorldState::Latch(s) => {
                let (next, audio) = latch::latch_step(s, action, &self.cfg, &mut self.noise);
                self.state = WorldState::Latch(next);
                audio
            }
        };
        Frame {
            audio,
            points: self.render(),
            proprio: self.proprio(),
        }
    }

    pub fn expert_action(&self) -> Vec<f64> {
        match &self.state {
            WorldState::Pour(s) => pour::pour_expert(s, &self.cfg),
            WorldState::Latch(s) => latch::latch_expert(s, &self.cfg),
        }
    }

    pub fn expert_finished(&self) -> bool {
        match &self.state {
            WorldState::Pour(s) => pour::pour_finished(s, &self.cfg),
            WorldState::Latch(s) => latch::latch_finished(s, &self.cfg),
        }
    }

    /// Looser end-of-task test for learned policies: the task outcome is
    /// settled and the hand is back near its retreat pose.
    pub fn policy_done(&self) -> bool {
        let near = |goal: Vec3, pos: Vec3| geometry::norm(geometry::sub(goal, pos)) < 0.02;
        match &self.state {
            WorldState::Pour(s) => {
                s.spilled || (s.fill_level > 0.5 && s.tilt_angle < 0.05 && near(pour::retreat_position(&self.cfg), s.position()))
            }
            WorldState::Latch(s) => {
                s.door_position >= 1.0 && !s.gripper_closed && near(latch::retreat_position(&self.cfg), s.position())
            }
        }
    }

    /// The pour has stopped or the door has closed; only the retreat is left.
    pub fn outcome_settled(&self) -> bool {
        match &self.state {
            WorldState::Pour(s) => pour::pour_done(s, &self.cfg),
            WorldState::Latch(s) => s.door_position >= 1.0,
        }
    }

    /// Action that leaves the pose (and gripper) unchanged.
    pub fn hold_action(&self) -> Vec<f64> {
        match &self.state {
            WorldState::Pour(_) => vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            WorldState::Latch(s) => vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, s.gripper_closed as u8 as f64],
        }
    }

    /// Task success as required for expert demonstrations.
    pub fn success(&self) -> bool {
        match &self.state {
            WorldState::Pour(s) => !s.spilled && (s.fill_level - self.cfg.target_fill).abs() <= self.cfg.expert_deadband,
            WorldState::Latch(s) => {
                s.door_position >= 1.0 && crate::analysis::metrics::latch_score_of(s) < 0.05
            }
        }
    }
}

/// Default crop box for a task.
pub fn default_crop(cfg: &WorldConfig) -> ([f64; 3], [f64; 3]) {
    match cfg.task {
        TaskId::Pour => pour::default_crop(),
        TaskId::Latch => latch::default_crop(cfg),
    }
}

/// One recorded trajectory. Streams are stored in 32-bit floats exactly as
/// they are written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub task: TaskId,
    pub seed: u64,
    pub sample_rate: u32,
    pub container: ContainerParams,
    /// `L × block_len` audio samples.
    pub waveform: Array2<f32>,
    /// `L × K × 3` raw rendered points.
    pub pointclouds: Array3<f32>,
    /// `L × D_s`.
    pub proprio: Array2<f32>,
    /// `L × D_a`; row `i` is the action taken after observing row `i`.
    pub actions: Array2<f32>,
    /// `L × W` flattened hidden states.
    pub hidden: Array2<f32>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hidden_state(&self, i: usize) -> WorldState {
        let r: Vec<f64> = self.hidden.row(i).iter().map(|&v| v as f64).collect();
        match self.task {
            TaskId::Pour => WorldState::Pour(PourState::from_record(&r, self.container)),
            TaskId::Latch => WorldState::Latch(LatchState::from_record(&r)),
        }
    }

    pub fn final_state(&self) -> WorldState {
        self.hidden_state(self.len() - 1)
    }

    /// Audio samples of all blocks, concatenated.
    pub fn waveform_flat(&self) -> Vec<f64> {
        self.waveform.iter().map(|&v| v as f64).collect()
    }
}

/// Accumulates frames, actions and states into an [`Episode`].
pub struct Recorder {
    task: TaskId,
    seed: u64,
    sample_rate: u32,
    container: ContainerParams,
    audio: Vec<f32>,
    points: Vec<f32>,
    proprio: Vec<f32>,
    actions: Vec<f32>,
    hidden: Vec<f32>,
    steps: usize,
    block_len: usize,
    raw_points: usize,
}

impl Recorder {
    pub fn new(world: &World) -> Self {
        let cfg = world.config();
        Recorder {
            task: cfg.task,
            seed: world.seed(),
            sample_rate: cfg.sample_rate,
            container: cfg.container,
            audio: Vec::new(),
            points: Vec::new(),
            proprio: Vec::new(),
            actions: Vec::new(),
            hidden: Vec::new(),
            steps: 0,
            block_len: cfg.block_len(),
            raw_points: cfg.raw_points,
        }
    }

    pub fn push(&mut self, frame: &Frame, action: &[f64], state: &WorldState) {
        self.audio.extend(frame.audio.iter().map(|&v| v as f32));
        self.points.extend(frame.points.iter().flat_map(|p| p.iter().map(|&v| v as f32)));
        self.proprio.extend(frame.proprio.iter().map(|&v| v as f32));
        self.actions.extend(action.iter().map(|&v| v as f32));
        self.hidden.extend(state.to_record().iter().map(|&v| v as f32));
        self.steps += 1;
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn finish(self) -> Episode {
        let l = self.steps;
        let width = |v: &Vec<f32>| if l == 0 { 0 } else { v.len() / l };
        Episode {
            task: self.task,
            seed: self.seed,
            sample_rate: self.sample_rate,
            container: self.container,
            waveform: Array2::from_shape_vec((l, self.block_len), self.audio).expect("audio blocks"),
            pointclouds: Array3::from_shape_vec((l, self.raw_points, 3), self.points).expect("point frames"),
            proprio: Array2::from_shape_vec((l, width(&self.proprio)), self.proprio.clone()).expect("proprio"),
            actions: Array2::from_shape_vec((l, width(&self.actions)), self.actions.clone()).expect("actions"),
            hidden: Array2::from_shape_vec((l, width(&self.hidden)), self.hidden.clone()).expect("hidden"),
        }
    }
}

/// Runs the scripted expert until it finishes (plus settle steps) or hits
/// the step cap. The final row carries a hold action.
pub fn expert_episode(cfg: &WorldConfig, seed: u64) -> (Episode, bool) {
    let mut world = World::new(cfg, seed);
    let mut rec = Recorder::new(&world);
    let mut frame = world.initial_frame();
    let mut settle = 0;
    let mut jitter = rng::stream(seed, "world.demo_noise");
    let jitter_std = cfg.demo_noise * cfg.max_speed * cfg.dt();
    for _ in 0..cfg.max_steps {
        if world.expert_finished() {
            if settle >= cfg.settle_steps {
                break;
            }
            settle += 1;
        }
        let action = world.expert_action();
        rec.push(&frame, &action, world.state());
        let mut executed = action.clone();
        if jitter_std > 0.0 && !world.outcome_settled() {
            for v in &mut executed[..3] {
                *v += jitter_std * jitter.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        frame = world.step(&executed);
    }
    let hold = world.hold_action();
    rec.push(&frame, &hold, world.state());
    let ok = world.expert_finished() && world.success();
    (rec.finish(), ok)
}

/// Expert demonstrations for `n` distinct seeds derived from `seed`. Failed
/// episodes are regenerated with the next derived seed.
pub fn generate_episodes(cfg: &WorldConfig, n: usize, seed: u64) -> Result<Vec<Episode>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n_episodes must be at least 1".into()));
    }
    cfg.validate()?;
    // Each episode slot tries a bounded sequence of seeds; slots are
    // independent so generation parallelizes without changing results.
    const MAX_ATTEMPTS: u64 = 8;
    let results: Vec<(Option<Episode>, u64)> = crate::parallel::install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|slot| {
                for attempt in 0..MAX_ATTEMPTS {
                    let s = rng::derive_indexed(seed, "episode", slot * MAX_ATTEMPTS + attempt);
                    let (ep, ok) = expert_episode(cfg, s);
                    if ok {
                        return (Some(ep), attempt + 1);
                    }
                }
                (None, MAX_ATTEMPTS)
            })
            .collect()
    });
    let attempts: u64 = results.iter().map(|r| r.1).sum();
    let successes = results.iter().filter(|r| r.0.is_some()).count();
    let rate = successes as f64 / attempts as f64;
    if rate < 0.5 {
        return Err(Error::ExpertFailure { rate });
    }
    Ok(results.into_iter().filter_map(|r| r.0).collect())
}

/// Container geometry and acoustics of the four evaluation variants,
/// `(height, radius_top, radius_bottom, f_min, f_max)`. Variant 4 is an
/// inverted frustum with the largest acoustic shift.
pub const CONTAINER_VARIANTS: [(f64, f64, f64, f64, f64); 4] = [
    (0.105, 0.041, 0.036, 310.0, 930.0),
    (0.095, 0.039, 0.033, 285.0, 860.0),
    (0.115, 0.043, 0.038, 330.0, 990.0),
    (0.095, 0.030, 0.042, 400.0, 1150.0),
];

pub fn shift_container(cfg: &WorldConfig, variant_id: u32) -> Result<WorldConfig> {
    let idx = match variant_id {
        1..=4 => variant_id as usize - 1,
        other => return Err(Error::UnknownVariant(other)),
    };
    let (height, radius_top, radius_bottom, f_min, f_max) = CONTAINER_VARIANTS[idx];
    Ok(WorldConfig {
        container: ContainerParams {
            height,
            radius_top,
            radius_bottom,
        },
        f_min,
        f_max,
        ..cfg.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_table_rules() {
        let base = WorldConfig::default();
        assert!(matches!(shift_container(&base, 0), Err(Error::UnknownVariant(0))));
        assert!(shift_container(&base, 5).is_err());
        let shifts: Vec<f64> = (1..=4)
            .map(|v| (shift_container(&base, v).unwrap().f_max - base.f_max).abs())
            .collect();
        let max = shifts.iter().cloned().fold(0.0, f64::max);
        assert_eq!(shifts[3], max);
        assert!(shifts[..3].iter().all(|&s| s < max));
        let v4 = shift_container(&base, 4).unwrap();
        assert!(v4.container.radius_top < v4.container.radius_bottom);
    }

    #[test]
    fn zero_episodes_is_an_error() {
        assert!(generate_episodes(&WorldConfig::default(), 0, 1).is_err());
    }

    #[test]
    fn expert_episode_shapes() {
        let cfg = WorldConfig::default();
        let (ep, ok) = expert_episode(&cfg, 11);
        assert!(ok);
        let l = ep.len();
        assert!(l >= 3);
        assert_eq!(ep.waveform.dim(), (l, cfg.block_len()));
        assert_eq!(ep.pointclouds.dim(), (l, cfg.raw_points, 3));
        assert_eq!(ep.proprio.ncols(), 7);
        assert_eq!(ep.actions.ncols(), 7);
    }

    #[test]
    fn fill_is_monotone_and_quaternion_unit() {
        let cfg = WorldConfig::default();
        let (ep, _) = expert_episode(&cfg, 5);
        let mut prev = 0.0;
        for i in 0..ep.len() {
            let WorldState::Pour(s) = ep.hidden_state(i) else { panic!() };
            assert!(s.fill_level >= prev && (0.0..=1.0).contains(&s.fill_level));
            prev = s.fill_level;
        }
        let mut world = World::new(&cfg, 5);
        for _ in 0..60 {
            let a = world.expert_action();
            world.step(&a);
            let WorldState::Pour(s) = world.state() else { panic!() };
            let n: f64 = s.ee_pose[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
