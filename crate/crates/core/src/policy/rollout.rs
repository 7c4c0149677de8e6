//! Receding-horizon execution of sampled action chunks in a world.

use crate::config::{ExecSlice, WorldConfig};
use crate::error::{Error, Result};
use crate::pipeline::{Observation, Pipeline};
use crate::rng;
use crate::world::{Episode, Recorder, World, WorldState};

use super::Policy;

#[derive(Clone, Debug)]
pub struct Rollout {
    pub episode: Episode,
    pub final_state: WorldState,
    /// Fused latent of every decision step, when captured.
    pub latents: Vec<Vec<f64>>,
    pub decisions: usize,
}

/// Runs `decide` at every decision step and executes the actions it returns
/// until the task settles or `max_steps` actions were taken. `decide` gets
/// the stacked observation, the world and the decision index and returns
/// the actions to execute plus an optional latent to record.
pub fn rollout_with<F>(pipeline: &Pipeline, world_cfg: &WorldConfig, seed: u64, max_steps: usize, mut decide: F) -> Result<Rollout>
where
    F: FnMut(&Observation, &World, usize) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)>,
{
    let mut world = World::new(world_cfg, seed);
    let mut rec = Recorder::new(&world);
    let mut hist = pipeline.stream(seed);
    let mut frame = world.initial_frame();
    hist.push(&frame)?;
    let mut latents = Vec::new();
    let mut decisions = 0;
    let mut steps = 0;
    'outer: while steps < max_steps && !world.policy_done() {
        let obs = hist.observation()?;
        let (actions, latent) = decide(&obs, &world, decisions)?;
        decisions += 1;
        latents.extend(latent);
        if actions.is_empty() {
            return Err(Error::Empty("decision produced no actions"));
        }
        for a in actions {
            if steps == max_steps || world.policy_done() {
                break 'outer;
            }
            rec.push(&frame, &a, world.state());
            frame = world.step(&a);
            hist.push(&frame)?;
            steps += 1;
        }
    }
    if steps > 0 {
        let hold = world.hold_action();
        rec.push(&frame, &hold, world.state());
    }
    Ok(Rollout {
        episode: rec.finish(),
        final_state: world.state().clone(),
        latents,
        decisions,
    })
}

/// Executes `policy` in a fresh world seeded with `seed`.
pub fn rollout(policy: &Policy, world_cfg: &WorldConfig, seed: u64, max_steps: usize, capture_latents: bool) -> Result<Rollout> {
    if world_cfg.task != policy.cfg.world.task {
        return Err(Error::TaskMismatch {
            expected: policy.cfg.world.task.to_string(),
            got: world_cfg.task.to_string(),
        });
    }
    let m = &policy.cfg.model;
    let n_exec = m.exec_actions.min(m.horizon);
    let pipeline = Pipeline::new(&policy.cfg.pipeline, world_cfg);
    rollout_with(&pipeline, world_cfg, seed, max_steps, |obs, _, decision| {
        let z = policy.encode(&[obs])?;
        let mut r = rng::indexed_stream(seed, "rollout.sample", decision as u64);
        let chunk = policy.sample_actions(&z, &mut r).remove(0);
        let start = match m.exec_slice {
            ExecSlice::First => 0,
            ExecSlice::Last => m.horizon - n_exec,
        };
        let actions = (start..start + n_exec).map(|i| chunk.row(i).to_vec()).collect();
        Ok((actions, capture_latents.then(|| z.row(0).to_vec())))
    })
}

/// The scripted expert wrapped as a closed-loop policy.
pub fn expert_rollout(pipeline: &Pipeline, world_cfg: &WorldConfig, seed: u64, max_steps: usize) -> Result<Rollout> {
    rollout_with(pipeline, world_cfg, seed, max_steps, |_, world, _| Ok((vec![world.expert_action()], None)))
}
