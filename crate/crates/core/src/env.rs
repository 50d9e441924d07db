//! Vectorized gym-style environment.
//!
//! One [`EnvBatch`] steps N independent hand/ball environments at the 60 Hz
//! control rate (four 240 Hz physics substeps per call), assembles per-frame
//! observations, stacks the last k frames, evaluates the task machine once
//! per step, and auto-resets finished episodes. Train and eval batches are
//! separate instances on disjoint RNG stream domains.
//!
//! Every mutation in `step` is local to one environment, so the batch is
//! partitioned across worker threads; results are bitwise independent of the
//! thread count.

use crate::math::Vec3;
use crate::morphology::{BlockSource, MorphologyConfig, MorphologyError};
use crate::physics::{
    forward_kinematics, link_closest, substep_env, EnvView, MorphTables, PhysicsConfig, WorldBatch,
};
use crate::rng::StreamRng;
use crate::tasks::{
    check_termination, compute_baoding_step, update_bounce, EpisodePhase, TaskConfig, TaskKind,
    TaskState,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Proprioception and binary tactile bits only.
    Blind,
    /// Blind observation plus ball positions and linear velocities.
    State,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvBatchConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub morphology: String,
    pub task: TaskKind,
    pub observation_mode: ObservationMode,
    pub stack_k: usize,
    /// Uniform joint-angle noise around the midpoints at reset, rad.
    pub joint_noise: f64,
    /// Bounce: ball spawn height above its rest height, m.
    pub drop_height: f64,
    /// Bounce: lateral spawn jitter, m.
    pub drop_jitter: f64,
    /// Baoding: lateral spawn jitter around each target, m.
    pub baoding_jitter: f64,
}

impl Default for EnvBatchConfig {
    fn default() -> Self {
        Self {
            n_train: 8092,
            n_eval: 100,
            seed: 0,
            morphology: "shadow".into(),
            task: TaskKind::Bounce,
            observation_mode: ObservationMode::Blind,
            stack_k: 4,
            joint_noise: 0.05,
            drop_height: 0.08,
            drop_jitter: 0.01,
            baoding_jitter: 0.003,
        }
    }
}

impl EnvBatchConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_train == 0 {
            v.push("n_train must be positive".into());
        }
        if self.stack_k == 0 {
            v.push("stack_k must be positive".into());
        }
        if self.joint_noise < 0.0 || self.drop_jitter < 0.0 || self.baoding_jitter < 0.0 {
            v.push("reset noise amplitudes must be non-negative".into());
        }
        v
    }
}

/// Ring buffer of the last k observation frames for one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsStack {
    frames: Vec<f64>,
    /// Slot holding the oldest frame.
    head: usize,
    k: usize,
    width: usize,
}

impl ObsStack {
    pub fn new(k: usize, width: usize) -> Self {
        Self { frames: vec![0.0; k * width], head: 0, k, width }
    }

    /// Copies `frame` into every slot (the post-reset convention).
    pub fn fill(&mut self, frame: &[f64]) {
        debug_assert_eq!(frame.len(), self.width);
        for slot in 0..self.k {
            self.frames[slot * self.width..(slot + 1) * self.width].copy_from_slice(frame);
        }
        self.head = 0;
    }

    /// Overwrites the oldest slot; the new frame becomes the newest.
    pub fn push(&mut self, frame: &[f64]) {
        debug_assert_eq!(frame.len(), self.width);
        self.frames[self.head * self.width..(self.head + 1) * self.width].copy_from_slice(frame);
        self.head = (self.head + 1) % self.k;
    }

    /// Writes the flattened stack, oldest frame first, into `out`.
    pub fn flatten_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.k * self.width);
        for i in 0..self.k {
            let slot = (self.head + i) % self.k;
            out[i * self.width..(i + 1) * self.width]
                .copy_from_slice(&self.frames[slot * self.width..(slot + 1) * self.width]);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k * self.width];
        self.flatten_into(&mut out);
        out
    }
}

/// Counters and buffers owned by a single environment.
#[derive(Clone, Debug)]
struct EnvLocal {
    task: TaskState,
    stack: ObsStack,
    /// Raw action applied on the last step, `[-1, 1]^n_actions`.
    last_action: Vec<f64>,
    /// Episodes started so far; keys the reset RNG stream.
    episode: u64,
    ep_return: f64,
}

/// Summary of a finished episode, reported on its final step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub ep_return: f64,
    pub bounces: u32,
    pub switches: u32,
    pub length: u32,
}

#[derive(Clone, Debug, Default)]
pub struct StepInfo {
    /// Bounce count of the episode the env is in after this step.
    pub bounces: u32,
    pub switches: u32,
    pub non_finite_action: bool,
    pub corrupted: bool,
    /// Present exactly when this step ended an episode.
    pub finished: Option<EpisodeSummary>,
    /// The ended episode's last stacked observation (before auto-reset);
    /// value bootstrapping on truncation reads it.
    pub final_observation: Option<Vec<f64>>,
}

/// Batched step output. Observations for finished envs are the first
/// observation of the new episode; the flags describe the episode that ended.
#[derive(Clone, Debug, Default)]
pub struct StepResult {
    pub observations: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub info: Vec<StepInfo>,
}

impl StepResult {
    fn resize_for(&mut self, n_envs: usize, obs_width: usize) {
        self.observations.resize(n_envs * obs_width, 0.0);
        self.rewards.resize(n_envs, 0.0);
        self.terminated.resize(n_envs, false);
        self.truncated.resize(n_envs, false);
        self.info.resize(n_envs, StepInfo::default());
    }
}

/// Test hook: overrides the tactile bit mask for (env, zero-based step).
/// `None` keeps the physics-derived bits.
pub type ContactScript = Box<dyn Fn(usize, u32) -> Option<u64> + Send + Sync>;

pub struct EnvBatch {
    pub n_envs: usize,
    morph: MorphologyConfig,
    tables: MorphTables,
    phys: PhysicsConfig,
    task_cfg: TaskConfig,
    cfg: EnvBatchConfig,
    mode: ObservationMode,
    world: WorldBatch,
    locals: Vec<EnvLocal>,
    /// Resolved world-frame Baoding targets.
    targets: [Vec3; 2],
    primary_joints: Vec<usize>,
    frame_width: usize,
    /// RNG stream domain tag (train vs eval).
    stream_domain: u64,
    /// Worker threads used by `step`; results never depend on this.
    pub threads: usize,
    contact_script: Option<ContactScript>,
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error(transparent)]
    Morphology(#[from] MorphologyError),
    #[error("invalid configuration: {0:?}")]
    Invalid(Vec<String>),
    #[error("step called with {got} action values, expected {want}")]
    ActionShape { got: usize, want: usize },
}

impl EnvBatch {
    /// Builds a batch of `n_envs` environments on the given RNG domain
    /// (`rng::domain::TRAIN_ENV` or `rng::domain::EVAL_ENV`). All envs start
    /// reset with episode index 0.
    pub fn new(
        n_envs: usize,
        stream_domain: u64,
        cfg: &EnvBatchConfig,
        morph: MorphologyConfig,
        task_cfg: TaskConfig,
        phys: PhysicsConfig,
    ) -> Result<EnvBatch, EnvError> {
        let mut violations = morph.validate();
        violations.extend(phys.validate());
        violations.extend(task_cfg.validate());
        violations.extend(cfg.validate());
        if !violations.is_empty() {
            return Err(EnvError::Invalid(violations));
        }
        let tables = MorphTables::new(&morph);
        let n_balls = task_cfg.task.n_balls();
        let restitution = match task_cfg.task {
            TaskKind::Bounce => vec![phys.restitution_bounce_ball],
            TaskKind::Baoding => vec![phys.restitution_baoding_ball; 2],
        };
        let world = WorldBatch::new(n_envs, &morph, &tables, n_balls, restitution, 0.055);
        let frame_width = morph.blind_frame_width()
            + match cfg.observation_mode {
                ObservationMode::Blind => 0,
                ObservationMode::State => 6 * n_balls,
            };
        let rest_center = morph.palm_rest + Vec3::new(0.0, 0.0, morph.ball_radius);
        let targets =
            [rest_center + task_cfg.target_positions[0], rest_center + task_cfg.target_positions[1]];
        let locals = (0..n_envs)
            .map(|_| EnvLocal {
                task: TaskState::default(),
                stack: ObsStack::new(cfg.stack_k, frame_width),
                last_action: vec![0.0; morph.n_actions],
                episode: 0,
                ep_return: 0.0,
            })
            .collect();
        let primary_joints = morph.primary_joint_per_action();
        let mut batch = EnvBatch {
            n_envs,
            morph,
            tables,
            phys,
            task_cfg,
            cfg: cfg.clone(),
            mode: cfg.observation_mode,
            world,
            locals,
            targets,
            primary_joints,
            frame_width,
            stream_domain,
            threads: 1,
            contact_script: None,
        };
        batch.reset_all();
        Ok(batch)
    }

    pub fn morphology(&self) -> &MorphologyConfig {
        &self.morph
    }

    pub fn task_config(&self) -> &TaskConfig {
        &self.task_cfg
    }

    pub fn world(&self) -> &WorldBatch {
        &self.world
    }

    pub fn frame_width(&self) -> usize {
        self.frame_width
    }

    pub fn obs_width(&self) -> usize {
        self.frame_width * self.cfg.stack_k
    }

    pub fn n_actions(&self) -> usize {
        self.morph.n_actions
    }

    /// Installs a tactile override used by reward-machine pipeline tests.
    #[doc(hidden)]
    pub fn set_contact_script(&mut self, script: Option<ContactScript>) {
        self.contact_script = script;
    }

    /// Resets every environment and returns the flattened observation batch.
    pub fn reset_all(&mut self) -> Vec<f64> {
        let mask = vec![true; self.n_envs];
        self.reset_masked(&mask)
    }

    /// Resets the masked environments; returns observations for all envs
    /// (untouched envs report their current stack).
    pub fn reset_masked(&mut self, mask: &[bool]) -> Vec<f64> {
        assert_eq!(mask.len(), self.n_envs);
        let n_envs = self.n_envs;
        let (ctx, world, locals, _) = self.parts();
        let mut scratch = WorkerScratch::new(&ctx);
        for e in 0..n_envs {
            if mask[e] {
                let mut view = world.env_view(e);
                reset_env(&mut view, &mut locals[e], e, &ctx, &mut scratch);
            }
        }
        let w = ctx.stacked_width;
        let mut out = vec![0.0; n_envs * w];
        for e in 0..n_envs {
            locals[e].stack.flatten_into(&mut out[e * w..(e + 1) * w]);
        }
        out
    }

    /// Steps every environment with one action per env (shape
    /// `n_envs * n_actions`, row-major).
    pub fn step(&mut self, actions: &[f64]) -> Result<StepResult, EnvError> {
        let mut out = StepResult::default();
        self.step_into(actions, &mut out)?;
        Ok(out)
    }

    /// Allocation-reusing variant of [`EnvBatch::step`].
    pub fn step_into(&mut self, actions: &[f64], out: &mut StepResult) -> Result<(), EnvError> {
        let n_actions = self.morph.n_actions;
        if actions.len() != self.n_envs * n_actions {
            return Err(EnvError::ActionShape {
                got: actions.len(),
                want: self.n_envs * n_actions,
            });
        }
        out.resize_for(self.n_envs, self.obs_width());

        let n_parts = self.threads.max(1).min(self.n_envs.max(1));
        let (ctx, world, all_locals, script) = self.parts();
        let world_slices = world.split_mut(n_parts);

        // Mirror the world partition on every per-env array.
        let counts: Vec<usize> = world_slices.iter().map(|s| s.n_envs).collect();
        let obs_w = ctx.stacked_width;
        let mut tasks: Vec<Work<'_>> = Vec::with_capacity(counts.len());
        {
            let mut locals = all_locals;
            let mut acts = actions;
            let mut obs = out.observations.as_mut_slice();
            let mut rewards = out.rewards.as_mut_slice();
            let mut term = out.terminated.as_mut_slice();
            let mut trunc = out.truncated.as_mut_slice();
            let mut infos = out.info.as_mut_slice();
            let mut offset = 0usize;
            for (world, &n) in world_slices.into_iter().zip(&counts) {
                let (l, l_rest) = locals.split_at_mut(n);
                let (a, a_rest) = acts.split_at(n * n_actions);
                let (o, o_rest) = obs.split_at_mut(n * obs_w);
                let (r, r_rest) = rewards.split_at_mut(n);
                let (te, te_rest) = term.split_at_mut(n);
                let (tr, tr_rest) = trunc.split_at_mut(n);
                let (inf, inf_rest) = infos.split_at_mut(n);
                tasks.push(Work {
                    world,
                    locals: l,
                    actions: a,
                    obs: o,
                    rewards: r,
                    terminated: te,
                    truncated: tr,
                    infos: inf,
                    env_offset: offset,
                });
                offset += n;
                locals = l_rest;
                acts = a_rest;
                obs = o_rest;
                rewards = r_rest;
                term = te_rest;
                trunc = tr_rest;
                infos = inf_rest;
            }
        }

        if tasks.len() == 1 {
            let mut scratch = WorkerScratch::new(&ctx);
            run_worker(tasks.pop().unwrap(), &ctx, script, &mut scratch);
        } else {
            std::thread::scope(|scope| {
                for work in tasks {
                    let ctx = &ctx;
                    scope.spawn(move || {
                        let mut scratch = WorkerScratch::new(ctx);
                        run_worker(work, ctx, script, &mut scratch);
                    });
                }
            });
        }
        Ok(())
    }

    /// Splits `self` into the shared read-only step context and the mutable
    /// per-env state, so the two can be borrowed simultaneously.
    #[allow(clippy::type_complexity)]
    fn parts(
        &mut self,
    ) -> (
        StepCtx<'_>,
        &mut WorldBatch,
        &mut [EnvLocal],
        Option<&(dyn Fn(usize, u32) -> Option<u64> + Send + Sync)>,
    ) {
        let ctx = StepCtx {
            morph: &self.morph,
            tables: &self.tables,
            phys: &self.phys,
            task_cfg: &self.task_cfg,
            cfg: &self.cfg,
            mode: self.mode,
            targets: self.targets,
            primary_joints: &self.primary_joints,
            frame_width: self.frame_width,
            stacked_width: self.frame_width * self.cfg.stack_k,
            stream_domain: self.stream_domain,
            seed: self.cfg.seed,
        };
        (ctx, &mut self.world, &mut self.locals, self.contact_script.as_deref())
    }

    /// Digest over everything that evolves across steps: world state, task
    /// machines, stacks, episode counters. Used by determinism and
    /// train/eval-separation checks.
    pub fn state_digest(&self) -> u64 {
        let mut d = crate::physics::Digest::new();
        d.write_u64(self.world.state_digest());
        for l in &self.locals {
            d.write_u64(l.task.no_contact_streak as u64);
            d.write_u64(l.task.bounce_count as u64);
            d.write_u64(l.task.target_parity as u64);
            d.write_u64(l.task.switch_count as u64);
            d.write_u64(l.task.steps_elapsed as u64);
            d.write_u64(l.episode);
            d.write_u64(l.ep_return.to_bits());
            d.write_f64s(&l.stack.frames);
            d.write_f64s(&l.last_action);
        }
        d.finish()
    }

    /// Current per-env episode counters (for logging).
    pub fn episode_counters(&self, e: usize) -> (u32, u32) {
        (self.locals[e].task.bounce_count, self.locals[e].task.switch_count)
    }
}

/// Read-only context shared by all workers during one step.
struct StepCtx<'a> {
    morph: &'a MorphologyConfig,
    tables: &'a MorphTables,
    phys: &'a PhysicsConfig,
    task_cfg: &'a TaskConfig,
    cfg: &'a EnvBatchConfig,
    mode: ObservationMode,
    targets: [Vec3; 2],
    primary_joints: &'a [usize],
    frame_width: usize,
    stacked_width: usize,
    stream_domain: u64,
    seed: u64,
}

struct WorkerScratch {
    frame: Vec<f64>,
}

impl WorkerScratch {
    fn new(ctx: &StepCtx<'_>) -> Self {
        Self { frame: vec![0.0; ctx.frame_width] }
    }
}

/// One worker's slice of the batch.
struct Work<'a> {
    world: crate::physics::WorldSliceMut<'a>,
    locals: &'a mut [EnvLocal],
    actions: &'a [f64],
    obs: &'a mut [f64],
    rewards: &'a mut [f64],
    terminated: &'a mut [bool],
    truncated: &'a mut [bool],
    infos: &'a mut [StepInfo],
    env_offset: usize,
}

fn run_worker(
    mut work: Work<'_>,
    ctx: &StepCtx<'_>,
    script: Option<&(dyn Fn(usize, u32) -> Option<u64> + Send + Sync)>,
    scratch: &mut WorkerScratch,
) {
    let n_actions = ctx.morph.n_actions;
    for local_idx in 0..work.locals.len() {
        let env_global = work.env_offset + local_idx;
        let mut view = work.world.env_view(local_idx);
        let local = &mut work.locals[local_idx];
        let action = &work.actions[local_idx * n_actions..(local_idx + 1) * n_actions];

        let (reward, terminated, truncated, info) =
            step_env(&mut view, local, action, env_global, ctx, script, scratch);

        work.rewards[local_idx] = reward;
        work.terminated[local_idx] = terminated;
        work.truncated[local_idx] = truncated;
        work.infos[local_idx] = info;
        local
            .stack
            .flatten_into(&mut work.obs[local_idx * ctx.stacked_width..(local_idx + 1) * ctx.stacked_width]);
    }
}

fn step_env(
    view: &mut EnvView<'_>,
    local: &mut EnvLocal,
    action: &[f64],
    env_global: usize,
    ctx: &StepCtx<'_>,
    script: Option<&(dyn Fn(usize, u32) -> Option<u64> + Send + Sync)>,
    scratch: &mut WorkerScratch,
) -> (f64, bool, bool, StepInfo) {
    let mut info = StepInfo::default();

    if action.iter().any(|a| !a.is_finite()) {
        info.non_finite_action = true;
        let summary = finish_summary(local);
        info.finished = Some(summary);
        reset_env(view, local, env_global, ctx, scratch);
        info.bounces = 0;
        info.switches = 0;
        return (0.0, true, false, info);
    }

    // Joint targets for this control step.
    ctx.morph
        .action_to_joint_targets(action, view.q_cmd)
        .expect("action shape validated at batch level");
    local.last_action.copy_from_slice(action);

    // Four physics substeps; tactile bits OR over all of them so 240 Hz
    // contacts cannot slip between 60 Hz sensor readings.
    let mut tactile_bits = 0u64;
    for _ in 0..ctx.phys.substeps_per_control {
        substep_env(view, ctx.phys, ctx.morph, ctx.tables, &mut tactile_bits);
    }
    let step_index = local.task.steps_elapsed; // zero-based within the episode
    if let Some(script) = script {
        if let Some(bits) = script(env_global, step_index) {
            tactile_bits = bits;
        }
    }

    local.task.steps_elapsed += 1;
    let mut reward = 0.0;
    let mut machine_failed = false;
    match ctx.task_cfg.task {
        TaskKind::Bounce => {
            reward = update_bounce(&mut local.task, tactile_bits != 0, ctx.task_cfg);
        }
        TaskKind::Baoding => {
            let balls = [view.ball_position(0), view.ball_position(1)];
            match compute_baoding_step(&mut local.task, balls, ctx.targets, ctx.task_cfg) {
                Some((r, _switched)) => reward = r,
                None => machine_failed = true,
            }
        }
    }
    local.ep_return += reward;

    let corrupted = *view.corrupt || machine_failed;
    info.corrupted = corrupted;
    let phase = if corrupted {
        EpisodePhase::Terminated
    } else {
        let n_balls = view.ball_radius.len();
        let balls: Vec<Vec3> = (0..n_balls).map(|b| view.ball_position(b)).collect();
        check_termination(&local.task, &balls, ctx.morph.palm_rest, ctx.task_cfg)
    };

    info.bounces = local.task.bounce_count;
    info.switches = local.task.switch_count;

    // Frame for this step enters the stack even when the episode ends; the
    // returned observation is then overwritten by the post-reset stack.
    assemble_frame(view, local, tactile_bits, ctx, &mut scratch.frame);
    local.stack.push(&scratch.frame);

    let (terminated, truncated) = match phase {
        EpisodePhase::Running => (false, false),
        EpisodePhase::Terminated => (true, false),
        EpisodePhase::Truncated => (false, true),
    };
    if terminated || truncated {
        info.finished = Some(finish_summary(local));
        let mut final_obs = vec![0.0; ctx.stacked_width];
        local.stack.flatten_into(&mut final_obs);
        info.final_observation = Some(final_obs);
        reset_env(view, local, env_global, ctx, scratch);
    }
    (reward, terminated, truncated, info)
}

fn finish_summary(local: &EnvLocal) -> EpisodeSummary {
    EpisodeSummary {
        ep_return: local.ep_return,
        bounces: local.task.bounce_count,
        switches: local.task.switch_count,
        length: local.task.steps_elapsed,
    }
}

/// Places joints at noisy midpoints, spawns balls per task, clears the task
/// machine, and fills the observation stack with the initial frame.
fn reset_env(
    view: &mut EnvView<'_>,
    local: &mut EnvLocal,
    env_global: usize,
    ctx: &StepCtx<'_>,
    scratch: &mut WorkerScratch,
) {
    let mut rng = StreamRng::from_key(&[
        ctx.seed,
        ctx.stream_domain,
        env_global as u64,
        local.episode,
    ]);
    local.episode += 1;
    local.task.reset();
    local.ep_return = 0.0;
    local.last_action.iter_mut().for_each(|a| *a = 0.0);

    let n_joints = view.q.len();
    for j in 0..n_joints {
        let (lo, hi) = ctx.morph.joint_limits[j];
        let q = (ctx.morph.joint_midpoint(j)
            + rng.range_f64(-ctx.cfg.joint_noise, ctx.cfg.joint_noise))
        .clamp(lo, hi);
        view.q[j] = q;
        view.q_cmd[j] = q; // command error starts at zero
        view.qdot[j] = 0.0;
    }

    let rest_center = ctx.morph.palm_rest + Vec3::new(0.0, 0.0, ctx.morph.ball_radius);
    let n_balls = view.ball_radius.len();
    for b in 0..n_balls {
        let pos = match ctx.task_cfg.task {
            TaskKind::Bounce => {
                rest_center
                    + Vec3::new(
                        rng.range_f64(-ctx.cfg.drop_jitter, ctx.cfg.drop_jitter),
                        rng.range_f64(-ctx.cfg.drop_jitter, ctx.cfg.drop_jitter),
                        ctx.cfg.drop_height,
                    )
            }
            TaskKind::Baoding => {
                ctx.targets[b]
                    + Vec3::new(
                        rng.range_f64(-ctx.cfg.baoding_jitter, ctx.cfg.baoding_jitter),
                        rng.range_f64(-ctx.cfg.baoding_jitter, ctx.cfg.baoding_jitter),
                        0.0,
                    )
            }
        };
        pos.write_to(&mut view.ball_pos[b * 3..b * 3 + 3]);
        view.ball_vel[b * 3..b * 3 + 3].fill(0.0);
    }
    *view.corrupt = false;

    forward_kinematics(ctx.morph, ctx.tables, view.q, view.link_origin, view.link_rot);
    view.link_origin_prev.copy_from_slice(view.link_origin);
    view.link_rot_prev.copy_from_slice(view.link_rot);

    // Initial frame: real contact bits at the spawn pose, zero last action.
    let tactile_bits = resting_contacts(view, ctx);
    assemble_frame(view, local, tactile_bits, ctx, &mut scratch.frame);
    local.stack.fill(&scratch.frame);
}

/// Sensor bits for the current static pose (used only for the reset frame).
fn resting_contacts(view: &EnvView<'_>, ctx: &StepCtx<'_>) -> u64 {
    let mut bits = 0u64;
    let n_balls = view.ball_radius.len();
    for (link, spec) in ctx.morph.links.iter().enumerate() {
        let Some(bit) = ctx.tables.link_tactile_bit[link] else { continue };
        let (origin, rot) = view.link_frame(link);
        for ball in 0..n_balls {
            let center = view.ball_position(ball);
            let (_, _, dist) = link_closest(&spec.shape, origin, rot, center);
            if dist < spec.shape.surface_radius() + view.ball_radius[ball] {
                bits |= 1 << bit;
            }
        }
    }
    bits
}

/// Concatenates the five Table-row blocks (plus ball state in state mode)
/// into `out`, which must have the frame width.
fn assemble_frame(
    view: &EnvView<'_>,
    local: &EnvLocal,
    tactile_bits: u64,
    ctx: &StepCtx<'_>,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), ctx.frame_width);
    let widths = ctx.morph.obs_block_widths;
    let mut cursor = 0;

    for bit in 0..widths[0] {
        out[cursor] = if tactile_bits & (1 << bit) != 0 { 1.0 } else { 0.0 };
        cursor += 1;
    }
    out[cursor..cursor + widths[1]].copy_from_slice(view.q);
    cursor += widths[1];
    out[cursor..cursor + widths[2]].copy_from_slice(view.qdot);
    cursor += widths[2];

    match ctx.morph.cmd_error_source() {
        BlockSource::Joints => {
            for j in 0..widths[3] {
                out[cursor] = view.q_cmd[j] - view.q[j];
                cursor += 1;
            }
        }
        BlockSource::Actions => {
            for &j in ctx.primary_joints {
                out[cursor] = view.q_cmd[j] - view.q[j];
                cursor += 1;
            }
        }
    }
    match ctx.morph.last_action_source() {
        BlockSource::Joints => {
            out[cursor..cursor + widths[4]].copy_from_slice(view.q_cmd);
            cursor += widths[4];
        }
        BlockSource::Actions => {
            out[cursor..cursor + widths[4]].copy_from_slice(&local.last_action);
            cursor += widths[4];
        }
    }

    if ctx.mode == ObservationMode::State {
        let n_balls = view.ball_radius.len();
        for b in 0..n_balls {
            out[cursor..cursor + 3].copy_from_slice(&view.ball_pos[b * 3..b * 3 + 3]);
            cursor += 3;
        }
        for b in 0..n_balls {
            out[cursor..cursor + 3].copy_from_slice(&view.ball_vel[b * 3..b * 3 + 3]);
            cursor += 3;
        }
    }
    debug_assert_eq!(cursor, ctx.frame_width);
}
