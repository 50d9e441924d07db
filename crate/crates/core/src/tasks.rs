//! The Bounce and Baoding reward machines and episode termination logic.
//!
//! Both machines are evaluated exactly once per 60 Hz control step and are
//! pure per-environment state transitions, so the batch update is trivially
//! parallel and deterministic.

use crate::math::Vec3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Bounce,
    Baoding,
}

impl TaskKind {
    pub fn n_balls(self) -> usize {
        match self {
            TaskKind::Bounce => 1,
            TaskKind::Baoding => 2,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bounce" => Ok(TaskKind::Bounce),
            "baoding" => Ok(TaskKind::Baoding),
            other => Err(format!("unknown task `{other}` (expected bounce or baoding)")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub task: TaskKind,
    /// Reward per successful bounce.
    pub r_bounce: f64,
    /// Bonus reward per target switch.
    pub r_rotation: f64,
    /// Both balls must be within this distance of their targets to switch, m.
    pub switch_radius: f64,
    /// Contact-free control steps required before a contact counts as a bounce.
    pub min_gap_steps: u32,
    /// Maximum episode length T, control steps.
    pub max_episode_steps: u32,
    /// Weight of the per-ball dense distance reward.
    pub dist_weight: f64,
    /// Exponential sharpness of the dense reward, 1/m.
    pub dist_sharpness: f64,
    /// Baoding targets relative to the hand's ball-rest point (the palm
    /// surface center lifted by one ball radius).
    pub target_positions: [Vec3; 2],
    /// Half-extent of the axis-aligned in-reach box around the palm, m.
    pub out_of_reach_halfextent: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Bounce,
            r_bounce: 10.0,
            r_rotation: 10.0,
            switch_radius: 0.01,
            min_gap_steps: 5,
            max_episode_steps: 600,
            dist_weight: 0.05,
            dist_sharpness: 30.0,
            target_positions: [Vec3::new(0.0, -0.02, 0.0), Vec3::new(0.0, 0.02, 0.0)],
            out_of_reach_halfextent: 0.25,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.max_episode_steps == 0 {
            v.push("max_episode_steps must be positive".into());
        }
        if self.switch_radius <= 0.0 {
            v.push("switch_radius must be positive".into());
        }
        if self.out_of_reach_halfextent <= 0.0 {
            v.push("out_of_reach_halfextent must be positive".into());
        }
        if self.dist_weight < 0.0 {
            v.push("dist_weight must be non-negative".into());
        }
        v
    }
}

/// Per-environment reward-machine state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TaskState {
    /// Control steps since the last contact (or since reset).
    pub no_contact_streak: u32,
    pub bounce_count: u32,
    /// 0: ball i is assigned target i; 1: assignments swapped.
    pub target_parity: u8,
    pub switch_count: u32,
    pub steps_elapsed: u32,
}

impl TaskState {
    pub fn reset(&mut self) {
        *self = TaskState::default();
    }

    /// Completed rotations: one full rotation returns both balls to their
    /// starting assignment, i.e. two switches.
    pub fn rotations(&self) -> f64 {
        self.switch_count as f64 / 2.0
    }
}

/// Advances the bounce machine by one control step. A contact that lands
/// after at least `min_gap_steps` contact-free steps scores one bounce.
pub fn update_bounce(state: &mut TaskState, any_contact: bool, cfg: &TaskConfig) -> f64 {
    let mut reward = 0.0;
    if any_contact {
        if state.no_contact_streak >= cfg.min_gap_steps {
            state.bounce_count += 1;
            reward = cfg.r_bounce;
        }
        state.no_contact_streak = 0;
    } else {
        state.no_contact_streak += 1;
    }
    reward
}

/// Advances the baoding machine by one control step. `targets` are the two
/// world-frame target positions; the current parity decides which ball is
/// assigned to which. Returns `None` when a ball position is non-finite, in
/// which case the caller must flag the environment terminal.
pub fn compute_baoding_step(
    state: &mut TaskState,
    ball_pos: [Vec3; 2],
    targets: [Vec3; 2],
    cfg: &TaskConfig,
) -> Option<(f64, bool)> {
    if !ball_pos[0].is_finite() || !ball_pos[1].is_finite() {
        return None;
    }
    let (t0, t1) = if state.target_parity == 0 {
        (targets[0], targets[1])
    } else {
        (targets[1], targets[0])
    };
    let d0 = (ball_pos[0] - t0).norm();
    let d1 = (ball_pos[1] - t1).norm();
    let mut reward = cfg.dist_weight * (-cfg.dist_sharpness * d0).exp()
        + cfg.dist_weight * (-cfg.dist_sharpness * d1).exp();
    let switched = d0 <= cfg.switch_radius && d1 <= cfg.switch_radius;
    if switched {
        reward += cfg.r_rotation;
        state.target_parity ^= 1;
        state.switch_count += 1;
    }
    Some((reward, switched))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodePhase {
    Running,
    Terminated,
    Truncated,
}

/// Termination (out of reach) takes precedence over truncation (time limit);
/// the two are distinguished so the value target can bootstrap on truncation.
pub fn check_termination(
    state: &TaskState,
    ball_pos: &[Vec3],
    palm_center: Vec3,
    cfg: &TaskConfig,
) -> EpisodePhase {
    let h = cfg.out_of_reach_halfextent;
    for p in ball_pos {
        let d = *p - palm_center;
        if d.x.abs() > h || d.y.abs() > h || d.z.abs() > h {
            return EpisodePhase::Terminated;
        }
    }
    if state.steps_elapsed >= cfg.max_episode_steps {
        return EpisodePhase::Truncated;
    }
    EpisodePhase::Running
}
