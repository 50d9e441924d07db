//! Declarative hand descriptions.
//!
//! A [`MorphologyConfig`] pins down everything the simulator and the
//! observation assembler need to know about one hand: the kinematic tree of
//! collision shapes, joint limits, the action-to-joint-target coupling
//! matrix, which links act as binary tactile sensors, and the widths of the
//! five observation blocks. Five morphologies ship builtin: `shadow`,
//! `shadow_lite`, `allegro`, `orca`, and the two-joint `paddle` used for
//! fast desk-scale runs.

use crate::math::Vec3;
use serde::{Deserialize, Serialize};

pub const INCH: f64 = 0.0254;

/// Collision geometry of one link, in the link's own frame.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkShape {
    /// Capsule from the link origin to `origin + direction * length`.
    Capsule { direction: Vec3, length: f64, radius: f64 },
    /// Box centered at `origin + center`, axes aligned with the link frame.
    /// Used for the palm plate and the paddle pad.
    Pad { center: Vec3, half_extents: Vec3 },
}

impl LinkShape {
    /// The shape's own surface radius (zero for pads).
    pub fn surface_radius(&self) -> f64 {
        match self {
            LinkShape::Capsule { radius, .. } => *radius,
            LinkShape::Pad { .. } => 0.0,
        }
    }
}

/// One link in the kinematic tree.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkSpec {
    /// Parent link index; `None` for the root. Parents must precede children.
    pub parent: Option<usize>,
    /// Unit rotation axis of this link's revolute joint, expressed in the
    /// parent frame. `None` makes the link rigidly attached.
    pub joint_axis: Option<Vec3>,
    /// Origin of this link in the parent frame (world frame for the root).
    pub offset: Vec3,
    pub shape: LinkShape,
    /// Whether contacts on this link feed a tactile bit.
    pub sensor: bool,
}

/// How a Table-row observation block that is narrower than the joint vector
/// selects its entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSource {
    /// Block width equals `n_joints`: read the full joint-space vector.
    Joints,
    /// Block width equals `n_actions`: one entry per action, taken at that
    /// action's primary joint (command error) or from the raw action vector
    /// (last action).
    Actions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MorphologyConfig {
    pub name: String,
    pub n_joints: usize,
    pub n_actions: usize,
    pub n_tactile: usize,
    /// Widths of the five frame blocks: tactile, joint positions, joint
    /// velocities, joint command error, last action.
    pub obs_block_widths: [usize; 5],
    /// Row-major `n_joints x n_actions`, row-stochastic and non-negative.
    pub coupling: Vec<f64>,
    /// Per-joint (lo, hi) in radians.
    pub joint_limits: Vec<(f64, f64)>,
    pub links: Vec<LinkSpec>,
    /// Radians of joint-target span per unit action.
    pub action_scale: f64,
    /// Task ball radius for this hand, meters.
    pub ball_radius: f64,
    /// Center of the palm support surface: balls rest at
    /// `palm_rest + (0,0,ball_radius)`; spawn points, Baoding targets and the
    /// out-of-reach box are all expressed relative to this point.
    pub palm_rest: Vec3,
}

#[derive(Debug, thiserror::Error)]
pub enum MorphologyError {
    #[error("unknown morphology `{0}` (builtins: shadow, shadow_lite, allegro, orca, paddle)")]
    UnknownName(String),
    #[error("action vector has {got} entries, morphology `{name}` expects {want}")]
    ActionDimension { name: String, got: usize, want: usize },
    #[error("joint target buffer has {got} entries, morphology `{name}` expects {want}")]
    TargetDimension { name: String, got: usize, want: usize },
    #[error("failed to read morphology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse morphology file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid morphology `{name}`: {violations:?}")]
    Invalid { name: String, violations: Vec<String> },
}

impl MorphologyConfig {
    pub fn builtin_names() -> &'static [&'static str] {
        &["shadow", "shadow_lite", "allegro", "orca", "paddle"]
    }

    pub fn builtin(name: &str) -> Result<MorphologyConfig, MorphologyError> {
        match name {
            "shadow" => Ok(build_shadow()),
            "shadow_lite" => Ok(build_shadow_lite()),
            "allegro" => Ok(build_allegro()),
            "orca" => Ok(build_orca()),
            "paddle" => Ok(build_paddle()),
            other => Err(MorphologyError::UnknownName(other.to_string())),
        }
    }

    /// Loads a morphology from a TOML file using the same schema as the
    /// builtin definitions (see [`MorphologyConfig::to_toml`]).
    pub fn from_file(path: &std::path::Path) -> Result<MorphologyConfig, MorphologyError> {
        let text = std::fs::read_to_string(path)?;
        let morph: MorphologyConfig = toml::from_str(&text)?;
        let violations = morph.validate();
        if violations.is_empty() {
            Ok(morph)
        } else {
            Err(MorphologyError::Invalid { name: morph.name.clone(), violations })
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("morphology serializes")
    }

    pub fn blind_frame_width(&self) -> usize {
        self.obs_block_widths.iter().sum()
    }

    pub fn coupling_at(&self, joint: usize, action: usize) -> f64 {
        self.coupling[joint * self.n_actions + action]
    }

    pub fn joint_midpoint(&self, joint: usize) -> f64 {
        let (lo, hi) = self.joint_limits[joint];
        0.5 * (lo + hi)
    }

    /// For each action, the first joint whose coupling weight for that action
    /// is maximal. Used by observation blocks whose width is `n_actions`.
    pub fn primary_joint_per_action(&self) -> Vec<usize> {
        (0..self.n_actions)
            .map(|a| {
                let mut best = 0usize;
                let mut best_w = f64::NEG_INFINITY;
                for j in 0..self.n_joints {
                    let w = self.coupling_at(j, a);
                    if w > best_w {
                        best_w = w;
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Source rule for the joint-command-error block (width decides).
    pub fn cmd_error_source(&self) -> BlockSource {
        if self.obs_block_widths[3] == self.n_joints {
            BlockSource::Joints
        } else {
            BlockSource::Actions
        }
    }

    /// Source rule for the last-action block: joint-target space when the
    /// width equals `n_joints`, the raw action vector when it equals
    /// `n_actions`.
    pub fn last_action_source(&self) -> BlockSource {
        if self.obs_block_widths[4] == self.n_joints {
            BlockSource::Joints
        } else {
            BlockSource::Actions
        }
    }

    /// Link indices flagged as tactile sensors, in tactile-bit order.
    pub fn sensor_links(&self) -> Vec<usize> {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.sensor)
            .map(|(i, _)| i)
            .collect()
    }

    /// Maps a clamped action vector to clamped joint targets:
    /// `q_cmd = clamp_limits(midpoint + coupling * (scale * clamp(action, ±1)))`.
    pub fn action_to_joint_targets(
        &self,
        action: &[f64],
        q_cmd: &mut [f64],
    ) -> Result<(), MorphologyError> {
        if action.len() != self.n_actions {
            return Err(MorphologyError::ActionDimension {
                name: self.name.clone(),
                got: action.len(),
                want: self.n_actions,
            });
        }
        if q_cmd.len() != self.n_joints {
            return Err(MorphologyError::TargetDimension {
                name: self.name.clone(),
                got: q_cmd.len(),
                want: self.n_joints,
            });
        }
        for j in 0..self.n_joints {
            let mut delta = 0.0;
            for (a, &act) in action.iter().enumerate() {
                let w = self.coupling_at(j, a);
                if w != 0.0 {
                    delta += w * (self.action_scale * act.clamp(-1.0, 1.0));
                }
            }
            let (lo, hi) = self.joint_limits[j];
            q_cmd[j] = (self.joint_midpoint(j) + delta).clamp(lo, hi);
        }
        Ok(())
    }

    /// Checks every structural invariant; returns human-readable violations
    /// (empty means the config is valid). Never panics on bad input.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.coupling.len() != self.n_joints * self.n_actions {
            v.push(format!(
                "coupling has {} entries, expected n_joints*n_actions = {}",
                self.coupling.len(),
                self.n_joints * self.n_actions
            ));
            return v; // indexing below would be unsound
        }
        if self.joint_limits.len() != self.n_joints {
            v.push(format!(
                "joint_limits has {} entries, expected {}",
                self.joint_limits.len(),
                self.n_joints
            ));
            return v;
        }
        for (j, &(lo, hi)) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                v.push(format!("joint {j}: limit lo {lo} must be < hi {hi}"));
            }
        }
        for j in 0..self.n_joints {
            let mut row = 0.0;
            for a in 0..self.n_actions {
                let w = self.coupling_at(j, a);
                if w < 0.0 {
                    v.push(format!("coupling[{j}][{a}] = {w} is negative"));
                }
                row += w;
            }
            if (row - 1.0).abs() > 1e-9 {
                v.push(format!("coupling row {j} sums to {row}, expected 1"));
            }
        }
        let jointed = self.links.iter().filter(|l| l.joint_axis.is_some()).count();
        if jointed != self.n_joints {
            v.push(format!("{jointed} jointed links but n_joints = {}", self.n_joints));
        }
        let sensors = self.links.iter().filter(|l| l.sensor).count();
        if sensors != self.n_tactile {
            v.push(format!("{sensors} sensor links but n_tactile = {}", self.n_tactile));
        }
        for (i, l) in self.links.iter().enumerate() {
            match l.parent {
                Some(p) if p >= i => v.push(format!("link {i}: parent {p} does not precede it")),
                None if i != 0 => v.push(format!("link {i}: only link 0 may be the root")),
                _ => {}
            }
            match l.shape {
                LinkShape::Capsule { direction, length, radius } => {
                    if radius <= 0.0 {
                        v.push(format!("link {i}: capsule radius must be positive"));
                    }
                    if length < 0.0 {
                        v.push(format!("link {i}: capsule length must be non-negative"));
                    }
                    if (direction.norm() - 1.0).abs() > 1e-6 {
                        v.push(format!("link {i}: capsule direction must have unit norm"));
                    }
                }
                LinkShape::Pad { half_extents, .. } => {
                    if half_extents.x <= 0.0 || half_extents.y <= 0.0 || half_extents.z <= 0.0 {
                        v.push(format!("link {i}: pad half extents must be positive"));
                    }
                }
            }
            if let Some(axis) = l.joint_axis {
                if (axis.norm() - 1.0).abs() > 1e-6 {
                    v.push(format!("link {i}: joint axis must have unit norm"));
                }
            }
        }
        if self.action_scale <= 0.0 {
            v.push("action_scale must be positive".into());
        }
        if self.ball_radius <= 0.0 {
            v.push("ball_radius must be positive".into());
        }
        // Observation-block structure.
        let w = self.obs_block_widths;
        if w[0] != self.n_tactile {
            v.push(format!("tactile block width {} != n_tactile {}", w[0], self.n_tactile));
        }
        for (idx, label) in [(1usize, "joint position"), (2, "joint velocity")] {
            if w[idx] != self.n_joints {
                v.push(format!("{label} block width {} != n_joints {}", w[idx], self.n_joints));
            }
        }
        for (idx, label) in [(3usize, "command error"), (4, "last action")] {
            if w[idx] != self.n_joints && w[idx] != self.n_actions {
                v.push(format!(
                    "{label} block width {} matches neither n_joints {} nor n_actions {}",
                    w[idx], self.n_joints, self.n_actions
                ));
            }
        }
        // The four named hands are an exact interface contract.
        let table: Option<([usize; 5], usize, usize)> = match self.name.as_str() {
            "shadow" => Some(([17, 20, 20, 20, 20], 20, 20)),
            "shadow_lite" => Some(([14, 16, 16, 13, 13], 16, 13)),
            "allegro" => Some(([20, 16, 16, 16, 16], 16, 10)),
            "orca" => Some(([17, 17, 17, 17, 17], 17, 17)),
            _ => None,
        };
        if let Some((widths, n_joints, n_actions)) = table {
            if self.obs_block_widths != widths {
                v.push(format!(
                    "named hand {}: obs_block_widths {:?} != required {:?}",
                    self.name, self.obs_block_widths, widths
                ));
            }
            if self.n_joints != n_joints {
                v.push(format!(
                    "named hand {}: n_joints {} != required {n_joints}",
                    self.name, self.n_joints
                ));
            }
            if self.n_actions != n_actions {
                v.push(format!(
                    "named hand {}: n_actions {} != required {n_actions}",
                    self.name, self.n_actions
                ));
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Builtin hand builders. Geometry is schematic: serial capsule fingers over a
// flat palm plate, dimensioned so the interface widths and ball sizes match
// the benchmark hands. Axes: +x points along the fingers, +y is lateral, +z
// is up; the palm support surface sits at z = 0.
// ---------------------------------------------------------------------------

const CURL_LIMITS: (f64, f64) = (0.0, 1.57);
const SPREAD_LIMITS: (f64, f64) = (-0.35, 0.35);
/// Curl axis: positive angles rotate +x toward +z (fingers curl upward over
/// the supine palm).
const CURL_AXIS: Vec3 = Vec3 { x: 0.0, y: -1.0, z: 0.0 };
const SPREAD_AXIS: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };
const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };

fn capsule(direction: Vec3, length: f64, radius: f64) -> LinkShape {
    LinkShape::Capsule { direction, length, radius }
}

struct Builder {
    links: Vec<LinkSpec>,
    limits: Vec<(f64, f64)>,
}

impl Builder {
    /// Flat palm plate with its top face at z = 0, centered on the origin.
    fn palm(half_extents: Vec3) -> Builder {
        let links = vec![LinkSpec {
            parent: None,
            joint_axis: None,
            offset: Vec3::ZERO,
            shape: LinkShape::Pad {
                center: Vec3::new(0.0, 0.0, -half_extents.z),
                half_extents,
            },
            sensor: true,
        }];
        Builder { links, limits: Vec::new() }
    }

    fn add(
        &mut self,
        parent: usize,
        offset: Vec3,
        joint: Option<(Vec3, (f64, f64))>,
        shape: LinkShape,
        sensor: bool,
    ) -> usize {
        let joint_axis = joint.map(|(axis, limits)| {
            self.limits.push(limits);
            axis
        });
        self.links.push(LinkSpec { parent: Some(parent), joint_axis, offset, shape, sensor });
        self.links.len() - 1
    }

    /// Serial finger on the palm: a short spread knuckle followed by curl
    /// phalanges. `sensor_mask` selects which of the segments are tactile,
    /// knuckle first.
    fn finger(
        &mut self,
        base: Vec3,
        spread_axis: Vec3,
        curl_axis: Vec3,
        lens: &[f64],
        radius: f64,
        sensor_mask: &[bool],
    ) -> Vec<usize> {
        assert_eq!(lens.len(), sensor_mask.len());
        let mut ids = Vec::new();
        let mut parent = 0usize;
        let mut offset = base;
        for (seg, (&len, &sensor)) in lens.iter().zip(sensor_mask).enumerate() {
            let axis = if seg == 0 { spread_axis } else { curl_axis };
            let limits = if seg == 0 { SPREAD_LIMITS } else { CURL_LIMITS };
            let id = self.add(parent, offset, Some((axis, limits)), capsule(X, len, radius), sensor);
            ids.push(id);
            parent = id;
            offset = X * len;
        }
        ids
    }
}

fn identity_coupling(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for j in 0..n {
        c[j * n + j] = 1.0;
    }
    c
}

const ALL4: [bool; 4] = [true; 4];

fn build_shadow() -> MorphologyConfig {
    let mut b = Builder::palm(Vec3::new(0.050, 0.042, 0.012));
    // Thumb: all four links sensored (the 17th tactile bit).
    b.finger(
        Vec3::new(0.0, -0.042, 0.010),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        &[0.015, 0.035, 0.030, 0.025],
        0.012,
        &ALL4,
    );
    // Four fingers: the three phalanges are sensors, the knuckle is not.
    for y in [-0.033, -0.011, 0.011, 0.033] {
        b.finger(
            Vec3::new(0.045, y, 0.014),
            SPREAD_AXIS,
            CURL_AXIS,
            &[0.012, 0.032, 0.025, 0.020],
            0.010,
            &[false, true, true, true],
        );
    }
    MorphologyConfig {
        name: "shadow".into(),
        n_joints: 20,
        n_actions: 20,
        n_tactile: 17,
        obs_block_widths: [17, 20, 20, 20, 20],
        coupling: identity_coupling(20),
        joint_limits: b.limits,
        links: b.links,
        action_scale: 1.0,
        ball_radius: 0.75 * INCH, // 1.5 inch diameter
        palm_rest: Vec3::ZERO,
    }
}

fn build_shadow_lite() -> MorphologyConfig {
    let mut b = Builder::palm(Vec3::new(0.042, 0.036, 0.010));
    b.finger(
        Vec3::new(0.0, -0.036, 0.010),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        &[0.014, 0.032, 0.027, 0.022],
        0.011,
        &ALL4,
    );
    for y in [-0.024, 0.0, 0.024] {
        b.finger(
            Vec3::new(0.038, y, 0.012),
            SPREAD_AXIS,
            CURL_AXIS,
            &[0.011, 0.030, 0.024, 0.019],
            0.009,
            &[false, true, true, true],
        );
    }
    // 16 joints from 13 actions: thumb joints are independent; each finger
    // couples its distal joint to the middle-curl action.
    let n_joints = 16;
    let n_actions = 13;
    let mut coupling = vec![0.0; n_joints * n_actions];
    for t in 0..4 {
        coupling[t * n_actions + t] = 1.0;
    }
    for f in 0..3 {
        let j0 = 4 + f * 4; // knuckle, mcp, pip, dip
        let a0 = 4 + f * 3; // spread, base curl, distal curl
        coupling[j0 * n_actions + a0] = 1.0;
        coupling[(j0 + 1) * n_actions + (a0 + 1)] = 1.0;
        coupling[(j0 + 2) * n_actions + (a0 + 2)] = 1.0;
        coupling[(j0 + 3) * n_actions + (a0 + 2)] = 1.0;
    }
    MorphologyConfig {
        name: "shadow_lite".into(),
        n_joints,
        n_actions,
        n_tactile: 14,
        obs_block_widths: [14, 16, 16, 13, 13],
        coupling,
        joint_limits: b.limits,
        links: b.links,
        action_scale: 1.0,
        ball_radius: 0.6 * INCH, // 1.2 inch diameter
        palm_rest: Vec3::ZERO,
    }
}

fn build_allegro() -> MorphologyConfig {
    let mut b = Builder::palm(Vec3::new(0.055, 0.048, 0.012));
    // All sixteen jointed links are sensors; three fixed fingertip pads and
    // the palm bring the tactile count to 20.
    b.finger(
        Vec3::new(0.0, -0.048, 0.012),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        &[0.016, 0.045, 0.035, 0.028],
        0.014,
        &ALL4,
    );
    let mut tips = vec![];
    for y in [-0.030, 0.0, 0.030] {
        let ids = b.finger(
            Vec3::new(0.050, y, 0.014),
            SPREAD_AXIS,
            CURL_AXIS,
            &[0.015, 0.045, 0.035, 0.028],
            0.013,
            &ALL4,
        );
        tips.push(*ids.last().unwrap());
    }
    for tip in tips {
        let len = match b.links[tip].shape {
            LinkShape::Capsule { length, .. } => length,
            LinkShape::Pad { .. } => unreachable!(),
        };
        b.add(tip, X * len, None, capsule(X, 0.008, 0.015), true);
    }
    let n_joints = 16;
    let n_actions = 10;
    let mut coupling = vec![0.0; n_joints * n_actions];
    for t in 0..4 {
        coupling[t * n_actions + t] = 1.0;
    }
    for f in 0..3 {
        let j0 = 4 + f * 4;
        let a0 = 4 + f * 2; // spread, shared curl
        coupling[j0 * n_actions + a0] = 1.0;
        for seg in 1..4 {
            coupling[(j0 + seg) * n_actions + (a0 + 1)] = 1.0;
        }
    }
    MorphologyConfig {
        name: "allegro".into(),
        n_joints,
        n_actions,
        n_tactile: 20,
        obs_block_widths: [20, 16, 16, 16, 16],
        coupling,
        joint_limits: b.limits,
        links: b.links,
        action_scale: 1.0,
        ball_radius: 1.0 * INCH, // 2 inch diameter
        palm_rest: Vec3::ZERO,
    }
}

fn build_orca() -> MorphologyConfig {
    // Root stub under the palm; the palm plate itself rides a wrist-roll
    // joint, so the support plane can tilt.
    let mut b = Builder::palm(Vec3::new(0.048, 0.042, 0.012));
    b.links[0] = LinkSpec {
        parent: None,
        joint_axis: None,
        offset: Vec3::new(0.0, 0.0, -0.050),
        shape: capsule(Vec3::new(0.0, 0.0, 1.0), 0.020, 0.010),
        sensor: false,
    };
    let palm = b.add(
        0,
        Vec3::new(0.0, 0.0, 0.050),
        Some((Vec3::new(1.0, 0.0, 0.0), (-0.40, 0.40))),
        LinkShape::Pad {
            center: Vec3::new(0.0, 0.0, -0.012),
            half_extents: Vec3::new(0.048, 0.042, 0.012),
        },
        true,
    );
    // Thumb: four jointed sensor links hanging off the palm.
    let mut parent = palm;
    let mut offset = Vec3::new(0.0, -0.042, 0.010);
    for (seg, len) in [0.015, 0.034, 0.028, 0.024].into_iter().enumerate() {
        let (axis, limits) = if seg == 0 {
            (Vec3::new(1.0, 0.0, 0.0), SPREAD_LIMITS)
        } else {
            (Vec3::new(-1.0, 0.0, 0.0), CURL_LIMITS)
        };
        parent = b.add(parent, offset, Some((axis, limits)), capsule(X, len, 0.012), true);
        offset = X * len;
    }
    // Four 3-joint fingers: spread + two curls, all sensors.
    for y in [-0.030, -0.010, 0.010, 0.030] {
        let mut parent = palm;
        let mut offset = Vec3::new(0.042, y, 0.012);
        for (seg, len) in [0.012, 0.034, 0.026].into_iter().enumerate() {
            let (axis, limits) =
                if seg == 0 { (SPREAD_AXIS, SPREAD_LIMITS) } else { (CURL_AXIS, CURL_LIMITS) };
            parent = b.add(parent, offset, Some((axis, limits)), capsule(X, len, 0.010), true);
            offset = X * len;
        }
    }
    MorphologyConfig {
        name: "orca".into(),
        n_joints: 17,
        n_actions: 17,
        n_tactile: 17,
        obs_block_widths: [17, 17, 17, 17, 17],
        coupling: identity_coupling(17),
        joint_limits: b.limits,
        links: b.links,
        action_scale: 1.0,
        ball_radius: 0.75 * INCH,
        palm_rest: Vec3::ZERO,
    }
}

/// Two-joint flipper used for fast tests and training smoke runs: an arm and
/// a flat pad, both hinged about y. Holding `q_pad = -q_arm` keeps the pad
/// level while its height tracks `arm_length * sin(q_arm)`.
fn build_paddle() -> MorphologyConfig {
    let links = vec![
        LinkSpec {
            parent: None,
            joint_axis: None,
            offset: Vec3::new(-0.110, 0.0, 0.0),
            shape: capsule(X, 0.010, 0.012),
            sensor: false,
        },
        LinkSpec {
            parent: Some(0),
            joint_axis: Some(CURL_AXIS),
            offset: X * 0.010,
            shape: capsule(X, 0.100, 0.012),
            sensor: false,
        },
        LinkSpec {
            parent: Some(1),
            joint_axis: Some(CURL_AXIS),
            offset: X * 0.100,
            shape: LinkShape::Pad {
                center: Vec3::new(0.050, 0.0, 0.0),
                half_extents: Vec3::new(0.050, 0.040, 0.008),
            },
            sensor: true,
        },
    ];
    MorphologyConfig {
        name: "paddle".into(),
        n_joints: 2,
        n_actions: 2,
        n_tactile: 1,
        obs_block_widths: [1, 2, 2, 2, 2],
        coupling: identity_coupling(2),
        joint_limits: vec![(-0.9, 0.9), (-1.2, 1.2)],
        links,
        action_scale: 0.25,
        ball_radius: 0.75 * INCH,
        palm_rest: Vec3::new(0.050, 0.0, 0.008),
    }
}
