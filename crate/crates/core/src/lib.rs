//! Batched tactile-manipulation reinforcement-learning benchmark.
//!
//! The crate simulates simplified articulated hands (serial capsule chains
//! with PD-driven revolute joints) interacting with spherical balls, exposes
//! two reward machines (ball bouncing and two-ball rotation), and trains
//! Gaussian MLP policies with a self-contained PPO implementation. Everything
//! is vectorized over a batch of independent environments and is bitwise
//! deterministic for a fixed seed, independent of worker-thread count.

pub mod env;
pub mod math;
pub mod morphology;
pub mod nn;
pub mod norm;
pub mod physics;
pub mod ppo;
pub mod rng;
pub mod sweep;
pub mod tasks;

pub use env::{EnvBatch, EnvBatchConfig, ObservationMode, StepResult};
pub use morphology::MorphologyConfig;
pub use physics::{PhysicsConfig, WorldBatch};
pub use ppo::{PpoHyperparams, Trainer, TrainerConfig};

pub use tasks::{TaskConfig, TaskKind};
