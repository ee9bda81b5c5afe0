//! Architect-builder construction agent.
//!
//! An architect network observes a goal shape and the current 6x6 grid and
//! sends messages to a perfect builder. Messages start as the twelve block
//! placements and grow through mined abstractions: frequent message runs
//! from successful episodes become new single-step messages, and buffered
//! experience is replayed with the new message before training resumes.

pub mod agent;
pub mod dream;
pub mod grid;
pub mod harness;
pub mod lexicon;
pub mod miner;
pub mod nn;
pub mod scalar;
pub mod shapes;

pub use grid::{BlockAction, BuildEnv, Grid, Orientation};
pub use lexicon::{Lexicon, Message, MessageId};
pub use scalar::Real;
pub use shapes::{builtin_default, builtin_desk, Shape, ShapeCatalog};

/// Double-precision network, the default for experiments.
pub type Network = nn::QNetwork<f64>;
pub type Network32 = nn::QNetwork<f32>;
pub type Agent = agent::DqnAgent<f64>;
pub type Agent32 = agent::DqnAgent<f32>;
pub type Adam = nn::Optimizer<f64>;
pub type Replay = agent::ReplayBuffer<f64>;

pub type Experiment = harness::Experiment<f64>;
pub type Experiment32 = harness::Experiment<f32>;
