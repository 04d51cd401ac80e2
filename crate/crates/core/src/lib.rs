//! Navigation by interactive replay: a stochastic graph environment built
//! from one recorded traversal, feature-space augmentation, and a
//! curriculum actor-critic trainer with a goal-conditioned recurrent policy.

pub mod agent;
pub mod augment;
pub mod config;
pub mod curriculum;
pub mod embedstore;
pub mod environment;
pub mod eval;
pub mod navgraph;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;
