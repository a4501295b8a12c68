//! Stability-aware reinforcement learning on native control environments:
//! neural Lyapunov candidates fitted off-policy, SAC/PPO trainers augmented
//! with a decrease penalty, and certification of the result.

pub mod algorithms;
pub mod buffers;
pub mod cert;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod lyapunov;
pub mod nn;
pub mod par;
pub mod report;

pub use config::RunConfig;
