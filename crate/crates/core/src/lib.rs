//! Adversarial camera-pose regression with discriminator-driven refinement.

pub mod advpose;
pub mod container;
pub mod diff;
pub mod gradcheck;
pub mod harness;
pub mod quat;
pub mod scenes;
pub mod seeds;
