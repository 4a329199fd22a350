//! Simulation and analysis toolkit for a flux-pumped Kerr parametric
//! resonator operated as a threshold microwave photon detector.

pub mod calibration;
pub mod circuit;
pub mod constants;
pub mod exec;
pub mod fokker_planck;
pub mod langevin;
pub mod numerics;
pub mod potential;
pub mod protocol;
pub mod statistics;

pub use exec::Execution;
