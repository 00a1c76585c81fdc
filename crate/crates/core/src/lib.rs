//! Quadrotor flight-control workbench: a Soft Actor-Critic agent flying a
//! simulated micro quadrotor either through a thrust-vector interface backed
//! by an attitude PID, or by commanding rotor speeds directly.

pub mod checkpoint;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod nn;
pub mod paths;
pub mod replay;
pub mod sac;
pub mod train;
