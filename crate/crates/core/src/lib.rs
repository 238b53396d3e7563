//! Conformally calibrated learned constraints embedded in mixed-integer
//! linear programs.

pub mod conformal;
pub mod data;
pub mod encoders;
pub mod harness;
pub mod interval;
pub mod mip;
pub mod models;
pub mod rng;
pub mod solver;

