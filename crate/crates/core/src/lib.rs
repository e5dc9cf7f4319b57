//! Simulator for teleoperated driving over a delayed network link.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod delay_channel;
pub mod geometry;
pub mod metrics_io;
pub mod nmpc;
pub mod sim_harness;
pub mod spline_ref;
pub mod trajectory;
pub mod vehicle_models;
