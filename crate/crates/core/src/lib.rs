//! Simulation and estimation toolkit for ISAR imaging of vehicles with the
//! IEEE 802.11ad single-carrier preamble.
//!
//! The pipeline runs bottom-up through the modules: [`waveform`] builds the
//! transmitted frame, [`scene`] places point scatterers, [`channel`] aligns
//! beams and synthesizes echoes, [`estimator`] recovers delays, Doppler and
//! velocity, and [`imaging`] turns those estimates into a scaled image.
//! [`commands`] wires everything into reproducible runs.

// `!(x > t)` is deliberate throughout: NaN has to fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod commands;
pub mod config;
pub mod error;
pub mod estimator;
pub mod imaging;
pub mod rng;
pub mod scene;
pub mod waveform;

pub use config::{Config, SceneConfig};
pub use error::{Error, Result};
