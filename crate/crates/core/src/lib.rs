//! Acoustic spatial capture-recapture.
//!
//! Call density is modelled as an inhomogeneous Poisson process over a mesh.
//! Detections at an array of sensors carry received levels and bearings. The
//! likelihood integrates each call over location and source level, and
//! conditions on detection by at least `m_min` sensors.
//!
//! Typical use builds [`likelihood::LatentGrids`] for the site, loads a
//! [`likelihood::Dataset`] through [`io`], and calls [`estimation::fit`].
//! [`simulation`] generates surveys from known truth, [`uncertainty`]
//! bootstraps a fit, and [`snr`] replaces the fixed threshold with measured
//! noise.

pub mod cli;
pub mod config;
pub mod density;
pub mod error;
pub mod estimation;
pub mod formula;
pub mod geometry;
pub mod io;
pub mod likelihood;
pub mod mesh;
pub mod obs;
pub mod optim;
pub mod params;
pub mod quad;
pub mod simulation;
pub mod snr;
pub mod special;
pub mod uncertainty;

pub use error::{Error, Result};
