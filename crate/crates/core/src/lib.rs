//! RIS-assisted anchor-free near-field localization.
//!
//! A multi-antenna UE transmits pilots, receives their reflection from a
//! passive RIS held at the identity phase configuration, and locates itself
//! in two stages: a correlation search over a dictionary of near-field
//! channels, followed by damped Newton refinement of `(r, theta)` against
//! the Fresnel model of the round-trip Gram matrix `A^H A`.
//!
//! The [`experiments`] module runs seeded Monte Carlo sweeps of the
//! normalized mean square error and iteration count.

pub mod channel;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod refinement;
pub mod ris_phase;
pub mod rng;
pub mod signaling;

pub use channel::{ChannelMatrix, ChannelModel};
pub use dictionary::{CoarseEstimate, Dictionary, Grid, GridPoint};
pub use error::{Error, Result};
pub use geometry::{NearFieldBounds, SystemConfig, UePosition};
pub use refinement::{Curvature, RefinementResult, RefinementSettings};
pub use ris_phase::{OptimalityReport, PhaseConfig};
pub use signaling::{Observation, ReferenceSequence};
