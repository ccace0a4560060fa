//! Capacities, dyadic Hausdorff contents and singular potentials on the first
//! Heisenberg group.
//!
//! The crate is organised bottom-up: [`group`] (arithmetic and calculus),
//! [`metrics`] (gauges, balls, CC-distance brackets), [`quadrature`],
//! [`kernel`] (fundamental solution, mollifiers, convolution), [`tiling`]
//! (self-similar tiles, contents, Frostman measures), [`partition`],
//! [`capacity`], [`verify`] and [`experiment`].

pub mod capacity;
pub mod error;
pub mod experiment;
pub mod group;
pub mod kernel;
pub mod metrics;
pub mod partition;
pub mod quadrature;
pub mod tiling;
pub mod verify;

pub use error::{Error, Result};
pub use group::{Field, Group, GroupPoint, GroupSpec, HPoint, Heisenberg, OperatorWord, Side};
