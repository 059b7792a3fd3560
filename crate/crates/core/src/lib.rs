//! Numerical toolkit for free sub-Riemannian structures on `R^n`:
//! endpoint maps, normal geodesics, distances and balls, and tangent-cone
//! diagnostics at boundary points of balls.

pub mod error;
pub mod export;
pub mod flow;
pub mod geodesic;
pub mod linalg;
pub mod metric;
mod serde_util;
pub mod structure;
pub mod tangent;

pub use error::{Error, Result};
pub use flow::{ControlGrid, FlowOptions};
pub use geodesic::Covector;
pub use structure::Structure;
