pub mod billiard;
pub mod domain;
pub mod error;
pub mod orbit;
pub mod manifold;
pub mod normal_form;
pub mod perturb;
pub mod quadrature;
pub mod series;
pub mod tps;

pub use domain::{BoundaryPoint, BumpPatch, Harmonic, RadiusProfile};
pub use error::{Error, Result};
