//! Stokes geometry, Stokes constants and region transport for the
//! swallowtail-type integral
//!
//! ```text
//! psi(z; a, b, eps) = (1 / (i eps^{1/5})) * integral over L of exp(-F(t, z) / eps) dt,
//! F(t, z) = -(t^5 - a t^3 - i b t^2 + z t).
//! ```
//!
//! Layers, from the bottom up:
//!
//! * [`singulant`]: saddles, singulants, labelled frames and special points.
//! * [`geometry`]: ordinary and higher-order Stokes curves and their crossings.
//! * [`transport`]: exact Stokes-multiplier bookkeeping along paths.
//! * [`saddle`]: descent paths, base Stokes constants, late terms and the integral.
//! * [`io`]: graph JSON, CSV tables and SVG output.
//! * [`cli`]: the `stokes-atlas` command-line front end.

pub mod cli;
pub mod geometry;
pub mod io;
pub mod poly;
pub mod saddle;
pub mod scalar;
pub mod singulant;
pub mod transport;

pub use scalar::{Cx, Real};
pub use singulant::{
    PhaseParams, SingulantFrame, REFERENCE_CHI, REFERENCE_ORIENTATION, REFERENCE_PARAMS, Z_STAR,
};

/// Complex `f64`.
pub type C64 = Cx<f64>;
/// Complex `f32`.
pub type C32 = Cx<f32>;
/// Phase parameters in `f64`.
pub type Params64 = PhaseParams<f64>;
/// Phase parameters in `f32`.
pub type Params32 = PhaseParams<f32>;
pub use transport::{IntStokes, RatStokes};
