//! Numerics for Hamilton-Jacobi-Bellman equations driven by a measure flow.
//!
//! The crate works on the periodic grid of [`fnspace::Grid1D`] and provides
//! backward propagators for Feller-type generators ([`propagator`]), the
//! Picard solver for mild HJB solutions ([`hjb`]), Lipschitz sensitivity of
//! the value in the measure flow ([`sensitivity`]) and the coupled
//! backward-forward mean-field fixed point ([`mfg`]).

pub mod error;
pub mod flows;
pub mod fnspace;
pub mod generator;
pub mod hjb;
pub mod mfg;
pub mod propagator;
pub mod sensitivity;

pub use error::{Error, Result};
