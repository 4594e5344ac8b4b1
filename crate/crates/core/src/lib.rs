//! Takagi-Sugeno fuzzy H∞ state-feedback design for glucose-insulin models.
//!
//! The pipeline is: build a plant ([`models`]), turn it into an exact fuzzy
//! model ([`fuzzy`]), synthesize one gain per rule from an LMI program
//! ([`lmi`], solved by [`sdp`]), check the result independently ([`verify`]),
//! and run the nonlinear closed loop ([`sim`]).

pub mod fuzzy;
pub mod io;
pub mod lmi;
pub mod models;
pub mod presets;
pub mod sdp;
pub mod sim;
pub mod verify;
