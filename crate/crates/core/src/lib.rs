//! Desk-scale monocular vision-language navigation.
//!
//! A procedural 2.5D indoor world ([`world`]) and a column raycaster
//! ([`sensors`]) produce monocular observations plus four-face panoramic RGB
//! and pseudo-RGB depth supervision. [`episodes`] turns oracle trajectories
//! into training samples for action prediction, instruction reasoning and
//! the four latent panoramic dreaming targets; [`model`] is a small
//! vision-language transformer trained by [`training`] and scored in closed
//! loop by [`evaluation`].

pub mod episodes;
pub mod error;
pub mod evaluation;
pub mod hashing;
pub mod model;
pub mod sensors;
pub mod training;
pub mod world;

pub use error::{Error, Result};
