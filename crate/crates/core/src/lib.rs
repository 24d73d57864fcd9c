//! Multiple-instance active object detection at desk scale.
//!
//! The crate is organised bottom-up: [`autodiff`] supplies the tensor tape,
//! [`synthdata`] renders labeled toy scenes, [`detector`] is the anchor-based
//! patch detector with two adversarial classifiers and a MIL head,
//! [`losses`] holds every training objective, [`activeloop`] runs the
//! label/max/min/select cycle, and [`eval`] measures detection quality.

pub mod activeloop;
pub mod autodiff;
pub mod detector;
pub mod error;
pub mod eval;
pub mod losses;
pub mod rng;
pub mod synthdata;

pub use error::{Error, Result};
