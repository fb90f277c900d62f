//! Finger-press inference from image sequences through an intermediate
//! kinematic hand representation.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`tensor`]: dense tensors, differentiable operators, Adam.
//! * [`netspec`]: declarative SF / MF / CBMF model specifications, exact
//!   parameter accounting, and the forward/backward runtime.
//! * [`kinematics`]: labeled 3D marker frames to the 17-angle hand
//!   configuration.
//! * [`datapipe`]: stream alignment, windowing, grouped folds, file formats.
//! * [`synthlab`]: a seeded generator of sessions (motion, markers, images).
//! * [`train`]: losses, training loops, evaluation, ablations, replay.


pub mod cli;
pub mod datapipe;
pub mod error;
pub mod kinematics;
pub mod netspec;
pub mod synthlab;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
