//! Gaussian-process emulators for computer models, and the closed-form
//! linked emulator that chains them through a feed-forward system.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`]: one-dimensional correlation functions and correlation matrices.
//! * [`moments`]: expectations of kernels under normal inputs (ξ, ζ, ψ).
//! * [`emulator`]: fitting and predicting a single GP emulator.
//! * [`linked`]: the linked-emulator mean/variance and its decomposition.
//! * [`graph`]: feed-forward systems of emulators and simulators.
//! * [`design`]: Latin hypercube designs and the NRMSEP metric.
//! * [`mc`]: Monte-Carlo realisations of the linked emulator.
//! * [`adaptive`]: the variance-targeted sequential design loop.
//! * [`systems`] and [`experiment`]: the synthetic test systems and the
//!   experiment drivers used by the CLI.

pub mod adaptive;
pub mod design;
pub mod emulator;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod kernel;
pub mod linked;
pub mod mc;
pub mod moments;
mod optim;
mod poly;
pub mod systems;

pub use error::{Error, Result};
pub use kernel::{KernelForm, KernelKind, KernelSpec};
pub use moments::{NormalScalar, NormalVector};
