//! Phase-field topology optimization for stationary incompressible
//! Navier-Stokes flow with Brinkman penalization.

pub mod adjoint;
pub mod alpha;
pub mod assembly;
pub mod benchmarks;
pub mod config;
pub mod continuation;
pub mod discretization;
pub mod error;
pub mod functions;
pub mod io;
pub mod mesh;
pub mod objective;
pub mod optimizer;
pub mod quadrature;
pub mod runner;
pub mod saddle;
pub mod shape;
pub mod sharp;
pub mod space;
pub mod sparse;
pub mod state;

pub use error::{Error, Result};
