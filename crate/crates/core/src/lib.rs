//! Numerical laboratory for the generalized Calabi–Yau equation
//! `(ω + dJdφ)^n = f ω^n` on flat tori carrying compatible, possibly
//! non-integrable, almost complex structures.

pub mod algebra;
pub mod boundary;
pub mod cy_operator;
pub mod error;
pub mod forms;
pub mod frame;
pub mod grid;
pub mod io;
pub mod jet;
pub mod potentials;
pub mod solver;
pub mod structure;

pub use error::{Error, Result};
pub use grid::GridChart;
pub use num_complex::Complex64;
pub use structure::{CompatibleStructure, StructureRecipe};
