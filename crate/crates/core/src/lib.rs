//! Phase-field brittle fracture on linear simplex meshes.
//!
//! A quasi-static load program is solved step by step with alternating
//! minimization over displacement and damage. Each accepted step is checked
//! against a two-sided energy inequality, and steps that fail it trigger a
//! jump back to an earlier load step ([`driver`]).
//!
//! The `pfrac` binary wraps [`cli`].

pub mod cli;
pub mod driver;
pub mod energetics;
pub mod fem;
pub mod linsolve;
pub mod material;
pub mod mesh;
pub mod par;
pub mod presets;
pub mod solver;
