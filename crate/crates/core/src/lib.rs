//! Numerical verification of ABP, critical-density, decay and Harnack
//! estimates for p-Laplacian type operators on space forms.

pub mod error;
pub mod geometry;
pub mod mesh;
pub mod operators;
pub mod report;
pub mod solver;
pub mod abp;
pub mod contact;
pub mod viscosity;
pub mod harnack;
pub mod experiments;

pub use error::{Error, Result};
pub use geometry::{ManifoldModel, Point, TangentVector};
