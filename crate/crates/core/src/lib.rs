#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod discretization;
pub mod domain;
pub mod dto;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod gauss_newton;
pub mod gradflow;
pub mod models;
pub mod otd;
pub mod pde;
pub mod quadrature;

pub use discretization::{Discretization, SingularPolicy};
pub use error::{Error, Result};
