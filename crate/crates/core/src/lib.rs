//! Graded modules over prime fields: Segre modules, Koszul homology,
//! Frobenius pushforwards and the weakly lim Ulrich construction.

pub mod algebra;
pub mod error;
pub mod linalg;
pub mod modules;
pub mod parse;
pub mod poly;
pub mod segre;
pub mod ulrich;

pub use error::{Error, Result};
