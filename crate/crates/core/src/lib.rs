pub mod censoring;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod kernel;
pub mod lagp;
pub mod linalg;
pub mod locality;
pub mod meuse;
pub mod normal;
pub mod optim;
pub mod points;
pub mod rng;
pub mod synth;
pub mod variogram;
pub mod vecchia;

pub use faer;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/kernels.md")]
pub mod book_kernels {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/exact_gp.md")]
pub mod book_exact_gp {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/variography.md")]
pub mod book_variography {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/local_gp.md")]
pub mod book_local_gp {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/vecchia.md")]
pub mod book_vecchia {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/censoring.md")]
pub mod book_censoring {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod book_evaluation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data_cli.md")]
pub mod book_data_cli {}
