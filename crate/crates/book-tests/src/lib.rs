//! Compiles and runs the code blocks of the guide in `book/src` as doctests.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/inference.md")]
pub mod inference {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tuning.md")]
pub mod tuning {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
