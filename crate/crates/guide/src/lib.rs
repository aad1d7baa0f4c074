//! Every chapter of the book under `book/src` becomes a module here, so
//! `cargo test --doc -p guide` compiles and runs its listings.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/detection.md")]
pub mod detection {}
#[doc = include_str!("../../../book/src/body_model.md")]
pub mod body_model {}
#[doc = include_str!("../../../book/src/refinement.md")]
pub mod refinement {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/synthetic_data.md")]
pub mod synthetic_data {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
