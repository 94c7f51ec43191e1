//! Runs the code listings of the guide in `book/` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/airflow.md")]
pub mod airflow {}

#[doc = include_str!("../../../book/src/filter.md")]
pub mod filter {}

#[doc = include_str!("../../../book/src/windmap.md")]
pub mod windmap {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
