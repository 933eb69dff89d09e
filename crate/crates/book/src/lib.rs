// Each chapter of the guide becomes a module doc, so `cargo test --doc`
// runs every listing in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/rank-correlation.md")]
pub mod rank_correlation {}
#[doc = include_str!("../../../book/src/graphical-lasso.md")]
pub mod graphical_lasso {}
#[doc = include_str!("../../../book/src/quilting.md")]
pub mod quilting {}
#[doc = include_str!("../../../book/src/low-rank.md")]
pub mod low_rank {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
