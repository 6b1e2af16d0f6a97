//! The guide's chapters as doc tests, so `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/filter.md")]
pub mod filter {}
#[doc = include_str!("../../../book/src/subspace.md")]
pub mod subspace {}
#[doc = include_str!("../../../book/src/tracking.md")]
pub mod tracking {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
