//! Each chapter of the guide is a module here so `cargo test --doc` runs
//! its snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/inventory.md")]
pub mod inventory {}
#[doc = include_str!("../../../book/src/reservations.md")]
pub mod reservations {}
#[doc = include_str!("../../../book/src/allocation.md")]
pub mod allocation {}
#[doc = include_str!("../../../book/src/specvirt.md")]
pub mod specvirt {}
#[doc = include_str!("../../../book/src/channel.md")]
pub mod channel {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/gateway.md")]
pub mod gateway {}
