//! Test oracles live in the shared dev-only testkit crate.

#![allow(unused_imports)]

pub use graspformer_testkit::*;
