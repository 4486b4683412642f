//! Generators, oracles and fixture builders shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

pub mod fixtures;
pub mod gen;
pub mod oracles;
pub mod scenarios;
