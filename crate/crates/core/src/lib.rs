#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod behavior;
pub mod codec;
pub mod evalmodel;
pub mod ledger;
pub mod metrics;
pub mod protocol;
pub mod raft;
pub mod risk;
pub mod seed;
pub mod simnet;
