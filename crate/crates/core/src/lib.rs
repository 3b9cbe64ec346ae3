#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dsp;
pub mod encoders;
pub mod experiment;
pub mod fusion;
pub mod gradsuite;
pub mod ingest;
pub mod nn;
pub mod stage;
pub mod synth;
