#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod gauss_markov;
pub mod linear_steering;
pub mod models;
pub mod numerics;
pub mod prox;
pub mod simulate;

pub use error::{Error, Result};
