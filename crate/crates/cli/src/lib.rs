//! Command-line driver and HTTP service around `sarret`.

pub mod service;
pub mod store;
pub mod thumbnail;
