//! Assignment network, optimizer and training loop.

pub mod adam;
pub mod checkpoint;
pub mod features;
pub mod network;
pub mod train;
