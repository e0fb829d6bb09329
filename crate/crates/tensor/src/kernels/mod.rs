//! Forward/backward kernels on plain buffers. The graph in [`crate::graph`]
//! records which kernel produced each node and calls the matching backward.

pub mod broadcast;
pub mod conv;
pub mod layout;
pub mod norm;
pub mod pool;
pub mod resize;
