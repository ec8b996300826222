//! Neural networks for predicting optimal dual potentials and the adversarial
//! loop that trains them.

pub mod checkpoint;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod train;
