//! Simulation, needle detection, 3D reconstruction and probe repositioning
//! for 2D ultrasound needle tracking.

pub mod geometry;
pub mod image;
pub mod losses;
pub mod monitor;
pub mod needle3d;
pub mod pipeline;
pub mod reposition;
pub mod rng;
pub mod sim;
