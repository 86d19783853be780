//! Imagination-capable belief state.
//!
//! A robot's belief about a tabletop scene is kept as a scene graph and
//! mirrored into an artificial world. Rendering that world from the robot's
//! camera gives the sensor data the robot expects to see; comparing it with
//! what the sensor actually delivered confirms, refines or rejects each
//! perception hypothesis.

pub mod collision;
pub mod desk;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod histogram;
pub mod map;
pub mod mesh;
pub mod ois;
pub mod percept;
pub mod protocol;
pub mod render;
pub mod scenario;
pub mod scene;
pub mod verify;
pub mod world;
