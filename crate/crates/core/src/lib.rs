//! Headless simulator of robotic battery-pack disassembly: scene model, arm
//! kinematics, sampling-based motion planning, camera perception, the
//! stage-gated task executive and an image augmentation toolkit.

pub mod executive;
pub mod geometry;
pub mod imaging;
pub mod kinematics;
pub mod perception;
pub mod planner;
pub mod scene;
