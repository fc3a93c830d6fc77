//! Full-body avatar locomotion from three-point VR tracking.
//!
//! The pipeline has three stages: a small feedforward network predicts the
//! body orientation from the HMD and the two hand controllers, a motion
//! matching runtime picks lower-body animation from a pose database, and a
//! post-pass (root clamp, foot lock, arm IK) pins the result to the trackers.

pub mod math;
pub mod mocap;
pub mod posedb;
pub mod adjust;
pub mod features;
pub mod io;
pub mod matching;
pub mod net;
pub mod trackers;
