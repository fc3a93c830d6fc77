//! Pose database construction: virtual root, per-joint kinematics, foot contacts.

use glam::{DQuat, DVec3};
use thiserror::Error;

use crate::math::{quat_log, quat_yaw, yaw_quat};
use crate::mocap::{JointMap, RawClip, ResolvedJoints, Skeleton};

#[derive(Debug, Error)]
pub enum DbError {
    #[error("{0}")]
    MissingJoint(String),
    #[error("the mapped hip joint must be the skeleton root (found index {0})")]
    HipNotRoot(usize),
    #[error("clip {clip}: frame {frame}: hip forward is vertical, virtual-root orientation is degenerate")]
    DegenerateOrientation { clip: usize, frame: usize },
    #[error("clip {clip} has {frames} frames; at least 2 are required")]
    ClipTooShort { clip: usize, frames: usize },
    #[error("clips have mixed frame rates ({0} vs {1} fps)")]
    MixedFps(f64, f64),
    #[error("empty clip list")]
    EmptyClipList,
    #[error("feature database needs at least 2 valid indices, found {0}")]
    TooFewValidIndices(usize),
}

/// A clip re-expressed under a virtual root: the hip projected onto the floor
/// plane, with its yaw taken from the projected hip forward direction.
#[derive(Debug, Clone)]
pub struct RootedClip {
    pub skeleton: Skeleton,
    pub frame_time: f64,
    pub frames: Vec<RootedFrame>,
}

#[derive(Debug, Clone)]
pub struct RootedFrame {
    /// Virtual root world position; height component is always zero.
    pub root_pos: DVec3,
    pub root_yaw: f64,
    /// Hip position in virtual-root space.
    pub hip_pos: DVec3,
    /// Local rotations; index 0 is the hip expressed in virtual-root space.
    pub rotations: Vec<DQuat>,
}

/// Project the hip onto the floor plane and re-express the clip under the
/// resulting virtual root.
pub fn add_virtual_root(clip: &RawClip, map: &JointMap) -> Result<RootedClip, DbError> {
    let joints = map.resolve(&clip.skeleton).map_err(DbError::MissingJoint)?;
    add_virtual_root_resolved(clip, &joints, 0)
}

fn add_virtual_root_resolved(
    clip: &RawClip,
    joints: &ResolvedJoints,
    clip_index: usize,
) -> Result<RootedClip, DbError> {
    if clip.skeleton.joints[joints.hips].parent.is_some() {
        return Err(DbError::HipNotRoot(joints.hips));
    }
    let hip = joints.hips;
    let mut frames = Vec::with_capacity(clip.frames.len());
    for (f, frame) in clip.frames.iter().enumerate() {
        let hip_world_pos = clip.skeleton.joints[hip].offset + frame.root_pos;
        let hip_world_rot = frame.rotations[hip];
        let yaw = quat_yaw(hip_world_rot, 1e-4)
            .ok_or(DbError::DegenerateOrientation { clip: clip_index, frame: f })?;
        let root_pos = DVec3::new(hip_world_pos.x, 0.0, hip_world_pos.z);
        let root_rot = yaw_quat(yaw);
        let hip_pos = root_rot.inverse() * (hip_world_pos - root_pos);
        let mut rotations = frame.rotations.clone();
        rotations[hip] = (root_rot.inverse() * hip_world_rot).normalize();
        frames.push(RootedFrame { root_pos, root_yaw: yaw, hip_pos, rotations });
    }
    Ok(RootedClip { skeleton: clip.skeleton.clone(), frame_time: clip.frame_time, frames })
}

/// One database entry: local kinematic state plus foot contacts.
#[derive(Debug, Clone)]
pub struct Pose {
    /// Virtual-root world position (height 0).
    pub root_pos: DVec3,
    pub root_yaw: f64,
    /// Local joint positions: the hip in virtual-root space, parent-space offsets below.
    pub yp: Vec<DVec3>,
    /// Local joint rotations: the hip in virtual-root space, parent-space below.
    pub yr: Vec<DQuat>,
    /// Joint linear velocities in character space (the virtual-root frame of this pose).
    pub yv: Vec<DVec3>,
    /// Local joint angular velocities, axis-angle vectors, rad/s.
    pub yw: Vec<DVec3>,
    /// Left / right foot ground contact.
    pub yc: [bool; 2],
}

#[derive(Debug, Clone)]
pub struct PoseDatabase {
    pub skeleton: Skeleton,
    pub joints: ResolvedJoints,
    pub poses: Vec<Pose>,
    /// Half-open `(start, end)` pose-index range of each source clip.
    pub clip_ranges: Vec<(usize, usize)>,
    pub fps: f64,
    pub contact_velocity_threshold: f64,
}

impl PoseDatabase {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Clip containing pose `index`.
    pub fn clip_of(&self, index: usize) -> usize {
        self.clip_ranges
            .iter()
            .position(|&(s, e)| index >= s && index < e)
            .expect("pose index out of range")
    }

    /// End (exclusive) of the clip containing `index`.
    pub fn clip_end(&self, index: usize) -> usize {
        self.clip_ranges[self.clip_of(index)].1
    }

    /// Character-space transforms of every joint for one pose.
    pub fn character_transforms(&self, pose: &Pose) -> Vec<(DVec3, DQuat)> {
        let mut out: Vec<(DVec3, DQuat)> = Vec::with_capacity(self.skeleton.len());
        for (i, joint) in self.skeleton.joints.iter().enumerate() {
            match joint.parent {
                None => out.push((pose.yp[i], pose.yr[i])),
                Some(p) => {
                    let (pp, pr) = out[p];
                    out.push((pp + pr * pose.yp[i], (pr * pose.yr[i]).normalize()));
                }
            }
        }
        out
    }

    /// World transforms of every joint for one pose.
    pub fn world_transforms(&self, pose: &Pose) -> Vec<(DVec3, DQuat)> {
        let root_rot = yaw_quat(pose.root_yaw);
        self.character_transforms(pose)
            .into_iter()
            .map(|(p, q)| (pose.root_pos + root_rot * p, (root_rot * q).normalize()))
            .collect()
    }
}

/// Build the pose database from one or more clips.
///
/// Velocities use central finite differences on interior frames and one-sided
/// differences at clip ends; nothing is differenced across a clip boundary.
/// A foot is in contact when its toe's world speed is below the threshold.
pub fn build_pose_db(
    clips: &[RawClip],
    map: &JointMap,
    contact_velocity_threshold: f64,
) -> Result<PoseDatabase, DbError> {
    if clips.is_empty() {
        return Err(DbError::EmptyClipList);
    }
    let fps = clips[0].fps();
    for (i, c) in clips.iter().enumerate() {
        if c.frames.len() < 2 {
            return Err(DbError::ClipTooShort { clip: i, frames: c.frames.len() });
        }
        if (c.fps() - fps).abs() > 1e-6 {
            return Err(DbError::MixedFps(fps, c.fps()));
        }
    }
    let joints = map.resolve(&clips[0].skeleton).map_err(DbError::MissingJoint)?;

    let mut poses = Vec::new();
    let mut clip_ranges = Vec::new();
    for (ci, clip) in clips.iter().enumerate() {
        let start = poses.len();
        let rooted = add_virtual_root_resolved(clip, &joints, ci)?;
        append_clip_poses(clip, &rooted, &joints, contact_velocity_threshold, &mut poses);
        clip_ranges.push((start, poses.len()));
    }

    Ok(PoseDatabase {
        skeleton: clips[0].skeleton.clone(),
        joints,
        poses,
        clip_ranges,
        fps,
        contact_velocity_threshold,
    })
}

fn append_clip_poses(
    clip: &RawClip,
    rooted: &RootedClip,
    joints: &ResolvedJoints,
    contact_threshold: f64,
    out: &mut Vec<Pose>,
) {
    let n = clip.frames.len();
    let nj = clip.skeleton.len();
    let dt = clip.frame_time;

    // World transforms of the original clip, per frame.
    let world: Vec<Vec<(DVec3, DQuat)>> = clip
        .frames
        .iter()
        .map(|f| clip.skeleton.world_transforms(f))
        .collect();

    // Central differences interior, one-sided at the ends.
    let diff3 = |get: &dyn Fn(usize) -> DVec3, f: usize| -> DVec3 {
        if n == 1 {
            DVec3::ZERO
        } else if f == 0 {
            (get(1) - get(0)) / dt
        } else if f == n - 1 {
            (get(n - 1) - get(n - 2)) / dt
        } else {
            (get(f + 1) - get(f - 1)) / (2.0 * dt)
        }
    };
    let diff_rot = |get: &dyn Fn(usize) -> DQuat, f: usize| -> DVec3 {
        if n == 1 {
            DVec3::ZERO
        } else if f == 0 {
            quat_log(get(1) * get(0).inverse()) / dt
        } else if f == n - 1 {
            quat_log(get(n - 1) * get(n - 2).inverse()) / dt
        } else {
            quat_log(get(f + 1) * get(f - 1).inverse()) / (2.0 * dt)
        }
    };

    for f in 0..n {
        let rf = &rooted.frames[f];
        let root_rot = yaw_quat(rf.root_yaw);
        let inv_root = root_rot.inverse();

        let mut yp = Vec::with_capacity(nj);
        let mut yr = Vec::with_capacity(nj);
        let mut yv = Vec::with_capacity(nj);
        let mut yw = Vec::with_capacity(nj);
        for j in 0..nj {
            if j == joints.hips {
                yp.push(rf.hip_pos);
            } else {
                yp.push(clip.skeleton.joints[j].offset);
            }
            yr.push(rf.rotations[j]);
            let getp = |t: usize| world[t][j].0;
            yv.push(inv_root * diff3(&getp, f));
            let getq = |t: usize| rooted.frames[t].rotations[j];
            yw.push(diff_rot(&getq, f));
        }

        let toe_speed = |toe: usize| diff3(&|t| world[t][toe].0, f).length();
        let yc = [
            toe_speed(joints.left_toe) < contact_threshold,
            toe_speed(joints.right_toe) < contact_threshold,
        ];

        out.push(Pose {
            root_pos: rf.root_pos,
            root_yaw: rf.root_yaw,
            yp,
            yr,
            yv,
            yw,
            yc,
        });
    }
}
