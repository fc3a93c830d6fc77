//! Post-matching pose corrections: root-position clamping toward the user
//! target, analytic two-bone IK, and foot locking.

use glam::{DQuat, DVec2, DVec3};
use thiserror::Error;

use crate::math::{quintic_decay, two_bone_positions, unground2, yaw_quat};
use crate::matching::OutputPose;
use crate::mocap::{ResolvedJoints, Skeleton};
use crate::posedb::PoseDatabase;

#[derive(Debug, Error)]
pub enum AdjustError {
    #[error("ik chain: {0}")]
    BadChain(String),
}

/// Maximum allowed offset between the avatar root and the target position,
/// plus the velocity-proportional drift that precedes the clamp.
#[derive(Debug, Clone, Copy)]
pub struct RootClampConfig {
    /// Position accuracy: hard cap on the planar distance, meters.
    pub alpha: f64,
    /// Drift toward the target at `gain * speed` meters per second.
    pub drift_gain: f64,
}

impl Default for RootClampConfig {
    fn default() -> Self {
        RootClampConfig { alpha: 0.3, drift_gain: 0.5 }
    }
}

/// Correct the avatar root position against the target.
///
/// The root first drifts toward the target proportionally to the character's
/// speed, then the distance is hard-capped at `alpha`:
/// `p' = target + alpha * (p - target) / |p - target|` when outside.
pub fn clamp_root(p: DVec2, target: DVec2, cfg: &RootClampConfig, speed: f64, dt: f64) -> DVec2 {
    let mut p = p;
    let to_target = target - p;
    let d = to_target.length();
    if d > 1e-12 {
        let drift = (cfg.drift_gain * speed.abs() * dt).min(d);
        p += to_target * (drift / d);
    }
    let off = p - target;
    let d = off.length();
    if d > cfg.alpha {
        target + off * (cfg.alpha / d)
    } else {
        p
    }
}

/// A three-joint chain for analytic IK. The mid joint bends toward `pole`
/// (character space); the hinge axis is the cross of the chain with it.
#[derive(Debug, Clone, Copy)]
pub struct IkChain {
    pub root: usize,
    pub mid: usize,
    pub end: usize,
    pub lengths: (f64, f64),
    pub pole: DVec3,
}

impl IkChain {
    /// Build a chain from three connected joints, bone lengths from offsets.
    pub fn from_joints(
        skeleton: &Skeleton,
        root: usize,
        mid: usize,
        end: usize,
        pole: DVec3,
    ) -> Result<Self, AdjustError> {
        if skeleton.joints[mid].parent != Some(root) || skeleton.joints[end].parent != Some(mid) {
            return Err(AdjustError::BadChain(format!(
                "joints {root}/{mid}/{end} are not a parent chain"
            )));
        }
        let l1 = skeleton.joints[mid].offset.length();
        let l2 = skeleton.joints[end].offset.length();
        if l1 <= 0.0 || l2 <= 0.0 {
            return Err(AdjustError::BadChain("chain bones must have positive length".into()));
        }
        Ok(IkChain { root, mid, end, lengths: (l1, l2), pole })
    }

    pub fn left_arm(skeleton: &Skeleton, joints: &ResolvedJoints) -> Result<Self, AdjustError> {
        let mid = skeleton.joints[joints.left_wrist]
            .parent
            .ok_or_else(|| AdjustError::BadChain("wrist has no parent".into()))?;
        let root = skeleton.joints[mid]
            .parent
            .ok_or_else(|| AdjustError::BadChain("elbow has no parent".into()))?;
        // Elbows bend down and slightly back.
        IkChain::from_joints(skeleton, root, mid, joints.left_wrist, DVec3::new(0.0, -0.4, -1.0))
    }

    pub fn right_arm(skeleton: &Skeleton, joints: &ResolvedJoints) -> Result<Self, AdjustError> {
        let mid = skeleton.joints[joints.right_wrist]
            .parent
            .ok_or_else(|| AdjustError::BadChain("wrist has no parent".into()))?;
        let root = skeleton.joints[mid]
            .parent
            .ok_or_else(|| AdjustError::BadChain("elbow has no parent".into()))?;
        IkChain::from_joints(skeleton, root, mid, joints.right_wrist, DVec3::new(0.0, -0.4, -1.0))
    }

    pub fn left_leg(skeleton: &Skeleton, joints: &ResolvedJoints) -> Result<Self, AdjustError> {
        IkChain::from_joints(
            skeleton,
            joints.left_upper_leg,
            joints.left_lower_leg,
            joints.left_foot,
            DVec3::Z, // knees bend forward
        )
    }

    pub fn right_leg(skeleton: &Skeleton, joints: &ResolvedJoints) -> Result<Self, AdjustError> {
        IkChain::from_joints(
            skeleton,
            joints.right_upper_leg,
            joints.right_lower_leg,
            joints.right_foot,
            DVec3::Z,
        )
    }
}

/// Adjust a pose so the chain's end effector reaches `target_pos` (world
/// space) exactly when within reach, fully extended toward it otherwise.
/// `target_rot` overrides the end joint's world rotation when given.
pub fn two_bone_ik(
    skeleton: &Skeleton,
    out: &mut OutputPose,
    chain: &IkChain,
    target_pos: DVec3,
    target_rot: Option<DQuat>,
) -> Result<(), AdjustError> {
    let world = output_world_transforms_for(skeleton, out);
    apply_two_bone(skeleton, out, chain, &world, target_pos, target_rot);
    Ok(())
}

/// Forward kinematics of an output pose against a bare skeleton.
fn output_world_transforms_for(skeleton: &Skeleton, out: &OutputPose) -> Vec<(DVec3, DQuat)> {
    let root_rot = yaw_quat(out.root_yaw);
    let root_pos = unground2(out.root_pos);
    let mut acc: Vec<(DVec3, DQuat)> = Vec::with_capacity(skeleton.len());
    for (i, joint) in skeleton.joints.iter().enumerate() {
        match joint.parent {
            None => acc.push((
                root_pos + root_rot * out.hip_pos,
                (root_rot * out.local_rots[i]).normalize(),
            )),
            Some(p) => {
                let (pp, pr) = acc[p];
                acc.push((pp + pr * joint.offset, (pr * out.local_rots[i]).normalize()));
            }
        }
    }
    acc
}

fn apply_two_bone(
    skeleton: &Skeleton,
    out: &mut OutputPose,
    chain: &IkChain,
    world: &[(DVec3, DQuat)],
    target_pos: DVec3,
    target_rot: Option<DQuat>,
) {
    let (a, upper_ws) = world[chain.root];
    let (b, lower_ws) = world[chain.mid];
    let (c, end_ws) = world[chain.end];
    let (l1, l2) = chain.lengths;
    let pole_world = yaw_quat(out.root_yaw) * chain.pole;

    let (nb, nc) = two_bone_positions(a, target_pos, l1, l2, pole_world);

    let rot_arc = |from: DVec3, to: DVec3| -> DQuat {
        let (fl, tl) = (from.length(), to.length());
        if fl < 1e-9 || tl < 1e-9 {
            DQuat::IDENTITY
        } else {
            DQuat::from_rotation_arc(from / fl, to / tl)
        }
    };

    let d1 = rot_arc(b - a, nb - a);
    let new_upper_ws = (d1 * upper_ws).normalize();
    let c_after = nb + d1 * (c - b);
    let d2 = rot_arc(c_after - nb, nc - nb);
    let new_lower_ws = (d2 * d1 * lower_ws).normalize();
    let new_end_ws = match target_rot {
        Some(q) => q,
        None => (d2 * d1 * end_ws).normalize(),
    };

    let parent_ws = match skeleton.joints[chain.root].parent {
        Some(p) => world[p].1,
        None => yaw_quat(out.root_yaw),
    };
    out.local_rots[chain.root] = (parent_ws.inverse() * new_upper_ws).normalize();
    out.local_rots[chain.mid] = (new_upper_ws.inverse() * new_lower_ws).normalize();
    out.local_rots[chain.end] = (new_lower_ws.inverse() * new_end_ws).normalize();
}

/// Locking configuration; distances in meters.
#[derive(Debug, Clone, Copy)]
pub struct FootLockConfig {
    /// Unlock when the matched foot drifts this far from the lock position.
    pub unlock_distance: f64,
    /// Blend-out time after a contact or transition unlock.
    pub release_time: f64,
}

impl Default for FootLockConfig {
    fn default() -> Self {
        FootLockConfig { unlock_distance: 0.2, release_time: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct FootState {
    locked: bool,
    lock_pos: DVec3,
    lock_rot: DQuat,
    prev_contact: bool,
    /// Blend-out after an unlock: (remaining seconds, frozen offset, rotation).
    release: Option<(f64, DVec3, DQuat)>,
}

/// Per-avatar foot-lock state machine; adjustments are applied on top of the
/// matched pose via leg IK and never touch joints above the leg chain roots.
#[derive(Debug, Clone, Default)]
pub struct FootLock {
    feet: [FootState; 2],
}

impl FootLock {
    pub fn new() -> Self {
        FootLock::default()
    }

    pub fn locked(&self) -> [bool; 2] {
        [self.feet[0].locked, self.feet[1].locked]
    }

    /// Apply foot locking to the matched pose.
    ///
    /// A foot locks at its current world position on a contact rising edge
    /// and stays pinned until the contact drops, matching transitions the
    /// pose, or the matched foot strays beyond the unlock distance. Distance
    /// unlocks snap; the other causes blend out over the release time.
    pub fn apply(
        &mut self,
        db: &PoseDatabase,
        out: &mut OutputPose,
        dt: f64,
        cfg: &FootLockConfig,
    ) {
        let skeleton = &db.skeleton;
        let joints = &db.joints;
        let chains = [
            IkChain::left_leg(skeleton, joints),
            IkChain::right_leg(skeleton, joints),
        ];
        let world = output_world_transforms_for(skeleton, out);
        let transitioned = out.transitioned;

        for side in 0..2 {
            let chain = match &chains[side] {
                Ok(c) => *c,
                Err(_) => continue,
            };
            let contact = out.contacts[side];
            let (matched_pos, matched_rot) = world[chain.end];
            let state = &mut self.feet[side];

            if state.locked {
                let strayed = (matched_pos - state.lock_pos).length() > cfg.unlock_distance;
                if strayed {
                    // Too far apart: unlock immediately, no residual pull.
                    state.locked = false;
                    state.release = None;
                } else if !contact || transitioned {
                    state.locked = false;
                    state.release = Some((
                        cfg.release_time,
                        state.lock_pos - matched_pos,
                        state.lock_rot,
                    ));
                }
            }
            if !state.locked && contact && !state.prev_contact {
                state.locked = true;
                state.lock_pos = matched_pos;
                state.lock_rot = matched_rot;
                state.release = None;
            }
            state.prev_contact = contact;

            if state.locked {
                apply_two_bone(skeleton, out, &chain, &world, state.lock_pos, Some(state.lock_rot));
            } else if let Some((remaining, offset, rot)) = state.release {
                let s = quintic_decay(1.0 - remaining / cfg.release_time.max(1e-9));
                let target = matched_pos + offset * s;
                let target_rot = matched_rot.slerp(rot, s);
                apply_two_bone(skeleton, out, &chain, &world, target, Some(target_rot));
                let left = remaining - dt;
                state.release = if left > 0.0 { Some((left, offset, rot)) } else { None };
            }
        }
    }
}
