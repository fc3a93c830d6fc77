//! Motion-capture clip ingestion: BVH parsing/writing, the canonical test
//! skeleton, and a deterministic synthetic gait generator.

mod bvh;
mod synth;

pub use bvh::{parse_bvh, write_bvh, BvhError};
pub use synth::{synth_gait, GaitParams, YawProfile};

use glam::{DQuat, DVec3};
use std::collections::HashMap;

use crate::math::QUAT_UNIT_TOL;

/// One positional or rotational degree of freedom in a BVH channel list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    XPosition,
    YPosition,
    ZPosition,
    XRotation,
    YRotation,
    ZRotation,
}

impl Channel {
    pub fn is_position(self) -> bool {
        matches!(self, Channel::XPosition | Channel::YPosition | Channel::ZPosition)
    }

    pub fn bvh_name(self) -> &'static str {
        match self {
            Channel::XPosition => "Xposition",
            Channel::YPosition => "Yposition",
            Channel::ZPosition => "Zposition",
            Channel::XRotation => "Xrotation",
            Channel::YRotation => "Yrotation",
            Channel::ZRotation => "Zrotation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    /// Index of the parent joint; `None` for the root. Always less than the
    /// joint's own index (topological order).
    pub parent: Option<usize>,
    /// Rest offset from the parent, meters.
    pub offset: DVec3,
    /// Channel layout as declared in the source file; empty for end sites.
    pub channels: Vec<Channel>,
    pub end_site: bool,
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
}

impl Skeleton {
    /// Index of the first joint with the given name.
    pub fn find(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Children of joint `i`, in index order.
    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, j)| j.parent == Some(i))
            .map(|(k, _)| k)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut roots = 0;
        for (i, j) in self.joints.iter().enumerate() {
            match j.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(format!("joint {} ({}) has parent index {} >= {}", i, j.name, p, i))
                }
                _ => {}
            }
        }
        if roots != 1 {
            return Err(format!("expected exactly one root joint, found {roots}"));
        }
        Ok(())
    }

    /// World transforms of all joints for one frame of motion.
    pub fn world_transforms(&self, frame: &Frame) -> Vec<(DVec3, DQuat)> {
        let mut out = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            let (pos, rot) = match j.parent {
                None => (j.offset + frame.root_pos, frame.rotations[i]),
                Some(p) => {
                    let (pp, pr): (DVec3, DQuat) = out[p];
                    (pp + pr * j.offset, (pr * frame.rotations[i]).normalize())
                }
            };
            out.push((pos, rot));
        }
        out
    }
}

/// One frame of a raw clip: world translation of the root plus a local
/// rotation per joint (identity for end sites).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub root_pos: DVec3,
    pub rotations: Vec<DQuat>,
}

/// A parsed or generated motion clip.
#[derive(Debug, Clone)]
pub struct RawClip {
    pub skeleton: Skeleton,
    /// Seconds per frame.
    pub frame_time: f64,
    pub frames: Vec<Frame>,
}

impl RawClip {
    pub fn fps(&self) -> f64 {
        1.0 / self.frame_time
    }

    pub fn validate(&self) -> Result<(), String> {
        self.skeleton.validate()?;
        if self.frame_time <= 0.0 {
            return Err("frame time must be positive".into());
        }
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.rotations.len() != self.skeleton.len() {
                return Err(format!(
                    "frame {} has {} rotations for {} joints",
                    f,
                    frame.rotations.len(),
                    self.skeleton.len()
                ));
            }
            for (i, q) in frame.rotations.iter().enumerate() {
                if (q.length() - 1.0).abs() > QUAT_UNIT_TOL {
                    return Err(format!("frame {f} joint {i}: quaternion norm {} not unit", q.length()));
                }
            }
        }
        Ok(())
    }
}

/// Names of the joints the pipeline needs to resolve, configurable because BVH
/// naming conventions vary by source. Parsed from plain-text `key = "value"` pairs.
#[derive(Debug, Clone)]
pub struct JointMap {
    pub hips: String,
    pub head: String,
    pub left_wrist: String,
    pub right_wrist: String,
    pub left_upper_leg: String,
    pub left_lower_leg: String,
    pub left_foot: String,
    pub left_toe: String,
    pub right_upper_leg: String,
    pub right_lower_leg: String,
    pub right_foot: String,
    pub right_toe: String,
}

impl Default for JointMap {
    fn default() -> Self {
        JointMap {
            hips: "Hips".into(),
            head: "Head".into(),
            left_wrist: "LeftWrist".into(),
            right_wrist: "RightWrist".into(),
            left_upper_leg: "LeftUpperLeg".into(),
            left_lower_leg: "LeftLowerLeg".into(),
            left_foot: "LeftFoot".into(),
            left_toe: "LeftToe".into(),
            right_upper_leg: "RightUpperLeg".into(),
            right_lower_leg: "RightLowerLeg".into(),
            right_foot: "RightFoot".into(),
            right_toe: "RightToe".into(),
        }
    }
}

impl JointMap {
    /// Parse a mapping file: one `key = "JointName"` pair per line, `#` comments.
    /// Unknown keys are rejected; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<JointMap, String> {
        let mut map = JointMap::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = \"value\"`", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .ok_or_else(|| format!("line {}: value must be double-quoted", lineno + 1))?
                .to_string();
            match key {
                "hips" => map.hips = value,
                "head" => map.head = value,
                "left_wrist" => map.left_wrist = value,
                "right_wrist" => map.right_wrist = value,
                "left_upper_leg" => map.left_upper_leg = value,
                "left_lower_leg" => map.left_lower_leg = value,
                "left_foot" => map.left_foot = value,
                "left_toe" => map.left_toe = value,
                "right_upper_leg" => map.right_upper_leg = value,
                "right_lower_leg" => map.right_lower_leg = value,
                "right_foot" => map.right_foot = value,
                "right_toe" => map.right_toe = value,
                other => return Err(format!("line {}: unknown joint-map key `{}`", lineno + 1, other)),
            }
        }
        Ok(map)
    }

    /// Resolve every required joint against a skeleton.
    pub fn resolve(&self, skeleton: &Skeleton) -> Result<ResolvedJoints, String> {
        let mut lookup = HashMap::new();
        for (i, j) in skeleton.joints.iter().enumerate() {
            lookup.entry(j.name.as_str()).or_insert(i);
        }
        let get = |name: &str| -> Result<usize, String> {
            lookup
                .get(name)
                .copied()
                .ok_or_else(|| format!("required joint `{name}` not found in skeleton"))
        };
        Ok(ResolvedJoints {
            hips: get(&self.hips)?,
            head: get(&self.head)?,
            left_wrist: get(&self.left_wrist)?,
            right_wrist: get(&self.right_wrist)?,
            left_upper_leg: get(&self.left_upper_leg)?,
            left_lower_leg: get(&self.left_lower_leg)?,
            left_foot: get(&self.left_foot)?,
            left_toe: get(&self.left_toe)?,
            right_upper_leg: get(&self.right_upper_leg)?,
            right_lower_leg: get(&self.right_lower_leg)?,
            right_foot: get(&self.right_foot)?,
            right_toe: get(&self.right_toe)?,
        })
    }
}

/// Joint indices resolved through a [`JointMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedJoints {
    pub hips: usize,
    pub head: usize,
    pub left_wrist: usize,
    pub right_wrist: usize,
    pub left_upper_leg: usize,
    pub left_lower_leg: usize,
    pub left_foot: usize,
    pub left_toe: usize,
    pub right_upper_leg: usize,
    pub right_lower_leg: usize,
    pub right_foot: usize,
    pub right_toe: usize,
}
