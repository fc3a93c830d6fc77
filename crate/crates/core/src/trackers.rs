//! Three-point tracker streams: simulation from full-body clips, the
//! HMD-local network input encoding, and the JSON-lines trace format.

use glam::{DQuat, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::quat_log;
use crate::mocap::{JointMap, RawClip};
use crate::net::{rot_to_6d, Rot6};

/// Input dimension of the orientation network: 3 devices x (3 velocity +
/// 3 angular velocity + 6 rotation) + 6 previous orientation.
pub const NET_INPUT_DIM: usize = 42;
const _: () = assert!(NET_INPUT_DIM == 3 * 12 + 6);

pub type NetInput = [f64; NET_INPUT_DIM];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace line {line}: timestamps must be strictly increasing")]
    Timestamps { line: usize },
    #[error("trace needs at least 2 frames, found {0}")]
    TooShort(usize),
    #[error("{0}")]
    MissingJoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    pub pos: DVec3,
    pub rot: DQuat,
    /// World-space linear velocity, m/s.
    pub vel: DVec3,
    /// World-space angular velocity as an axis-angle vector, rad/s.
    pub ang_vel: DVec3,
}

impl DeviceState {
    fn at_rest(pos: DVec3, rot: DQuat) -> Self {
        DeviceState { pos, rot, vel: DVec3::ZERO, ang_vel: DVec3::ZERO }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerFrame {
    pub t: f64,
    pub hmd: DeviceState,
    pub left: DeviceState,
    pub right: DeviceState,
    /// World height of the HMD, used for database switching.
    pub hmd_height: f64,
}

impl TrackerFrame {
    pub fn devices(&self) -> [&DeviceState; 3] {
        [&self.hmd, &self.left, &self.right]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackerTrace {
    pub frames: Vec<TrackerFrame>,
}

impl TrackerTrace {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Median timestep, seconds.
    pub fn dt(&self) -> f64 {
        if self.frames.len() < 2 {
            return 1.0 / 60.0;
        }
        let mut steps: Vec<f64> = self.frames.windows(2).map(|w| w[1].t - w[0].t).collect();
        steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        steps[steps.len() / 2]
    }
}

/// Rigid offset of a device relative to its source joint.
#[derive(Debug, Clone, Copy)]
pub struct DeviceOffset {
    pub pos: DVec3,
    pub rot: DQuat,
}

impl DeviceOffset {
    pub const IDENTITY: DeviceOffset = DeviceOffset { pos: DVec3::ZERO, rot: DQuat::IDENTITY };
}

#[derive(Debug, Clone, Copy)]
pub struct DeviceOffsets {
    pub hmd: DeviceOffset,
    pub left: DeviceOffset,
    pub right: DeviceOffset,
}

impl Default for DeviceOffsets {
    fn default() -> Self {
        // Controllers sit slightly forward of the wrist; the HMD tracks the
        // head joint directly.
        let controller = DeviceOffset { pos: DVec3::new(0.0, 0.0, 0.05), rot: DQuat::IDENTITY };
        DeviceOffsets { hmd: DeviceOffset::IDENTITY, left: controller, right: controller }
    }
}

/// Synthesize a tracker trace from a full-body clip: device transform =
/// joint world transform composed with its fixed offset, velocities by
/// finite differences.
pub fn simulate_trackers(
    clip: &RawClip,
    map: &JointMap,
    offsets: &DeviceOffsets,
) -> Result<TrackerTrace, TraceError> {
    let joints = map.resolve(&clip.skeleton).map_err(TraceError::MissingJoint)?;
    if clip.frames.len() < 2 {
        return Err(TraceError::TooShort(clip.frames.len()));
    }
    let dt = clip.frame_time;
    let mut frames = Vec::with_capacity(clip.frames.len());
    for (i, frame) in clip.frames.iter().enumerate() {
        let world = clip.skeleton.world_transforms(frame);
        let device = |joint: usize, off: &DeviceOffset| {
            let (jp, jr) = world[joint];
            DeviceState::at_rest(jp + jr * off.pos, (jr * off.rot).normalize())
        };
        let hmd = device(joints.head, &offsets.hmd);
        frames.push(TrackerFrame {
            t: i as f64 * dt,
            hmd_height: hmd.pos.y,
            hmd,
            left: device(joints.left_wrist, &offsets.left),
            right: device(joints.right_wrist, &offsets.right),
        });
    }
    let mut trace = TrackerTrace { frames };
    recompute_velocities(&mut trace);
    Ok(trace)
}

/// Fill in device velocities from positions and rotations: central
/// differences on interior frames, one-sided at the ends.
pub fn recompute_velocities(trace: &mut TrackerTrace) {
    let n = trace.frames.len();
    if n < 2 {
        return;
    }
    for i in 0..n {
        let (lo, hi) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        let span = trace.frames[hi].t - trace.frames[lo].t;
        for d in 0..3 {
            let get = |k: usize| -> DeviceState {
                let f = &trace.frames[k];
                match d {
                    0 => f.hmd,
                    1 => f.left,
                    _ => f.right,
                }
            };
            let vel = (get(hi).pos - get(lo).pos) / span;
            let ang = quat_log(get(hi).rot * get(lo).rot.inverse()) / span;
            let f = &mut trace.frames[i];
            let dev = match d {
                0 => &mut f.hmd,
                1 => &mut f.left,
                _ => &mut f.right,
            };
            dev.vel = vel;
            dev.ang_vel = ang;
        }
    }
}

/// Stateful HMD-ground-frame encoder.
///
/// The local frame is built from the projection of the HMD forward direction
/// onto the floor plane, so the encoding is invariant to world yaw and
/// translation of the whole rig. When the user looks straight up or down the
/// projection degenerates and the previous frame's yaw is reused.
#[derive(Debug, Clone, Default)]
pub struct FrameEncoder {
    last_yaw: Option<f64>,
}

impl FrameEncoder {
    pub fn new() -> Self {
        FrameEncoder::default()
    }

    /// Yaw of the HMD ground frame for this tracker frame.
    pub fn ground_yaw(&mut self, frame: &TrackerFrame) -> f64 {
        match crate::math::quat_yaw(frame.hmd.rot, 1e-4) {
            Some(yaw) => {
                self.last_yaw = Some(yaw);
                yaw
            }
            None => self.last_yaw.unwrap_or(0.0),
        }
    }

    /// Encode one frame into the network input, given the previous predicted
    /// body orientation as a world-space 6D rotation.
    pub fn encode(&mut self, frame: &TrackerFrame, prev_orientation_world: &Rot6) -> NetInput {
        let yaw = self.ground_yaw(frame);
        to_local_frame(frame, prev_orientation_world, yaw)
    }
}

/// Pure encoding given a precomputed ground-frame yaw. See [`FrameEncoder`].
pub fn to_local_frame(frame: &TrackerFrame, prev_orientation_world: &Rot6, ground_yaw: f64) -> NetInput {
    let inv = crate::math::yaw_quat(ground_yaw).inverse();
    let mut x = [0.0; NET_INPUT_DIM];
    for (d, dev) in frame.devices().iter().enumerate() {
        let v = inv * dev.vel;
        x[3 * d] = v.x;
        x[3 * d + 1] = v.y;
        x[3 * d + 2] = v.z;
        let w = inv * dev.ang_vel;
        x[9 + 3 * d] = w.x;
        x[9 + 3 * d + 1] = w.y;
        x[9 + 3 * d + 2] = w.z;
        let r = rot_to_6d((inv * dev.rot).normalize());
        x[18 + 6 * d..18 + 6 * d + 6].copy_from_slice(&r);
    }
    let d_local = crate::net::rot6_rotate(inv, prev_orientation_world);
    x[36..42].copy_from_slice(&d_local);
    x
}

/// Apply a rigid world transform (yaw then translation) to a trace.
pub fn rigid_transform_trace(trace: &TrackerTrace, yaw: f64, translation: DVec3) -> TrackerTrace {
    let rot = crate::math::yaw_quat(yaw);
    let mut out = trace.clone();
    for f in &mut out.frames {
        for dev in [&mut f.hmd, &mut f.left, &mut f.right] {
            dev.pos = rot * dev.pos + translation;
            dev.rot = (rot * dev.rot).normalize();
        }
        f.hmd_height = f.hmd.pos.y;
    }
    recompute_velocities(&mut out);
    out
}

#[derive(Serialize, Deserialize)]
struct DeviceLine {
    p: [f64; 3],
    q: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: f64,
    hmd: DeviceLine,
    left: DeviceLine,
    right: DeviceLine,
}

fn device_line(d: &DeviceState) -> DeviceLine {
    DeviceLine {
        p: [d.pos.x, d.pos.y, d.pos.z],
        q: [d.rot.w, d.rot.x, d.rot.y, d.rot.z],
    }
}

fn device_state(l: &DeviceLine, line: usize) -> Result<DeviceState, TraceError> {
    let rot = DQuat::from_xyzw(l.q[1], l.q[2], l.q[3], l.q[0]);
    if (rot.length() - 1.0).abs() > 1e-3 {
        return Err(TraceError::Parse { line, msg: format!("quaternion norm {} not unit", rot.length()) });
    }
    // Renormalize only when needed so exact round-trips stay bit-identical.
    let rot = if (rot.length_squared() - 1.0).abs() > 1e-9 { rot.normalize() } else { rot };
    Ok(DeviceState::at_rest(DVec3::new(l.p[0], l.p[1], l.p[2]), rot))
}

/// Serialize a trace: one JSON object per line. Velocities are not stored;
/// they are recomputed on load so hand-edited traces stay consistent.
pub fn write_trace(trace: &TrackerTrace) -> String {
    let mut out = String::new();
    for f in &trace.frames {
        let line = FrameLine {
            t: f.t,
            hmd: device_line(&f.hmd),
            left: device_line(&f.left),
            right: device_line(&f.right),
        };
        out.push_str(&serde_json::to_string(&line).expect("trace serialization"));
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<TrackerTrace, TraceError> {
    let mut frames = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let line: FrameLine = serde_json::from_str(raw)
            .map_err(|e| TraceError::Parse { line: lineno, msg: e.to_string() })?;
        let hmd = device_state(&line.hmd, lineno)?;
        frames.push(TrackerFrame {
            t: line.t,
            hmd_height: hmd.pos.y,
            hmd,
            left: device_state(&line.left, lineno)?,
            right: device_state(&line.right, lineno)?,
        });
        let n = frames.len();
        if n >= 2 && frames[n - 1].t <= frames[n - 2].t {
            return Err(TraceError::Timestamps { line: lineno });
        }
    }
    if frames.len() < 2 {
        return Err(TraceError::TooShort(frames.len()));
    }
    let mut trace = TrackerTrace { frames };
    recompute_velocities(&mut trace);
    Ok(trace)
}
