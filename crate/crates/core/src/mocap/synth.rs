//! Deterministic parametric gait generator.
//!
//! Produces walking/turning clips on a fixed humanoid skeleton so that
//! database building, training and every test run without external capture
//! data. The same seed and parameters always produce a bit-identical clip.

use glam::{DQuat, DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Channel, Frame, Joint, RawClip, Skeleton};
use crate::math::{to_world2, two_bone_positions, wrap_angle, yaw_dir2, yaw_quat, bone_rotation};

/// Piecewise-constant yaw over time: the value at `t` is the value of the last
/// step whose time is `<= t` (first step before that).
#[derive(Debug, Clone)]
pub struct YawProfile {
    steps: Vec<(f64, f64)>,
}

impl YawProfile {
    pub fn constant(yaw: f64) -> Self {
        YawProfile { steps: vec![(0.0, yaw)] }
    }

    /// Steps must be sorted by time.
    pub fn from_steps(steps: Vec<(f64, f64)>) -> Self {
        assert!(!steps.is_empty(), "profile needs at least one step");
        assert!(steps.windows(2).all(|w| w[0].0 <= w[1].0), "steps must be time-sorted");
        YawProfile { steps }
    }

    /// Sample an arbitrary yaw function at `fps`, producing a per-frame staircase.
    pub fn sampled(f: impl Fn(f64) -> f64, duration: f64, fps: f64) -> Self {
        let n = (duration * fps).round() as usize + 1;
        let dt = 1.0 / fps;
        YawProfile {
            steps: (0..n).map(|i| (i as f64 * dt, f(i as f64 * dt))).collect(),
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self.steps.binary_search_by(|s| s.0.partial_cmp(&t).unwrap()) {
            Ok(i) => self.steps[i].1,
            Err(0) => self.steps[0].1,
            Err(i) => self.steps[i - 1].1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaitParams {
    /// Travel speed, m/s.
    pub speed: f64,
    /// Body facing over time.
    pub heading: YawProfile,
    /// Head yaw relative to the body facing.
    pub head_yaw: YawProfile,
    /// Travel direction minus facing: 0 walks forward, pi backward, ±pi/2 side-steps.
    pub travel_offset: f64,
    /// Full gait cycles per second.
    pub stride_hz: f64,
    /// 0 = upright, 1 = deep crouch.
    pub knee_bend: f64,
    pub duration: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            speed: 1.2,
            heading: YawProfile::constant(0.0),
            head_yaw: YawProfile::constant(0.0),
            travel_offset: 0.0,
            stride_hz: 1.0,
            knee_bend: 0.0,
            duration: 4.0,
            fps: 60.0,
            seed: 0,
        }
    }
}

// Skeleton dimensions, meters.
const UPPER_LEG_LEN: f64 = 0.44;
const LOWER_LEG_LEN: f64 = 0.44;
const ANKLE_HEIGHT: f64 = 0.10;
const HIP_LATERAL: f64 = 0.10;
const HIP_DROP: f64 = 0.03; // upper-leg joint sits below the root
const ROOT_HEIGHT_STANDING: f64 = 0.90;
const CROUCH_RANGE: f64 = 0.30;

fn rot_channels() -> Vec<Channel> {
    vec![Channel::ZRotation, Channel::YRotation, Channel::XRotation]
}

fn root_channels() -> Vec<Channel> {
    vec![
        Channel::XPosition,
        Channel::YPosition,
        Channel::ZPosition,
        Channel::ZRotation,
        Channel::YRotation,
        Channel::XRotation,
    ]
}

/// The fixed skeleton every generated clip uses. Joint names match the
/// default [`super::JointMap`].
pub fn canonical_skeleton() -> Skeleton {
    let j = |name: &str, parent: Option<usize>, offset: (f64, f64, f64), end: bool| Joint {
        name: name.into(),
        parent,
        offset: DVec3::new(offset.0, offset.1, offset.2),
        channels: if end {
            Vec::new()
        } else if parent.is_none() {
            root_channels()
        } else {
            rot_channels()
        },
        end_site: end,
    };
    Skeleton {
        joints: vec![
            j("Hips", None, (0.0, 0.0, 0.0), false),                 // 0
            j("Spine", Some(0), (0.0, 0.12, 0.0), false),            // 1
            j("Chest", Some(1), (0.0, 0.15, 0.0), false),            // 2
            j("Neck", Some(2), (0.0, 0.15, 0.0), false),             // 3
            j("Head", Some(3), (0.0, 0.10, 0.0), false),             // 4
            j("Head_End", Some(4), (0.0, 0.18, 0.0), true),          // 5
            j("LeftUpperArm", Some(2), (0.18, 0.12, 0.0), false),    // 6
            j("LeftLowerArm", Some(6), (0.0, -0.26, 0.0), false),    // 7
            j("LeftWrist", Some(7), (0.0, -0.25, 0.0), false),       // 8
            j("LeftWrist_End", Some(8), (0.0, -0.08, 0.0), true),    // 9
            j("RightUpperArm", Some(2), (-0.18, 0.12, 0.0), false),  // 10
            j("RightLowerArm", Some(10), (0.0, -0.26, 0.0), false),  // 11
            j("RightWrist", Some(11), (0.0, -0.25, 0.0), false),     // 12
            j("RightWrist_End", Some(12), (0.0, -0.08, 0.0), true),  // 13
            j("LeftUpperLeg", Some(0), (HIP_LATERAL, -HIP_DROP, 0.0), false), // 14
            j("LeftLowerLeg", Some(14), (0.0, -UPPER_LEG_LEN, 0.0), false),   // 15
            j("LeftFoot", Some(15), (0.0, -LOWER_LEG_LEN, 0.0), false),       // 16
            j("LeftToe", Some(16), (0.0, -0.08, 0.16), false),                // 17
            j("LeftToe_End", Some(17), (0.0, 0.0, 0.05), true),               // 18
            j("RightUpperLeg", Some(0), (-HIP_LATERAL, -HIP_DROP, 0.0), false), // 19
            j("RightLowerLeg", Some(19), (0.0, -UPPER_LEG_LEN, 0.0), false),  // 20
            j("RightFoot", Some(20), (0.0, -LOWER_LEG_LEN, 0.0), false),      // 21
            j("RightToe", Some(21), (0.0, -0.08, 0.16), false),               // 22
            j("RightToe_End", Some(22), (0.0, 0.0, 0.05), true),              // 23
        ],
    }
}

struct LegPlan {
    /// Ankle world position per frame.
    ankle: Vec<DVec3>,
    /// World yaw of the foot per frame.
    foot_yaw: Vec<f64>,
}

/// Generate a gait clip. Pure function of its parameters.
pub fn synth_gait(params: &GaitParams) -> Result<RawClip, String> {
    if params.speed < 0.0 {
        return Err("speed must be >= 0".into());
    }
    if params.duration <= 0.0 || params.fps <= 0.0 {
        return Err("duration and fps must be positive".into());
    }
    if params.stride_hz <= 0.0 {
        return Err("stride frequency must be positive".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let arm_amp_jitter: f64 = 0.8 + 0.4 * rng.gen::<f64>();
    let arm_phase_jitter: f64 = 0.6 * (rng.gen::<f64>() - 0.5);
    let bob_phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    // Slow seeded wobbles: head pitch and controller twists. These keep the
    // tracker rotations from encoding the body orientation trivially.
    let head_pitch_phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let wrist_phases: [f64; 4] = [
        rng.gen::<f64>() * std::f64::consts::TAU,
        rng.gen::<f64>() * std::f64::consts::TAU,
        rng.gen::<f64>() * std::f64::consts::TAU,
        rng.gen::<f64>() * std::f64::consts::TAU,
    ];

    let dt = 1.0 / params.fps;
    let n_frames = (params.duration * params.fps).round() as usize + 1;
    let skeleton = canonical_skeleton();

    // Root ground track, integrated per frame so constant-speed segments are exact.
    let mut track = vec![DVec2::ZERO; n_frames];
    for i in 1..n_frames {
        let t_prev = (i - 1) as f64 * dt;
        let travel = params.heading.value_at(t_prev) + params.travel_offset;
        track[i] = track[i - 1] + yaw_dir2(travel) * (params.speed * dt);
    }
    let track_at = |t: f64| -> DVec2 {
        if t <= 0.0 {
            let travel = params.heading.value_at(0.0) + params.travel_offset;
            return track[0] + yaw_dir2(travel) * (params.speed * t);
        }
        let end_t = (n_frames - 1) as f64 * dt;
        if t >= end_t {
            let travel = params.heading.value_at(end_t) + params.travel_offset;
            return track[n_frames - 1] + yaw_dir2(travel) * (params.speed * (t - end_t));
        }
        let f = t / dt;
        let i = f.floor() as usize;
        let frac = f - i as f64;
        track[i] * (1.0 - frac) + track[i.min(n_frames - 2) + 1] * frac
    };

    let f_stride = params.stride_hz;
    let root_height = ROOT_HEIGHT_STANDING - CROUCH_RANGE * params.knee_bend.clamp(0.0, 1.0);
    let speed_scale = (params.speed / 1.5).clamp(0.0, 1.0);
    let bob_amp = 0.012 * speed_scale;

    // Per-leg foot plan. Left stance occupies the first half of each cycle,
    // right stance the second half.
    let plan_leg = |lateral: f64, phase: f64| -> LegPlan {
        // Plant k of this leg covers cycle time [k, k + 0.5) of (f*t + phase).
        let plant_pos = |k: i64| -> (DVec2, f64) {
            let t_mid = (k as f64 - phase + 0.25) / f_stride;
            let yaw = params.heading.value_at(t_mid.max(0.0).min(params.duration));
            let base = track_at(t_mid);
            (base + to_world2(DVec2::new(lateral, 0.0), yaw), yaw)
        };
        let mut ankle = Vec::with_capacity(n_frames);
        let mut foot_yaw = Vec::with_capacity(n_frames);
        for i in 0..n_frames {
            let t = i as f64 * dt;
            let c = f_stride * t + phase;
            let k = c.floor() as i64;
            let u = c - k as f64;
            if u < 0.5 {
                // Stance: planted.
                let (p, yaw) = plant_pos(k);
                ankle.push(DVec3::new(p.x, ANKLE_HEIGHT, p.y));
                foot_yaw.push(yaw);
            } else {
                // Swing from plant k to plant k+1.
                let s = (u - 0.5) * 2.0;
                let ease = s * s * (3.0 - 2.0 * s);
                let (p0, y0) = plant_pos(k);
                let (p1, y1) = plant_pos(k + 1);
                let travel = (p1 - p0).length() + 0.15 * wrap_angle(y1 - y0).abs();
                let lift = (0.04 + 0.05 * speed_scale) * (travel / 0.05).clamp(0.0, 1.0);
                let p = p0 + (p1 - p0) * ease;
                ankle.push(DVec3::new(p.x, ANKLE_HEIGHT + lift * (std::f64::consts::PI * s).sin(), p.y));
                foot_yaw.push(y0 + wrap_angle(y1 - y0) * ease);
            }
        }
        LegPlan { ankle, foot_yaw }
    };

    let left = plan_leg(HIP_LATERAL, 0.0);
    let right = plan_leg(-HIP_LATERAL, 0.5);

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 * dt;
        let facing = params.heading.value_at(t);
        let hips_rot = yaw_quat(facing);
        let bob = bob_amp * (2.0 * std::f64::consts::TAU * f_stride * t + bob_phase).cos();
        let hips_pos = DVec3::new(track[i].x, root_height + bob, track[i].y);

        let mut rotations = vec![DQuat::IDENTITY; skeleton.len()];
        rotations[0] = hips_rot;
        // Head yaw relative to the body, plus a slow look-up/down wobble.
        let head_pitch = 0.20 * (std::f64::consts::TAU * 0.23 * t + head_pitch_phase).sin();
        rotations[4] = yaw_quat(params.head_yaw.value_at(t)) * DQuat::from_rotation_x(head_pitch);

        // Arm swing: each arm in opposite phase to its own-side leg.
        let swing_amp = 0.45 * speed_scale * arm_amp_jitter;
        let wl = std::f64::consts::TAU * f_stride * t + arm_phase_jitter;
        let left_swing = swing_amp * wl.sin();
        let right_swing = -swing_amp * wl.sin();
        rotations[6] = DQuat::from_rotation_x(left_swing);
        rotations[10] = DQuat::from_rotation_x(right_swing);
        let elbow = DQuat::from_rotation_x(-0.25);
        rotations[7] = elbow;
        rotations[11] = elbow;
        let wiggle = |pa: f64, pb: f64| {
            DQuat::from_rotation_y(0.45 * (std::f64::consts::TAU * 0.31 * t + pa).sin())
                * DQuat::from_rotation_z(0.35 * (std::f64::consts::TAU * 0.17 * t + pb).sin())
        };
        rotations[8] = wiggle(wrist_phases[0], wrist_phases[1]);
        rotations[12] = wiggle(wrist_phases[2], wrist_phases[3]);

        // Legs: exact ankle placement via the two-bone construction.
        for (leg, upper, lower, foot) in [(&left, 14usize, 15usize, 16usize), (&right, 19, 20, 21)] {
            let hip_world = hips_pos + hips_rot * skeleton.joints[upper].offset;
            let pole = hips_rot * DVec3::Z;
            let (knee, ankle) =
                two_bone_positions(hip_world, leg.ankle[i], UPPER_LEG_LEN, LOWER_LEG_LEN, pole);
            let upper_ws = bone_rotation(DVec3::NEG_Y, (knee - hip_world).normalize(), pole);
            let lower_ws = bone_rotation(DVec3::NEG_Y, (ankle - knee).normalize(), pole);
            let foot_ws = yaw_quat(leg.foot_yaw[i]);
            rotations[upper] = (hips_rot.inverse() * upper_ws).normalize();
            rotations[lower] = (upper_ws.inverse() * lower_ws).normalize();
            rotations[foot] = (lower_ws.inverse() * foot_ws).normalize();
        }

        frames.push(Frame { root_pos: hips_pos, rotations });
    }

    let clip = RawClip { skeleton, frame_time: dt, frames };
    debug_assert!(clip.validate().is_ok());
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mocap::JointMap;

    fn toe_world_speeds(clip: &RawClip, toe: usize) -> Vec<f64> {
        let dt = clip.frame_time;
        let pos: Vec<DVec3> = clip
            .frames
            .iter()
            .map(|f| clip.skeleton.world_transforms(f)[toe].0)
            .collect();
        (1..pos.len() - 1)
            .map(|i| ((pos[i + 1] - pos[i - 1]) / (2.0 * dt)).length())
            .collect()
    }

    #[test]
    fn zero_speed_keeps_root_constant() {
        let clip = synth_gait(&GaitParams { speed: 0.0, duration: 2.0, ..GaitParams::default() }).unwrap();
        let first = clip.frames[0].root_pos;
        for f in &clip.frames {
            assert_eq!(f.root_pos, first);
        }
    }

    #[test]
    fn constant_speed_displacement_matches_integral() {
        let clip = synth_gait(&GaitParams {
            speed: 1.2,
            duration: 10.0,
            heading: YawProfile::constant(0.7),
            ..GaitParams::default()
        })
        .unwrap();
        let disp = clip.frames.last().unwrap().root_pos - clip.frames[0].root_pos;
        let planar = DVec2::new(disp.x, disp.z);
        assert!((planar.length() - 12.0).abs() < 1e-3, "displacement {}", planar.length());
        // Along the heading direction.
        let dir = yaw_dir2(0.7);
        assert!((planar.normalize() - dir).length() < 1e-9);
    }

    #[test]
    fn stance_toe_slower_than_swing_toe_every_cycle() {
        let params = GaitParams { speed: 1.2, duration: 6.0, seed: 5, ..GaitParams::default() };
        let clip = synth_gait(&params).unwrap();
        let joints = JointMap::default().resolve(&clip.skeleton).unwrap();
        let speeds = toe_world_speeds(&clip, joints.left_toe);
        let fps = params.fps;
        // Left leg: stance is the first half of each cycle.
        let cycles = (params.duration * params.stride_hz).floor() as usize;
        for k in 0..cycles {
            let cycle_start = (k as f64 / params.stride_hz * fps) as usize;
            let half = (fps / params.stride_hz / 2.0) as usize;
            let margin = half / 5; // skip transition frames
            let stance: Vec<f64> = (cycle_start + margin..cycle_start + half - margin)
                .filter_map(|i| i.checked_sub(1).and_then(|j| speeds.get(j).copied()))
                .collect();
            let swing: Vec<f64> = (cycle_start + half + margin..cycle_start + 2 * half - margin)
                .filter_map(|i| i.checked_sub(1).and_then(|j| speeds.get(j).copied()))
                .collect();
            if stance.is_empty() || swing.is_empty() {
                continue;
            }
            let stance_max = stance.iter().cloned().fold(0.0, f64::max);
            let swing_min = swing.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                stance_max < swing_min,
                "cycle {k}: stance max {stance_max} not below swing min {swing_min}"
            );
        }
    }

    #[test]
    fn stance_toe_is_nearly_stationary() {
        let params = GaitParams { speed: 1.2, duration: 4.0, seed: 9, ..GaitParams::default() };
        let clip = synth_gait(&params).unwrap();
        let joints = JointMap::default().resolve(&clip.skeleton).unwrap();
        let speeds = toe_world_speeds(&clip, joints.left_toe);
        // Mid-stance of cycle 1 for the left leg: cycle time [1.0, 1.5)/stride_hz.
        let fps = params.fps;
        let i0 = (1.1 / params.stride_hz * fps) as usize;
        let i1 = (1.4 / params.stride_hz * fps) as usize;
        for i in i0..i1 {
            assert!(speeds[i - 1] < 0.02, "frame {i}: toe speed {}", speeds[i - 1]);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = GaitParams { seed: 42, duration: 1.0, ..GaitParams::default() };
        let a = synth_gait(&p).unwrap();
        let b = synth_gait(&p).unwrap();
        assert_eq!(a.frames.len(), b.frames.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.root_pos, fb.root_pos);
            for (qa, qb) in fa.rotations.iter().zip(&fb.rotations) {
                assert_eq!(qa.to_array(), qb.to_array());
            }
        }
        let c = synth_gait(&GaitParams { seed: 43, ..p }).unwrap();
        assert!(a.frames.iter().zip(&c.frames).any(|(fa, fc)| fa.rotations != fc.rotations));
    }

    #[test]
    fn generated_clips_validate() {
        for seed in 0..3 {
            let clip = synth_gait(&GaitParams {
                speed: 0.4 + 0.7 * seed as f64,
                duration: 2.0,
                knee_bend: 0.3 * seed as f64,
                heading: YawProfile::sampled(|t| 0.6 * t, 2.0, 60.0),
                seed,
                ..GaitParams::default()
            })
            .unwrap();
            clip.validate().unwrap();
            assert!(clip.frames.len() >= 2);
        }
    }

    #[test]
    fn head_yaw_decouples_from_body() {
        let clip = synth_gait(&GaitParams {
            speed: 1.0,
            duration: 1.0,
            head_yaw: YawProfile::constant(0.8),
            ..GaitParams::default()
        })
        .unwrap();
        let joints = JointMap::default().resolve(&clip.skeleton).unwrap();
        let frame = &clip.frames[30];
        let world = clip.skeleton.world_transforms(frame);
        let head_yaw = crate::math::quat_yaw(world[joints.head].1, 1e-6).unwrap();
        let hips_yaw = crate::math::quat_yaw(world[joints.hips].1, 1e-6).unwrap();
        assert!((wrap_angle(head_yaw - hips_yaw) - 0.8).abs() < 1e-9);
    }
}
