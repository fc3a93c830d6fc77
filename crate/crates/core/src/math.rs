//! Shared geometry helpers.
//!
//! Conventions used throughout the crate:
//!
//! * World space is right-handed, Y-up. The ground plane is XZ.
//! * A yaw of zero faces world +Z; positive yaw turns toward +X.
//! * Ground-plane ("2D") vectors store `(world x, world z)`, so the local
//!   forward direction of a frame is `(0, 1)`.

use glam::{DQuat, DVec2, DVec3};

pub const QUAT_UNIT_TOL: f64 = 1e-6;

/// Yaw rotation about the world up axis. `yaw_quat(0)` maps local +Z to world +Z.
pub fn yaw_quat(yaw: f64) -> DQuat {
    DQuat::from_rotation_y(yaw)
}

/// Yaw angle of a rotation, taken from its forward (+Z) axis projected onto the ground.
/// Returns `None` when the forward axis is within `tol` of vertical.
pub fn quat_yaw(q: DQuat, tol: f64) -> Option<f64> {
    let fwd = q * DVec3::Z;
    let planar = DVec2::new(fwd.x, fwd.z);
    if planar.length() <= tol {
        None
    } else {
        Some(planar.x.atan2(planar.y))
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Ground-plane direction of a yaw angle: `(sin, cos)` so that yaw 0 is `(0, 1)`.
pub fn yaw_dir2(yaw: f64) -> DVec2 {
    DVec2::new(yaw.sin(), yaw.cos())
}

/// Project a world vector onto the ground plane.
pub fn ground2(v: DVec3) -> DVec2 {
    DVec2::new(v.x, v.z)
}

/// Lift a ground-plane vector back to 3D at height zero.
pub fn unground2(v: DVec2) -> DVec3 {
    DVec3::new(v.x, 0.0, v.y)
}

/// Express a ground-plane vector in the local frame of a yaw rotation.
pub fn to_local2(v: DVec2, frame_yaw: f64) -> DVec2 {
    let (s, c) = frame_yaw.sin_cos();
    DVec2::new(v.x * c - v.y * s, v.x * s + v.y * c)
}

/// Inverse of [`to_local2`].
pub fn to_world2(v: DVec2, frame_yaw: f64) -> DVec2 {
    let (s, c) = frame_yaw.sin_cos();
    DVec2::new(v.x * c + v.y * s, -v.x * s + v.y * c)
}

/// Logarithm map: rotation quaternion to axis-angle vector (angle encoded as length).
pub fn quat_log(q: DQuat) -> DVec3 {
    // Take the representative on the positive real hemisphere so the angle is <= pi.
    let q = if q.w < 0.0 { -q } else { q };
    let im = DVec3::new(q.x, q.y, q.z);
    let im_len = im.length();
    if im_len < 1e-12 {
        return DVec3::ZERO;
    }
    let angle = 2.0 * im_len.atan2(q.w);
    im * (angle / im_len)
}

/// Exponential map: axis-angle vector to rotation quaternion.
pub fn quat_exp(v: DVec3) -> DQuat {
    let angle = v.length();
    if angle < 1e-12 {
        return DQuat::IDENTITY;
    }
    DQuat::from_axis_angle(v / angle, angle)
}

/// Angular difference `a * b^-1` as an axis-angle vector.
pub fn quat_delta(a: DQuat, b: DQuat) -> DVec3 {
    quat_log(a * b.inverse())
}

/// Geodesic angle between two rotations, in radians.
pub fn quat_angle(a: DQuat, b: DQuat) -> f64 {
    quat_delta(a, b).length()
}

/// Complementary smootherstep: C2-continuous decay from 1 at `t = 0` to 0 at `t = 1`,
/// with zero slope at both ends.
pub fn quintic_decay(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    1.0 - t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Two-bone chain solve on world-space joint positions.
///
/// Given the chain root `a`, the desired end position `target`, segment lengths
/// `len1`/`len2` and a bend hint `pole` (the mid joint is placed on the pole side
/// of the root-to-target line), returns the mid and end positions. Unreachable
/// targets leave the chain fully extended toward the target.
pub fn two_bone_positions(
    a: DVec3,
    target: DVec3,
    len1: f64,
    len2: f64,
    pole: DVec3,
) -> (DVec3, DVec3) {
    let eps = 1e-9;
    let to_target = target - a;
    let dist = to_target.length().max(eps);
    let max_reach = len1 + len2;
    let min_reach = (len1 - len2).abs();
    let d = dist.clamp(min_reach + 1e-9, max_reach - 1e-9);
    let dir = to_target / dist;

    // Component of the pole perpendicular to the chain direction.
    let mut perp = pole - dir * pole.dot(dir);
    if perp.length() < 1e-8 {
        // Pole parallel to the chain: pick any perpendicular.
        let alt = if dir.x.abs() < 0.9 { DVec3::X } else { DVec3::Y };
        perp = alt - dir * alt.dot(dir);
    }
    let perp = perp.normalize();

    // Law of cosines for the angle at the root between the chain axis and bone 1.
    let cos_root = ((len1 * len1 + d * d - len2 * len2) / (2.0 * len1 * d)).clamp(-1.0, 1.0);
    let sin_root = (1.0 - cos_root * cos_root).max(0.0).sqrt();

    let mid = a + dir * (len1 * cos_root) + perp * (len1 * sin_root);
    let end = a + dir * d;
    (mid, end)
}

/// World rotation of a bone whose rest direction is `rest_dir` (unit), oriented so
/// the bone points along `bone_dir` with its secondary axis as close as possible
/// to `up_hint`.
pub fn bone_rotation(rest_dir: DVec3, bone_dir: DVec3, up_hint: DVec3) -> DQuat {
    let y = bone_dir.normalize();
    let mut z = up_hint - y * up_hint.dot(y);
    if z.length() < 1e-8 {
        let alt = if y.z.abs() < 0.9 { DVec3::Z } else { DVec3::X };
        z = alt - y * alt.dot(y);
    }
    let z = z.normalize();
    let x = y.cross(z);
    let m = glam::DMat3::from_cols(x, y, z);
    let world = DQuat::from_mat3(&m);

    // `world` maps local +Y to bone_dir; pre-rotate so it maps rest_dir instead.
    let align = DQuat::from_rotation_arc(rest_dir, DVec3::Y);
    (world * align).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_roundtrip() {
        for &yaw in &[0.0, 0.5, -1.2, 3.0, -3.0] {
            let q = yaw_quat(yaw);
            let back = quat_yaw(q, 1e-4).unwrap();
            assert!((wrap_angle(back - yaw)).abs() < 1e-12, "yaw {yaw}");
        }
    }

    #[test]
    fn quat_yaw_degenerate_forward() {
        // Looking straight up: forward axis parallel to world up.
        let q = DQuat::from_rotation_x(-std::f64::consts::FRAC_PI_2);
        assert!(quat_yaw(q, 1e-4).is_none());
    }

    #[test]
    fn local2_world2_inverse() {
        let v = DVec2::new(0.3, -1.7);
        for &yaw in &[0.0, 0.9, -2.4] {
            let l = to_local2(v, yaw);
            let w = to_world2(l, yaw);
            assert!((w - v).length() < 1e-12);
        }
        // Frame forward maps to local (0, 1).
        let f = yaw_dir2(0.8);
        let l = to_local2(f, 0.8);
        assert!((l - DVec2::new(0.0, 1.0)).length() < 1e-12);
    }

    #[test]
    fn log_exp_roundtrip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let axis = DVec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5).normalize();
            let angle = rng.gen::<f64>() * 3.0;
            let q = DQuat::from_axis_angle(axis, angle);
            let v = quat_log(q);
            let back = quat_exp(v);
            assert!(quat_angle(q, back) < 1e-9);
        }
    }

    #[test]
    fn two_bone_reaches_when_reachable() {
        let a = DVec3::new(0.0, 1.0, 0.0);
        let target = DVec3::new(0.2, 0.3, 0.1);
        let (mid, end) = two_bone_positions(a, target, 0.4, 0.4, DVec3::Z);
        assert!((end - target).length() < 1e-6);
        assert!(((mid - a).length() - 0.4).abs() < 1e-9);
        assert!(((end - mid).length() - 0.4).abs() < 1e-9);
        // Mid joint lies on the pole side.
        let dir = (target - a).normalize();
        let perp = DVec3::Z - dir * DVec3::Z.dot(dir);
        assert!((mid - a).dot(perp) > 0.0);
    }

    #[test]
    fn two_bone_extends_toward_unreachable_target() {
        let a = DVec3::ZERO;
        let target = DVec3::new(2.0, 0.0, 0.0);
        let (mid, end) = two_bone_positions(a, target, 0.3, 0.3, DVec3::Z);
        assert!((end.length() - 0.6).abs() < 1e-4);
        assert!(((mid - a).length() - 0.3).abs() < 1e-9);
        assert!(((end - mid).length() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn bone_rotation_maps_rest_to_dir() {
        let q = bone_rotation(DVec3::NEG_Y, DVec3::new(0.1, -0.9, 0.2).normalize(), DVec3::Z);
        let mapped = q * DVec3::NEG_Y;
        assert!((mapped - DVec3::new(0.1, -0.9, 0.2).normalize()).length() < 1e-9);
    }

    #[test]
    fn quintic_decay_endpoints() {
        assert!((quintic_decay(0.0) - 1.0).abs() < 1e-15);
        assert!(quintic_decay(1.0).abs() < 1e-15);
        let h = 1e-6;
        assert!((quintic_decay(h) - 1.0).abs() < 1e-9); // zero slope at start
        assert!(quintic_decay(1.0 - h).abs() < 1e-9); // zero slope at end
    }
}
