//! Velocity and orientation smoothing for query construction.
//!
//! The reference smoother is the exponential-decay update
//! `v' = v + beta (v_raw - v) dt`; orientations use the same rate applied to
//! the shortest-arc yaw difference. A critically damped spring variant is
//! available behind the config switch for smoother second-order behavior.

use glam::DVec2;

use crate::math::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmootherKind {
    Exponential,
    Spring,
}

#[derive(Debug, Clone)]
pub struct SmoothingState {
    /// Responsiveness factor, 1/s.
    pub beta: f64,
    pub velocity: DVec2,
    pub yaw: f64,
    vel_rate: DVec2,
    yaw_rate: f64,
}

impl SmoothingState {
    pub fn new(beta: f64) -> Self {
        assert!(beta > 0.0, "responsiveness factor must be positive");
        SmoothingState { beta, velocity: DVec2::ZERO, yaw: 0.0, vel_rate: DVec2::ZERO, yaw_rate: 0.0 }
    }

    /// Reset to a known state (e.g. the first frame of a stream).
    pub fn reset(&mut self, velocity: DVec2, yaw: f64) {
        self.velocity = velocity;
        self.yaw = yaw;
        self.vel_rate = DVec2::ZERO;
        self.yaw_rate = 0.0;
    }

    /// Advance the smoothed velocity toward the raw HMD velocity.
    pub fn smooth_velocity(&mut self, raw: DVec2, dt: f64, kind: SmootherKind) -> DVec2 {
        match kind {
            SmootherKind::Exponential => {
                self.velocity += (raw - self.velocity) * (self.beta * dt);
            }
            SmootherKind::Spring => {
                let (x, v) = critical_spring(self.velocity.x, self.vel_rate.x, raw.x, self.beta, dt);
                self.velocity.x = x;
                self.vel_rate.x = v;
                let (y, w) = critical_spring(self.velocity.y, self.vel_rate.y, raw.y, self.beta, dt);
                self.velocity.y = y;
                self.vel_rate.y = w;
            }
        }
        self.velocity
    }

    /// Advance the smoothed yaw toward the predicted orientation.
    pub fn smooth_yaw(&mut self, raw_yaw: f64, dt: f64, kind: SmootherKind) -> f64 {
        match kind {
            SmootherKind::Exponential => {
                self.yaw = slerp_yaw(self.yaw, raw_yaw, (self.beta * dt).clamp(0.0, 1.0));
            }
            SmootherKind::Spring => {
                let target = self.yaw + wrap_angle(raw_yaw - self.yaw);
                let (x, v) = critical_spring(self.yaw, self.yaw_rate, target, self.beta, dt);
                self.yaw = wrap_angle(x);
                self.yaw_rate = v;
            }
        }
        self.yaw
    }
}

/// Shortest-arc spherical interpolation between two yaws. Exactly antipodal
/// inputs resolve to the positive arc.
pub fn slerp_yaw(from: f64, to: f64, t: f64) -> f64 {
    wrap_angle(from + wrap_angle(to - from) * t)
}

/// One step of a critically damped spring toward `goal`. `beta` plays the
/// same responsiveness role as the exponential smoother (half-life ln2/beta).
fn critical_spring(x: f64, v: f64, goal: f64, beta: f64, dt: f64) -> (f64, f64) {
    let y = beta; // decay rate of the critically damped pair
    let j0 = x - goal;
    let j1 = v + j0 * y;
    let e = (-y * dt).exp();
    let nx = e * (j0 + j1 * dt) + goal;
    let nv = e * (v - j1 * y * dt);
    (nx, nv)
}
