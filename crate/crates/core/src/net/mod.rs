//! Body-orientation predictor: a 42 -> 32 -> 32 -> 6 feedforward network
//! over HMD-local tracker features, trained with a rollout scheme that feeds
//! each prediction back as the next previous-orientation input.

mod train;

pub use train::{train, Adam, OrientationDataset, RolloutNet, TrainConfig};

use glam::{DMat3, DQuat, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{quat_yaw, yaw_quat};
use crate::trackers::{FrameEncoder, NetInput, TrackerTrace, NET_INPUT_DIM};

pub const HIDDEN: usize = 32;
pub const OUTPUT_DIM: usize = 6;
/// Total trainable parameter count of the fixed architecture.
pub const PARAM_COUNT: usize =
    HIDDEN * NET_INPUT_DIM + HIDDEN + HIDDEN * HIDDEN + HIDDEN + OUTPUT_DIM * HIDDEN + OUTPUT_DIM;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("6D rotation is degenerate: {0}")]
    DegenerateSixD(&'static str),
    #[error("non-finite network input (component {0})")]
    NonFiniteInput(usize),
    #[error("dataset trace {trace} has {frames} frames; rollout {rollout} needs more than {}", rollout + 1)]
    DatasetTooShort { trace: usize, frames: usize, rollout: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model file: {0}")]
    BadModel(String),
}

/// Two-axis rotation encoding: the first two columns of the rotation matrix.
pub type Rot6 = [f64; 6];

/// Encode a rotation as its first two matrix columns.
pub fn rot_to_6d(q: DQuat) -> Rot6 {
    let m = DMat3::from_quat(q);
    [m.x_axis.x, m.x_axis.y, m.x_axis.z, m.y_axis.x, m.y_axis.y, m.y_axis.z]
}

/// Recover a rotation from a (possibly unnormalized) 6D encoding via
/// Gram-Schmidt: normalize the first axis, orthogonalize and normalize the
/// second, complete with their cross product.
pub fn rot_from_6d(r: &Rot6) -> Result<DQuat, NetError> {
    let a1 = DVec3::new(r[0], r[1], r[2]);
    let a2 = DVec3::new(r[3], r[4], r[5]);
    let n1 = a1.length();
    if n1 < 1e-9 {
        return Err(NetError::DegenerateSixD("first axis is zero"));
    }
    let b1 = a1 / n1;
    let a2 = a2 - b1 * a2.dot(b1);
    let n2 = a2.length();
    if n2 < 1e-9 {
        return Err(NetError::DegenerateSixD("second axis is parallel to the first"));
    }
    let b2 = a2 / n2;
    let b3 = b1.cross(b2);
    Ok(DQuat::from_mat3(&DMat3::from_cols(b1, b2, b3)).normalize())
}

/// Rotate both columns of a raw 6D encoding. Linear, so it is safe on
/// unnormalized network outputs.
pub fn rot6_rotate(q: DQuat, r: &Rot6) -> Rot6 {
    let c1 = q * DVec3::new(r[0], r[1], r[2]);
    let c2 = q * DVec3::new(r[3], r[4], r[5]);
    [c1.x, c1.y, c1.z, c2.x, c2.y, c2.z]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainMeta {
    pub rollout: usize,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub decoupled_decay: bool,
    pub final_train_loss: f64,
    pub final_validation_loss: f64,
}

/// Weights, input normalization and training metadata of the predictor.
/// Weights are stored in 32-bit; inference accumulates in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    /// Row-major `HIDDEN x NET_INPUT_DIM`.
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// Row-major `HIDDEN x HIDDEN`.
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
    /// Row-major `OUTPUT_DIM x HIDDEN`.
    pub w3: Vec<f32>,
    pub b3: Vec<f32>,
    pub input_mean: Vec<f32>,
    pub input_std: Vec<f32>,
    pub meta: TrainMeta,
}

impl NetModel {
    pub fn validate(&self) -> Result<(), NetError> {
        let dims = [
            (self.w1.len(), HIDDEN * NET_INPUT_DIM, "w1"),
            (self.b1.len(), HIDDEN, "b1"),
            (self.w2.len(), HIDDEN * HIDDEN, "w2"),
            (self.b2.len(), HIDDEN, "b2"),
            (self.w3.len(), OUTPUT_DIM * HIDDEN, "w3"),
            (self.b3.len(), OUTPUT_DIM, "b3"),
            (self.input_mean.len(), NET_INPUT_DIM, "input_mean"),
            (self.input_std.len(), NET_INPUT_DIM, "input_std"),
        ];
        for (got, want, name) in dims {
            if got != want {
                return Err(NetError::BadModel(format!("{name} has {got} values, expected {want}")));
            }
        }
        if self.input_std.iter().any(|s| *s <= 0.0) {
            return Err(NetError::BadModel("input std must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic inference pass. The raw 6D output must go through
/// [`rot_from_6d`] before any downstream use.
pub fn forward(model: &NetModel, x: &NetInput) -> Result<Rot6, NetError> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(NetError::NonFiniteInput(i));
    }
    let mut xn = [0.0f64; NET_INPUT_DIM];
    for i in 0..NET_INPUT_DIM {
        xn[i] = (x[i] - model.input_mean[i] as f64) / model.input_std[i] as f64;
    }
    let mut h1 = [0.0f64; HIDDEN];
    for r in 0..HIDDEN {
        let mut acc = model.b1[r] as f64;
        for c in 0..NET_INPUT_DIM {
            acc += model.w1[r * NET_INPUT_DIM + c] as f64 * xn[c];
        }
        h1[r] = acc.max(0.0);
    }
    let mut h2 = [0.0f64; HIDDEN];
    for r in 0..HIDDEN {
        let mut acc = model.b2[r] as f64;
        for c in 0..HIDDEN {
            acc += model.w2[r * HIDDEN + c] as f64 * h1[c];
        }
        h2[r] = acc.max(0.0);
    }
    let mut out = [0.0f64; OUTPUT_DIM];
    for r in 0..OUTPUT_DIM {
        let mut acc = model.b3[r] as f64;
        for c in 0..HIDDEN {
            acc += model.w3[r * HIDDEN + c] as f64 * h2[c];
        }
        out[r] = acc;
    }
    Ok(out)
}

/// A body-orientation predictor: the trained network or the HMD-forward
/// baseline most VR applications use.
#[derive(Debug, Clone)]
pub enum Predictor {
    Network(NetModel),
    HmdForward,
}

/// Per-stream prediction state. Internally the recurrence carries the raw 6D
/// output in world space; the public output is projected to yaw only.
#[derive(Debug, Clone)]
pub struct OrientationStream<'m> {
    predictor: &'m Predictor,
    encoder: FrameEncoder,
    prev_world: Option<Rot6>,
    last_yaw: f64,
}

impl<'m> OrientationStream<'m> {
    /// `initial_yaw` seeds the recurrence; when absent the first frame's HMD
    /// ground yaw is used.
    pub fn new(predictor: &'m Predictor, initial_yaw: Option<f64>) -> Self {
        OrientationStream {
            predictor,
            encoder: FrameEncoder::new(),
            prev_world: initial_yaw.map(|y| rot_to_6d(yaw_quat(y))),
            last_yaw: initial_yaw.unwrap_or(0.0),
        }
    }

    /// Predict the world-frame body yaw for the next frame of the stream.
    pub fn step(&mut self, frame: &crate::trackers::TrackerFrame) -> Result<f64, NetError> {
        let ground_yaw = self.encoder.ground_yaw(frame);
        match self.predictor {
            Predictor::HmdForward => {
                self.last_yaw = ground_yaw;
                Ok(ground_yaw)
            }
            Predictor::Network(model) => {
                let prev = self
                    .prev_world
                    .get_or_insert_with(|| rot_to_6d(yaw_quat(ground_yaw)));
                let x = crate::trackers::to_local_frame(frame, prev, ground_yaw);
                let out_local = forward(model, &x)?;
                let out_world = rot6_rotate(yaw_quat(ground_yaw), &out_local);
                self.prev_world = Some(out_world);
                let rot_world = yaw_quat(ground_yaw) * rot_from_6d(&out_local)?;
                if let Some(yaw) = quat_yaw(rot_world, 1e-6) {
                    self.last_yaw = yaw;
                }
                Ok(self.last_yaw)
            }
        }
    }
}

/// Run a predictor over a whole trace, returning per-frame world yaws.
pub fn predict_stream(
    predictor: &Predictor,
    trace: &TrackerTrace,
    initial_yaw: Option<f64>,
) -> Result<Vec<f64>, NetError> {
    let mut stream = OrientationStream::new(predictor, initial_yaw);
    trace.frames.iter().map(|f| stream.step(f)).collect()
}
