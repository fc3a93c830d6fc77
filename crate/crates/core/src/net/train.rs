//! Rollout training of the orientation predictor.
//!
//! For every training window the network is applied `r` consecutive frames,
//! each prediction fed back as the next previous-orientation input, and the
//! MSE loss is taken between the final raw 6D output and the ground truth at
//! that frame. Gradients flow through the whole recurrence. All training
//! arithmetic is 64-bit; the stored model is 32-bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rot6_rotate, rot_to_6d, NetError, NetModel, Rot6, TrainMeta, HIDDEN, OUTPUT_DIM, PARAM_COUNT};
use crate::math::yaw_quat;
use crate::trackers::{FrameEncoder, TrackerTrace, NET_INPUT_DIM};

const FEAT_DIM: usize = 36;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * NET_INPUT_DIM;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + OUTPUT_DIM * HIDDEN;
const _: () = assert!(B3 + OUTPUT_DIM == PARAM_COUNT);

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Rollout length `r` in frames.
    pub rollout: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Decoupled weight decay (AdamW) when true, plain L2 when false.
    pub decoupled_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rollout: 50,
            batch_size: 64,
            learning_rate: 3e-4,
            weight_decay: 0.035,
            epochs: 12,
            seed: 0,
            decoupled_decay: true,
        }
    }
}

/// One frame of training data: device features already expressed in the
/// frame's HMD ground frame, plus that frame's ground yaw and the world-frame
/// ground-truth body yaw.
#[derive(Debug, Clone, Copy)]
pub struct OrientationSample {
    pub features: [f64; FEAT_DIM],
    pub ground_yaw: f64,
    pub gt_yaw: f64,
}

impl OrientationSample {
    /// Ground-truth body orientation in this frame's local frame, 6D.
    fn gt_local(&self) -> Rot6 {
        rot_to_6d(yaw_quat(self.gt_yaw - self.ground_yaw))
    }
}

/// Aligned tracker traces and ground-truth body orientations.
#[derive(Debug, Clone, Default)]
pub struct OrientationDataset {
    pub traces: Vec<Vec<OrientationSample>>,
}

impl OrientationDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_trace(&mut self, trace: &TrackerTrace, gt_yaws: &[f64]) -> Result<(), NetError> {
        if trace.len() != gt_yaws.len() {
            return Err(NetError::BadModel(format!(
                "trace has {} frames but ground truth has {}",
                trace.len(),
                gt_yaws.len()
            )));
        }
        let mut enc = FrameEncoder::new();
        let mut samples = Vec::with_capacity(trace.len());
        let dummy_prev = [0.0; 6];
        for (frame, &gt_yaw) in trace.frames.iter().zip(gt_yaws) {
            let ground_yaw = enc.ground_yaw(frame);
            let x = crate::trackers::to_local_frame(frame, &dummy_prev, ground_yaw);
            let mut features = [0.0; FEAT_DIM];
            features.copy_from_slice(&x[..FEAT_DIM]);
            samples.push(OrientationSample { features, ground_yaw, gt_yaw });
        }
        self.traces.push(samples);
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.traces.iter().map(|t| t.len()).sum()
    }
}

/// `(trace index, window start frame)`. A window at `i` seeds the recurrence
/// from the ground truth at `i - 1` and rolls frames `i .. i + r`.
pub type Window = (usize, usize);

/// Training-time network with 64-bit parameters, exposing the rollout loss
/// and its analytic gradient.
#[derive(Debug, Clone)]
pub struct RolloutNet {
    pub params: Vec<f64>,
    pub mean: [f64; NET_INPUT_DIM],
    pub std: [f64; NET_INPUT_DIM],
}

struct StepCache {
    xn: [f64; NET_INPUT_DIM],
    a1: [f64; HIDDEN],
    a2: [f64; HIDDEN],
    out: [f64; OUTPUT_DIM],
}

impl RolloutNet {
    /// He-uniform initialization, zero biases, identity normalization.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; PARAM_COUNT];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, params: &mut Vec<f64>| {
            let limit = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = (rng.gen::<f64>() * 2.0 - 1.0) * limit;
            }
        };
        fill(W1..B1, NET_INPUT_DIM, &mut params);
        fill(W2..B2, HIDDEN, &mut params);
        fill(W3..B3, HIDDEN, &mut params);
        // Small output layer keeps early rollout feedback tame.
        for p in &mut params[W3..B3] {
            *p *= 0.1;
        }
        RolloutNet { params, mean: [0.0; NET_INPUT_DIM], std: [1.0; NET_INPUT_DIM] }
    }

    /// Fit per-dimension input statistics on the dataset. The previous-
    /// orientation block uses the ground-truth orientation distribution.
    /// Near-constant dimensions keep a unit scale instead of exploding.
    pub fn fit_normalization(&mut self, data: &OrientationDataset) {
        let n = data.total_frames() as f64;
        let mut mean = [0.0; NET_INPUT_DIM];
        let mut sq = [0.0; NET_INPUT_DIM];
        for trace in &data.traces {
            for s in trace {
                let gt = s.gt_local();
                for d in 0..NET_INPUT_DIM {
                    let v = if d < FEAT_DIM { s.features[d] } else { gt[d - FEAT_DIM] };
                    mean[d] += v;
                    sq[d] += v * v;
                }
            }
        }
        for d in 0..NET_INPUT_DIM {
            mean[d] /= n;
            let var = (sq[d] / n - mean[d] * mean[d]).max(0.0);
            let std = var.sqrt();
            self.mean[d] = mean[d];
            self.std[d] = if std < 1e-6 { 1.0 } else { std };
        }
    }

    pub fn to_model(&self, meta: TrainMeta) -> NetModel {
        let f32s = |r: std::ops::Range<usize>| self.params[r].iter().map(|p| *p as f32).collect();
        NetModel {
            w1: f32s(W1..B1),
            b1: f32s(B1..W2),
            w2: f32s(W2..B2),
            b2: f32s(B2..W3),
            w3: f32s(W3..B3),
            b3: f32s(B3..PARAM_COUNT),
            input_mean: self.mean.iter().map(|v| *v as f32).collect(),
            input_std: self.std.iter().map(|v| *v as f32).collect(),
            meta,
        }
    }

    fn forward_cached(&self, features: &[f64; FEAT_DIM], xd: &Rot6) -> StepCache {
        let p = &self.params;
        let mut xn = [0.0; NET_INPUT_DIM];
        for d in 0..FEAT_DIM {
            xn[d] = (features[d] - self.mean[d]) / self.std[d];
        }
        for d in 0..6 {
            xn[FEAT_DIM + d] = (xd[d] - self.mean[FEAT_DIM + d]) / self.std[FEAT_DIM + d];
        }
        let mut a1 = [0.0; HIDDEN];
        for r in 0..HIDDEN {
            let row = W1 + r * NET_INPUT_DIM;
            let mut acc = p[B1 + r];
            for c in 0..NET_INPUT_DIM {
                acc += p[row + c] * xn[c];
            }
            a1[r] = acc.max(0.0);
        }
        let mut a2 = [0.0; HIDDEN];
        for r in 0..HIDDEN {
            let row = W2 + r * HIDDEN;
            let mut acc = p[B2 + r];
            for c in 0..HIDDEN {
                acc += p[row + c] * a1[c];
            }
            a2[r] = acc.max(0.0);
        }
        let mut out = [0.0; OUTPUT_DIM];
        for r in 0..OUTPUT_DIM {
            let row = W3 + r * HIDDEN;
            let mut acc = p[B3 + r];
            for c in 0..HIDDEN {
                acc += p[row + c] * a2[c];
            }
            out[r] = acc;
        }
        StepCache { xn, a1, a2, out }
    }

    fn rollout_window(&self, samples: &[OrientationSample], start: usize, r: usize, cache: &mut Vec<StepCache>) -> f64 {
        cache.clear();
        // Seed from the ground truth one frame back, re-expressed in the
        // first rollout frame's local frame.
        let mut xd = rot_to_6d(yaw_quat(samples[start - 1].gt_yaw - samples[start].ground_yaw));
        let mut out = [0.0; OUTPUT_DIM];
        for j in 0..r {
            let f = start + j;
            if j > 0 {
                let delta = samples[f - 1].ground_yaw - samples[f].ground_yaw;
                xd = rot6_rotate(yaw_quat(delta), &out);
            }
            let step = self.forward_cached(&samples[f].features, &xd);
            out = step.out;
            cache.push(step);
        }
        let target = samples[start + r - 1].gt_local();
        let mut loss = 0.0;
        for d in 0..OUTPUT_DIM {
            let e = out[d] - target[d];
            loss += e * e;
        }
        loss / OUTPUT_DIM as f64
    }

    /// Mean rollout loss over a set of windows.
    pub fn rollout_loss(&self, data: &OrientationDataset, windows: &[Window], r: usize) -> f64 {
        let mut cache = Vec::new();
        let mut total = 0.0;
        for &(t, i) in windows {
            total += self.rollout_window(&data.traces[t], i, r, &mut cache);
        }
        total / windows.len() as f64
    }

    /// Mean rollout loss and its gradient (accumulated into `grad`, which is
    /// zeroed first). Backpropagates through the full recurrence.
    pub fn rollout_loss_grad(
        &self,
        data: &OrientationDataset,
        windows: &[Window],
        r: usize,
        grad: &mut [f64],
    ) -> f64 {
        assert_eq!(grad.len(), PARAM_COUNT);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let p = &self.params;
        let scale = 1.0 / windows.len() as f64;
        let mut cache: Vec<StepCache> = Vec::new();
        let mut total = 0.0;

        for &(t, i) in windows {
            let samples = &data.traces[t];
            total += self.rollout_window(samples, i, r, &mut cache);

            let target = samples[i + r - 1].gt_local();
            let mut g_out = [0.0; OUTPUT_DIM];
            for d in 0..OUTPUT_DIM {
                g_out[d] = 2.0 / OUTPUT_DIM as f64 * (cache[r - 1].out[d] - target[d]) * scale;
            }

            for j in (0..r).rev() {
                let step = &cache[j];
                // Output layer.
                let mut g_a2 = [0.0; HIDDEN];
                for row in 0..OUTPUT_DIM {
                    grad[B3 + row] += g_out[row];
                    let w_row = W3 + row * HIDDEN;
                    for c in 0..HIDDEN {
                        grad[w_row + c] += g_out[row] * step.a2[c];
                        g_a2[c] += p[w_row + c] * g_out[row];
                    }
                }
                // Second hidden layer.
                let mut g_a1 = [0.0; HIDDEN];
                for row in 0..HIDDEN {
                    if step.a2[row] <= 0.0 {
                        continue;
                    }
                    let g = g_a2[row];
                    grad[B2 + row] += g;
                    let w_row = W2 + row * HIDDEN;
                    for c in 0..HIDDEN {
                        grad[w_row + c] += g * step.a1[c];
                        g_a1[c] += p[w_row + c] * g;
                    }
                }
                // First hidden layer.
                let mut g_xn = [0.0; NET_INPUT_DIM];
                for row in 0..HIDDEN {
                    if step.a1[row] <= 0.0 {
                        continue;
                    }
                    let g = g_a1[row];
                    grad[B1 + row] += g;
                    let w_row = W1 + row * NET_INPUT_DIM;
                    for c in 0..NET_INPUT_DIM {
                        grad[w_row + c] += g * step.xn[c];
                        g_xn[c] += p[w_row + c] * g;
                    }
                }
                if j == 0 {
                    break; // seed comes from ground truth
                }
                // Through normalization into the raw fed-back orientation,
                // then rotate the gradient back into the previous local frame.
                let mut g_xd = [0.0; 6];
                for d in 0..6 {
                    g_xd[d] = g_xn[FEAT_DIM + d] / self.std[FEAT_DIM + d];
                }
                let f = i + j;
                let delta = samples[f - 1].ground_yaw - samples[f].ground_yaw;
                g_out = rot6_rotate(yaw_quat(-delta), &g_xd);
            }
        }
        total / windows.len() as f64
    }
}

/// Adam optimizer with optional decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Adam { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64, decoupled: bool) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = if decoupled { grad[i] } else { grad[i] + weight_decay * params[i] };
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let mut update = m_hat / (v_hat.sqrt() + self.eps);
            if decoupled {
                update += weight_decay * params[i];
            }
            params[i] -= lr * update;
        }
    }
}

/// Windows of every trace with a contiguous 90/10 train/validation split.
fn split_windows(data: &OrientationDataset, r: usize) -> Result<(Vec<Window>, Vec<Window>), NetError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (t, samples) in data.traces.iter().enumerate() {
        if samples.len() <= r + 1 {
            return Err(NetError::DatasetTooShort { trace: t, frames: samples.len(), rollout: r });
        }
        let windows: Vec<Window> = (1..samples.len() - r).map(|i| (t, i)).collect();
        let cut = (windows.len() * 9) / 10;
        train.extend_from_slice(&windows[..cut.max(1)]);
        val.extend_from_slice(&windows[cut.max(1)..]);
    }
    if val.is_empty() {
        // Tiny datasets: validate on the training windows.
        val = train.clone();
    }
    Ok((train, val))
}

/// Train a model per the rollout scheme. Deterministic for a fixed seed.
pub fn train(data: &OrientationDataset, cfg: &TrainConfig) -> Result<NetModel, NetError> {
    assert!(cfg.rollout >= 1, "rollout length must be >= 1");
    let (mut train_windows, val_windows) = split_windows(data, cfg.rollout)?;

    let mut net = RolloutNet::init(cfg.seed);
    net.fit_normalization(data);
    let mut adam = Adam::new(PARAM_COUNT);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut grad = vec![0.0; PARAM_COUNT];

    let mut train_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        train_windows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in train_windows.chunks(cfg.batch_size.max(1)) {
            let loss = net.rollout_loss_grad(data, batch, cfg.rollout, &mut grad);
            if !loss.is_finite() {
                return Err(NetError::Diverged { epoch, loss });
            }
            adam.step(&mut net.params, &grad, cfg.learning_rate, cfg.weight_decay, cfg.decoupled_decay);
            epoch_loss += loss;
            batches += 1;
        }
        train_loss = epoch_loss / batches.max(1) as f64;
    }
    let val_loss = net.rollout_loss(data, &val_windows, cfg.rollout);
    if !val_loss.is_finite() {
        return Err(NetError::Diverged { epoch: cfg.epochs, loss: val_loss });
    }

    Ok(net.to_model(TrainMeta {
        rollout: cfg.rollout,
        seed: cfg.seed,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size,
        decoupled_decay: cfg.decoupled_decay,
        final_train_loss: train_loss,
        final_validation_loss: val_loss,
    }))
}
