//! Motion-matching runtime: smoothing, query construction, periodic search,
//! inertialization blending and height-based database switching.

mod search;
mod smoothing;

pub use search::{search_accel, search_accel_counted, search_brute, AccelIndex, QueryVector};
pub use smoothing::{slerp_yaw, SmootherKind, SmoothingState};

use glam::{DQuat, DVec2, DVec3};

use crate::features::{FeatureDatabase, FEATURE_DIM, POSE_FEATURE_DIM};
use crate::math::{ground2, quat_exp, quat_log, quintic_decay, to_local2, to_world2, unground2, wrap_angle, yaw_dir2, yaw_quat};
use crate::posedb::PoseDatabase;
use crate::trackers::TrackerFrame;

/// Per-group search weights, expanded to the 27 feature dimensions.
#[derive(Debug, Clone, Copy)]
pub struct FeatureWeights {
    pub pose_velocity: f64,
    pub pose_position: f64,
    pub trajectory_position: f64,
    pub trajectory_direction: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            pose_velocity: 1.0,
            pose_position: 1.0,
            trajectory_position: 1.0,
            trajectory_direction: 1.0,
        }
    }
}

impl FeatureWeights {
    pub fn to_dims(&self) -> [f64; FEATURE_DIM] {
        let mut w = [0.0; FEATURE_DIM];
        for d in 0..9 {
            w[d] = self.pose_velocity;
        }
        for d in 9..15 {
            w[d] = self.pose_position;
        }
        for d in 15..21 {
            w[d] = self.trajectory_position;
        }
        for d in 21..27 {
            w[d] = self.trajectory_direction;
        }
        w
    }
}

#[derive(Debug, Clone)]
pub struct MatchingConfig {
    /// Frames between periodic searches.
    pub search_interval: usize,
    /// Inertialization blend duration, seconds.
    pub blend_time: f64,
    /// Responsiveness factor for velocity and orientation smoothing, 1/s.
    pub beta: f64,
    pub smoother: SmootherKind,
    pub weights: FeatureWeights,
    /// Descending height-ratio band edges; `databases = edges + 1`.
    pub height_bands: Vec<f64>,
    /// Hysteresis applied on band edges to avoid flapping.
    pub hysteresis: f64,
    pub bvh_leaf: usize,
    pub bvh_box: usize,
    /// Head-center estimate: meters behind the HMD along its projected forward.
    pub head_center_offset: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            search_interval: 10,
            blend_time: 0.25,
            beta: 5.0,
            smoother: SmootherKind::Exponential,
            weights: FeatureWeights::default(),
            height_bands: vec![1.02, 0.85, 0.70, 0.55],
            hysteresis: 0.02,
            bvh_leaf: 16,
            bvh_box: 64,
            head_center_offset: 0.09,
        }
    }
}

/// One animation database ready for matching.
#[derive(Debug, Clone)]
pub struct AnimDatabase {
    pub poses: PoseDatabase,
    pub features: FeatureDatabase,
    pub index: AccelIndex,
}

impl AnimDatabase {
    pub fn new(poses: PoseDatabase, features: FeatureDatabase, cfg: &MatchingConfig) -> Self {
        let index = AccelIndex::build(&features, cfg.bvh_leaf, cfg.bvh_box);
        AnimDatabase { poses, features, index }
    }
}

/// The databases selectable at runtime, ordered from the highest height-ratio
/// band (tip-toes) to the lowest (crouch).
#[derive(Debug)]
pub struct DatabaseSet {
    pub dbs: Vec<AnimDatabase>,
    /// Descending edges between bands; empty for a single database.
    pub bands: Vec<f64>,
}

impl DatabaseSet {
    pub fn new(dbs: Vec<AnimDatabase>, bands: Vec<f64>) -> Result<Self, String> {
        if dbs.is_empty() {
            return Err("database set needs at least one database".into());
        }
        if bands.len() + 1 != dbs.len() {
            return Err(format!(
                "{} databases need {} band edges, got {}",
                dbs.len(),
                dbs.len() - 1,
                bands.len()
            ));
        }
        if bands.windows(2).any(|w| w[0] <= w[1]) {
            return Err("band edges must be strictly descending".into());
        }
        let joints = dbs[0].poses.skeleton.len();
        if dbs.iter().any(|d| d.poses.skeleton.len() != joints) {
            return Err("all databases must share one skeleton".into());
        }
        Ok(DatabaseSet { dbs, bands })
    }

    pub fn single(db: AnimDatabase) -> Self {
        DatabaseSet { dbs: vec![db], bands: Vec::new() }
    }

    pub fn skeleton(&self) -> &crate::mocap::Skeleton {
        &self.dbs[0].poses.skeleton
    }

    /// Band index for a height ratio, ignoring hysteresis.
    pub fn band_for(&self, ratio: f64) -> usize {
        for (i, edge) in self.bands.iter().enumerate() {
            if ratio >= *edge {
                return i;
            }
        }
        self.bands.len()
    }

    /// Band transition with hysteresis around the edges.
    fn band_with_hysteresis(&self, current: usize, ratio: f64, h: f64) -> usize {
        let mut band = current;
        // Move toward higher bands (smaller index) while above the upper edge.
        while band > 0 && ratio >= self.bands[band - 1] + h {
            band -= 1;
        }
        while band < self.bands.len() && ratio < self.bands[band] - h {
            band += 1;
        }
        band
    }
}

/// The per-frame result of the matching runtime, in virtual-root space plus
/// the world root transform.
#[derive(Debug, Clone)]
pub struct OutputPose {
    pub root_pos: DVec2,
    pub root_yaw: f64,
    /// Local rotations, same layout as [`crate::posedb::Pose::yr`].
    pub local_rots: Vec<DQuat>,
    /// Hip position in virtual-root space.
    pub hip_pos: DVec3,
    pub contacts: [bool; 2],
    pub db: usize,
    pub cursor: usize,
    pub searched: bool,
    pub transitioned: bool,
    pub search_distance: Option<f64>,
}

/// World transforms of every joint of an output pose.
pub fn output_world_transforms(db: &PoseDatabase, out: &OutputPose) -> Vec<(DVec3, DQuat)> {
    let root_rot = yaw_quat(out.root_yaw);
    let root_pos = unground2(out.root_pos);
    let skel = &db.skeleton;
    let mut acc: Vec<(DVec3, DQuat)> = Vec::with_capacity(skel.len());
    for (i, joint) in skel.joints.iter().enumerate() {
        match joint.parent {
            None => {
                let p = root_pos + root_rot * out.hip_pos;
                let q = (root_rot * out.local_rots[i]).normalize();
                acc.push((p, q));
            }
            Some(parent) => {
                let (pp, pr) = acc[parent];
                acc.push((pp + pr * joint.offset, (pr * out.local_rots[i]).normalize()));
            }
        }
    }
    acc
}

#[derive(Debug, Clone)]
struct BlendState {
    rot_offset: Vec<DVec3>,
    rot_rate: Vec<DVec3>,
    hip_offset: DVec3,
    hip_rate: DVec3,
    elapsed: f64,
    duration: f64,
}

/// Runtime state of one avatar.
#[derive(Debug)]
pub struct Runtime {
    cfg: MatchingConfig,
    weights: [f64; FEATURE_DIM],
    calibration_height: f64,
    active_db: usize,
    cursor: usize,
    frames_since_search: usize,
    smoothing: SmoothingState,
    blend: Option<BlendState>,
    root_pos: DVec2,
    root_yaw: f64,
    last_hmd_yaw: f64,
    prev_time: Option<f64>,
    started: bool,
    fresh: bool,
}

impl Runtime {
    /// `calibration_height` is the HMD height measured while the user stands
    /// upright; it must be set before stepping.
    pub fn new(cfg: MatchingConfig, calibration_height: f64) -> Self {
        assert!(calibration_height > 0.0, "calibration height must be set");
        let weights = cfg.weights.to_dims();
        let smoothing = SmoothingState::new(cfg.beta);
        Runtime {
            cfg,
            weights,
            calibration_height,
            active_db: 0,
            cursor: 0,
            frames_since_search: 0,
            smoothing,
            blend: None,
            root_pos: DVec2::ZERO,
            root_yaw: 0.0,
            last_hmd_yaw: 0.0,
            prev_time: None,
            started: false,
            fresh: true,
        }
    }

    pub fn config(&self) -> &MatchingConfig {
        &self.cfg
    }

    pub fn root(&self) -> (DVec2, f64) {
        (self.root_pos, self.root_yaw)
    }

    /// Override the avatar root position (root clamping feeds back through this).
    pub fn set_root_position(&mut self, pos: DVec2) {
        self.root_pos = pos;
    }

    pub fn cursor(&self) -> (usize, usize) {
        (self.active_db, self.cursor)
    }

    /// Pin the starting state: database, pose index and world root transform.
    pub fn align_start(&mut self, db: usize, cursor: usize, root_pos: DVec2, root_yaw: f64) {
        self.active_db = db;
        self.cursor = cursor;
        self.root_pos = root_pos;
        self.root_yaw = root_yaw;
        self.started = true;
        self.fresh = true;
        self.frames_since_search = 0;
    }

    fn hmd_ground_yaw(&mut self, frame: &TrackerFrame) -> f64 {
        if let Some(yaw) = crate::math::quat_yaw(frame.hmd.rot, 1e-4) {
            self.last_hmd_yaw = yaw;
        }
        self.last_hmd_yaw
    }

    /// Ground-plane target position: the head center projected onto the floor.
    pub fn target_position(&mut self, frame: &TrackerFrame) -> DVec2 {
        let yaw = self.hmd_ground_yaw(frame);
        let back = unground2(yaw_dir2(yaw)) * self.cfg.head_center_offset;
        ground2(frame.hmd.pos - back)
    }

    /// Build the query vector: current pose features plus the predicted
    /// trajectory, normalized with the active database's statistics.
    pub fn build_query(&self, dbset: &DatabaseSet, target_pos: DVec2, predicted_yaw: f64, pose_dims: &[f64; POSE_FEATURE_DIM], dt: f64) -> QueryVector {
        let fdb = &dbset.dbs[self.active_db].features;
        let mut raw = [0.0; FEATURE_DIM];
        raw[..POSE_FEATURE_DIM].copy_from_slice(pose_dims);

        // Future positions from the smoothed velocity (full displacement over
        // one second, sampled at thirds), local to the avatar root.
        let v = self.smoothing.velocity;
        for k in 0..3 {
            let world = target_pos + v * ((k + 1) as f64 / 3.0);
            let local = to_local2(world - self.root_pos, self.root_yaw);
            raw[POSE_FEATURE_DIM + 2 * k] = local.x;
            raw[POSE_FEATURE_DIM + 2 * k + 1] = local.y;
        }
        // Future orientations: iterate the same smoother with the prediction
        // held fixed, sampling at the horizon frames.
        let step = (self.smoothing.beta * dt).clamp(0.0, 1.0);
        let mut yaw = self.smoothing.yaw;
        let horizons = fdb.horizons;
        let mut h = 0usize;
        for m in 1..=horizons[2] {
            yaw = slerp_yaw(yaw, predicted_yaw, step);
            while h < 3 && m == horizons[h] {
                let local = wrap_angle(yaw - self.root_yaw);
                let dir = yaw_dir2(local);
                raw[POSE_FEATURE_DIM + 6 + 2 * h] = dir.x;
                raw[POSE_FEATURE_DIM + 6 + 2 * h + 1] = dir.y;
                h += 1;
            }
        }
        QueryVector { normalized: fdb.normalize(&raw), weights: self.weights }
    }

    /// Pose values that would be output for `(db, cursor)` under the current
    /// blend offsets: blended local rotations and hip position.
    fn compose_output(&self, dbset: &DatabaseSet, db: usize, cursor: usize) -> (Vec<DQuat>, DVec3) {
        let pose = &dbset.dbs[db].poses.poses[cursor];
        let hips = dbset.dbs[db].poses.joints.hips;
        match &self.blend {
            Some(b) => {
                let s = quintic_decay(b.elapsed / b.duration);
                let rots = pose
                    .yr
                    .iter()
                    .enumerate()
                    .map(|(j, q)| (quat_exp((b.rot_offset[j] + b.rot_rate[j] * b.elapsed) * s) * *q).normalize())
                    .collect();
                let hip = pose.yp[hips] + (b.hip_offset + b.hip_rate * b.elapsed) * s;
                (rots, hip)
            }
            None => (pose.yr.clone(), pose.yp[hips]),
        }
    }

    /// Start an inertialized transition to `(new_db, new_cursor)`: the offset
    /// between the old segment's continuation this frame and the new pose
    /// decays to zero over the blend time.
    fn begin_transition(
        &mut self,
        dbset: &DatabaseSet,
        continuation: (Vec<DQuat>, DVec3),
        old_pose_index: (usize, usize),
        new_db: usize,
        new_cursor: usize,
    ) {
        let old_pose = &dbset.dbs[old_pose_index.0].poses.poses[old_pose_index.1];
        let new_pose = &dbset.dbs[new_db].poses.poses[new_cursor];
        let hips = dbset.dbs[new_db].poses.joints.hips;
        let (cont_rots, cont_hip) = continuation;
        let nj = new_pose.yr.len();
        let mut rot_offset = Vec::with_capacity(nj);
        let mut rot_rate = Vec::with_capacity(nj);
        for j in 0..nj {
            rot_offset.push(quat_log(cont_rots[j] * new_pose.yr[j].inverse()));
            rot_rate.push(old_pose.yw[j] - new_pose.yw[j]);
        }
        self.blend = Some(BlendState {
            rot_offset,
            rot_rate,
            hip_offset: cont_hip - new_pose.yp[hips],
            hip_rate: old_pose.yv[hips] - new_pose.yv[hips],
            elapsed: 0.0,
            duration: self.cfg.blend_time.max(1e-6),
        });
        self.active_db = new_db;
        self.cursor = new_cursor;
    }

    /// Advance one frame: select the database by HMD height, advance the
    /// animation cursor, search when due (or forced by a database switch or a
    /// clip end), and return the blended pose.
    pub fn step(&mut self, dbset: &DatabaseSet, frame: &TrackerFrame, predicted_yaw: f64) -> OutputPose {
        let dt_db = 1.0 / dbset.dbs[0].poses.fps;
        let dt = match self.prev_time {
            Some(prev) => (frame.t - prev).clamp(1e-4, 0.1),
            None => dt_db,
        };
        self.prev_time = Some(frame.t);

        let target_pos = self.target_position(frame);
        if !self.started {
            self.started = true;
            self.root_pos = target_pos;
            self.root_yaw = predicted_yaw;
            let ratio = frame.hmd_height / self.calibration_height;
            self.active_db = dbset.band_for(ratio).min(dbset.dbs.len() - 1);
            self.cursor = dbset.dbs[self.active_db]
                .features
                .valid
                .iter()
                .position(|v| *v)
                .unwrap_or(0);
            self.frames_since_search = self.cfg.search_interval; // search immediately
        }
        if self.fresh {
            self.smoothing.reset(ground2(frame.hmd.vel), predicted_yaw);
        }

        // Database switching by height ratio.
        let ratio = frame.hmd_height / self.calibration_height;
        let band = dbset.band_with_hysteresis(self.active_db, ratio, self.cfg.hysteresis);
        let switched_db = band != self.active_db;

        // Previous location, used for pose features and blending offsets.
        let prev_db = self.active_db;
        let prev_cursor = self.cursor;

        // Natural continuation of the current segment. The very first frame
        // plays the starting pose as-is.
        let mut forced_search = switched_db;
        let mut advanced = false;
        if self.fresh {
            self.fresh = false;
        } else if !switched_db {
            let clip_end = dbset.dbs[self.active_db].poses.clip_end(self.cursor);
            if self.cursor + 1 < clip_end {
                self.cursor += 1;
                advanced = true;
            } else {
                forced_search = true;
            }
        }

        self.smoothing.smooth_velocity(ground2(frame.hmd.vel), dt, self.cfg.smoother);
        self.smoothing.smooth_yaw(predicted_yaw, dt, self.cfg.smoother);

        self.frames_since_search += 1;
        let mut searched = false;
        let mut transitioned = false;
        let mut search_distance = None;
        let search_due = self.frames_since_search >= self.cfg.search_interval;
        let mut root_delta_from = if advanced { Some((prev_db, prev_cursor)) } else { None };

        if search_due || forced_search {
            searched = true;
            self.frames_since_search = 0;
            // Current pose features come from the pose being played right now
            // (still the old database when a height switch is in progress).
            let mut pose_dims = [0.0; POSE_FEATURE_DIM];
            pose_dims.copy_from_slice(&dbset.dbs[prev_db].features.raw[self.cursor][..POSE_FEATURE_DIM]);
            let target_db = band;
            let query = {
                // Query must be normalized in the target database's space.
                let saved = self.active_db;
                self.active_db = target_db;
                let q = self.build_query(dbset, target_pos, predicted_yaw, &pose_dims, dt_db);
                self.active_db = saved;
                q
            };
            let adb = &dbset.dbs[target_db];
            if let Some((best, dist)) = search_accel(&query, &adb.features, &adb.index) {
                search_distance = Some(dist);
                // Keep the natural continuation unless the match is strictly
                // better; near-duplicate frames do not cause transitions.
                let keep_continuation = !switched_db
                    && (best == self.cursor
                        || (adb.features.valid[self.cursor] && {
                            let cont = search::query_distance(&query, &adb.features, self.cursor);
                            dist >= cont - (1e-9 * cont).max(1e-12)
                        }));
                if !keep_continuation {
                    transitioned = true;
                    let continuation = self.compose_output(dbset, prev_db, self.cursor);
                    self.begin_transition(dbset, continuation, (prev_db, self.cursor), target_db, best);
                    // Root motion across the transition: the new segment's own
                    // incoming delta keeps the cursor moving through time.
                    let clip_start = adb.poses.clip_ranges[adb.poses.clip_of(best)].0;
                    root_delta_from = if !advanced && best > clip_start {
                        Some((target_db, best - 1))
                    } else {
                        root_delta_from
                    };
                }
            } else if switched_db {
                // Nothing searchable in the target database; stay put.
                self.active_db = prev_db;
            }
        }

        // Accumulate root motion from the database delta.
        if let Some((db, from)) = root_delta_from {
            let poses = &dbset.dbs[db].poses;
            let a = &poses.poses[from];
            let b = &poses.poses[from + 1];
            let delta_local = to_local2(ground2(b.root_pos - a.root_pos), a.root_yaw);
            self.root_pos += to_world2(delta_local, self.root_yaw);
            self.root_yaw = wrap_angle(self.root_yaw + wrap_angle(b.root_yaw - a.root_yaw));
        }

        // Blended output pose; the blend clock ticks after composing so a
        // fresh transition reproduces the old continuation exactly.
        let (local_rots, hip_pos) = self.compose_output(dbset, self.active_db, self.cursor);
        if let Some(b) = &mut self.blend {
            b.elapsed += dt;
            if b.elapsed >= b.duration {
                self.blend = None;
            }
        }
        let pose = &dbset.dbs[self.active_db].poses.poses[self.cursor];

        OutputPose {
            root_pos: self.root_pos,
            root_yaw: self.root_yaw,
            local_rots,
            hip_pos,
            contacts: pose.yc,
            db: self.active_db,
            cursor: self.cursor,
            searched,
            transitioned,
            search_distance,
        }
    }
}

#[cfg(test)]
mod tests;
