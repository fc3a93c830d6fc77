//! Matching feature database: per-pose 27-dimensional vectors with
//! per-dimension normalization statistics.
//!
//! Layout of a feature vector:
//!
//! | dims   | group | content                                             |
//! |--------|-------|-----------------------------------------------------|
//! | 0..9   | zv    | left foot, right foot, hip velocities (character space) |
//! | 9..15  | zl    | left foot, right foot positions (character space)   |
//! | 15..21 | zp    | future ground-plane root positions at the horizons   |
//! | 21..27 | zd    | future ground-plane root forward directions (unit)   |

use crate::math::{ground2, to_local2, wrap_angle, yaw_dir2};
use crate::posedb::{DbError, PoseDatabase};

pub const FEATURE_DIM: usize = 27;
pub const POSE_FEATURE_DIM: usize = 15;

/// Smallest allowed per-dimension standard deviation; constant dimensions are
/// floored so normalization never divides by zero.
pub const STD_FLOOR: f64 = 1e-8;

pub type FeatureVector = [f64; FEATURE_DIM];

#[derive(Debug, Clone)]
pub struct FeatureDatabase {
    /// Raw features, aligned 1:1 with pose-database indices. Trajectory dims
    /// are zero where `valid` is false.
    pub raw: Vec<FeatureVector>,
    pub mean: FeatureVector,
    pub std: FeatureVector,
    pub normalized: Vec<FeatureVector>,
    /// False where the 1-second lookahead crosses a clip boundary; such
    /// indices are excluded from search and statistics.
    pub valid: Vec<bool>,
    /// Lookahead horizons in frames (nominally 1/3 s, 2/3 s, 1 s).
    pub horizons: [usize; 3],
}

/// Lookahead horizons for a frame rate: `round(fps * {1/3, 2/3, 1})`.
pub fn trajectory_horizons(fps: f64) -> [usize; 3] {
    [
        (fps / 3.0).round() as usize,
        (2.0 * fps / 3.0).round() as usize,
        fps.round() as usize,
    ]
}

/// True when all three lookaheads from `index` stay inside its clip.
pub fn lookahead_in_clip(db: &PoseDatabase, index: usize, horizons: &[usize; 3]) -> bool {
    index + horizons[2] < db.clip_end(index)
}

/// Pose-feature half of the vector (zv, zl); defined for every index.
pub fn pose_features(db: &PoseDatabase, index: usize) -> [f64; POSE_FEATURE_DIM] {
    let pose = &db.poses[index];
    let j = &db.joints;
    let transforms = db.character_transforms(pose);
    let mut out = [0.0; POSE_FEATURE_DIM];
    let mut k = 0;
    for joint in [j.left_foot, j.right_foot, j.hips] {
        let v = pose.yv[joint];
        out[k] = v.x;
        out[k + 1] = v.y;
        out[k + 2] = v.z;
        k += 3;
    }
    for joint in [j.left_foot, j.right_foot] {
        let p = transforms[joint].0;
        out[k] = p.x;
        out[k + 1] = p.y;
        out[k + 2] = p.z;
        k += 3;
    }
    out
}

/// Extract the full feature vector at `index`.
///
/// Fails when the 1-second lookahead leaves the clip; use
/// [`lookahead_in_clip`] to test first.
pub fn extract_features(db: &PoseDatabase, index: usize) -> Result<FeatureVector, DbError> {
    let horizons = trajectory_horizons(db.fps);
    if !lookahead_in_clip(db, index, &horizons) {
        return Err(DbError::MissingJoint(format!(
            "index {index}: trajectory lookahead crosses the clip boundary"
        )));
    }
    Ok(extract_features_unchecked(db, index, &horizons))
}

fn extract_features_unchecked(
    db: &PoseDatabase,
    index: usize,
    horizons: &[usize; 3],
) -> FeatureVector {
    let mut z = [0.0; FEATURE_DIM];
    z[..POSE_FEATURE_DIM].copy_from_slice(&pose_features(db, index));

    let here = &db.poses[index];
    for (h, &frames_ahead) in horizons.iter().enumerate() {
        let future = &db.poses[index + frames_ahead];
        let delta = to_local2(ground2(future.root_pos - here.root_pos), here.root_yaw);
        z[POSE_FEATURE_DIM + 2 * h] = delta.x;
        z[POSE_FEATURE_DIM + 2 * h + 1] = delta.y;
        let dir = yaw_dir2(wrap_angle(future.root_yaw - here.root_yaw));
        z[POSE_FEATURE_DIM + 6 + 2 * h] = dir.x;
        z[POSE_FEATURE_DIM + 6 + 2 * h + 1] = dir.y;
    }
    z
}

impl FeatureDatabase {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn normalize(&self, z: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            out[d] = (z[d] - self.mean[d]) / self.std[d];
        }
        out
    }

    pub fn denormalize(&self, z: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            out[d] = z[d] * self.std[d] + self.mean[d];
        }
        out
    }
}

/// Build the feature database over a pose database.
///
/// Mean and standard deviation are computed over valid indices only.
pub fn build_feature_db(db: &PoseDatabase) -> Result<FeatureDatabase, DbError> {
    if db.is_empty() {
        return Err(DbError::EmptyClipList);
    }
    let horizons = trajectory_horizons(db.fps);
    let n = db.len();

    let valid: Vec<bool> = (0..n).map(|i| lookahead_in_clip(db, i, &horizons)).collect();
    let valid_count = valid.iter().filter(|v| **v).count();
    if valid_count < 2 {
        return Err(DbError::TooFewValidIndices(valid_count));
    }

    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        if valid[i] {
            raw.push(extract_features_unchecked(db, i, &horizons));
        } else {
            // Pose features stay available for query construction; trajectory
            // dims are zeroed and the index is masked out of every search.
            let mut z = [0.0; FEATURE_DIM];
            z[..POSE_FEATURE_DIM].copy_from_slice(&pose_features(db, i));
            raw.push(z);
        }
    }

    let mut mean = [0.0; FEATURE_DIM];
    for (z, ok) in raw.iter().zip(&valid) {
        if *ok {
            for d in 0..FEATURE_DIM {
                mean[d] += z[d];
            }
        }
    }
    for m in &mut mean {
        *m /= valid_count as f64;
    }
    let mut std = [0.0; FEATURE_DIM];
    for (z, ok) in raw.iter().zip(&valid) {
        if *ok {
            for d in 0..FEATURE_DIM {
                let e = z[d] - mean[d];
                std[d] += e * e;
            }
        }
    }
    for s in &mut std {
        *s = (*s / valid_count as f64).sqrt().max(STD_FLOOR);
    }

    let fdb = FeatureDatabase {
        normalized: Vec::new(),
        raw,
        mean,
        std,
        valid,
        horizons,
    };
    let normalized = fdb.raw.iter().map(|z| fdb.normalize(z)).collect();
    Ok(FeatureDatabase { normalized, ..fdb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mocap::{synth_gait, GaitParams, JointMap, YawProfile};
    use crate::posedb::build_pose_db;

    fn walk_db(params: &GaitParams) -> PoseDatabase {
        let clip = synth_gait(params).unwrap();
        build_pose_db(&[clip], &JointMap::default(), 0.15).unwrap()
    }

    #[test]
    fn dimension_bookkeeping() {
        assert_eq!(FEATURE_DIM, 9 + 6 + 6 + 6);
        assert_eq!(trajectory_horizons(60.0), [20, 40, 60]);
        assert_eq!(trajectory_horizons(30.0), [10, 20, 30]);
    }

    #[test]
    fn static_pose_has_identity_trajectory() {
        let db = walk_db(&GaitParams { speed: 0.0, duration: 2.0, ..GaitParams::default() });
        let z = extract_features(&db, 0).unwrap();
        for h in 0..3 {
            assert!(z[15 + 2 * h].abs() < 1e-9);
            assert!(z[15 + 2 * h + 1].abs() < 1e-9);
            assert!((z[21 + 2 * h] - 0.0).abs() < 1e-9, "zd x");
            assert!((z[21 + 2 * h + 1] - 1.0).abs() < 1e-9, "zd y (local forward)");
        }
    }

    #[test]
    fn straight_walk_trajectory_matches_closed_form() {
        let params = GaitParams { speed: 1.0, duration: 4.0, ..GaitParams::default() };
        let db = walk_db(&params);
        let horizons = trajectory_horizons(db.fps);
        // Probe a mid-clip index; brute-force frame lookup is the oracle.
        let i = 60usize;
        let z = extract_features(&db, i).unwrap();
        for (h, &frames) in horizons.iter().enumerate() {
            let expected_forward = params.speed * frames as f64 / params.fps;
            assert!((z[15 + 2 * h] - 0.0).abs() < 1e-6, "lateral drift at horizon {h}");
            assert!(
                (z[15 + 2 * h + 1] - expected_forward).abs() < 1e-6,
                "horizon {h}: {} vs {}",
                z[15 + 2 * h + 1],
                expected_forward
            );
            assert!((z[21 + 2 * h] - 0.0).abs() < 1e-9);
            assert!((z[21 + 2 * h + 1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn in_place_turn_directions_match_analytic_yaw() {
        let rate = std::f64::consts::FRAC_PI_2; // 90 deg/s
        let params = GaitParams {
            speed: 0.0,
            duration: 4.0,
            heading: YawProfile::sampled(move |t| rate * t, 4.0, 60.0),
            ..GaitParams::default()
        };
        let db = walk_db(&params);
        let horizons = trajectory_horizons(db.fps);
        let i = 30usize;
        let z = extract_features(&db, i).unwrap();
        for (h, &frames) in horizons.iter().enumerate() {
            let expected = rate * frames as f64 / params.fps;
            let got = z[21 + 2 * h].atan2(z[21 + 2 * h + 1]);
            assert!(
                (got - expected).abs() < 1e-6,
                "horizon {h}: yaw {got} vs analytic {expected}"
            );
        }
    }

    #[test]
    fn unit_norm_direction_features() {
        let db = walk_db(&GaitParams {
            speed: 0.8,
            duration: 3.0,
            heading: YawProfile::sampled(|t| (0.9 * t).sin(), 3.0, 60.0),
            ..GaitParams::default()
        });
        let fdb = build_feature_db(&db).unwrap();
        for (z, ok) in fdb.raw.iter().zip(&fdb.valid) {
            if !*ok {
                continue;
            }
            for h in 0..3 {
                let n = (z[21 + 2 * h].powi(2) + z[21 + 2 * h + 1].powi(2)).sqrt();
                assert!((n - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn normalized_statistics_are_standard() {
        let db = walk_db(&GaitParams {
            speed: 1.2,
            duration: 5.0,
            heading: YawProfile::sampled(|t| 0.4 * (0.7 * t).sin(), 5.0, 60.0),
            seed: 8,
            ..GaitParams::default()
        });
        let fdb = build_feature_db(&db).unwrap();
        let count = fdb.valid_count() as f64;
        for d in 0..FEATURE_DIM {
            let mut mean = 0.0;
            let mut var = 0.0;
            for (z, ok) in fdb.normalized.iter().zip(&fdb.valid) {
                if *ok {
                    mean += z[d];
                }
            }
            mean /= count;
            for (z, ok) in fdb.normalized.iter().zip(&fdb.valid) {
                if *ok {
                    var += (z[d] - mean) * (z[d] - mean);
                }
            }
            var /= count;
            assert!(mean.abs() < 1e-6, "dim {d} mean {mean}");
            if fdb.std[d] > STD_FLOOR {
                assert!((var - 1.0).abs() < 1e-5, "dim {d} var {var}");
            }
        }
    }

    #[test]
    fn constant_dimension_is_floored_to_zero() {
        // A perfectly straight constant walk: lateral trajectory dims constant.
        let db = walk_db(&GaitParams { speed: 1.0, duration: 3.0, ..GaitParams::default() });
        let fdb = build_feature_db(&db).unwrap();
        let d = 21; // zd x of first horizon: identically 0 on a straight walk
        assert!(fdb.std[d] <= STD_FLOOR * 1.0001);
        for (z, ok) in fdb.normalized.iter().zip(&fdb.valid) {
            if *ok {
                assert!(z[d].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn exactly_the_last_second_is_masked() {
        let mut clip = synth_gait(&GaitParams { speed: 1.0, duration: 3.0, ..GaitParams::default() }).unwrap();
        clip.frames.truncate(100);
        let db = build_pose_db(&[clip], &JointMap::default(), 0.15).unwrap();
        let fdb = build_feature_db(&db).unwrap();
        assert_eq!(fdb.len(), 100);
        assert_eq!(fdb.valid_count(), 40);
        for i in 0..40 {
            assert!(fdb.valid[i]);
        }
        for i in 40..100 {
            assert!(!fdb.valid[i]);
        }
        assert!(extract_features(&db, 40).is_err());
        assert!(extract_features(&db, 39).is_ok());
    }

    #[test]
    fn features_are_frame_local_plus_lookahead() {
        // Permuting other clips never changes a clip's own features.
        let a = synth_gait(&GaitParams { speed: 1.1, duration: 2.0, seed: 1, ..GaitParams::default() }).unwrap();
        let b = synth_gait(&GaitParams { speed: 0.6, duration: 2.0, seed: 2, ..GaitParams::default() }).unwrap();
        let c = synth_gait(&GaitParams { speed: 0.0, duration: 2.0, seed: 3, ..GaitParams::default() }).unwrap();
        let map = JointMap::default();
        let db1 = build_pose_db(&[a.clone(), b.clone(), c.clone()], &map, 0.15).unwrap();
        let db2 = build_pose_db(&[c, a.clone(), b.clone()], &map, 0.15).unwrap();
        let f1 = build_feature_db(&db1).unwrap();
        let f2 = build_feature_db(&db2).unwrap();
        // Clip `a` is clip 0 in db1 and clip 1 in db2.
        let (s1, e1) = db1.clip_ranges[0];
        let (s2, _) = db2.clip_ranges[1];
        for i in 0..(e1 - s1) {
            for d in 0..FEATURE_DIM {
                assert_eq!(f1.raw[s1 + i][d], f2.raw[s2 + i][d]);
            }
        }
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let db = walk_db(&GaitParams { speed: 1.0, duration: 3.0, seed: 6, ..GaitParams::default() });
        let fdb = build_feature_db(&db).unwrap();
        for i in (0..fdb.len()).step_by(17) {
            let z = fdb.raw[i];
            let round = fdb.denormalize(&fdb.normalize(&z));
            for d in 0..FEATURE_DIM {
                assert!((round[d] - z[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_few_valid_indices_rejected() {
        let mut clip = synth_gait(&GaitParams { speed: 1.0, duration: 3.0, ..GaitParams::default() }).unwrap();
        clip.frames.truncate(61); // exactly one valid index
        let db = build_pose_db(&[clip], &JointMap::default(), 0.15).unwrap();
        assert!(matches!(build_feature_db(&db), Err(DbError::TooFewValidIndices(1))));
    }
}
