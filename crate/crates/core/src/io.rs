//! Versioned binary containers: pose+feature databases (`MMPD`/`MMFD`) and
//! orientation models (`MMON`). Little-endian throughout; reloading a file
//! and writing it again is byte-identical.

use std::io::Write as _;
use std::path::Path;

use glam::{DQuat, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureDatabase, FEATURE_DIM};
use crate::mocap::{Channel, Joint, ResolvedJoints, Skeleton};
use crate::net::{NetModel, TrainMeta, HIDDEN, OUTPUT_DIM};
use crate::posedb::{Pose, PoseDatabase};
use crate::trackers::NET_INPUT_DIM;

const DB_MAGIC: &[u8; 4] = b"MMPD";
const FEATURE_TAG: &[u8; 4] = b"MMFD";
const MODEL_MAGIC: &[u8; 4] = b"MMON";
const DB_VERSION: u32 = 1;
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("unexpected end of file at byte {0}")]
    UnexpectedEof(usize),
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("invalid contents: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Build parameters written next to a database file for provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DbProvenance {
    pub inputs: Vec<String>,
    pub fps: f64,
    pub contact_velocity_threshold: f64,
    pub clip_frame_counts: Vec<usize>,
    pub pose_count: usize,
    pub valid_feature_count: usize,
    pub trajectory_horizons: [usize; 3],
    pub tool_version: String,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.bytes.len() {
            return Err(IoError::UnexpectedEof(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), IoError> {
        let got = self.take(4)?;
        if got != expected {
            return Err(IoError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(got).into_owned(),
            });
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, IoError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, IoError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec3(&mut self) -> Result<DVec3, IoError> {
        Ok(DVec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn quat(&mut self) -> Result<DQuat, IoError> {
        let w = self.f64()?;
        let x = self.f64()?;
        let y = self.f64()?;
        let z = self.f64()?;
        Ok(DQuat::from_xyzw(x, y, z, w))
    }

    fn string(&mut self) -> Result<String, IoError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| IoError::Invalid(e.to_string()))
    }

    fn done(&self) -> Result<(), IoError> {
        if self.pos != self.bytes.len() {
            return Err(IoError::Invalid(format!(
                "{} trailing bytes after byte {}",
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { bytes: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn i32(&mut self, v: i32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn vec3(&mut self, v: DVec3) {
        self.f64(v.x);
        self.f64(v.y);
        self.f64(v.z);
    }

    fn quat(&mut self, q: DQuat) {
        self.f64(q.w);
        self.f64(q.x);
        self.f64(q.y);
        self.f64(q.z);
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes.extend_from_slice(s.as_bytes());
    }
}

fn channel_code(c: Channel) -> u8 {
    match c {
        Channel::XPosition => 0,
        Channel::YPosition => 1,
        Channel::ZPosition => 2,
        Channel::XRotation => 3,
        Channel::YRotation => 4,
        Channel::ZRotation => 5,
    }
}

fn channel_from_code(c: u8) -> Result<Channel, IoError> {
    Ok(match c {
        0 => Channel::XPosition,
        1 => Channel::YPosition,
        2 => Channel::ZPosition,
        3 => Channel::XRotation,
        4 => Channel::YRotation,
        5 => Channel::ZRotation,
        other => return Err(IoError::Invalid(format!("unknown channel code {other}"))),
    })
}

/// Serialize a pose database together with its feature database.
pub fn write_database(db: &PoseDatabase, fdb: &FeatureDatabase) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes.extend_from_slice(DB_MAGIC);
    w.u32(DB_VERSION);

    // Skeleton.
    w.u32(db.skeleton.len() as u32);
    for j in &db.skeleton.joints {
        w.string(&j.name);
        w.i32(j.parent.map(|p| p as i32).unwrap_or(-1));
        w.vec3(j.offset);
        w.u8(j.end_site as u8);
        w.u8(j.channels.len() as u8);
        for c in &j.channels {
            w.u8(channel_code(*c));
        }
    }
    // Resolved joints, fixed order.
    let r = &db.joints;
    for idx in [
        r.hips, r.head, r.left_wrist, r.right_wrist,
        r.left_upper_leg, r.left_lower_leg, r.left_foot, r.left_toe,
        r.right_upper_leg, r.right_lower_leg, r.right_foot, r.right_toe,
    ] {
        w.u32(idx as u32);
    }
    w.f64(db.fps);
    w.f64(db.contact_velocity_threshold);
    w.u32(db.clip_ranges.len() as u32);
    for (s, e) in &db.clip_ranges {
        w.u32(*s as u32);
        w.u32(*e as u32);
    }

    // Poses.
    w.u32(db.poses.len() as u32);
    for p in &db.poses {
        w.vec3(p.root_pos);
        w.f64(p.root_yaw);
        for v in &p.yp {
            w.vec3(*v);
        }
        for q in &p.yr {
            w.quat(*q);
        }
        for v in &p.yv {
            w.vec3(*v);
        }
        for v in &p.yw {
            w.vec3(*v);
        }
        w.u8(p.yc[0] as u8);
        w.u8(p.yc[1] as u8);
    }

    // Feature section.
    w.bytes.extend_from_slice(FEATURE_TAG);
    w.u32(FEATURE_DIM as u32);
    for h in fdb.horizons {
        w.u32(h as u32);
    }
    w.u32(fdb.len() as u32);
    for z in &fdb.raw {
        for v in z {
            w.f64(*v);
        }
    }
    for v in &fdb.mean {
        w.f64(*v);
    }
    for v in &fdb.std {
        w.f64(*v);
    }
    for v in &fdb.valid {
        w.u8(*v as u8);
    }
    w.bytes
}

/// Parse a database container. Normalized features are recomputed from the
/// stored raw features and statistics.
pub fn read_database(bytes: &[u8]) -> Result<(PoseDatabase, FeatureDatabase), IoError> {
    let mut r = Reader::new(bytes);
    r.magic(DB_MAGIC)?;
    let version = r.u32()?;
    if version != DB_VERSION {
        return Err(IoError::BadVersion(version));
    }

    let joint_count = r.u32()? as usize;
    let mut joints = Vec::with_capacity(joint_count);
    for _ in 0..joint_count {
        let name = r.string()?;
        let parent = r.i32()?;
        let offset = r.vec3()?;
        let end_site = r.u8()? != 0;
        let n_channels = r.u8()? as usize;
        let mut channels = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            channels.push(channel_from_code(r.u8()?)?);
        }
        joints.push(Joint {
            name,
            parent: if parent < 0 { None } else { Some(parent as usize) },
            offset,
            channels,
            end_site,
        });
    }
    let skeleton = Skeleton { joints };
    skeleton.validate().map_err(IoError::Invalid)?;

    let mut idx = [0usize; 12];
    for v in &mut idx {
        *v = r.u32()? as usize;
        if *v >= joint_count {
            return Err(IoError::Invalid(format!("joint index {v} out of range")));
        }
    }
    let joints = ResolvedJoints {
        hips: idx[0],
        head: idx[1],
        left_wrist: idx[2],
        right_wrist: idx[3],
        left_upper_leg: idx[4],
        left_lower_leg: idx[5],
        left_foot: idx[6],
        left_toe: idx[7],
        right_upper_leg: idx[8],
        right_lower_leg: idx[9],
        right_foot: idx[10],
        right_toe: idx[11],
    };
    let fps = r.f64()?;
    let contact_velocity_threshold = r.f64()?;
    let clip_count = r.u32()? as usize;
    let mut clip_ranges = Vec::with_capacity(clip_count);
    for _ in 0..clip_count {
        clip_ranges.push((r.u32()? as usize, r.u32()? as usize));
    }

    let pose_count = r.u32()? as usize;
    let mut poses = Vec::with_capacity(pose_count);
    for _ in 0..pose_count {
        let root_pos = r.vec3()?;
        let root_yaw = r.f64()?;
        let mut yp = Vec::with_capacity(joint_count);
        for _ in 0..joint_count {
            yp.push(r.vec3()?);
        }
        let mut yr = Vec::with_capacity(joint_count);
        for _ in 0..joint_count {
            yr.push(r.quat()?);
        }
        let mut yv = Vec::with_capacity(joint_count);
        for _ in 0..joint_count {
            yv.push(r.vec3()?);
        }
        let mut yw = Vec::with_capacity(joint_count);
        for _ in 0..joint_count {
            yw.push(r.vec3()?);
        }
        let yc = [r.u8()? != 0, r.u8()? != 0];
        poses.push(Pose { root_pos, root_yaw, yp, yr, yv, yw, yc });
    }
    let db = PoseDatabase {
        skeleton,
        joints,
        poses,
        clip_ranges,
        fps,
        contact_velocity_threshold,
    };

    r.magic(FEATURE_TAG)?;
    let dim = r.u32()? as usize;
    if dim != FEATURE_DIM {
        return Err(IoError::Invalid(format!("feature dimension {dim}, expected {FEATURE_DIM}")));
    }
    let mut horizons = [0usize; 3];
    for h in &mut horizons {
        *h = r.u32()? as usize;
    }
    let count = r.u32()? as usize;
    if count != db.poses.len() {
        return Err(IoError::Invalid(format!(
            "feature count {count} does not match pose count {}",
            db.poses.len()
        )));
    }
    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        let mut z = [0.0; FEATURE_DIM];
        for v in &mut z {
            *v = r.f64()?;
        }
        raw.push(z);
    }
    let mut mean = [0.0; FEATURE_DIM];
    for v in &mut mean {
        *v = r.f64()?;
    }
    let mut std = [0.0; FEATURE_DIM];
    for v in &mut std {
        *v = r.f64()?;
    }
    if std.iter().any(|s| *s <= 0.0) {
        return Err(IoError::Invalid("feature std must be positive".into()));
    }
    let mut valid = Vec::with_capacity(count);
    for _ in 0..count {
        valid.push(r.u8()? != 0);
    }
    r.done()?;

    let fdb = FeatureDatabase {
        normalized: Vec::new(),
        raw,
        mean,
        std,
        valid,
        horizons,
    };
    let normalized = fdb.raw.iter().map(|z| fdb.normalize(z)).collect();
    Ok((db, FeatureDatabase { normalized, ..fdb }))
}

/// Serialize an orientation model.
pub fn write_model(model: &NetModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes.extend_from_slice(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    for d in [NET_INPUT_DIM, HIDDEN, HIDDEN, OUTPUT_DIM] {
        w.u32(d as u32);
    }
    for arr in [&model.w1, &model.b1, &model.w2, &model.b2, &model.w3, &model.b3, &model.input_mean, &model.input_std] {
        for v in arr {
            w.f32(*v);
        }
    }
    let meta = serde_json::to_string(&model.meta).expect("metadata serialization");
    w.string(&meta);
    w.bytes
}

pub fn read_model(bytes: &[u8]) -> Result<NetModel, IoError> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    if dims != [NET_INPUT_DIM, HIDDEN, HIDDEN, OUTPUT_DIM] {
        return Err(IoError::Invalid(format!("unexpected architecture {dims:?}")));
    }
    let arr = |n: usize, r: &mut Reader| -> Result<Vec<f32>, IoError> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(r.f32()?);
        }
        Ok(v)
    };
    let w1 = arr(HIDDEN * NET_INPUT_DIM, &mut r)?;
    let b1 = arr(HIDDEN, &mut r)?;
    let w2 = arr(HIDDEN * HIDDEN, &mut r)?;
    let b2 = arr(HIDDEN, &mut r)?;
    let w3 = arr(OUTPUT_DIM * HIDDEN, &mut r)?;
    let b3 = arr(OUTPUT_DIM, &mut r)?;
    let input_mean = arr(NET_INPUT_DIM, &mut r)?;
    let input_std = arr(NET_INPUT_DIM, &mut r)?;
    let meta: TrainMeta = serde_json::from_str(&r.string()?).map_err(|e| IoError::Invalid(e.to_string()))?;
    r.done()?;
    let model = NetModel { w1, b1, w2, b2, w3, b3, input_mean, input_std, meta };
    model.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(model)
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_database(path: &Path, db: &PoseDatabase, fdb: &FeatureDatabase) -> Result<(), IoError> {
    atomic_write(path, &write_database(db, fdb))
}

pub fn load_database(path: &Path) -> Result<(PoseDatabase, FeatureDatabase), IoError> {
    read_database(&std::fs::read(path)?)
}

pub fn save_model(path: &Path, model: &NetModel) -> Result<(), IoError> {
    atomic_write(path, &write_model(model))
}

pub fn load_model(path: &Path) -> Result<NetModel, IoError> {
    read_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_feature_db;
    use crate::mocap::{synth_gait, GaitParams, JointMap, YawProfile};
    use crate::net::{train, OrientationDataset, TrainConfig};
    use crate::posedb::build_pose_db;
    use crate::trackers::{simulate_trackers, DeviceOffsets};

    fn sample_db() -> (PoseDatabase, FeatureDatabase) {
        let clips = vec![
            synth_gait(&GaitParams { speed: 1.0, duration: 2.0, seed: 1, ..GaitParams::default() }).unwrap(),
            synth_gait(&GaitParams {
                speed: 0.5,
                duration: 2.0,
                heading: YawProfile::sampled(|t| 0.5 * t, 2.0, 60.0),
                seed: 2,
                ..GaitParams::default()
            })
            .unwrap(),
        ];
        let db = build_pose_db(&clips, &JointMap::default(), 0.15).unwrap();
        let fdb = build_feature_db(&db).unwrap();
        (db, fdb)
    }

    #[test]
    fn database_reloads_bit_identically() {
        let (db, fdb) = sample_db();
        let bytes = write_database(&db, &fdb);
        let (db2, fdb2) = read_database(&bytes).unwrap();
        let bytes2 = write_database(&db2, &fdb2);
        assert_eq!(bytes, bytes2, "write-read-write must be byte-identical");

        assert_eq!(db.poses.len(), db2.poses.len());
        assert_eq!(db.clip_ranges, db2.clip_ranges);
        for (a, b) in db.poses.iter().zip(&db2.poses) {
            assert_eq!(a.root_pos, b.root_pos);
            assert_eq!(a.yr, b.yr);
            assert_eq!(a.yc, b.yc);
        }
        for (a, b) in fdb.normalized.iter().zip(&fdb2.normalized) {
            assert_eq!(a, b, "normalized features recomputed identically");
        }
    }

    #[test]
    fn model_reloads_bit_identically() {
        let clip = synth_gait(&GaitParams { speed: 1.0, duration: 3.0, ..GaitParams::default() }).unwrap();
        let map = JointMap::default();
        let trace = simulate_trackers(&clip, &map, &DeviceOffsets::default()).unwrap();
        let rooted = crate::posedb::add_virtual_root(&clip, &map).unwrap();
        let gt: Vec<f64> = rooted.frames.iter().map(|f| f.root_yaw).collect();
        let mut data = OrientationDataset::new();
        data.add_trace(&trace, &gt).unwrap();
        let model = train(&data, &TrainConfig { rollout: 3, epochs: 1, ..TrainConfig::default() }).unwrap();

        let bytes = write_model(&model);
        let model2 = read_model(&bytes).unwrap();
        assert_eq!(write_model(&model2), bytes);
        assert_eq!(model, model2);
    }

    #[test]
    fn corrupted_inputs_are_rejected() {
        let (db, fdb) = sample_db();
        let bytes = write_database(&db, &fdb);
        assert!(matches!(read_database(&bytes[..10]), Err(IoError::UnexpectedEof(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_database(&bad), Err(IoError::BadMagic { .. })));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(read_database(&trailing), Err(IoError::Invalid(_))));
        assert!(matches!(read_model(&bytes), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.mmpd");
        atomic_write(&path, b"hello").unwrap();
        atomic_write(&path, b"world").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"world");
        assert!(!path.with_extension("mmpd.tmp").exists());
    }
}
