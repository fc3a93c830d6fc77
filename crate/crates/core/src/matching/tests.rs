use super::*;
use crate::features::build_feature_db;
use crate::mocap::{synth_gait, GaitParams, JointMap, YawProfile};
use crate::posedb::{add_virtual_root, build_pose_db};
use crate::trackers::{simulate_trackers, DeviceOffsets, TrackerTrace};

fn anim_db(clips: &[crate::mocap::RawClip], cfg: &MatchingConfig) -> AnimDatabase {
    let poses = build_pose_db(clips, &JointMap::default(), 0.15).unwrap();
    let features = build_feature_db(&poses).unwrap();
    AnimDatabase::new(poses, features, cfg)
}

fn trace_and_gt(clip: &crate::mocap::RawClip) -> (TrackerTrace, Vec<f64>) {
    let trace = simulate_trackers(clip, &JointMap::default(), &DeviceOffsets::default()).unwrap();
    let rooted = add_virtual_root(clip, &JointMap::default()).unwrap();
    let gt = rooted.frames.iter().map(|f| f.root_yaw).collect();
    (trace, gt)
}

#[test]
fn query_rest_case_is_identity() {
    let cfg = MatchingConfig::default();
    let clip = synth_gait(&GaitParams { speed: 0.0, duration: 3.0, ..GaitParams::default() }).unwrap();
    let db = anim_db(&[clip], &cfg);
    let dbset = DatabaseSet::single(db);
    let mut rt = Runtime::new(cfg, 1.4);
    rt.align_start(0, 0, DVec2::ZERO, 0.0);
    rt.smoothing.reset(DVec2::ZERO, 0.0);

    let pose_dims = {
        let mut p = [0.0; POSE_FEATURE_DIM];
        p.copy_from_slice(&dbset.dbs[0].features.raw[0][..POSE_FEATURE_DIM]);
        p
    };
    let q = rt.build_query(&dbset, DVec2::ZERO, 0.0, &pose_dims, 1.0 / 60.0);
    let raw = dbset.dbs[0].features.denormalize(&q.normalized);
    for k in 0..3 {
        assert!(raw[15 + 2 * k].abs() < 1e-9, "qp x");
        assert!(raw[15 + 2 * k + 1].abs() < 1e-9, "qp y");
        assert!((raw[21 + 2 * k] - 0.0).abs() < 1e-9, "qd x");
        assert!((raw[21 + 2 * k + 1] - 1.0).abs() < 1e-9, "qd y = local forward");
    }
}

#[test]
fn query_future_positions_follow_velocity() {
    let cfg = MatchingConfig::default();
    let clip = synth_gait(&GaitParams { speed: 0.0, duration: 3.0, ..GaitParams::default() }).unwrap();
    let dbset = DatabaseSet::single(anim_db(&[clip], &cfg));
    let mut rt = Runtime::new(cfg, 1.4);
    rt.align_start(0, 0, DVec2::ZERO, 0.0);
    rt.smoothing.reset(DVec2::new(0.9, 0.0), 0.0);

    let pose_dims = [0.0; POSE_FEATURE_DIM];
    let q = rt.build_query(&dbset, DVec2::ZERO, 0.0, &pose_dims, 1.0 / 60.0);
    let raw = dbset.dbs[0].features.denormalize(&q.normalized);
    let expect = [(0.3, 0.0), (0.6, 0.0), (0.9, 0.0)];
    for (k, (ex, ey)) in expect.iter().enumerate() {
        assert!((raw[15 + 2 * k] - ex).abs() < 1e-9, "horizon {k}: {}", raw[15 + 2 * k]);
        assert!((raw[15 + 2 * k + 1] - ey).abs() < 1e-9);
    }
}

#[test]
fn query_future_directions_match_scalar_iteration() {
    let cfg = MatchingConfig::default();
    let clip = synth_gait(&GaitParams { speed: 0.0, duration: 3.0, ..GaitParams::default() }).unwrap();
    let dbset = DatabaseSet::single(anim_db(&[clip], &cfg));
    let mut rt = Runtime::new(cfg.clone(), 1.4);
    rt.align_start(0, 0, DVec2::ZERO, 0.0);
    rt.smoothing.reset(DVec2::ZERO, 0.0);

    let predicted = std::f64::consts::FRAC_PI_2;
    let beta_dt = 0.05;
    let dt = beta_dt / cfg.beta;
    let q = rt.build_query(&dbset, DVec2::ZERO, predicted, &[0.0; POSE_FEATURE_DIM], dt);
    let raw = dbset.dbs[0].features.denormalize(&q.normalized);

    // Scalar reference: iterate the slerp by hand.
    let horizons = dbset.dbs[0].features.horizons;
    let mut yaw = 0.0f64;
    let mut expected = Vec::new();
    for m in 1..=horizons[2] {
        yaw += (predicted - yaw) * beta_dt;
        if horizons.contains(&m) {
            expected.push(yaw);
        }
    }
    for (k, e) in expected.iter().enumerate() {
        let got = raw[21 + 2 * k].atan2(raw[21 + 2 * k + 1]);
        assert!((got - e).abs() < 1e-6, "horizon {k}: {got} vs {e}");
    }
}

#[test]
fn replaying_source_trace_reproduces_clip() {
    // The synthetic HMD sits exactly at the head joint, so the head-center
    // estimate needs no backward offset here.
    let cfg = MatchingConfig { head_center_offset: 0.0, ..MatchingConfig::default() };
    let params = GaitParams {
        speed: 1.1,
        duration: 6.0,
        heading: YawProfile::constant(0.3),
        seed: 11,
        ..GaitParams::default()
    };
    let clip = synth_gait(&params).unwrap();
    let dbset = DatabaseSet::single(anim_db(&[clip.clone()], &cfg));
    let (trace, gt) = trace_and_gt(&clip);

    let rooted = add_virtual_root(&clip, &JointMap::default()).unwrap();
    let mut rt = Runtime::new(cfg, trace.frames[0].hmd_height);
    rt.align_start(
        0,
        0,
        ground2(rooted.frames[0].root_pos),
        rooted.frames[0].root_yaw,
    );

    let db = &dbset.dbs[0].poses;
    // Compare world joint positions of the output against the source clip.
    for (i, frame) in trace.frames.iter().enumerate().take(240) {
        let out = rt.step(&dbset, frame, gt[i]);
        let got = output_world_transforms(db, &out);
        let want = clip.skeleton.world_transforms(&clip.frames[i]);
        for (j, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!(
                (g.0 - w.0).length() < 1e-4,
                "frame {i} joint {j}: {:?} vs {:?}",
                g.0,
                w.0
            );
        }
    }
}

#[test]
fn step_is_deterministic() {
    let cfg = MatchingConfig::default();
    let params = GaitParams { speed: 1.0, duration: 4.0, seed: 2, ..GaitParams::default() };
    let clip = synth_gait(&params).unwrap();
    let dbset = DatabaseSet::single(anim_db(&[clip.clone()], &cfg));
    let (trace, gt) = trace_and_gt(&clip);

    let run = || {
        let mut rt = Runtime::new(MatchingConfig::default(), trace.frames[0].hmd_height);
        let mut out = Vec::new();
        for (i, frame) in trace.frames.iter().enumerate() {
            out.push(rt.step(&dbset, frame, gt[i]));
        }
        out
    };
    let a = run();
    let b = run();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.cursor, y.cursor);
        assert_eq!(x.root_pos, y.root_pos);
        assert_eq!(x.local_rots, y.local_rots);
    }
}

#[test]
fn height_band_switch_fires_single_search_and_blends() {
    let mut cfg = MatchingConfig::default();
    cfg.height_bands = vec![0.75];
    let upright = synth_gait(&GaitParams { speed: 1.0, duration: 4.0, knee_bend: 0.0, seed: 1, ..GaitParams::default() }).unwrap();
    let crouched = synth_gait(&GaitParams { speed: 1.0, duration: 4.0, knee_bend: 0.8, seed: 2, ..GaitParams::default() }).unwrap();
    let dbset = DatabaseSet::new(
        vec![anim_db(&[upright.clone()], &cfg), anim_db(&[crouched], &cfg)],
        vec![0.75],
    )
    .unwrap();

    let (trace, gt) = trace_and_gt(&upright);
    let calib = trace.frames[0].hmd_height;
    let mut rt = Runtime::new(cfg, calib);

    // Drive the ratio from 0.78 down through the 0.75 band edge to 0.72.
    let mut switches = Vec::new();
    let mut prev_db = 0usize;
    for (i, frame) in trace.frames.iter().enumerate().take(200) {
        let mut f = *frame;
        let ratio = 0.78 - 0.06 * (i as f64 / 200.0);
        f.hmd_height = calib * ratio;
        let out = rt.step(&dbset, &f, gt[i]);
        if out.db != prev_db {
            switches.push((i, out.searched));
            prev_db = out.db;
        }
    }
    assert_eq!(switches.len(), 1, "switched exactly once: {switches:?}");
    assert!(switches[0].1, "a search fired on the switch frame");
    assert_eq!(prev_db, 1);
}

#[test]
fn hysteresis_prevents_band_flapping() {
    let mut cfg = MatchingConfig::default();
    cfg.height_bands = vec![0.75];
    cfg.hysteresis = 0.02;
    let upright = synth_gait(&GaitParams { speed: 1.0, duration: 4.0, seed: 1, ..GaitParams::default() }).unwrap();
    let crouched = synth_gait(&GaitParams { speed: 1.0, duration: 4.0, knee_bend: 0.8, seed: 2, ..GaitParams::default() }).unwrap();
    let dbset = DatabaseSet::new(
        vec![anim_db(&[upright.clone()], &cfg), anim_db(&[crouched], &cfg)],
        vec![0.75],
    )
    .unwrap();
    let (trace, gt) = trace_and_gt(&upright);
    let calib = trace.frames[0].hmd_height;
    let mut rt = Runtime::new(cfg, calib);

    // Oscillate within the hysteresis margin around the edge: no switches.
    let mut dbs_seen = std::collections::BTreeSet::new();
    for (i, frame) in trace.frames.iter().enumerate().take(200) {
        let mut f = *frame;
        let ratio = 0.75 + 0.015 * ((i as f64) * 0.7).sin();
        f.hmd_height = calib * ratio;
        let out = rt.step(&dbset, &f, gt[i]);
        dbs_seen.insert(out.db);
    }
    assert_eq!(dbs_seen.len(), 1, "band flapped: {dbs_seen:?}");
}

#[test]
fn stationary_trackers_settle_into_idle() {
    let cfg = MatchingConfig::default();
    let idle = synth_gait(&GaitParams { speed: 0.0, duration: 6.0, seed: 3, ..GaitParams::default() }).unwrap();
    let walk = synth_gait(&GaitParams { speed: 1.2, duration: 6.0, seed: 4, ..GaitParams::default() }).unwrap();
    let dbset = DatabaseSet::single(anim_db(&[idle.clone()], &cfg));

    // Stationary trackers: replay the idle clip's own first frame repeatedly.
    let (idle_trace, _) = trace_and_gt(&idle);
    let base = idle_trace.frames[0];
    let mut rt = Runtime::new(cfg, base.hmd_height);
    let db = &dbset.dbs[0].poses;
    let joints = db.joints;
    let mut feet = Vec::new();
    let n = 300usize; // 5 seconds at 60 fps
    for i in 0..n {
        let mut f = base;
        f.t = i as f64 / 60.0;
        let out = rt.step(&dbset, &f, 0.0);
        let world = output_world_transforms(db, &out);
        feet.push((world[joints.left_foot].0, world[joints.right_foot].0));
    }
    // Over the last 3 seconds the feet drift less than 1 cm.
    let tail = &feet[n - 180..];
    for foot in 0..2 {
        let positions: Vec<DVec3> = tail.iter().map(|f| if foot == 0 { f.0 } else { f.1 }).collect();
        let first = positions[0];
        let max_dev = positions.iter().map(|p| (*p - first).length()).fold(0.0, f64::max);
        assert!(max_dev < 0.01, "foot {foot} drifted {max_dev}");
    }
    drop(walk);
}

#[test]
fn transitions_blend_smoother_than_hard_cuts() {
    let params_fwd = GaitParams { speed: 1.3, duration: 4.0, seed: 5, ..GaitParams::default() };
    let params_turn = GaitParams {
        speed: 1.3,
        duration: 4.0,
        heading: YawProfile::sampled(|t| 1.2 * t, 4.0, 60.0),
        seed: 6,
        ..GaitParams::default()
    };
    let clip_fwd = synth_gait(&params_fwd).unwrap();
    let clip_turn = synth_gait(&params_turn).unwrap();

    // The driving trace walks forward, then suddenly turns: searches jump
    // between the two clips.
    let (trace, gt) = trace_and_gt(&clip_turn);

    let run = |blend_time: f64| {
        let mut cfg = MatchingConfig::default();
        cfg.blend_time = blend_time;
        let dbset = DatabaseSet::single(anim_db(&[clip_fwd.clone(), clip_turn.clone()], &cfg));
        let db0 = &dbset.dbs[0].poses;
        let mut rt = Runtime::new(cfg, trace.frames[0].hmd_height);
        let mut prev_world: Option<Vec<(DVec3, DQuat)>> = None;
        let mut max_jump_at_transition: f64 = 0.0;
        for (i, frame) in trace.frames.iter().enumerate() {
            let out = rt.step(&dbset, frame, gt[i]);
            let world = output_world_transforms(db0, &out);
            if let Some(prev) = &prev_world {
                if out.transitioned {
                    let jump = world
                        .iter()
                        .zip(prev)
                        .map(|(a, b)| (a.0 - b.0).length())
                        .fold(0.0, f64::max);
                    max_jump_at_transition = max_jump_at_transition.max(jump);
                }
            }
            prev_world = Some(world);
        }
        max_jump_at_transition
    };

    let blended = run(0.25);
    let hard = run(1e-9);
    assert!(blended > 0.0 && hard > 0.0, "expected at least one transition");
    assert!(
        blended < hard,
        "blending did not reduce transition jumps: {blended} vs {hard}"
    );
}

#[test]
fn database_set_validation() {
    let cfg = MatchingConfig::default();
    let clip = synth_gait(&GaitParams { duration: 2.0, ..GaitParams::default() }).unwrap();
    let db = || anim_db(&[clip.clone()], &cfg);
    assert!(DatabaseSet::new(vec![], vec![]).is_err());
    assert!(DatabaseSet::new(vec![db(), db()], vec![]).is_err());
    assert!(DatabaseSet::new(vec![db(), db(), db()], vec![0.6, 0.8]).is_err());
    assert!(DatabaseSet::new(vec![db(), db()], vec![0.75]).is_ok());
}
