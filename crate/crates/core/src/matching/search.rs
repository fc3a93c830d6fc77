//! Nearest-feature search: reference linear scan and a two-layer hierarchy
//! of axis-aligned bounding boxes over the normalized feature vectors.
//!
//! Both paths share the same distance kernel and visit candidates in index
//! order, so they return identical results including ties (smallest index).

use crate::features::{FeatureDatabase, FeatureVector, FEATURE_DIM};

/// A search query in normalized feature space with per-dimension weights.
#[derive(Debug, Clone)]
pub struct QueryVector {
    pub normalized: FeatureVector,
    pub weights: FeatureVector,
}

#[inline]
fn weighted_dist(q: &FeatureVector, w: &FeatureVector, x: &FeatureVector) -> f64 {
    let mut acc = 0.0;
    for d in 0..FEATURE_DIM {
        let e = q[d] - x[d];
        acc += w[d] * e * e;
    }
    acc
}

/// Weighted squared distance from a query to one database entry, using the
/// shared search kernel.
pub fn query_distance(query: &QueryVector, fdb: &FeatureDatabase, index: usize) -> f64 {
    weighted_dist(&query.normalized, &query.weights, &fdb.normalized[index])
}

/// Linear scan over all valid indices; ties break to the smallest index.
pub fn search_brute(query: &QueryVector, fdb: &FeatureDatabase) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in fdb.normalized.iter().enumerate() {
        if !fdb.valid[i] {
            continue;
        }
        let d = weighted_dist(&query.normalized, &query.weights, x);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

#[derive(Debug, Clone)]
struct Aabb {
    lo: FeatureVector,
    hi: FeatureVector,
    any_valid: bool,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { lo: [f64::INFINITY; FEATURE_DIM], hi: [f64::NEG_INFINITY; FEATURE_DIM], any_valid: false }
    }

    fn include(&mut self, x: &FeatureVector) {
        for d in 0..FEATURE_DIM {
            self.lo[d] = self.lo[d].min(x[d]);
            self.hi[d] = self.hi[d].max(x[d]);
        }
        self.any_valid = true;
    }

    /// Weighted squared distance from the query to the box: a lower bound on
    /// the distance to any member, computed with the same kernel.
    fn lower_bound(&self, q: &FeatureVector, w: &FeatureVector) -> f64 {
        let mut clamped = [0.0; FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            clamped[d] = q[d].clamp(self.lo[d], self.hi[d]);
        }
        weighted_dist(q, w, &clamped)
    }
}

/// Two-layer bounding-volume hierarchy over consecutive runs of database
/// entries: leaves of `leaf_size` entries grouped into boxes of `box_size`.
#[derive(Debug, Clone)]
pub struct AccelIndex {
    leaf_size: usize,
    box_size: usize,
    leaves: Vec<Aabb>,
    boxes: Vec<Aabb>,
    len: usize,
}

impl AccelIndex {
    pub fn build(fdb: &FeatureDatabase, leaf_size: usize, box_size: usize) -> Self {
        assert!(leaf_size >= 1 && box_size >= leaf_size, "box size must cover at least one leaf");
        let n = fdb.len();
        let mut leaves = Vec::with_capacity(n.div_ceil(leaf_size));
        for start in (0..n).step_by(leaf_size) {
            let mut aabb = Aabb::empty();
            for i in start..(start + leaf_size).min(n) {
                if fdb.valid[i] {
                    aabb.include(&fdb.normalized[i]);
                }
            }
            leaves.push(aabb);
        }
        let mut boxes = Vec::with_capacity(n.div_ceil(box_size));
        for start in (0..n).step_by(box_size) {
            let mut aabb = Aabb::empty();
            for i in start..(start + box_size).min(n) {
                if fdb.valid[i] {
                    aabb.include(&fdb.normalized[i]);
                }
            }
            boxes.push(aabb);
        }
        AccelIndex { leaf_size, box_size, leaves, boxes, len: n }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Accelerated search. Same contract as [`search_brute`]: identical argmin,
/// identical distance, identical tie-breaking.
pub fn search_accel(query: &QueryVector, fdb: &FeatureDatabase, index: &AccelIndex) -> Option<(usize, f64)> {
    search_accel_counted(query, fdb, index).0
}

/// Accelerated search that also reports how many entries had their full
/// distance evaluated (pruning instrumentation).
pub fn search_accel_counted(
    query: &QueryVector,
    fdb: &FeatureDatabase,
    index: &AccelIndex,
) -> (Option<(usize, f64)>, usize) {
    debug_assert_eq!(index.len, fdb.len());
    let q = &query.normalized;
    let w = &query.weights;
    let mut best: Option<(usize, f64)> = None;
    let mut evaluated = 0usize;

    for (bi, bx) in index.boxes.iter().enumerate() {
        if !bx.any_valid {
            continue;
        }
        if let Some((_, bd)) = best {
            if bx.lower_bound(q, w) >= bd {
                continue;
            }
        }
        let box_start = bi * index.box_size;
        let box_end = (box_start + index.box_size).min(index.len);
        let leaf_lo = box_start / index.leaf_size;
        let leaf_hi = (box_end + index.leaf_size - 1) / index.leaf_size;
        for li in leaf_lo..leaf_hi {
            let leaf = &index.leaves[li];
            if !leaf.any_valid {
                continue;
            }
            if let Some((_, bd)) = best {
                if leaf.lower_bound(q, w) >= bd {
                    continue;
                }
            }
            let start = (li * index.leaf_size).max(box_start);
            let end = ((li + 1) * index.leaf_size).min(box_end);
            for i in start..end {
                if !fdb.valid[i] {
                    continue;
                }
                let d = weighted_dist(q, w, &fdb.normalized[i]);
                evaluated += 1;
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
    }
    (best, evaluated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_feature_db;
    use crate::mocap::{synth_gait, GaitParams, JointMap, YawProfile};
    use crate::posedb::build_pose_db;
    use rand::{Rng, SeedableRng};

    fn gait_fdb(duration: f64) -> FeatureDatabase {
        let clips: Vec<_> = (0..3)
            .map(|s| {
                synth_gait(&GaitParams {
                    speed: 0.5 + 0.5 * s as f64,
                    duration,
                    heading: YawProfile::sampled(move |t| (0.4 + 0.2 * s as f64) * (0.5 * t).sin(), duration, 60.0),
                    seed: s as u64,
                    ..GaitParams::default()
                })
                .unwrap()
            })
            .collect();
        let db = build_pose_db(&clips, &JointMap::default(), 0.15).unwrap();
        build_feature_db(&db).unwrap()
    }

    fn random_query(fdb: &FeatureDatabase, rng: &mut impl Rng) -> QueryVector {
        // Sample near a database entry so queries are representative.
        let i = rng.gen_range(0..fdb.len());
        let mut normalized = fdb.normalized[i];
        for v in &mut normalized {
            *v += rng.gen::<f64>() - 0.5;
        }
        QueryVector { normalized, weights: [1.0; FEATURE_DIM] }
    }

    #[test]
    fn exact_member_query_returns_itself_at_zero() {
        let fdb = gait_fdb(2.0);
        let q = QueryVector { normalized: fdb.normalized[17], weights: [1.0; FEATURE_DIM] };
        let (i, d) = search_brute(&q, &fdb).unwrap();
        assert_eq!(i, 17);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn five_entry_hand_computed_argmin() {
        // Hand-built database: entries at distance 0..4 on the first dim.
        let mut fdb = gait_fdb(2.0);
        fdb.normalized.truncate(5);
        fdb.valid = vec![true; 5];
        for (k, z) in fdb.normalized.iter_mut().enumerate() {
            *z = [0.0; FEATURE_DIM];
            z[0] = k as f64;
            z[1] = 1.0;
        }
        let mut q = [0.0; FEATURE_DIM];
        q[0] = 2.4; // distances: 5.76+1, 1.96+1, 0.16+1, 0.36+1, 2.56+1
        let query = QueryVector { normalized: q, weights: [1.0; FEATURE_DIM] };
        let (i, d) = search_brute(&query, &fdb).unwrap();
        assert_eq!(i, 2);
        assert!((d - (0.16 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_pose_weights_ignore_pose_features() {
        let fdb = gait_fdb(2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut weights = [1.0; FEATURE_DIM];
        for w in weights.iter_mut().take(15) {
            *w = 0.0;
        }
        for _ in 0..20 {
            let mut q = random_query(&fdb, &mut rng);
            q.weights = weights;
            let a = search_brute(&q, &fdb).unwrap();
            // Arbitrary perturbation of the pose dims must not change the result.
            for d in 0..15 {
                q.normalized[d] += rng.gen::<f64>() * 100.0 - 50.0;
            }
            let b = search_brute(&q, &fdb).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn accel_matches_brute_on_random_queries() {
        let fdb = gait_fdb(4.0);
        let index = AccelIndex::build(&fdb, 16, 64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for k in 0..1000 {
            let q = random_query(&fdb, &mut rng);
            let brute = search_brute(&q, &fdb);
            let accel = search_accel(&q, &fdb, &index);
            match (brute, accel) {
                (Some((bi, bd)), Some((ai, ad))) => {
                    assert_eq!(bi, ai, "query {k}: index mismatch");
                    assert_eq!(bd.to_bits(), ad.to_bits(), "query {k}: distance mismatch");
                }
                other => panic!("query {k}: {other:?}"),
            }
        }
    }

    #[test]
    fn single_entry_database() {
        let mut fdb = gait_fdb(2.0);
        fdb.normalized.truncate(1);
        fdb.raw.truncate(1);
        fdb.valid = vec![true];
        let index = AccelIndex::build(&fdb, 16, 64);
        let q = QueryVector { normalized: [9.0; FEATURE_DIM], weights: [1.0; FEATURE_DIM] };
        assert_eq!(search_brute(&q, &fdb).unwrap().0, 0);
        assert_eq!(search_accel(&q, &fdb, &index).unwrap().0, 0);
    }

    #[test]
    fn all_invalid_returns_none() {
        let mut fdb = gait_fdb(2.0);
        fdb.valid = vec![false; fdb.len()];
        let index = AccelIndex::build(&fdb, 16, 64);
        let q = QueryVector { normalized: [0.0; FEATURE_DIM], weights: [1.0; FEATURE_DIM] };
        assert!(search_brute(&q, &fdb).is_none());
        assert!(search_accel(&q, &fdb, &index).is_none());
    }

    #[test]
    fn pruning_skips_most_entries_on_gait_data() {
        let fdb = gait_fdb(8.0);
        let index = AccelIndex::build(&fdb, 16, 64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut total_frac = 0.0;
        let queries = 200;
        for _ in 0..queries {
            let q = random_query(&fdb, &mut rng);
            let (_, evaluated) = search_accel_counted(&q, &fdb, &index);
            total_frac += evaluated as f64 / fdb.valid_count() as f64;
        }
        let mean = total_frac / queries as f64;
        assert!(mean < 0.30, "mean evaluated fraction {mean}");
    }

    #[test]
    fn ties_break_to_smallest_index() {
        let mut fdb = gait_fdb(2.0);
        fdb.normalized.truncate(40);
        fdb.raw.truncate(40);
        fdb.valid = vec![true; 40];
        for (k, z) in fdb.normalized.iter_mut().enumerate() {
            *z = [0.0; FEATURE_DIM];
            z[0] = if k % 2 == 0 { 1.0 } else { -1.0 }; // all equidistant from 0
        }
        let q = QueryVector { normalized: [0.0; FEATURE_DIM], weights: [1.0; FEATURE_DIM] };
        let index = AccelIndex::build(&fdb, 4, 8);
        assert_eq!(search_brute(&q, &fdb).unwrap().0, 0);
        assert_eq!(search_accel(&q, &fdb, &index).unwrap().0, 0);
    }
}
