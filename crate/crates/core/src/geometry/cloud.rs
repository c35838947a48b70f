use std::cmp::Ordering;

use super::camera::Pose;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Reserved coordinate of invalid (dropped or cropped) points.
pub const SENTINEL: [f64; 3] = [0.0, 0.0, 0.0];

/// Points in meters with per-point validity and optional features.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<[f64; 3]>,
    valid: Vec<bool>,
    pub feats: Option<Tensor>,
}

impl PointCloud {
    /// All points valid.
    pub fn new(coords: Vec<[f64; 3]>) -> Self {
        let valid = vec![true; coords.len()];
        Self { coords, valid, feats: None }
    }

    pub fn with_validity(coords: Vec<[f64; 3]>, valid: Vec<bool>) -> Result<Self> {
        if coords.len() != valid.len() {
            return Err(Error::dim("PointCloud", "coords/valid length mismatch"));
        }
        let coords = coords
            .into_iter()
            .zip(&valid)
            .map(|(p, &v)| if v { p } else { SENTINEL })
            .collect();
        Ok(Self { coords, valid, feats: None })
    }

    /// `n` invalid sentinel points.
    pub fn invalid(n: usize) -> Self {
        Self { coords: vec![SENTINEL; n], valid: vec![false; n], feats: None }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_coords(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.coords.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(p, _)| *p)
    }

    /// Marks point `i` invalid and moves it to the sentinel.
    pub fn invalidate(&mut self, i: usize) {
        self.coords[i] = SENTINEL;
        self.valid[i] = false;
    }

    /// Axis-aligned extents `(min, max)` of the valid points.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        bounds_of(self.valid_coords())
    }
}

pub(crate) fn bounds_of(points: impl Iterator<Item = [f64; 3]>) -> Option<([f64; 3], [f64; 3])> {
    let mut it = points.peekable();
    it.peek()?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in it {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Some((lo, hi))
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn lex_cmp(a: &[f64; 3], b: &[f64; 3]) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
}

/// Applies `pose` to valid points; invalid points stay at the sentinel.
pub fn transform_points(pc: &PointCloud, pose: &Pose) -> PointCloud {
    let coords = pc
        .coords
        .iter()
        .zip(&pc.valid)
        .map(|(p, &v)| if v { pose.apply(*p) } else { SENTINEL })
        .collect();
    PointCloud { coords, valid: pc.valid.clone(), feats: pc.feats.clone() }
}

/// Concatenates the valid points of every view in the world frame.
pub fn fuse_views(clouds: &[PointCloud], poses: &[Pose]) -> Result<PointCloud> {
    if clouds.len() != poses.len() {
        return Err(Error::dim(
            "fuse_views",
            format!("{} clouds vs {} poses", clouds.len(), poses.len()),
        ));
    }
    let mut out = Vec::with_capacity(clouds.iter().map(PointCloud::valid_count).sum());
    for (pc, pose) in clouds.iter().zip(poses) {
        out.extend(pc.valid_coords().map(|p| pose.apply(p)));
    }
    Ok(PointCloud::new(out))
}

/// Greedy max-min (farthest point) selection over the valid points.
///
/// The seed is the lexicographically smallest coordinate; ties in the
/// max-min distance go to the lexicographically smaller coordinate, then the
/// lower index. With `k` larger than the number of valid points the selection
/// order repeats cyclically.
pub fn farthest_point_sample(pc: &PointCloud, k: usize) -> Result<Vec<usize>> {
    farthest_point_sample_coords(&pc.coords, &pc.valid, k)
}

pub(crate) fn farthest_point_sample_coords(
    coords: &[[f64; 3]],
    valid: &[bool],
    k: usize,
) -> Result<Vec<usize>> {
    let cand: Vec<usize> = (0..coords.len()).filter(|&i| valid[i]).collect();
    if cand.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let better = |a: usize, b: usize| -> bool {
        // is `a` a better seed than `b`
        match lex_cmp(&coords[a], &coords[b]) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a < b,
        }
    };
    let mut first = cand[0];
    for &i in &cand[1..] {
        if better(i, first) {
            first = i;
        }
    }
    let m = cand.len();
    let take = k.min(m);
    let mut order = Vec::with_capacity(take);
    let mut mind = vec![f64::INFINITY; m];
    let mut taken = vec![false; m];
    let pos_first = cand.iter().position(|&i| i == first).unwrap();
    let mut cur = pos_first;
    loop {
        taken[cur] = true;
        order.push(cand[cur]);
        if order.len() == take {
            break;
        }
        let c = coords[cand[cur]];
        let mut best: Option<usize> = None;
        for j in 0..m {
            if taken[j] {
                continue;
            }
            let d = dist2(&coords[cand[j]], &c);
            if d < mind[j] {
                mind[j] = d;
            }
            best = match best {
                None => Some(j),
                Some(b) => {
                    if mind[j] > mind[b] || (mind[j] == mind[b] && better(cand[j], cand[b])) {
                        Some(j)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        cur = best.unwrap();
    }
    Ok((0..k).map(|i| order[i % take]).collect())
}

/// Radius neighborhoods of each center over the valid points, nearest first.
///
/// An empty neighborhood falls back to the single nearest valid point.
pub fn ball_query(
    centers: &[[f64; 3]],
    pc: &PointCloud,
    radius: f64,
    max_samples: usize,
) -> Result<Vec<Vec<usize>>> {
    ball_query_coords(centers, &pc.coords, &pc.valid, radius, max_samples)
}

pub(crate) fn ball_query_coords(
    centers: &[[f64; 3]],
    coords: &[[f64; 3]],
    valid: &[bool],
    radius: f64,
    max_samples: usize,
) -> Result<Vec<Vec<usize>>> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("ball query radius must be positive, got {radius}")));
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::EmptyCloud);
    }
    let order = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.total_cmp(&b.0).then(lex_cmp(&coords[a.1], &coords[b.1])).then(a.1.cmp(&b.1))
    };
    let mut groups = Vec::with_capacity(centers.len());
    for c in centers {
        let mut hits: Vec<(f64, usize)> = Vec::new();
        let mut nearest: Option<(f64, usize)> = None;
        for (i, p) in coords.iter().enumerate() {
            if !valid[i] {
                continue;
            }
            let d = dist2(p, c);
            if d.sqrt() <= radius {
                hits.push((d, i));
            }
            let cand = (d, i);
            nearest = match nearest {
                Some(n) if order(&n, &cand) != Ordering::Greater => Some(n),
                _ => Some(cand),
            };
        }
        if hits.is_empty() {
            groups.push(vec![nearest.unwrap().1]);
            continue;
        }
        if hits.len() > max_samples {
            hits.select_nth_unstable_by(max_samples - 1, order);
            hits.truncate(max_samples);
        }
        hits.sort_by(order);
        groups.push(hits.into_iter().map(|(_, i)| i).collect());
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.1..3.0)])
            .collect()
    }

    #[test]
    fn transform_examples() {
        let origin = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let t = transform_points(&origin, &Pose::from_translation([1.0, 2.0, 3.0]));
        assert_eq!(t.coords()[0], [1.0, 2.0, 3.0]);
        let pc = PointCloud::new(vec![[1.0, 0.0, 0.0]]);
        let id = transform_points(&pc, &Pose::identity());
        assert_eq!(id.coords(), pc.coords());
        let rz = Pose::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2, [0.0; 3]);
        let r = transform_points(&pc, &rz).coords()[0];
        assert!(r[0].abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15 && r[2].abs() < 1e-15);
    }

    #[test]
    fn sentinel_points_are_not_moved() {
        let mut pc = PointCloud::new(vec![[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]);
        pc.invalidate(1);
        let t = transform_points(&pc, &Pose::from_translation([1.0, 2.0, 3.0]));
        assert_eq!(t.coords()[1], SENTINEL);
        assert!(!t.valid()[1]);
        assert_eq!(t.coords()[0], [2.0, 3.0, 4.0]);
    }

    #[test]
    fn fuse_cardinality() {
        let a = PointCloud::new(random_cloud(10, 1));
        let mut b = PointCloud::new(random_cloud(10, 2));
        let single = fuse_views(std::slice::from_ref(&a), &[Pose::identity()]).unwrap();
        assert_eq!(single.coords(), a.coords());
        let two = fuse_views(&[a.clone(), b.clone()], &[Pose::identity(), Pose::identity()]).unwrap();
        assert_eq!(two.len(), 20);
        b.invalidate(3);
        let two = fuse_views(&[a, b], &[Pose::identity(), Pose::identity()]).unwrap();
        assert_eq!(two.len(), 19);
        assert!(fuse_views(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn fps_line() {
        let pc = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let idx = farthest_point_sample(&pc, 2).unwrap();
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(farthest_point_sample(&pc, 3).unwrap().len(), 3);
        let cyc = farthest_point_sample(&pc, 5).unwrap();
        assert_eq!(cyc, vec![0, 2, 1, 0, 2]);
        assert!(farthest_point_sample(&PointCloud::empty(), 1).is_err());
    }

    #[test]
    fn ball_query_examples() {
        let pts = random_cloud(40, 3);
        let pc = PointCloud::new(pts.clone());
        let g = ball_query(&[pts[5]], &pc, 1e-9, 8).unwrap();
        assert_eq!(g, vec![vec![5]]);
        let g = ball_query(&[[0.0, 0.0, 1.0]], &pc, 100.0, 100).unwrap();
        let mut all = g[0].clone();
        all.sort();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        // far center: fallback to the nearest point
        let g = ball_query(&[[50.0, 0.0, 0.0]], &pc, 0.1, 4).unwrap();
        assert_eq!(g[0].len(), 1);
    }

    #[test]
    fn ball_query_matches_brute_force_on_grid() {
        let mut pts = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                pts.push([i as f64 * 0.1, j as f64 * 0.1, 1.0]);
            }
        }
        let pc = PointCloud::new(pts.clone());
        let centers: Vec<[f64; 3]> = vec![[0.35, 0.35, 1.0], [0.0, 0.0, 1.0], [0.7, 0.1, 1.05]];
        let groups = ball_query(&centers, &pc, 0.2, 1000).unwrap();
        for (c, g) in centers.iter().zip(groups) {
            let mut expect: Vec<usize> =
                (0..pts.len()).filter(|&i| dist2(&pts[i], c).sqrt() <= 0.2).collect();
            let mut got = g.clone();
            expect.sort();
            got.sort();
            assert_eq!(got, expect);
            // nearest-first ordering
            for w in g.windows(2) {
                assert!(dist2(&pts[w[0]], c) <= dist2(&pts[w[1]], c));
            }
        }
    }

    /// Every sequence greedy max-min could produce from the same seed, with any
    /// tie-breaking.
    fn greedy_feasible(pts: &[[f64; 3]], seed: usize, k: usize) -> Vec<Vec<usize>> {
        fn rec(pts: &[[f64; 3]], sel: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
            if sel.len() == k {
                out.push(sel.clone());
                return;
            }
            let rest: Vec<(usize, f64)> = (0..pts.len())
                .filter(|j| !sel.contains(j))
                .map(|j| (j, sel.iter().map(|&s| dist2(&pts[s], &pts[j])).fold(f64::INFINITY, f64::min)))
                .collect();
            let best = rest.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
            for (j, d) in rest {
                if d == best {
                    sel.push(j);
                    rec(pts, sel, k, out);
                    sel.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(pts, &mut vec![seed], k, &mut out);
        out
    }

    fn min_pairwise(pts: &[[f64; 3]], sel: &[usize]) -> f64 {
        let mut m = f64::INFINITY;
        for a in 0..sel.len() {
            for b in a + 1..sel.len() {
                m = m.min(dist2(&pts[sel[a]], &pts[sel[b]]).sqrt());
            }
        }
        m
    }

    #[test]
    fn fps_against_brute_force() {
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..=12);
            let k = rng.random_range(2..=4.min(n));
            let pts = random_cloud(n, seed + 1000);
            let pc = PointCloud::new(pts.clone());
            let got = farthest_point_sample(&pc, k).unwrap();
            let seed_idx = (0..n).min_by(|&a, &b| lex_cmp(&pts[a], &pts[b])).unwrap();
            let feasible = greedy_feasible(&pts, seed_idx, k);
            assert!(feasible.contains(&got));
            let ours = min_pairwise(&pts, &got);
            for f in &feasible {
                assert!(ours >= min_pairwise(&pts, f));
            }
            // 2-approximation of the optimal max-min dispersion
            let mut opt = 0.0f64;
            let mut subset = vec![0usize; k];
            fn combos(n: usize, k: usize, start: usize, d: usize, s: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
                if d == k {
                    f(s);
                    return;
                }
                for i in start..n {
                    s[d] = i;
                    combos(n, k, i + 1, d + 1, s, f);
                }
            }
            combos(n, k, 0, 0, &mut subset, &mut |s| opt = opt.max(min_pairwise(&pts, s)));
            assert!(ours >= 0.5 * opt - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn fps_permutation_invariant(seed in 0u64..10_000, n in 1usize..40, k in 1usize..12) {
            let pts = random_cloud(n, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            for i in (1..n).rev() { perm.swap(i, rng.random_range(0..=i)); }
            let shuffled: Vec<[f64; 3]> = perm.iter().map(|&i| pts[i]).collect();
            let a = farthest_point_sample(&PointCloud::new(pts.clone()), k).unwrap();
            let b = farthest_point_sample(&PointCloud::new(shuffled.clone()), k).unwrap();
            let ca: Vec<[f64; 3]> = a.iter().map(|&i| pts[i]).collect();
            let cb: Vec<[f64; 3]> = b.iter().map(|&i| shuffled[i]).collect();
            prop_assert_eq!(ca, cb);
        }

        #[test]
        fn pose_round_trip(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, ang in -3.1f64..3.1,
                           tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0, seed in 0u64..1000) {
            let pose = Pose::from_axis_angle([ax, ay, az], ang, [tx, ty, tz]);
            let pc = PointCloud::new(random_cloud(16, seed));
            let back = transform_points(&transform_points(&pc, &pose), &pose.inverse());
            for (a, b) in pc.coords().iter().zip(back.coords()) {
                for i in 0..3 { prop_assert!((a[i] - b[i]).abs() <= 1e-9); }
            }
        }
    }
}
