//! Uniform-grid spatial hash over a fixed point set.

use std::collections::HashMap;

use crate::geom::dist2;

/// Points bucketed into cubic cells of side `cell`.
#[derive(Clone, Debug)]
pub struct PointGrid {
    cell: f64,
    points: Vec<[f64; 3]>,
    /// Point indices ordered by cell key.
    order: Vec<u32>,
    buckets: HashMap<[i64; 3], (u32, u32)>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl PointGrid {
    /// Panics if `cell` is not positive and finite.
    pub fn new(points: &[[f64; 3]], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let key = |p: &[f64; 3]| p.map(|v| (v / cell).floor() as i64);
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        order.sort_by_key(|i| (key(&points[*i as usize]), *i));
        let mut buckets = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut start = 0;
        while start < order.len() {
            let k = key(&points[order[start] as usize]);
            let mut end = start + 1;
            while end < order.len() && key(&points[order[end] as usize]) == k {
                end += 1;
            }
            buckets.insert(k, (start as u32, end as u32));
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            start = end;
        }
        Self {
            cell,
            points: points.to_vec(),
            order,
            buckets,
            lo,
            hi,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn key(&self, p: &[f64; 3]) -> [i64; 3] {
        p.map(|v| (v / self.cell).floor() as i64)
    }

    fn bucket(&self, k: &[i64; 3]) -> &[u32] {
        match self.buckets.get(k) {
            Some(&(a, b)) => &self.order[a as usize..b as usize],
            None => &[],
        }
    }

    /// Whether some point lies within distance `r` of `p` (inclusive).
    pub fn any_within(&self, p: &[f64; 3], r: f64) -> bool {
        let r2 = r * r;
        let c = self.key(p);
        let reach = (r / self.cell).ceil() as i64;
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let k = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if self.bucket(&k).iter().any(|i| dist2(&self.points[*i as usize], p) <= r2) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// The `k` nearest points to `p` as `(squared distance, index)`, closest
    /// first, ties by index. `skip` excludes one index (the query itself).
    pub fn nearest_k(&self, p: &[f64; 3], k: usize, skip: Option<u32>) -> Vec<(f64, u32)> {
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        let c = self.key(p);
        // Rings beyond this cover no occupied cell.
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        for &i in self.bucket(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            if Some(i) == skip {
                                continue;
                            }
                            let d = dist2(&self.points[i as usize], p);
                            if best.len() < k || (d, i) < best[best.len() - 1] {
                                let pos = best.partition_point(|e| *e < (d, i));
                                best.insert(pos, (d, i));
                                best.truncate(k);
                            }
                        }
                    }
                }
            }
            // Unvisited points are at least `ring * cell` away.
            let bound = ring as f64 * self.cell;
            if best.len() == k && best[k - 1].0 <= bound * bound {
                break;
            }
        }
        best
    }
}
