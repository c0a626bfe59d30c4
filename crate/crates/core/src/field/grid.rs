//! Dense multi-resolution voxel grids with trilinear interpolation.

use crate::geom::Aabb;
use crate::scalar::Real;

/// Interpolation stencil of one level: 8 vertex indices and their weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    pub vertex: [usize; 8],
    pub weight: [T; 8],
}

/// Layout of a pyramid of dense grids inside a flat parameter vector.
///
/// Level `l` has `resolutions[l]` cells per axis, hence `(R+1)^3` vertices,
/// each holding `channels` features. Parameters are level-major, then
/// vertex-major (x fastest), then channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPyramid {
    pub resolutions: Vec<usize>,
    pub channels: usize,
    /// Offset of each level relative to the pyramid's first parameter.
    pub level_offsets: Vec<usize>,
    pub len: usize,
}

impl GridPyramid {
    pub fn new(resolutions: &[usize], channels: usize) -> Self {
        let mut offsets = Vec::with_capacity(resolutions.len());
        let mut len = 0;
        for &r in resolutions {
            offsets.push(len);
            len += (r + 1).pow(3) * channels;
        }
        Self {
            resolutions: resolutions.to_vec(),
            channels,
            level_offsets: offsets,
            len,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.resolutions.len()
    }

    /// Width of the concatenated feature vector.
    pub fn feature_width(&self) -> usize {
        self.resolutions.len() * self.channels
    }

    /// Stencil at a point given in unit-cube coordinates `[0,1]^3`.
    #[inline]
    pub fn stencil<T: Real>(&self, level: usize, u: [T; 3]) -> Stencil<T> {
        let r = self.resolutions[level];
        let rt = T::of(r as f64);
        let mut cell = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for k in 0..3 {
            let x = (u[k] * rt).max(T::zero()).min(rt);
            let i = x.floor().to_usize().unwrap_or(0).min(r - 1);
            cell[k] = i;
            frac[k] = x - T::of(i as f64);
        }
        let n = r + 1;
        let base = (cell[2] * n + cell[1]) * n + cell[0];
        let mut vertex = [0usize; 8];
        let mut weight = [T::zero(); 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            vertex[c] = base + (dz * n + dy) * n + dx;
            let wx = if dx == 1 { frac[0] } else { T::one() - frac[0] };
            let wy = if dy == 1 { frac[1] } else { T::one() - frac[1] };
            let wz = if dz == 1 { frac[2] } else { T::one() - frac[2] };
            weight[c] = wx * wy * wz;
        }
        Stencil { vertex, weight }
    }

    /// Concatenated features of all levels at `u`.
    #[inline]
    pub fn features<T: Real>(&self, params: &[T], u: [T; 3], out: &mut [T]) {
        let c = self.channels;
        for l in 0..self.num_levels() {
            let s = self.stencil(l, u);
            let dst = &mut out[l * c..(l + 1) * c];
            dst.iter_mut().for_each(|v| *v = T::zero());
            let lvl = &params[self.level_offsets[l]..];
            for k in 0..8 {
                let w = s.weight[k];
                let src = &lvl[s.vertex[k] * c..(s.vertex[k] + 1) * c];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += w * *v;
                }
            }
        }
    }

    /// Adds `d(feature) -> d(params)` for the features computed at `u`.
    #[inline]
    pub fn scatter<T: Real>(&self, grad: &mut [T], u: [T; 3], d_feat: &[T]) {
        let c = self.channels;
        for l in 0..self.num_levels() {
            let s = self.stencil(l, u);
            let g = &d_feat[l * c..(l + 1) * c];
            if g.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let lvl = &mut grad[self.level_offsets[l]..];
            for k in 0..8 {
                let w = s.weight[k];
                let dst = &mut lvl[s.vertex[k] * c..(s.vertex[k] + 1) * c];
                for (d, v) in dst.iter_mut().zip(g) {
                    *d += w * *v;
                }
            }
        }
    }

    /// Indices (relative to the pyramid) touched by a query at `u`.
    pub fn touched(&self, u: [f64; 3]) -> Vec<usize> {
        let c = self.channels;
        let mut out = Vec::with_capacity(8 * self.feature_width());
        for l in 0..self.num_levels() {
            let s = self.stencil::<f64>(l, u);
            for v in s.vertex {
                for ch in 0..c {
                    out.push(self.level_offsets[l] + v * c + ch);
                }
            }
        }
        out
    }
}

/// Maps a world point into unit-cube coordinates of `bounds`.
#[inline]
pub fn to_unit<T: Real>(bounds: &Aabb, x: [T; 3]) -> [T; 3] {
    let mut u = [T::zero(); 3];
    for k in 0..3 {
        let lo = T::of(bounds.min[k]);
        let hi = T::of(bounds.max[k]);
        u[k] = (x[k] - lo) / (hi - lo);
    }
    u
}

#[inline]
pub fn inside<T: Real>(bounds: &Aabb, x: [T; 3]) -> bool {
    (0..3).all(|k| x[k] >= T::of(bounds.min[k]) && x[k] <= T::of(bounds.max[k]))
}
