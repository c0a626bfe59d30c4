//! Isosurface extraction by marching tetrahedra on a regular grid.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::geom::Aabb;
use crate::scalar::Real;

/// Triangle mesh with shared vertices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().all(|c| *c == 2)
    }
}

// Six tetrahedra around the 0-7 diagonal; corner bits are x=1, y=2, z=4.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

/// Surface `f(p) = level` over a `res^3` cell grid; the inside is `f > level`
/// and faces wind counter-clockwise seen from outside.
pub fn extract_isosurface(
    bounds: &Aabb,
    res: usize,
    level: f64,
    f: impl Fn([f64; 3]) -> f64 + Sync,
) -> Mesh {
    let n = res + 1;
    let size = bounds.size();
    let pos = |i: usize, j: usize, k: usize| {
        [
            bounds.min[0] + i as f64 / res as f64 * size[0],
            bounds.min[1] + j as f64 / res as f64 * size[1],
            bounds.min[2] + k as f64 / res as f64 * size[2],
        ]
    };
    let values: Vec<f64> = (0..n * n * n)
        .into_par_iter()
        .map(|v| f(pos(v % n, (v / n) % n, v / (n * n))) - level)
        .collect();
    let vpos = |v: usize| pos(v % n, (v / n) % n, v / (n * n));

    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut on_edge = |a: usize, b: usize, mesh: &mut Mesh| -> u32 {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            let (va, vb) = (values[key.0], values[key.1]);
            let t = va / (va - vb);
            let (pa, pb) = (vpos(key.0), vpos(key.1));
            mesh.vertices.push([
                pa[0] + t * (pb[0] - pa[0]),
                pa[1] + t * (pb[1] - pa[1]),
                pa[2] + t * (pb[2] - pa[2]),
            ]);
            (mesh.vertices.len() - 1) as u32
        })
    };

    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let base = (k * n + j) * n + i;
                let corner = |c: usize| base + (c >> 2 & 1) * n * n + (c >> 1 & 1) * n + (c & 1);
                for tet in TETS {
                    let v = tet.map(corner);
                    let inside: Vec<usize> = v.iter().copied().filter(|x| values[*x] > 0.0).collect();
                    let outside: Vec<usize> = v.iter().copied().filter(|x| values[*x] <= 0.0).collect();
                    let tris: Vec<[u32; 3]> = match inside.len() {
                        1 => {
                            let a = inside[0];
                            vec![[
                                on_edge(a, outside[0], &mut mesh),
                                on_edge(a, outside[1], &mut mesh),
                                on_edge(a, outside[2], &mut mesh),
                            ]]
                        }
                        3 => {
                            let a = outside[0];
                            vec![[
                                on_edge(a, inside[0], &mut mesh),
                                on_edge(a, inside[1], &mut mesh),
                                on_edge(a, inside[2], &mut mesh),
                            ]]
                        }
                        2 => {
                            let (a, b) = (inside[0], inside[1]);
                            let (c, d) = (outside[0], outside[1]);
                            let q = [
                                on_edge(a, c, &mut mesh),
                                on_edge(a, d, &mut mesh),
                                on_edge(b, d, &mut mesh),
                                on_edge(b, c, &mut mesh),
                            ];
                            vec![[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
                        }
                        _ => continue,
                    };
                    // The interpolant is linear in a tet; outward is minus its gradient.
                    let g = linear_gradient(v.map(vpos), v.map(|x| values[x]));
                    let out_dir = [-g[0], -g[1], -g[2]];
                    for mut t in tris {
                        let nrm = normal(&mesh.vertices, &t);
                        if nrm[0] * out_dir[0] + nrm[1] * out_dir[1] + nrm[2] * out_dir[2] < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.faces.push(t);
                    }
                }
            }
        }
    }
    mesh
}

fn linear_gradient(p: [[f64; 3]; 4], f: [f64; 4]) -> [f64; 3] {
    // Solve M g = df with rows p_i - p_0.
    let m: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|k| p[i + 1][k] - p[0][k]));
    let df = [f[1] - f[0], f[2] - f[0], f[3] - f[0]];
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    std::array::from_fn(|k| {
        let mut a = m;
        for i in 0..3 {
            a[i][k] = df[i];
        }
        det(a) / d
    })
}

fn normal(v: &[[f64; 3]], t: &[u32; 3]) -> [f64; 3] {
    let (a, b, c) = (v[t[0] as usize], v[t[1] as usize], v[t[2] as usize]);
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let w = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    [
        u[1] * w[2] - u[2] * w[1],
        u[2] * w[0] - u[0] * w[2],
        u[0] * w[1] - u[1] * w[0],
    ]
}

/// Density isosurface of the field at `density_floor`.
pub fn extract_mesh<T: Real>(field: &Field<T>, density_floor: f64, grid_res: usize) -> Result<Mesh> {
    if grid_res < 16 {
        return Err(Error::Input(format!("grid resolution must be >= 16, got {grid_res}")));
    }
    Ok(extract_isosurface(&field.bounds, grid_res, density_floor, |p| {
        field
            .eval_density([T::of(p[0]), T::of(p[1]), T::of(p[2])])
            .as_f64()
    }))
}
