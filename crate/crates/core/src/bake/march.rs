//! Isosurface extraction over a lattice in contracted space.
//!
//! The case table is derived at first use: on each cube face the crossing
//! points are paired so that inside corners are cut off individually, the
//! segments are chained into loops and each loop is fanned. The rule depends
//! only on the signs of a face's corners, so neighbouring cells agree on
//! every shared face and the surface closes without cracks.

use std::collections::HashMap;
use std::sync::OnceLock;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::field::uncontract;
use crate::nerf::model::{DensityField, FieldFrame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarchConfig {
    /// Regions per axis; the lattice is shared so region seams weld exactly.
    pub regions: usize,
    pub cells_per_region: usize,
    /// Half width of the marched cube in contracted coordinates (at most 2).
    pub extent: f64,
    /// Density level of the surface.
    pub threshold: f64,
}

impl Default for MarchConfig {
    fn default() -> Self {
        Self { regions: 3, cells_per_region: 40, extent: 1.0, threshold: 10.0 }
    }
}

impl MarchConfig {
    pub fn cells(&self) -> usize {
        self.regions * self.cells_per_region
    }

    /// Lattice spacing in contracted units.
    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.cells() as f64
    }
}

const EDGES: [(usize, usize); 12] =
    [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];

fn corner_pos(c: usize) -> DVec3 {
    DVec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

fn edge_of(a: usize, b: usize) -> usize {
    EDGES.iter().position(|&(x, y)| (x, y) == (a.min(b), a.max(b))).expect("cube edge")
}

/// Corners of each face in counter-clockwise order seen from outside.
fn faces_ccw() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        for side in 0..2 {
            let mut n = DVec3::ZERO;
            n[axis] = if side == 1 { 1.0 } else { -1.0 };
            let mut u = DVec3::ZERO;
            u[(axis + 1) % 3] = 1.0;
            let v = n.cross(u);
            let mut cs: Vec<usize> = (0..8).filter(|c| (c >> axis) & 1 == side).collect();
            let ctr = cs.iter().map(|c| corner_pos(*c)).sum::<DVec3>() / 4.0;
            cs.sort_by(|a, b| {
                let pa = corner_pos(*a) - ctr;
                let pb = corner_pos(*b) - ctr;
                pa.dot(v).atan2(pa.dot(u)).total_cmp(&pb.dot(v).atan2(pb.dot(u)))
            });
            out.push([cs[0], cs[1], cs[2], cs[3]]);
        }
    }
    out
}

fn build_case(mask: usize, faces: &[[usize; 4]]) -> Vec<[u8; 3]> {
    let inside = |c: usize| (mask >> c) & 1 == 1;
    let mut next: [Option<usize>; 12] = [None; 12];
    for f in faces {
        let mut crossings = Vec::new();
        for i in 0..4 {
            let (a, b) = (f[i], f[(i + 1) % 4]);
            if inside(a) != inside(b) {
                crossings.push((edge_of(a, b), inside(b)));
            }
        }
        for i in 0..crossings.len() {
            let (e, entering) = crossings[i];
            if entering {
                next[e] = Some(crossings[(i + 1) % crossings.len()].0);
            }
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if seen[start] || next[start].is_none() {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut e = next[start].unwrap();
        while e != start {
            seen[e] = true;
            lp.push(e);
            e = next[e].expect("closed loop");
        }
        for i in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[i] as u8, lp[i + 1] as u8]);
        }
    }
    tris
}

/// Triangles (as cube-edge triples) for each of the 256 corner masks.
pub fn case_table() -> &'static Vec<Vec<[u8; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = faces_ccw();
        (0..256).map(|m| build_case(m, &faces)).collect()
    })
}

/// Extracts the `threshold` level set of `field`; triangles face towards
/// lower density. Vertices are returned in world coordinates.
pub fn extract_mesh(field: &(impl DensityField + ?Sized), frame: &FieldFrame, cfg: &MarchConfig) -> Result<TriangleMesh> {
    if cfg.regions == 0 || cfg.cells_per_region == 0 || !(cfg.extent > 0.0 && cfg.extent < 2.0) {
        return Err(Error::InvalidInput(format!("extract_mesh: bad lattice {cfg:?}")));
    }
    let table = case_table();
    let h = cfg.spacing();
    let lattice = |i: usize| -cfg.extent + h * i as f64;
    let to_world = |y: DVec3| -> DVec3 { frame.to_world(uncontract(y).unwrap_or(y)) };

    let mut vertex_of: HashMap<(u32, u32, u32, u8), u32> = HashMap::new();
    let mut mesh = TriangleMesh::default();
    let c = cfg.cells_per_region;
    let m = c + 1;
    let mut vals = vec![0.0; m * m * m];
    for rz in 0..cfg.regions {
        for ry in 0..cfg.regions {
            for rx in 0..cfg.regions {
                let base = [rx * c, ry * c, rz * c];
                for k in 0..m {
                    for j in 0..m {
                        for i in 0..m {
                            let y = DVec3::new(lattice(base[0] + i), lattice(base[1] + j), lattice(base[2] + k));
                            let s = field.density(to_world(y));
                            vals[(k * m + j) * m + i] = if s.is_finite() { s } else { 0.0 };
                        }
                    }
                }
                for k in 0..c {
                    for j in 0..c {
                        for i in 0..c {
                            let corner = |q: usize| (i + (q & 1), j + ((q >> 1) & 1), k + ((q >> 2) & 1));
                            let mut mask = 0;
                            for q in 0..8 {
                                let (a, b, d) = corner(q);
                                if vals[(d * m + b) * m + a] >= cfg.threshold {
                                    mask |= 1 << q;
                                }
                            }
                            for tri in &table[mask] {
                                let mut idx = [0u32; 3];
                                for (slot, &e) in idx.iter_mut().zip(tri) {
                                    let (qa, qb) = EDGES[e as usize];
                                    let (a, b) = (corner(qa), corner(qb));
                                    let axis = e as usize / 4;
                                    let g = (base[0] + a.0, base[1] + a.1, base[2] + a.2);
                                    let key = (g.0 as u32, g.1 as u32, g.2 as u32, axis as u8);
                                    *slot = *vertex_of.entry(key).or_insert_with(|| {
                                        let fa = vals[(a.2 * m + a.1) * m + a.0];
                                        let fb = vals[(b.2 * m + b.1) * m + b.0];
                                        let t = ((cfg.threshold - fa) / (fb - fa)).clamp(0.0, 1.0);
                                        let mut y = DVec3::new(lattice(g.0), lattice(g.1), lattice(g.2));
                                        y[axis] += t * h;
                                        mesh.vertices.push(to_world(y));
                                        (mesh.vertices.len() - 1) as u32
                                    });
                                }
                                if idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2] {
                                    mesh.faces.push(idx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if mesh.faces.is_empty() {
        tracing::warn!(threshold = cfg.threshold, "extract_mesh: empty isosurface");
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_covers_simple_cases() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        assert_eq!(t[0b0000_0011].len(), 2);
        // complementary masks produce the same number of triangles for
        // unambiguous cases
        assert_eq!(t[0b0001_0111].len(), t[!0b0001_0111 & 0xff].len());
        // every case forms closed loops: each used edge appears in a loop
        for tris in t.iter() {
            assert!(tris.len() <= 12);
        }
    }

    #[test]
    fn single_corner_triangle_faces_away_from_inside() {
        let t = case_table();
        let tri = t[1][0];
        let mid = |e: u8| {
            let (a, b) = EDGES[e as usize];
            (corner_pos(a) + corner_pos(b)) * 0.5
        };
        let [p, q, r] = tri.map(mid);
        let n = (q - p).cross(r - p);
        assert!(n.dot(DVec3::ONE) > 0.0);
    }
}
