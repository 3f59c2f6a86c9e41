//! Indexed triangle mesh and small topology helpers.

use std::collections::HashMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{triangle_normal, Aabb};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<DVec3>,
    pub faces: Vec<[u32; 3]>,
    /// Per-vertex texture coordinates, present after unwrapping.
    pub uvs: Option<Vec<[f64; 2]>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<DVec3>, faces: Vec<[u32; 3]>) -> Self {
        Self { vertices, faces, uvs: None }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|i| *i >= n)) {
            return Err(Error::Validation(format!("mesh face {f:?} indexes past {n} vertices")));
        }
        if let Some(uv) = &self.uvs {
            if uv.len() != self.vertices.len() {
                return Err(Error::Validation(format!("mesh has {} uvs for {} vertices", uv.len(), n)));
            }
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("mesh has non-finite vertices".into()));
        }
        Ok(())
    }

    pub fn corners(&self, f: usize) -> [DVec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(f);
        0.5 * (b - a).cross(c - a).length()
    }

    pub fn face_normal(&self, f: usize) -> DVec3 {
        let [a, b, c] = self.corners(f);
        triangle_normal(a, b, c).normalize_or_zero()
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<DVec3> {
        let mut n = vec![DVec3::ZERO; self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            let w = (b - a).cross(c - a);
            for i in f {
                n[*i as usize] += w;
            }
        }
        n.into_iter().map(|v| v.try_normalize().unwrap_or(DVec3::Z)).collect()
    }

    /// Keeps the faces for which `keep` is true and drops unused vertices.
    pub fn retain_faces(&self, keep: impl Fn(usize) -> bool) -> TriangleMesh {
        let faces: Vec<[u32; 3]> = (0..self.faces.len()).filter(|f| keep(*f)).map(|f| self.faces[f]).collect();
        TriangleMesh { vertices: self.vertices.clone(), faces, uvs: self.uvs.clone() }.compact()
    }

    /// Removes unreferenced vertices, preserving order.
    pub fn compact(&self) -> TriangleMesh {
        let mut map = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut uvs = self.uvs.as_ref().map(|_| Vec::new());
        for f in &self.faces {
            for &i in f {
                if map[i as usize] == u32::MAX {
                    map[i as usize] = vertices.len() as u32;
                    vertices.push(self.vertices[i as usize]);
                    if let (Some(out), Some(src)) = (uvs.as_mut(), self.uvs.as_ref()) {
                        out.push(src[i as usize]);
                    }
                }
            }
        }
        let faces = self.faces.iter().map(|f| f.map(|i| map[i as usize])).collect();
        TriangleMesh { vertices, faces, uvs }
    }

    /// Undirected edge -> number of incident faces.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut m = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *m.entry(edge_key(f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        m
    }

    /// Connected components over shared vertices; returns a label per face.
    pub fn face_components(&self) -> (Vec<u32>, usize) {
        let mut uf = UnionFind::new(self.vertices.len());
        for f in &self.faces {
            uf.union(f[0] as usize, f[1] as usize);
            uf.union(f[0] as usize, f[2] as usize);
        }
        let mut ids = HashMap::new();
        let labels = self
            .faces
            .iter()
            .map(|f| {
                let r = uf.find(f[0] as usize);
                let n = ids.len() as u32;
                *ids.entry(r).or_insert(n)
            })
            .collect();
        (labels, ids.len())
    }
}

pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets; the smaller root index becomes the representative.
    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_and_components() {
        let v = vec![DVec3::ZERO, DVec3::X, DVec3::Y, DVec3::Z, DVec3::ONE * 5.0, DVec3::new(6.0, 5.0, 5.0), DVec3::new(5.0, 6.0, 5.0)];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3], [4, 5, 6]]);
        let (labels, n) = m.face_components();
        assert_eq!(n, 2);
        assert_eq!(labels, vec![0, 0, 1]);
        let kept = m.retain_faces(|f| labels[f] == 1);
        assert_eq!(kept.vertices.len(), 3);
        assert_eq!(kept.faces, vec![[0, 1, 2]]);
        assert_eq!(m.edge_counts()[&(0, 2)], 2);
    }
}
