//! Mesh clean-up: visibility pruning, floater removal, welding, remeshing.

use std::collections::HashMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::mesh::{edge_key, TriangleMesh, UnionFind};
use super::raster::visible_faces;
use crate::error::{Error, Result};
use crate::scene::CameraModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostConfig {
    /// Connected components with fewer faces are deleted.
    pub min_faces: usize,
    pub weld_eps: f64,
    pub max_edge: f64,
    pub min_edge: f64,
    /// Faces with an interior angle above this many degrees are dropped.
    pub sliver_angle_deg: f64,
    pub split_rounds: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self { min_faces: 32, weld_eps: 1e-6, max_edge: 0.15, min_edge: 2e-3, sliver_angle_deg: 175.0, split_rounds: 4 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PostReport {
    pub input_faces: usize,
    pub invisible_faces: usize,
    pub small_component_faces: usize,
    pub welded_vertices: usize,
    pub split_edges: usize,
    pub collapsed_edges: usize,
    pub dropped_slivers: usize,
}

pub fn postprocess_mesh(mesh: &TriangleMesh, cams: &[CameraModel], cfg: &PostConfig) -> Result<(TriangleMesh, PostReport)> {
    if mesh.is_empty() {
        return Err(Error::InvalidInput("postprocess_mesh: empty mesh".into()));
    }
    mesh.validate()?;
    let mut rep = PostReport { input_faces: mesh.faces.len(), ..Default::default() };
    let seen = visible_faces(mesh, cams);
    let mut m = mesh.retain_faces(|f| seen[f]);
    m.uvs = None;
    rep.invisible_faces = rep.input_faces - m.faces.len();
    if m.is_empty() {
        return Err(Error::Validation("no visible geometry".into()));
    }
    let before = m.faces.len();
    m = remove_small_components(&m, cfg.min_faces);
    rep.small_component_faces = before - m.faces.len();
    if m.is_empty() {
        return Err(Error::Validation("no visible geometry".into()));
    }
    let (w, n) = weld_vertices(&m, cfg.weld_eps);
    m = w;
    rep.welded_vertices = n;
    let (s, n) = split_long_edges(&m, cfg.max_edge, cfg.split_rounds);
    m = s;
    rep.split_edges = n;
    let (c, n) = collapse_short_edges(&m, cfg.min_edge);
    m = c;
    rep.collapsed_edges = n;
    let before = m.faces.len();
    m = drop_slivers(&m, cfg.sliver_angle_deg);
    rep.dropped_slivers = before - m.faces.len();
    if m.is_empty() {
        return Err(Error::Validation("no visible geometry".into()));
    }
    tracing::info!(?rep, faces = m.faces.len(), vertices = m.vertices.len(), "postprocess_mesh");
    Ok((m, rep))
}

pub fn remove_small_components(m: &TriangleMesh, min_faces: usize) -> TriangleMesh {
    let (labels, n) = m.face_components();
    let mut size = vec![0usize; n];
    for l in &labels {
        size[*l as usize] += 1;
    }
    m.retain_faces(|f| size[labels[f] as usize] >= min_faces)
}

/// Merges vertices closer than `eps` into the earliest one; returns the mesh
/// and the number of vertices removed.
pub fn weld_vertices(m: &TriangleMesh, eps: f64) -> (TriangleMesh, usize) {
    let cell = eps.max(1e-300);
    let key = |p: DVec3| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    let mut remap = vec![0u32; m.vertices.len()];
    let mut vertices: Vec<DVec3> = Vec::new();
    for (i, p) in m.vertices.iter().enumerate() {
        let k = key(*p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) {
                        for &j in list {
                            if vertices[j as usize] == *p || (vertices[j as usize] - *p).length() < eps {
                                found = Some(j);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        remap[i] = match found {
            Some(j) => j,
            None => {
                vertices.push(*p);
                let j = (vertices.len() - 1) as u32;
                grid.entry(k).or_default().push(j);
                j
            }
        };
    }
    let removed = m.vertices.len() - vertices.len();
    let faces = m
        .faces
        .iter()
        .map(|f| f.map(|i| remap[i as usize]))
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .collect();
    (TriangleMesh::new(vertices, faces).compact(), removed)
}

/// Conforming midpoint refinement of every edge longer than `max_edge`.
pub fn split_long_edges(m: &TriangleMesh, max_edge: f64, rounds: usize) -> (TriangleMesh, usize) {
    let mut cur = m.clone();
    let mut total = 0;
    for _ in 0..rounds {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &cur.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = edge_key(a, b);
                if !mid.contains_key(&e) && (cur.vertices[a as usize] - cur.vertices[b as usize]).length() > max_edge {
                    mid.insert(e, u32::MAX);
                }
            }
        }
        if mid.is_empty() {
            break;
        }
        let mut keys: Vec<(u32, u32)> = mid.keys().copied().collect();
        keys.sort_unstable();
        for e in keys {
            cur.vertices.push((cur.vertices[e.0 as usize] + cur.vertices[e.1 as usize]) * 0.5);
            mid.insert(e, (cur.vertices.len() - 1) as u32);
        }
        total += mid.len();
        let mut faces = Vec::with_capacity(cur.faces.len() * 2);
        for f in &cur.faces {
            let ms: [Option<u32>; 3] = [0, 1, 2].map(|k| mid.get(&edge_key(f[k], f[(k + 1) % 3])).copied());
            match ms.iter().filter(|x| x.is_some()).count() {
                0 => faces.push(*f),
                1 => {
                    let k = ms.iter().position(|x| x.is_some()).unwrap();
                    let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                    let m0 = ms[k].unwrap();
                    faces.push([a, m0, c]);
                    faces.push([m0, b, c]);
                }
                2 => {
                    let k = ms.iter().position(|x| x.is_none()).unwrap();
                    // unsplit edge is (v2, v0)
                    let (v0, v1, v2) = (f[(k + 1) % 3], f[(k + 2) % 3], f[k]);
                    let m01 = ms[(k + 1) % 3].unwrap();
                    let m12 = ms[(k + 2) % 3].unwrap();
                    faces.push([m01, v1, m12]);
                    faces.push([v0, m01, m12]);
                    faces.push([v0, m12, v2]);
                }
                _ => {
                    let (a, b, c) = (f[0], f[1], f[2]);
                    let (mab, mbc, mca) = (ms[0].unwrap(), ms[1].unwrap(), ms[2].unwrap());
                    faces.push([a, mab, mca]);
                    faces.push([mab, b, mbc]);
                    faces.push([mca, mbc, c]);
                    faces.push([mab, mbc, mca]);
                }
            }
        }
        cur.faces = faces;
    }
    (cur, total)
}

/// Collapses edges shorter than `min_edge` to their midpoints; each vertex
/// takes part in at most one collapse per call.
pub fn collapse_short_edges(m: &TriangleMesh, min_edge: f64) -> (TriangleMesh, usize) {
    let mut edges: Vec<(f64, u32, u32)> = Vec::new();
    for f in &m.faces {
        for k in 0..3 {
            let (a, b) = edge_key(f[k], f[(k + 1) % 3]);
            let l = (m.vertices[a as usize] - m.vertices[b as usize]).length();
            if l < min_edge {
                edges.push((l, a, b));
            }
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    edges.dedup_by(|x, y| (x.1, x.2) == (y.1, y.2));
    let mut used = vec![false; m.vertices.len()];
    let mut uf = UnionFind::new(m.vertices.len());
    let mut vertices = m.vertices.clone();
    let mut n = 0;
    for (_, a, b) in edges {
        if used[a as usize] || used[b as usize] {
            continue;
        }
        used[a as usize] = true;
        used[b as usize] = true;
        let p = (vertices[a as usize] + vertices[b as usize]) * 0.5;
        vertices[a as usize] = p;
        vertices[b as usize] = p;
        uf.union(a as usize, b as usize);
        n += 1;
    }
    let faces = m
        .faces
        .iter()
        .map(|f| f.map(|i| uf.find(i as usize) as u32))
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .collect();
    (TriangleMesh::new(vertices, faces).compact(), n)
}

pub fn max_angle_deg(a: DVec3, b: DVec3, c: DVec3) -> f64 {
    let ang = |p: DVec3, q: DVec3, r: DVec3| {
        let (u, v) = (q - p, r - p);
        u.angle_between(v).to_degrees()
    };
    ang(a, b, c).max(ang(b, c, a)).max(ang(c, a, b))
}

/// Drops zero-area faces and faces with an angle above `max_angle`.
pub fn drop_slivers(m: &TriangleMesh, max_angle: f64) -> TriangleMesh {
    m.retain_faces(|f| {
        let [a, b, c] = m.corners(f);
        let area2 = (b - a).cross(c - a).length();
        let scale = (b - a).length_squared().max((c - a).length_squared()).max(1e-300);
        area2 > 1e-12 * scale && max_angle_deg(a, b, c) <= max_angle
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> TriangleMesh {
        TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::X, DVec3::new(1.0, 1.0, 0.0), DVec3::Y],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    #[test]
    fn split_is_conforming() {
        let (m, n) = split_long_edges(&quad(), 0.8, 1);
        assert_eq!(n, 5);
        assert_eq!(m.faces.len(), 8);
        let area: f64 = (0..m.faces.len()).map(|f| m.face_area(f)).sum();
        assert!((area - 1.0).abs() < 1e-12);
        // no T-junctions: every interior edge has two faces
        let boundary = m.edge_counts().values().filter(|c| **c == 1).count();
        assert_eq!(boundary, 8);
        for f in 0..m.faces.len() {
            assert!(m.face_normal(f).z > 0.0);
        }
    }

    #[test]
    fn collapse_and_slivers() {
        let mut q = quad();
        q.vertices.push(DVec3::new(1.0, 0.0005, 0.0));
        q.faces.push([1, 4, 2]);
        let (m, n) = collapse_short_edges(&q, 1e-3);
        assert_eq!(n, 1);
        assert_eq!(m.faces.len(), 2);
        let s = TriangleMesh::new(vec![DVec3::ZERO, DVec3::X, DVec3::new(0.5, 1e-5, 0.0)], vec![[0, 1, 2]]);
        assert!(drop_slivers(&s, 175.0).is_empty());
    }
}
