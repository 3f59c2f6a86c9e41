//! 3D convex hulls (quickhull with conflict lists) and the polyhedron view
//! used by the narrowphase.

use std::collections::HashMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::bake::mesh::UnionFind;
use crate::error::{Error, Result};
use crate::geom::Aabb;

/// Hull with outward, counter-clockwise triangles over its own vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexHull {
    pub vertices: Vec<DVec3>,
    pub faces: Vec<[u32; 3]>,
}

struct HullFace {
    v: [usize; 3],
    normal: DVec3,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl HullFace {
    fn new(pts: &[DVec3], v: [usize; 3]) -> Self {
        let n = (pts[v[1]] - pts[v[0]]).cross(pts[v[2]] - pts[v[0]]).normalize_or_zero();
        Self { v, normal: n, offset: n.dot(pts[v[0]]), outside: Vec::new(), alive: true }
    }

    fn dist(&self, p: DVec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn farthest(pts: &[DVec3], score: impl Fn(DVec3) -> f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in pts.iter().enumerate() {
        let s = score(*p);
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

/// Convex hull of `points`. Points within a scale-relative tolerance of a
/// face count as inside. Fails on fewer than four non-coplanar points.
pub fn convex_hull(points: &[DVec3]) -> Result<ConvexHull> {
    if points.len() < 4 || points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(format!("convex_hull: need 4 finite points, got {}", points.len())));
    }
    let scale = Aabb::from_points(points).diagonal().max(1e-300);
    let eps = 1e-10 * scale;
    let pts = points;

    let (i0, _) = farthest(pts, |p| -p.x);
    let (i1, d1) = farthest(pts, |p| (p - pts[i0]).length());
    if d1 <= eps {
        return Err(Error::InvalidInput("convex_hull: points coincide".into()));
    }
    let axis = (pts[i1] - pts[i0]) / d1;
    let (i2, d2) = farthest(pts, |p| {
        let q = p - pts[i0];
        (q - axis * q.dot(axis)).length()
    });
    if d2 <= eps {
        return Err(Error::InvalidInput("convex_hull: points are collinear".into()));
    }
    let n = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalize();
    let (i3, d3) = farthest(pts, |p| (p - pts[i0]).dot(n).abs());
    if d3 <= eps {
        return Err(Error::InvalidInput("convex_hull: points are coplanar".into()));
    }
    let inner = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;

    let mut faces: Vec<HullFace> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    let add_face = |faces: &mut Vec<HullFace>, edges: &mut HashMap<(usize, usize), usize>, mut v: [usize; 3]| {
        let mut f = HullFace::new(pts, v);
        if f.dist(inner) > 0.0 {
            v.swap(1, 2);
            f = HullFace::new(pts, v);
        }
        let id = faces.len();
        for k in 0..3 {
            edges.insert((v[k], v[(k + 1) % 3]), id);
        }
        faces.push(f);
        id
    };
    for v in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        add_face(&mut faces, &mut edges, v);
    }
    let seeds = [i0, i1, i2, i3];
    for (i, p) in pts.iter().enumerate() {
        if seeds.contains(&i) {
            continue;
        }
        if let Some(f) = faces.iter_mut().find(|f| f.dist(*p) > eps) {
            f.outside.push(i);
        }
    }

    let mut fi = 0;
    while fi < faces.len() {
        if !faces[fi].alive || faces[fi].outside.is_empty() {
            fi += 1;
            continue;
        }
        let apex = {
            let f = &faces[fi];
            *f.outside.iter().max_by(|a, b| f.dist(pts[**a]).total_cmp(&f.dist(pts[**b])).then(b.cmp(a))).unwrap()
        };
        let p = pts[apex];
        // Visible set by flood fill from the seed face.
        let mut visible = vec![fi];
        let mut is_visible: HashMap<usize, bool> = HashMap::from([(fi, true)]);
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k];
            k += 1;
            let v = faces[f].v;
            for e in 0..3 {
                let nb = edges[&(v[(e + 1) % 3], v[e])];
                if let std::collections::hash_map::Entry::Vacant(slot) = is_visible.entry(nb) {
                    let vis = faces[nb].dist(p) > eps;
                    slot.insert(vis);
                    if vis {
                        visible.push(nb);
                    }
                }
            }
        }
        let mut horizon = Vec::new();
        for &f in &visible {
            let v = faces[f].v;
            for e in 0..3 {
                let (a, b) = (v[e], v[(e + 1) % 3]);
                let nb = edges[&(b, a)];
                if !is_visible[&nb] {
                    horizon.push((a, b));
                }
            }
        }
        let mut orphans = Vec::new();
        for &f in &visible {
            faces[f].alive = false;
            orphans.append(&mut faces[f].outside);
            let v = faces[f].v;
            for e in 0..3 {
                edges.remove(&(v[e], v[(e + 1) % 3]));
            }
        }
        let first_new = faces.len();
        for (a, b) in horizon {
            let id = faces.len();
            let f = HullFace::new(pts, [a, b, apex]);
            for (x, y) in [(a, b), (b, apex), (apex, a)] {
                edges.insert((x, y), id);
            }
            faces.push(f);
        }
        orphans.sort_unstable();
        for i in orphans {
            if i == apex {
                continue;
            }
            if let Some(f) = faces[first_new..].iter_mut().find(|f| f.dist(pts[i]) > eps) {
                f.outside.push(i);
            }
        }
    }

    let mut map: HashMap<usize, u32> = HashMap::new();
    let mut out = ConvexHull { vertices: Vec::new(), faces: Vec::new() };
    for f in faces.iter().filter(|f| f.alive) {
        let mut t = [0u32; 3];
        for k in 0..3 {
            t[k] = *map.entry(f.v[k]).or_insert_with(|| {
                out.vertices.push(pts[f.v[k]]);
                (out.vertices.len() - 1) as u32
            });
        }
        out.faces.push(t);
    }
    Ok(out)
}

impl ConvexHull {
    pub fn planes(&self) -> Vec<(DVec3, f64)> {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                let n = (b - a).cross(c - a).normalize_or_zero();
                (n, n.dot(a))
            })
            .collect()
    }

    /// Largest signed plane distance; `<= 0` inside.
    pub fn signed_distance_bound(&self, p: DVec3) -> f64 {
        self.planes().iter().map(|(n, d)| n.dot(p) - d).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: DVec3, tol: f64) -> bool {
        self.signed_distance_bound(p) <= tol
    }

    pub fn centroid(&self) -> DVec3 {
        self.vertices.iter().copied().sum::<DVec3>() / self.vertices.len().max(1) as f64
    }

    /// Volume, center of mass and inertia tensor about the center of mass
    /// for unit density.
    pub fn mass_properties(&self) -> (f64, DVec3, glam::DMat3) {
        let o = self.centroid();
        let mut vol = 0.0;
        let mut com = DVec3::ZERO;
        // Second moments \int x_i x_j about `o`.
        let mut c = [[0.0; 3]; 3];
        for f in &self.faces {
            let [a, b, d] = f.map(|i| self.vertices[i as usize] - o);
            let v = a.dot(b.cross(d)) / 6.0;
            vol += v;
            com += v * (a + b + d) / 4.0;
            let s = [a, b, d];
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for p in &s {
                        for q in &s {
                            acc += p[i] * q[j];
                        }
                    }
                    for p in &s {
                        acc += p[i] * p[j];
                    }
                    c[i][j] += v * acc / 20.0;
                }
            }
        }
        let com_local = if vol.abs() > 0.0 { com / vol } else { DVec3::ZERO };
        let tr = c[0][0] + c[1][1] + c[2][2];
        let mut inertia = glam::DMat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                let val = if i == j { tr - c[i][j] } else { -c[i][j] };
                inertia.col_mut(j)[i] = val;
            }
        }
        // Shift from `o` to the center of mass.
        let r = com_local;
        let shift = glam::DMat3::from_diagonal(DVec3::splat(r.length_squared())) - outer(r, r);
        (vol, o + com_local, inertia - shift * vol)
    }

    /// At most `max_vertices` vertices: support points along a fixed set of
    /// directions, scaled about their centroid until every original vertex
    /// is inside.
    pub fn reduced(&self, max_vertices: usize) -> Result<ConvexHull> {
        if self.vertices.len() <= max_vertices {
            return Ok(self.clone());
        }
        let dirs = fibonacci_sphere(4 * max_vertices);
        let mut chosen: Vec<usize> = Vec::new();
        for d in &dirs {
            if chosen.len() == max_vertices {
                break;
            }
            let (i, _) = farthest(&self.vertices, |p| p.dot(*d));
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        let pts: Vec<DVec3> = chosen.iter().map(|i| self.vertices[*i]).collect();
        let small = convex_hull(&pts)?;
        let c = small.centroid();
        let planes = small.planes();
        let mut s: f64 = 1.0;
        for p in &self.vertices {
            for (n, d) in &planes {
                let denom = d - n.dot(c);
                if denom > 1e-300 {
                    s = s.max(n.dot(*p - c) / denom);
                }
            }
        }
        let s = s * (1.0 + 1e-12);
        Ok(ConvexHull { vertices: small.vertices.iter().map(|v| c + (*v - c) * s).collect(), faces: small.faces })
    }
}

pub fn outer(a: DVec3, b: DVec3) -> glam::DMat3 {
    glam::DMat3::from_cols(a * b.x, a * b.y, a * b.z)
}

pub fn fibonacci_sphere(n: usize) -> Vec<DVec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            DVec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

/// Convex polyhedron with coplanar triangles merged into polygons.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    pub vertices: Vec<DVec3>,
    /// Counter-clockwise seen from outside.
    pub faces: Vec<Vec<usize>>,
    pub normals: Vec<DVec3>,
    /// Undirected edges with the two adjacent face indices.
    pub edges: Vec<(usize, usize, usize, usize)>,
    pub centroid: DVec3,
}

impl Polyhedron {
    pub fn from_hull(h: &ConvexHull) -> Polyhedron {
        let planes = h.planes();
        let nf = h.faces.len();
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for (f, t) in h.faces.iter().enumerate() {
            for k in 0..3 {
                directed.insert((t[k], t[(k + 1) % 3]), f);
            }
        }
        let scale = Aabb::from_points(&h.vertices).diagonal().max(1e-300);
        let mut uf = UnionFind::new(nf);
        for (f, t) in h.faces.iter().enumerate() {
            for k in 0..3 {
                if let Some(&g) = directed.get(&(t[(k + 1) % 3], t[k])) {
                    let ((n1, d1), (n2, d2)) = (planes[f], planes[g]);
                    if n1.dot(n2) > 1.0 - 1e-9 && (d1 - d2).abs() < 1e-9 * scale {
                        uf.union(f, g);
                    }
                }
            }
        }
        let mut group_of = vec![usize::MAX; nf];
        let mut groups: Vec<usize> = Vec::new();
        for f in 0..nf {
            let r = uf.find(f);
            if group_of[r] == usize::MAX {
                group_of[r] = groups.len();
                groups.push(r);
            }
            group_of[f] = group_of[r];
        }
        let ng = groups.len();
        // Boundary loops per group.
        let mut next: Vec<HashMap<usize, usize>> = vec![HashMap::new(); ng];
        let mut normals = vec![DVec3::ZERO; ng];
        for (f, t) in h.faces.iter().enumerate() {
            let g = group_of[f];
            normals[g] += planes[f].0;
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let twin = directed.get(&(b, a)).copied();
                if twin.map_or(true, |o| group_of[o] != g) {
                    next[g].insert(a as usize, b as usize);
                }
            }
        }
        let mut faces = Vec::with_capacity(ng);
        for g in 0..ng {
            let start = *next[g].keys().min().unwrap();
            let mut poly = vec![start];
            let mut cur = next[g][&start];
            while cur != start && poly.len() <= next[g].len() {
                poly.push(cur);
                cur = next[g][&cur];
            }
            faces.push(poly);
            normals[g] = normals[g].normalize_or_zero();
        }
        let mut edges = Vec::new();
        let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
        for (g, poly) in faces.iter().enumerate() {
            for k in 0..poly.len() {
                let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                let key = (a.min(b), a.max(b));
                if seen.insert(key, ()).is_none() {
                    let other = directed.get(&(b as u32, a as u32)).map(|f| group_of[*f]).unwrap_or(g);
                    edges.push((a, b, g, other));
                }
            }
        }
        Polyhedron { vertices: h.vertices.clone(), faces, normals, edges, centroid: h.centroid() }
    }

    /// Box with the given half extents, rotation (columns = axes) and center.
    pub fn cuboid(half: DVec3, axes: glam::DMat3, center: DVec3) -> Polyhedron {
        let mut vertices = Vec::with_capacity(8);
        for q in 0..8 {
            let s = DVec3::new(if q & 1 == 0 { -1.0 } else { 1.0 }, if q & 2 == 0 { -1.0 } else { 1.0 }, if q & 4 == 0 { -1.0 } else { 1.0 });
            vertices.push(center + axes * (s * half));
        }
        // Corner index bits: x = 1, y = 2, z = 4.
        let faces: Vec<Vec<usize>> = vec![
            vec![0, 4, 6, 2], // -x
            vec![1, 3, 7, 5], // +x
            vec![0, 1, 5, 4], // -y
            vec![2, 6, 7, 3], // +y
            vec![0, 2, 3, 1], // -z
            vec![4, 5, 7, 6], // +z
        ];
        let normals = vec![-axes.x_axis, axes.x_axis, -axes.y_axis, axes.y_axis, -axes.z_axis, axes.z_axis];
        let mut edges = Vec::new();
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (g, poly) in faces.iter().enumerate() {
            for k in 0..4 {
                owner.insert((poly[k], poly[(k + 1) % 4]), g);
            }
        }
        for (g, poly) in faces.iter().enumerate() {
            for k in 0..4 {
                let (a, b) = (poly[k], poly[(k + 1) % 4]);
                if a < b {
                    edges.push((a, b, g, owner[&(b, a)]));
                }
            }
        }
        Polyhedron { vertices, faces, normals, edges, centroid: center }
    }

    /// Two-sided triangle.
    pub fn triangle(a: DVec3, b: DVec3, c: DVec3) -> Polyhedron {
        let n = (b - a).cross(c - a).normalize_or_zero();
        Polyhedron {
            vertices: vec![a, b, c],
            faces: vec![vec![0, 1, 2], vec![0, 2, 1]],
            normals: vec![n, -n],
            edges: vec![(0, 1, 0, 1), (1, 2, 0, 1), (2, 0, 0, 1)],
            centroid: (a + b + c) / 3.0,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.vertices.len() == 3
    }

    pub fn transformed(&self, rot: glam::DMat3, pos: DVec3) -> Polyhedron {
        Polyhedron {
            vertices: self.vertices.iter().map(|v| rot * *v + pos).collect(),
            faces: self.faces.clone(),
            normals: self.normals.iter().map(|n| rot * *n).collect(),
            edges: self.edges.clone(),
            centroid: rot * self.centroid + pos,
        }
    }

    pub fn support(&self, d: DVec3) -> (usize, f64) {
        farthest(&self.vertices, |p| p.dot(d))
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn plane_offset(&self, f: usize) -> f64 {
        self.normals[f].dot(self.vertices[self.faces[f][0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_points() -> Vec<DVec3> {
        let mut p = Vec::new();
        for q in 0..8 {
            p.push(DVec3::new((q & 1) as f64, ((q >> 1) & 1) as f64, ((q >> 2) & 1) as f64));
        }
        p.push(DVec3::splat(0.5));
        p.push(DVec3::new(0.5, 0.5, 1.0));
        p
    }

    #[test]
    fn cube_hull_and_polyhedron() {
        let h = convex_hull(&cube_points()).unwrap();
        assert_eq!(h.vertices.len(), 8);
        assert_eq!(h.faces.len(), 12);
        let (vol, com, inertia) = h.mass_properties();
        assert!((vol - 1.0).abs() < 1e-12);
        assert!((com - DVec3::splat(0.5)).length() < 1e-12);
        for i in 0..3 {
            assert!((inertia.col(i)[i] - 1.0 / 6.0).abs() < 1e-12);
        }
        let p = Polyhedron::from_hull(&h);
        assert_eq!(p.faces.len(), 6);
        assert!(p.faces.iter().all(|f| f.len() == 4));
        assert_eq!(p.edges.len(), 12);
        for (f, n) in p.normals.iter().enumerate() {
            let d = p.plane_offset(f);
            assert!(p.vertices.iter().all(|v| n.dot(*v) <= d + 1e-12));
        }
    }

    #[test]
    fn reduced_hull_contains_original() {
        let pts = fibonacci_sphere(500);
        let h = convex_hull(&pts).unwrap();
        assert!(h.vertices.len() > 64);
        let r = h.reduced(64).unwrap();
        assert!(r.vertices.len() <= 64);
        assert!(pts.iter().all(|p| r.contains(*p, 1e-9)));
    }

    #[test]
    fn cuboid_faces_point_outward() {
        let p = Polyhedron::cuboid(DVec3::new(1.0, 2.0, 3.0), glam::DMat3::IDENTITY, DVec3::ZERO);
        for (f, poly) in p.faces.iter().enumerate() {
            let [a, b, c] = [poly[0], poly[1], poly[2]].map(|i| p.vertices[i]);
            assert!((b - a).cross(c - a).normalize().dot(p.normals[f]) > 0.999);
        }
    }
}
