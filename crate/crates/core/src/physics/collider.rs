//! Collider shapes, their construction from meshes and mass properties.

use glam::{DMat3, DQuat, DVec3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hull::{convex_hull, outer, ConvexHull, Polyhedron};
use crate::bake::mesh::{edge_key, TriangleMesh};
use crate::error::{Error, Result};
use crate::geom::Aabb;

pub const MAX_HULL_VERTICES: usize = 64;

/// Shapes in the owning body's frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Collider {
    Box { half: [f64; 3], center: [f64; 3], rotation: [f64; 4] },
    Sphere { center: [f64; 3], radius: f64 },
    ConvexSet { pieces: Vec<Vec<[f64; 3]>> },
    TriMesh { vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColliderKind {
    Box,
    Sphere,
    Convex,
    TriMesh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColliderConfig {
    /// Concavity tolerance of the convex decomposition, world units.
    pub eps: f64,
    /// Maximum number of convex pieces.
    pub k: usize,
    /// Face budget of the simplified triangle mesh.
    pub max_faces: usize,
    /// Largest distance any input vertex may move during simplification.
    pub max_error: f64,
}

impl Default for ColliderConfig {
    fn default() -> Self {
        Self { eps: 0.02, k: 16, max_faces: 2000, max_error: 0.01 }
    }
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi sweeps.
/// Columns of the returned matrix are unit eigenvectors.
pub fn symmetric_eigen(m: DMat3) -> (DVec3, DMat3) {
    let mut a = m.to_cols_array_2d();
    let mut v = DMat3::IDENTITY.to_cols_array_2d();
    for _ in 0..50 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[q][p].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[q][p]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[p][k], a[q][k]);
                a[p][k] = c * akp - s * akq;
                a[q][k] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[k][p], a[k][q]);
                a[k][p] = c * apk - s * aqk;
                a[k][q] = s * apk + c * aqk;
            }
            for k in 0..3 {
                let (vkp, vkq) = (v[p][k], v[q][k]);
                v[p][k] = c * vkp - s * vkq;
                v[q][k] = s * vkp + c * vkq;
            }
        }
    }
    (DVec3::new(a[0][0], a[1][1], a[2][2]), DMat3::from_cols_array_2d(&v))
}

/// Oriented box from the principal axes of `points`.
pub fn pca_box(points: &[DVec3]) -> Result<Collider> {
    if points.is_empty() {
        return Err(Error::InvalidInput("pca_box: no points".into()));
    }
    let n = points.len() as f64;
    let mean = points.iter().copied().sum::<DVec3>() / n;
    let mut cov = DMat3::ZERO;
    for p in points {
        cov += outer(*p - mean, *p - mean);
    }
    let (_, mut axes) = symmetric_eigen(cov * (1.0 / n));
    if axes.determinant() < 0.0 {
        axes.z_axis = -axes.z_axis;
    }
    let mut lo = DVec3::splat(f64::INFINITY);
    let mut hi = DVec3::splat(f64::NEG_INFINITY);
    for p in points {
        let l = axes.transpose() * *p;
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let half = ((hi - lo) * 0.5).max(DVec3::splat(1e-9));
    let center = axes * ((hi + lo) * 0.5);
    let q = DQuat::from_mat3(&axes).normalize();
    Ok(Collider::Box { half: half.to_array(), center: center.to_array(), rotation: q.to_array() })
}

fn sphere2(a: DVec3, b: DVec3) -> (DVec3, f64) {
    let c = (a + b) * 0.5;
    (c, (a - c).length())
}

fn sphere3(a: DVec3, b: DVec3, c: DVec3) -> (DVec3, f64) {
    let (ab, ac) = (b - a, c - a);
    let n = ab.cross(ac);
    let d = 2.0 * n.length_squared();
    if d < 1e-300 {
        let cands = [sphere2(a, b), sphere2(a, c), sphere2(b, c)];
        return *cands.iter().max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
    }
    let o = (n.cross(ab) * ac.length_squared() + ac.cross(n) * ab.length_squared()) / d;
    (a + o, o.length())
}

fn sphere4(a: DVec3, b: DVec3, c: DVec3, d: DVec3) -> (DVec3, f64) {
    let (u, v, w) = (b - a, c - a, d - a);
    let det = 2.0 * u.dot(v.cross(w));
    if det.abs() < 1e-300 {
        let cands = [sphere3(a, b, c), sphere3(a, b, d), sphere3(a, c, d), sphere3(b, c, d)];
        return *cands
            .iter()
            .filter(|(o, r)| [a, b, c, d].iter().all(|p| (*p - *o).length() <= r * (1.0 + 1e-9) + 1e-12))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap_or(&cands[0]);
    }
    let o = (v.cross(w) * u.length_squared() + w.cross(u) * v.length_squared() + u.cross(v) * w.length_squared()) / det;
    (a + o, o.length())
}

/// Minimal enclosing sphere (Welzl, iterative move-free form over a
/// seeded shuffle).
pub fn min_enclosing_sphere(points: &[DVec3], seed: u64) -> Result<(DVec3, f64)> {
    if points.is_empty() {
        return Err(Error::InvalidInput("min_enclosing_sphere: no points".into()));
    }
    let mut p = points.to_vec();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let inside = |s: (DVec3, f64), q: DVec3| (q - s.0).length() <= s.1 * (1.0 + 1e-12) + 1e-12;
    let mut s = (p[0], 0.0);
    for i in 1..p.len() {
        if inside(s, p[i]) {
            continue;
        }
        s = (p[i], 0.0);
        for j in 0..i {
            if inside(s, p[j]) {
                continue;
            }
            s = sphere2(p[i], p[j]);
            for k in 0..j {
                if inside(s, p[k]) {
                    continue;
                }
                s = sphere3(p[i], p[j], p[k]);
                for l in 0..k {
                    if !inside(s, p[l]) {
                        s = sphere4(p[i], p[j], p[k], p[l]);
                    }
                }
            }
        }
    }
    Ok(s)
}

/// Largest distance from a face centroid, along the face normal, to the
/// hull boundary. Faces on the hull score 0.
fn concavity(mesh: &TriangleMesh, faces: &[u32], hull: &ConvexHull) -> (f64, DVec3, DVec3) {
    let planes = hull.planes();
    let mut best = (0.0, DVec3::ZERO, DVec3::ZERO);
    for &f in faces {
        let [a, b, c] = mesh.corners(f as usize);
        let p = (a + b + c) / 3.0;
        let n = mesh.face_normal(f as usize);
        if n == DVec3::ZERO {
            continue;
        }
        let mut exit = f64::INFINITY;
        let mut depth = f64::INFINITY;
        for (pn, d) in &planes {
            let gap = d - pn.dot(p);
            depth = depth.min(gap);
            let rate = pn.dot(n);
            if rate > 1e-12 {
                exit = exit.min(gap / rate);
            }
        }
        let score = exit.min(1e300).max(depth).max(0.0);
        if score > best.0 || best.2 == DVec3::ZERO {
            best = (score, p, n);
        }
    }
    best
}

struct Piece {
    faces: Vec<u32>,
    hull: ConvexHull,
    concavity: f64,
    worst: DVec3,
    worst_normal: DVec3,
}

fn piece_points(mesh: &TriangleMesh, faces: &[u32]) -> Vec<DVec3> {
    let mut idx: Vec<u32> = faces.iter().flat_map(|f| mesh.faces[*f as usize]).collect();
    idx.sort_unstable();
    idx.dedup();
    idx.iter().map(|i| mesh.vertices[*i as usize]).collect()
}

fn make_piece(mesh: &TriangleMesh, faces: Vec<u32>) -> Option<Piece> {
    let pts = piece_points(mesh, &faces);
    let hull = convex_hull(&pts).ok()?;
    let (c, worst, worst_normal) = concavity(mesh, &faces, &hull);
    Some(Piece { faces, hull, concavity: c, worst, worst_normal })
}

fn principal_axes(points: &[DVec3]) -> DMat3 {
    let n = points.len() as f64;
    let mean = points.iter().copied().sum::<DVec3>() / n;
    let mut cov = DMat3::ZERO;
    for p in points {
        cov += outer(*p - mean, *p - mean);
    }
    symmetric_eigen(cov).1
}

fn split_piece(mesh: &TriangleMesh, piece: &Piece) -> Option<(Piece, Piece)> {
    let pts = piece_points(mesh, &piece.faces);
    let axes = principal_axes(&pts);
    let mut normals = vec![piece.worst_normal, axes.x_axis, axes.y_axis, axes.z_axis];
    let planes = piece.hull.planes();
    if let Some((n, _)) = planes.iter().min_by(|a, b| (a.1 - a.0.dot(piece.worst)).total_cmp(&(b.1 - b.0.dot(piece.worst)))) {
        normals.push(*n);
    }
    let mut best: Option<(f64, Piece, Piece)> = None;
    for n in normals {
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for &f in &piece.faces {
            let [a, b, c] = mesh.corners(f as usize);
            if ((a + b + c) / 3.0 - piece.worst).dot(n) < 0.0 {
                l.push(f);
            } else {
                r.push(f);
            }
        }
        if l.is_empty() || r.is_empty() {
            continue;
        }
        let (Some(pl), Some(pr)) = (make_piece(mesh, l), make_piece(mesh, r)) else { continue };
        let score = pl.concavity.max(pr.concavity);
        if best.as_ref().map_or(true, |b| score < b.0) {
            best = Some((score, pl, pr));
        }
    }
    best.map(|(_, a, b)| (a, b))
}

/// Approximate convex cover: the piece with the largest concavity is split
/// through its deepest face until every piece is within `eps` or `k`
/// pieces exist. Returns the hulls and whether the tolerance was met.
pub fn convex_decomposition(mesh: &TriangleMesh, eps: f64, k: usize) -> Result<(Vec<ConvexHull>, bool)> {
    if mesh.is_empty() {
        return Err(Error::InvalidInput("convex_decomposition: empty mesh".into()));
    }
    let root = make_piece(mesh, (0..mesh.faces.len() as u32).collect())
        .ok_or_else(|| Error::InvalidInput("convex_decomposition: mesh is flat".into()))?;
    let mut pieces = vec![root];
    let mut stuck = vec![false];
    while pieces.len() < k.max(1) {
        let Some(i) = (0..pieces.len()).filter(|i| !stuck[*i] && pieces[*i].concavity > eps).max_by(|a, b| pieces[*a].concavity.total_cmp(&pieces[*b].concavity))
        else {
            break;
        };
        match split_piece(mesh, &pieces[i]) {
            Some((a, b)) => {
                pieces[i] = a;
                pieces.push(b);
                stuck[i] = false;
                stuck.push(false);
            }
            None => stuck[i] = true,
        }
    }
    let ok = pieces.iter().all(|p| p.concavity <= eps);
    if !ok {
        tracing::warn!(pieces = pieces.len(), k, eps, "convex_decomposition: tolerance not met, returning best effort");
    }
    let hulls = pieces.iter().map(|p| p.hull.reduced(MAX_HULL_VERTICES)).collect::<Result<Vec<_>>>()?;
    Ok((hulls, ok))
}

/// Shortest-edge collapse to at most `max_faces` faces. Collapses that flip
/// a face, break the edge link condition, or move any input vertex farther
/// than `max_error` from its surviving vertex are skipped.
pub fn simplify_mesh(mesh: &TriangleMesh, max_faces: usize, max_error: f64) -> TriangleMesh {
    let mut verts = mesh.vertices.clone();
    let mut err = vec![0.0f64; verts.len()];
    let mut faces: Vec<Option<[u32; 3]>> = mesh.faces.iter().map(|f| Some(*f)).collect();
    let mut alive = mesh.faces.len();
    let mut vf: Vec<Vec<usize>> = vec![Vec::new(); verts.len()];
    for (i, f) in mesh.faces.iter().enumerate() {
        for v in f {
            vf[*v as usize].push(i);
        }
    }
    let mut parent: Vec<u32> = (0..verts.len() as u32).collect();
    let mut heap = std::collections::BinaryHeap::new();
    let key = |l: f64| std::cmp::Reverse(l.to_bits());
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = edge_key(f[k], f[(k + 1) % 3]);
            heap.push((key((verts[a as usize] - verts[b as usize]).length()), a, b));
        }
    }
    while alive > max_faces {
        let Some((std::cmp::Reverse(bits), a, b)) = heap.pop() else { break };
        if parent[a as usize] != a || parent[b as usize] != b {
            continue;
        }
        let len = (verts[a as usize] - verts[b as usize]).length();
        if len.to_bits() != bits {
            continue;
        }
        let fa: Vec<usize> = vf[a as usize].iter().copied().filter(|f| faces[*f].is_some()).collect();
        let fb: Vec<usize> = vf[b as usize].iter().copied().filter(|f| faces[*f].is_some()).collect();
        let shared: Vec<usize> = fa.iter().copied().filter(|f| fb.contains(f)).collect();
        if shared.is_empty() {
            continue;
        }
        let nbr = |fs: &[usize], me: u32| {
            let mut n: Vec<u32> = fs.iter().flat_map(|f| faces[*f].unwrap()).filter(|v| *v != me).collect();
            n.sort_unstable();
            n.dedup();
            n
        };
        let (na, nb) = (nbr(&fa, a), nbr(&fb, b));
        let common = na.iter().filter(|v| nb.contains(v) && **v != b).count();
        if common != shared.len() {
            continue;
        }
        // a collapse must leave every affected vertex on some face, or the
        // original points it stands for lose their surface
        let orphaned = |v: u32| vf[v as usize].iter().all(|f| faces[*f].is_none() || shared.contains(f));
        if fa.len() + fb.len() == 2 * shared.len() || shared.iter().any(|f| faces[*f].unwrap().iter().any(|v| *v != a && *v != b && orphaned(*v))) {
            continue;
        }
        let moved = err[a as usize].max(err[b as usize]) + 0.5 * len;
        if moved > max_error {
            continue;
        }
        let mid = (verts[a as usize] + verts[b as usize]) * 0.5;
        let flips = fa.iter().chain(&fb).filter(|f| !shared.contains(f)).any(|f| {
            let t = faces[*f].unwrap();
            let p = t.map(|i| verts[i as usize]);
            let q = t.map(|i| if i == a || i == b { mid } else { verts[i as usize] });
            let n0 = (p[1] - p[0]).cross(p[2] - p[0]);
            let n1 = (q[1] - q[0]).cross(q[2] - q[0]);
            n0.dot(n1) <= 0.0
        });
        if flips {
            continue;
        }
        verts[a as usize] = mid;
        err[a as usize] = moved;
        parent[b as usize] = a;
        for f in &shared {
            faces[*f] = None;
            alive -= 1;
        }
        for f in fb {
            if let Some(t) = faces[f].as_mut() {
                for v in t.iter_mut() {
                    if *v == b {
                        *v = a;
                    }
                }
                vf[a as usize].push(f);
            }
        }
        for f in vf[a as usize].clone() {
            if let Some(t) = faces[f] {
                for k in 0..3 {
                    let (x, y) = edge_key(t[k], t[(k + 1) % 3]);
                    heap.push((key((verts[x as usize] - verts[y as usize]).length()), x, y));
                }
            }
        }
    }
    if alive > max_faces {
        tracing::warn!(faces = alive, max_faces, max_error, "simplify_mesh: face budget not met within error bound");
    }
    TriangleMesh::new(verts, faces.into_iter().flatten().collect()).compact()
}

pub fn make_collider(mesh: &TriangleMesh, kind: ColliderKind, cfg: &ColliderConfig) -> Result<Collider> {
    if mesh.is_empty() {
        return Err(Error::InvalidInput("make_collider: empty mesh".into()));
    }
    let used = mesh.compact();
    match kind {
        ColliderKind::Box => pca_box(&used.vertices),
        ColliderKind::Sphere => {
            let (c, r) = min_enclosing_sphere(&used.vertices, 0)?;
            Ok(Collider::Sphere { center: c.to_array(), radius: r.max(1e-9) })
        }
        ColliderKind::Convex => {
            let (hulls, _) = convex_decomposition(&used, cfg.eps, cfg.k)?;
            Ok(Collider::ConvexSet { pieces: hulls.iter().map(|h| h.vertices.iter().map(|v| v.to_array()).collect()).collect() })
        }
        ColliderKind::TriMesh => {
            let s = simplify_mesh(&used, cfg.max_faces, cfg.max_error);
            Ok(Collider::TriMesh { vertices: s.vertices.iter().map(|v| v.to_array()).collect(), faces: s.faces })
        }
    }
}

/// Mass properties of a collider with total mass `mass`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassProperties {
    pub center: DVec3,
    /// About `center`, in the collider frame.
    pub inertia: DMat3,
}

/// World-space primitives of a collider placed at a pose.
#[derive(Clone, Debug)]
pub enum Primitive {
    Sphere { center: DVec3, radius: f64 },
    Poly(Polyhedron),
    Triangles { vertices: Vec<DVec3>, faces: Vec<[u32; 3]>, boxes: Vec<Aabb> },
}

impl Primitive {
    pub fn aabb(&self) -> Aabb {
        match self {
            Primitive::Sphere { center, radius } => Aabb::new(*center - DVec3::splat(*radius), *center + DVec3::splat(*radius)),
            Primitive::Poly(p) => p.aabb(),
            Primitive::Triangles { vertices, .. } => Aabb::from_points(vertices),
        }
    }
}

impl Collider {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        match self {
            Collider::Box { half, rotation, .. } => {
                if half.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
                    return bad(format!("box half extents must be positive: {half:?}"));
                }
                if rotation.iter().any(|r| !r.is_finite()) || (DQuat::from_array(*rotation).length() - 1.0).abs() > 1e-6 {
                    return bad("box rotation must be a unit quaternion".into());
                }
            }
            Collider::Sphere { radius, .. } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return bad(format!("sphere radius must be positive: {radius}"));
                }
            }
            Collider::ConvexSet { pieces } => {
                if pieces.is_empty() {
                    return bad("convex set has no pieces".into());
                }
                for (i, p) in pieces.iter().enumerate() {
                    if p.len() > MAX_HULL_VERTICES {
                        return bad(format!("convex piece {i} has {} vertices (max {MAX_HULL_VERTICES})", p.len()));
                    }
                    let pts: Vec<DVec3> = p.iter().map(|v| DVec3::from_array(*v)).collect();
                    let h = convex_hull(&pts).map_err(|e| Error::Validation(format!("convex piece {i}: {e}")))?;
                    let tol = 1e-6 * Aabb::from_points(&pts).diagonal().max(1.0);
                    if !pts.iter().all(|v| h.contains(*v, tol)) {
                        return bad(format!("convex piece {i} is not convex"));
                    }
                }
            }
            Collider::TriMesh { vertices, faces } => {
                let n = vertices.len() as u32;
                if faces.is_empty() || faces.iter().any(|f| f.iter().any(|i| *i >= n)) {
                    return bad("trimesh faces empty or out of range".into());
                }
            }
        }
        Ok(())
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Collider::Box { .. } => "box",
            Collider::Sphere { .. } => "sphere",
            Collider::ConvexSet { .. } => "convex_set",
            Collider::TriMesh { .. } => "tri_mesh",
        }
    }

    /// Polyhedra of the convex pieces in the collider frame.
    pub fn local_polyhedra(&self) -> Result<Vec<Polyhedron>> {
        match self {
            Collider::Box { half, center, rotation } => {
                Ok(vec![Polyhedron::cuboid(DVec3::from_array(*half), DMat3::from_quat(DQuat::from_array(*rotation)), DVec3::from_array(*center))])
            }
            Collider::ConvexSet { pieces } => pieces
                .iter()
                .map(|p| {
                    let pts: Vec<DVec3> = p.iter().map(|v| DVec3::from_array(*v)).collect();
                    Ok(Polyhedron::from_hull(&convex_hull(&pts)?))
                })
                .collect(),
            _ => Ok(Vec::new()),
        }
    }

    /// Uniform-density mass properties for total mass `mass`.
    pub fn mass_properties(&self, mass: f64) -> Result<MassProperties> {
        match self {
            Collider::Box { half, center, rotation } => {
                let e = DVec3::from_array(*half) * 2.0;
                let d = DVec3::new(e.y * e.y + e.z * e.z, e.x * e.x + e.z * e.z, e.x * e.x + e.y * e.y) * (mass / 12.0);
                let r = DMat3::from_quat(DQuat::from_array(*rotation));
                Ok(MassProperties { center: DVec3::from_array(*center), inertia: r * DMat3::from_diagonal(d) * r.transpose() })
            }
            Collider::Sphere { center, radius } => Ok(MassProperties {
                center: DVec3::from_array(*center),
                inertia: DMat3::from_diagonal(DVec3::splat(0.4 * mass * radius * radius)),
            }),
            Collider::ConvexSet { pieces } => {
                let mut parts = Vec::new();
                for p in pieces {
                    let pts: Vec<DVec3> = p.iter().map(|v| DVec3::from_array(*v)).collect();
                    parts.push(convex_hull(&pts)?.mass_properties());
                }
                let vol: f64 = parts.iter().map(|p| p.0).sum();
                if !(vol > 0.0) {
                    return Err(Error::Validation("convex set has zero volume".into()));
                }
                let rho = mass / vol;
                let com = parts.iter().map(|p| p.1 * p.0).sum::<DVec3>() / vol;
                let mut inertia = DMat3::ZERO;
                for (v, c, i) in parts {
                    let r = c - com;
                    let shift = DMat3::from_diagonal(DVec3::splat(r.length_squared())) - outer(r, r);
                    inertia += (i + shift * v) * rho;
                }
                Ok(MassProperties { center: com, inertia })
            }
            Collider::TriMesh { .. } => Err(Error::Validation("trimesh colliders are static only".into())),
        }
    }

    /// Same shape with every coordinate shifted by `-offset`.
    pub fn recentered(&self, offset: DVec3) -> Collider {
        let sh = |v: &[f64; 3]| (DVec3::from_array(*v) - offset).to_array();
        match self {
            Collider::Box { half, center, rotation } => Collider::Box { half: *half, center: sh(center), rotation: *rotation },
            Collider::Sphere { center, radius } => Collider::Sphere { center: sh(center), radius: *radius },
            Collider::ConvexSet { pieces } => Collider::ConvexSet { pieces: pieces.iter().map(|p| p.iter().map(sh).collect()).collect() },
            Collider::TriMesh { vertices, faces } => Collider::TriMesh { vertices: vertices.iter().map(sh).collect(), faces: faces.clone() },
        }
    }

    /// True when `p` (collider frame) is inside or within `tol` of the shape.
    /// Triangle meshes test the distance to the surface instead.
    pub fn contains(&self, p: DVec3, tol: f64) -> bool {
        match self {
            Collider::Box { half, center, rotation } => {
                let r = DMat3::from_quat(DQuat::from_array(*rotation));
                let l = r.transpose() * (p - DVec3::from_array(*center));
                (l.abs() - DVec3::from_array(*half)).max_element() <= tol
            }
            Collider::Sphere { center, radius } => (p - DVec3::from_array(*center)).length() <= radius + tol,
            Collider::ConvexSet { pieces } => pieces.iter().any(|piece| {
                let pts: Vec<DVec3> = piece.iter().map(|v| DVec3::from_array(*v)).collect();
                convex_hull(&pts).map(|h| h.contains(p, tol)).unwrap_or(false)
            }),
            Collider::TriMesh { vertices, faces } => faces.iter().any(|f| {
                let [a, b, c] = f.map(|i| DVec3::from_array(vertices[i as usize]));
                (crate::geom::closest_point_on_triangle(p, a, b, c).0 - p).length() <= tol
            }),
        }
    }

    pub fn primitives(&self, polys: &[Polyhedron], rot: DMat3, pos: DVec3) -> Vec<Primitive> {
        match self {
            Collider::Sphere { center, radius } => vec![Primitive::Sphere { center: rot * DVec3::from_array(*center) + pos, radius: *radius }],
            Collider::Box { .. } | Collider::ConvexSet { .. } => polys.iter().map(|p| Primitive::Poly(p.transformed(rot, pos))).collect(),
            Collider::TriMesh { vertices, faces } => {
                let v: Vec<DVec3> = vertices.iter().map(|p| rot * DVec3::from_array(*p) + pos).collect();
                let boxes = faces.iter().map(|f| Aabb::from_points(&f.map(|i| v[i as usize]))).collect();
                vec![Primitive::Triangles { vertices: v, faces: faces.clone(), boxes }]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_eigenpairs() {
        let r = DMat3::from_quat(DQuat::from_euler(glam::EulerRot::XYZ, 0.3, -0.7, 1.1));
        let m = r * DMat3::from_diagonal(DVec3::new(3.0, 1.0, 0.5)) * r.transpose();
        let (vals, vecs) = symmetric_eigen(m);
        for i in 0..3 {
            let v = vecs.col(i);
            assert!((m * v - v * vals[i]).length() < 1e-10);
        }
    }

    #[test]
    fn circumspheres() {
        let (c, r) = sphere4(DVec3::X, -DVec3::X, DVec3::Y, DVec3::Z);
        assert!(c.length() < 1e-12 && (r - 1.0).abs() < 1e-12);
        let (c, r) = sphere3(DVec3::X, -DVec3::X, DVec3::Y);
        assert!(c.length() < 1e-12 && (r - 1.0).abs() < 1e-12);
    }
}
