//! Narrowphase: contact points between world-space primitives.

use glam::DVec3;

use super::collider::Primitive;
use super::hull::Polyhedron;
use crate::geom::closest_point_on_triangle;

/// Contact on the pair `(a, b)`; `normal` points from `a` to `b` and
/// `separation` is negative when penetrating.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPoint {
    pub point: DVec3,
    pub normal: DVec3,
    pub separation: f64,
}

fn flip(c: &mut [ContactPoint]) {
    for p in c {
        p.normal = -p.normal;
    }
}

pub fn sphere_sphere(ca: DVec3, ra: f64, cb: DVec3, rb: f64, margin: f64) -> Option<ContactPoint> {
    let d = cb - ca;
    let len = d.length();
    let sep = len - ra - rb;
    if sep > margin {
        return None;
    }
    let n = if len > 1e-12 { d / len } else { DVec3::Z };
    Some(ContactPoint { point: ca + n * (ra + 0.5 * sep), normal: n, separation: sep })
}

/// Sphere `a` against a solid convex polyhedron `b`.
pub fn sphere_poly(c: DVec3, r: f64, poly: &Polyhedron, margin: f64) -> Option<ContactPoint> {
    if poly.is_flat() {
        let [a, b, d] = [0, 1, 2].map(|i| poly.vertices[i]);
        return sphere_triangle(c, r, a, b, d, margin);
    }
    let mut best_face = (f64::NEG_INFINITY, 0);
    for f in 0..poly.faces.len() {
        let d = poly.normals[f].dot(c) - poly.plane_offset(f);
        if d > best_face.0 {
            best_face = (d, f);
        }
    }
    if best_face.0 <= 0.0 {
        // Center inside: push out through the nearest face.
        let n = poly.normals[best_face.1];
        let sep = best_face.0 - r;
        return Some(ContactPoint { point: c - n * (0.5 * (r + best_face.0)), normal: -n, separation: sep });
    }
    let mut best: Option<(f64, DVec3)> = None;
    for f in &poly.faces {
        for k in 1..f.len() - 1 {
            let (q, _) = closest_point_on_triangle(c, poly.vertices[f[0]], poly.vertices[f[k]], poly.vertices[f[k + 1]]);
            let d = (q - c).length();
            if best.map_or(true, |b| d < b.0) {
                best = Some((d, q));
            }
        }
    }
    let (d, q) = best?;
    let sep = d - r;
    if sep > margin {
        return None;
    }
    let n = if d > 1e-12 { (q - c) / d } else { -poly.normals[best_face.1] };
    Some(ContactPoint { point: q - n * (0.5 * sep), normal: n, separation: sep })
}

/// Sphere against a two-sided triangle.
pub fn sphere_triangle(c: DVec3, r: f64, a: DVec3, b: DVec3, d: DVec3, margin: f64) -> Option<ContactPoint> {
    let (q, _) = closest_point_on_triangle(c, a, b, d);
    let dist = (q - c).length();
    let sep = dist - r;
    if sep > margin {
        return None;
    }
    let n = if dist > 1e-12 {
        (q - c) / dist
    } else {
        let fn_ = (b - a).cross(d - a).normalize_or_zero();
        -fn_
    };
    Some(ContactPoint { point: q - n * (0.5 * sep), normal: n, separation: sep })
}

fn face_query(a: &Polyhedron, b: &Polyhedron) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for f in 0..a.faces.len() {
        let n = a.normals[f];
        let (_, s) = b.support(-n);
        let sep = -s - a.plane_offset(f);
        if sep > best.0 {
            best = (sep, f);
        }
    }
    best
}

fn is_minkowski_face(a: DVec3, b: DVec3, c: DVec3, d: DVec3) -> bool {
    let bxa = b.cross(a);
    let dxc = d.cross(c);
    let cba = c.dot(bxa);
    let dba = d.dot(bxa);
    let adc = a.dot(dxc);
    let bdc = b.dot(dxc);
    cba * dba < 0.0 && adc * bdc < 0.0 && cba * bdc > 0.0
}

struct EdgeQuery {
    sep: f64,
    axis: DVec3,
    ea: (usize, usize),
    eb: (usize, usize),
}

fn edge_query(a: &Polyhedron, b: &Polyhedron) -> Option<EdgeQuery> {
    let mut best: Option<EdgeQuery> = None;
    let gauss = !a.is_flat() && !b.is_flat();
    for &(a0, a1, fa0, fa1) in &a.edges {
        let (pa, qa) = (a.vertices[a0], a.vertices[a1]);
        let ua = qa - pa;
        for &(b0, b1, fb0, fb1) in &b.edges {
            let (pb, qb) = (b.vertices[b0], b.vertices[b1]);
            let ub = qb - pb;
            if gauss && !is_minkowski_face(a.normals[fa0], a.normals[fa1], -b.normals[fb0], -b.normals[fb1]) {
                continue;
            }
            let c = ua.cross(ub);
            let len = c.length();
            if len < 1e-9 * ua.length() * ub.length() {
                continue;
            }
            let mut axis = c / len;
            if axis.dot(pa - a.centroid) < 0.0 {
                axis = -axis;
            }
            let sep = if gauss {
                axis.dot(pb - pa)
            } else {
                let (_, smin) = b.support(-axis);
                let (_, smax) = a.support(axis);
                -smin - smax
            };
            if best.as_ref().map_or(true, |q| sep > q.sep) {
                best = Some(EdgeQuery { sep, axis, ea: (a0, a1), eb: (b0, b1) });
            }
        }
    }
    best
}

fn closest_between_lines(p1: DVec3, q1: DVec3, p2: DVec3, q2: DVec3) -> (DVec3, DVec3) {
    let (d1, d2, r) = (q1 - p1, q2 - p2, p1 - p2);
    let (a, e, f) = (d1.dot(d1), d2.dot(d2), d2.dot(r));
    let c = d1.dot(r);
    let b = d1.dot(d2);
    let denom = a * e - b * b;
    let s = if denom.abs() > 1e-300 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let t = ((b * s + f) / e).clamp(0.0, 1.0);
    let s = if a > 0.0 { ((b * t - c) / a).clamp(0.0, 1.0) } else { 0.0 };
    (p1 + d1 * s, p2 + d2 * t)
}

fn clip_polygon(poly: Vec<DVec3>, n: DVec3, d: f64) -> Vec<DVec3> {
    // Keeps n.x <= d.
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (da, db) = (n.dot(a) - d, n.dot(b) - d);
        if da <= 0.0 {
            out.push(a);
        }
        if (da <= 0.0) != (db <= 0.0) {
            out.push(a + (b - a) * (da / (da - db)));
        }
    }
    out
}

fn reduce_manifold(mut pts: Vec<ContactPoint>) -> Vec<ContactPoint> {
    if pts.len() <= 4 {
        return pts;
    }
    let mut keep = Vec::with_capacity(4);
    let i0 = (0..pts.len()).min_by(|a, b| pts[*a].separation.total_cmp(&pts[*b].separation)).unwrap();
    keep.push(pts.swap_remove(i0));
    let far = |pts: &Vec<ContactPoint>, score: &dyn Fn(DVec3) -> f64| (0..pts.len()).max_by(|a, b| score(pts[*a].point).total_cmp(&score(pts[*b].point))).unwrap();
    let p0 = keep[0].point;
    let i1 = far(&pts, &|p| (p - p0).length_squared());
    keep.push(pts.swap_remove(i1));
    let p1 = keep[1].point;
    let i2 = far(&pts, &|p| (p1 - p0).cross(p - p0).length_squared());
    keep.push(pts.swap_remove(i2));
    let c = (keep[0].point + keep[1].point + keep[2].point) / 3.0;
    let i3 = far(&pts, &|p| (p - c).length_squared());
    keep.push(pts.swap_remove(i3));
    keep
}

fn face_contact(reference: &Polyhedron, rf: usize, incident: &Polyhedron, margin: f64) -> Vec<ContactPoint> {
    let n = reference.normals[rf];
    let inc_face = (0..incident.faces.len()).min_by(|a, b| incident.normals[*a].dot(n).total_cmp(&incident.normals[*b].dot(n))).unwrap();
    let mut poly: Vec<DVec3> = incident.faces[inc_face].iter().map(|i| incident.vertices[*i]).collect();
    let rpoly = &reference.faces[rf];
    for k in 0..rpoly.len() {
        let (a, b) = (reference.vertices[rpoly[k]], reference.vertices[rpoly[(k + 1) % rpoly.len()]]);
        let side = (b - a).cross(n).normalize_or_zero();
        poly = clip_polygon(poly, side, side.dot(a));
        if poly.is_empty() {
            break;
        }
    }
    let off = reference.plane_offset(rf);
    let pts = poly
        .into_iter()
        .filter_map(|p| {
            let sep = n.dot(p) - off;
            (sep <= margin).then(|| ContactPoint { point: p - n * (0.5 * sep), normal: n, separation: sep })
        })
        .collect();
    reduce_manifold(pts)
}

/// Convex polyhedra by separating axes; normals point from `a` to `b`.
pub fn poly_poly(a: &Polyhedron, b: &Polyhedron, margin: f64) -> Vec<ContactPoint> {
    let (sa, fa) = face_query(a, b);
    if sa > margin {
        return Vec::new();
    }
    let (sb, fb) = face_query(b, a);
    if sb > margin {
        return Vec::new();
    }
    let eq = edge_query(a, b);
    if let Some(e) = &eq {
        if e.sep > margin {
            return Vec::new();
        }
    }
    let face_sep = sa.max(sb);
    let tol = 1e-4 * (a.aabb().diagonal() + b.aabb().diagonal());
    if let Some(e) = eq {
        if e.sep > face_sep + tol {
            let (pa, pb) = closest_between_lines(a.vertices[e.ea.0], a.vertices[e.ea.1], b.vertices[e.eb.0], b.vertices[e.eb.1]);
            return vec![ContactPoint { point: (pa + pb) * 0.5, normal: e.axis, separation: e.sep }];
        }
    }
    if sb > sa + tol {
        let mut c = face_contact(b, fb, a, margin);
        flip(&mut c);
        c
    } else {
        face_contact(a, fa, b, margin)
    }
}

/// All contacts between two primitives, normals from `a` to `b`.
pub fn collide(a: &Primitive, b: &Primitive, margin: f64) -> Vec<ContactPoint> {
    match (a, b) {
        (Primitive::Sphere { center: ca, radius: ra }, Primitive::Sphere { center: cb, radius: rb }) => sphere_sphere(*ca, *ra, *cb, *rb, margin).into_iter().collect(),
        (Primitive::Sphere { center, radius }, Primitive::Poly(p)) => sphere_poly(*center, *radius, p, margin).into_iter().collect(),
        (Primitive::Poly(p), Primitive::Sphere { center, radius }) => {
            let mut c: Vec<_> = sphere_poly(*center, *radius, p, margin).into_iter().collect();
            flip(&mut c);
            c
        }
        (Primitive::Poly(pa), Primitive::Poly(pb)) => {
            if !pa.aabb().inflate(margin).overlaps(&pb.aabb()) {
                return Vec::new();
            }
            poly_poly(pa, pb, margin)
        }
        (Primitive::Triangles { vertices, faces, boxes }, other) => {
            let ob = other.aabb().inflate(margin);
            let mut out = Vec::new();
            for (f, bx) in faces.iter().zip(boxes) {
                if !bx.overlaps(&ob) {
                    continue;
                }
                let [p, q, r] = f.map(|i| vertices[i as usize]);
                match other {
                    Primitive::Sphere { center, radius } => out.extend(sphere_triangle(*center, *radius, p, q, r, margin).map(|mut c| {
                        c.normal = -c.normal;
                        c
                    })),
                    Primitive::Poly(poly) => out.extend(poly_poly(&Polyhedron::triangle(p, q, r), poly, margin)),
                    Primitive::Triangles { .. } => {}
                }
            }
            reduce_manifold(out)
        }
        (_, Primitive::Triangles { .. }) => {
            let mut c = collide(b, a, margin);
            flip(&mut c);
            c
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use glam::DMat3;

    #[test]
    fn resting_box_on_box_gives_four_points() {
        let ground = Polyhedron::cuboid(DVec3::new(5.0, 5.0, 0.5), DMat3::IDENTITY, DVec3::new(0.0, 0.0, -0.5));
        let cube = Polyhedron::cuboid(DVec3::splat(0.5), DMat3::IDENTITY, DVec3::new(0.0, 0.0, 0.49));
        let c = poly_poly(&ground, &cube, 0.01);
        assert_eq!(c.len(), 4);
        for p in &c {
            assert!((p.separation + 0.01).abs() < 1e-12);
            assert!((p.normal - DVec3::Z).length() < 1e-12);
        }
    }

    #[test]
    fn sphere_on_box_top() {
        let ground = Polyhedron::cuboid(DVec3::new(5.0, 5.0, 0.5), DMat3::IDENTITY, DVec3::new(0.0, 0.0, -0.5));
        let c = sphere_poly(DVec3::new(0.3, 0.2, 0.45), 0.5, &ground, 0.0).unwrap();
        assert!((c.separation + 0.05).abs() < 1e-12);
        assert!((c.normal + DVec3::Z).length() < 1e-12);
    }

    #[test]
    fn separated_polys_have_no_contacts() {
        let a = Polyhedron::cuboid(DVec3::splat(0.5), DMat3::IDENTITY, DVec3::ZERO);
        let b = Polyhedron::cuboid(DVec3::splat(0.5), DMat3::from_rotation_z(0.7), DVec3::new(2.0, 0.0, 0.0));
        assert!(poly_poly(&a, &b, 1e-3).is_empty());
    }

    #[test]
    fn crossed_edges_use_edge_contact() {
        let a = Polyhedron::cuboid(DVec3::splat(0.5), DMat3::from_rotation_x(std::f64::consts::FRAC_PI_4), DVec3::ZERO);
        let r = DMat3::from_rotation_y(std::f64::consts::FRAC_PI_4);
        let b = Polyhedron::cuboid(DVec3::splat(0.5), r, DVec3::new(0.0, 0.0, 2f64.sqrt() - 0.01));
        let c = poly_poly(&a, &b, 0.0);
        assert_eq!(c.len(), 1);
        assert!((c[0].separation + 0.01).abs() < 1e-9);
        assert!((c[0].normal - DVec3::Z).length() < 1e-9);
    }
}
