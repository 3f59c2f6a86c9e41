//! Rigid-body world: semi-implicit Euler, speculative contacts and a
//! sequential-impulse solver.

use glam::{DMat3, DQuat, DVec3};
use serde::{Deserialize, Serialize};

use super::collider::{Collider, Primitive};
use super::contact::{collide, ContactPoint};
use super::hull::Polyhedron;
use crate::error::{Error, Result};
use crate::geom::Aabb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub iterations: usize,
    /// Penetration tolerated without positional correction.
    pub slop: f64,
    /// Fraction of the remaining penetration removed per step.
    pub baumgarte: f64,
    /// Approach speed below which restitution is ignored.
    pub restitution_threshold: f64,
    /// Contacts are generated while the gap is below this distance plus
    /// the distance the pair can close within one step.
    pub margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { iterations: 10, slop: 1e-3, baumgarte: 0.2, restitution_threshold: 0.5, margin: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidBodyState {
    pub position: [f64; 3],
    /// Unit quaternion `[x, y, z, w]`.
    pub orientation: [f64; 4],
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub inv_mass: f64,
    /// Body frame, row-major.
    pub inv_inertia: [[f64; 3]; 3],
}

impl RigidBodyState {
    pub fn rotation(&self) -> DQuat {
        DQuat::from_array(self.orientation)
    }

    fn inv_inertia_world(&self) -> DMat3 {
        let r = DMat3::from_quat(self.rotation());
        let ib = DMat3::from_cols_array_2d(&self.inv_inertia).transpose();
        r * ib * r.transpose()
    }

    pub fn is_static(&self) -> bool {
        self.inv_mass == 0.0
    }
}

/// Everything needed to add a body. The collider is given in the body's
/// frame; dynamic bodies are re-centered on their center of mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub id: u32,
    pub label: String,
    pub collider: Collider,
    /// Kilograms; 0 makes the body static.
    pub mass: f64,
    pub friction: f64,
    pub restitution: f64,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    #[serde(default)]
    pub linear_velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Body {
    pub id: u32,
    pub label: String,
    pub collider: Collider,
    pub mass: f64,
    pub friction: f64,
    pub restitution: f64,
    pub state: RigidBodyState,
    /// Offset subtracted from the spec's collider (center of mass).
    pub com_offset: DVec3,
    polys: Vec<Polyhedron>,
    radius: f64,
}

impl Body {
    pub fn primitives(&self) -> Vec<Primitive> {
        let r = DMat3::from_quat(self.state.rotation());
        self.collider.primitives(&self.polys, r, DVec3::from_array(self.state.position))
    }
}

/// External impulse on a body, at its center of mass unless a world point
/// is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub body: u32,
    pub impulse: [f64; 3],
    #[serde(default)]
    pub point: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub body: u32,
    pub point: DVec3,
    pub normal: DVec3,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyFrame {
    pub id: u32,
    pub p: [f64; 3],
    pub q: [f64; 4],
    pub v: [f64; 3],
    pub w: [f64; 3],
}

/// One line of a replay file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub t: f64,
    pub bodies: Vec<BodyFrame>,
}

#[derive(Clone, Debug)]
pub struct PhysicsWorld {
    pub gravity: DVec3,
    pub bodies: Vec<Body>,
    pub settings: SolverSettings,
    pub time: f64,
}

#[derive(Clone, Copy, Debug)]
struct SolverContact {
    a: usize,
    b: usize,
    ra: DVec3,
    rb: DVec3,
    n: DVec3,
    t1: DVec3,
    t2: DVec3,
    kn: f64,
    kt1: f64,
    kt2: f64,
    target: f64,
    mu: f64,
    sep: f64,
    jn: f64,
    jt1: f64,
    jt2: f64,
}

fn tangents(n: DVec3) -> (DVec3, DVec3) {
    let a = if n.x.abs() < 0.57 { DVec3::X } else if n.y.abs() < 0.57 { DVec3::Y } else { DVec3::Z };
    let t1 = n.cross(a).normalize();
    (t1, n.cross(t1))
}

struct Kin {
    v: DVec3,
    w: DVec3,
    im: f64,
    ii: DMat3,
}

impl Kin {
    fn point_velocity(&self, r: DVec3) -> DVec3 {
        self.v + self.w.cross(r)
    }

    fn apply(&mut self, r: DVec3, j: DVec3) {
        self.v += j * self.im;
        self.w += self.ii * r.cross(j);
    }
}

fn effective_mass(a: &Kin, b: &Kin, ra: DVec3, rb: DVec3, d: DVec3) -> f64 {
    let k = a.im + b.im + (a.ii * ra.cross(d)).cross(ra).dot(d) + (b.ii * rb.cross(d)).cross(rb).dot(d);
    if k > 0.0 {
        1.0 / k
    } else {
        0.0
    }
}

impl PhysicsWorld {
    pub fn new(gravity: DVec3, settings: SolverSettings) -> Self {
        Self { gravity, bodies: Vec::new(), settings, time: 0.0 }
    }

    pub fn body(&self, id: u32) -> Option<&Body> {
        self.bodies.iter().find(|b| b.id == id)
    }

    /// Adds a body, keeping the list sorted by id.
    pub fn add_body(&mut self, spec: &BodySpec) -> Result<u32> {
        if self.bodies.iter().any(|b| b.id == spec.id) {
            return Err(Error::Validation(format!("duplicate body id {}", spec.id)));
        }
        spec.collider.validate()?;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(spec.mass >= 0.0) || !spec.mass.is_finite() {
            return Err(Error::Validation(format!("body {}: mass must be finite and >= 0", spec.id)));
        }
        if !(spec.friction >= 0.0) || !(0.0..=1.0).contains(&spec.restitution) {
            return Err(Error::Validation(format!("body {}: friction must be >= 0 and restitution in [0, 1]", spec.id)));
        }
        if !finite(&spec.position) || !finite(&spec.orientation) || !finite(&spec.linear_velocity) || !finite(&spec.angular_velocity) {
            return Err(Error::Validation(format!("body {}: non-finite initial state", spec.id)));
        }
        let q = DQuat::from_array(spec.orientation);
        if (q.length() - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("body {}: orientation is not a unit quaternion", spec.id)));
        }
        let dynamic = spec.mass > 0.0;
        if dynamic && matches!(spec.collider, Collider::TriMesh { .. }) {
            return Err(Error::Validation(format!("body {}: dynamic bodies cannot use trimesh colliders", spec.id)));
        }
        let (collider, com, inv_mass, inv_inertia) = if dynamic {
            let mp = spec.collider.mass_properties(spec.mass)?;
            let inv = mp.inertia.inverse();
            if !inv.is_finite() {
                return Err(Error::Validation(format!("body {}: singular inertia", spec.id)));
            }
            (spec.collider.recentered(mp.center), mp.center, 1.0 / spec.mass, inv)
        } else {
            (spec.collider.clone(), DVec3::ZERO, 0.0, DMat3::ZERO)
        };
        let polys = collider.local_polyhedra()?;
        let prims = collider.primitives(&polys, DMat3::IDENTITY, DVec3::ZERO);
        let radius = prims.iter().map(|p| {
            let b = p.aabb();
            b.min.abs().max(b.max.abs()).length()
        });
        let radius = radius.fold(0.0, f64::max);
        let position = DVec3::from_array(spec.position) + q * com;
        let body = Body {
            id: spec.id,
            label: spec.label.clone(),
            collider,
            mass: spec.mass,
            friction: spec.friction,
            restitution: spec.restitution,
            state: RigidBodyState {
                position: position.to_array(),
                orientation: q.to_array(),
                linear_velocity: if dynamic { spec.linear_velocity } else { [0.0; 3] },
                angular_velocity: if dynamic { spec.angular_velocity } else { [0.0; 3] },
                inv_mass,
                inv_inertia: inv_inertia.transpose().to_cols_array_2d(),
            },
            com_offset: com,
            polys,
            radius,
        };
        let at = self.bodies.partition_point(|b| b.id < spec.id);
        self.bodies.insert(at, body);
        Ok(spec.id)
    }

    /// Kinetic plus gravitational potential energy.
    pub fn energy(&self) -> f64 {
        self.bodies
            .iter()
            .filter(|b| !b.state.is_static())
            .map(|b| {
                let v = DVec3::from_array(b.state.linear_velocity);
                let w = DVec3::from_array(b.state.angular_velocity);
                let r = DMat3::from_quat(b.state.rotation());
                let ib = DMat3::from_cols_array_2d(&b.state.inv_inertia).transpose().inverse();
                let iw = r * ib * r.transpose();
                0.5 * b.mass * v.length_squared() + 0.5 * w.dot(iw * w) - b.mass * self.gravity.dot(DVec3::from_array(b.state.position))
            })
            .sum()
    }

    pub fn momentum(&self) -> DVec3 {
        self.bodies.iter().filter(|b| !b.state.is_static()).map(|b| DVec3::from_array(b.state.linear_velocity) * b.mass).sum()
    }

    pub fn snapshot(&self) -> ReplayFrame {
        ReplayFrame {
            t: self.time,
            bodies: self
                .bodies
                .iter()
                .map(|b| BodyFrame { id: b.id, p: b.state.position, q: b.state.orientation, v: b.state.linear_velocity, w: b.state.angular_velocity })
                .collect(),
        }
    }

    /// Contacts between all overlapping body pairs at the current state,
    /// ordered by `(id_a, id_b)`.
    pub fn contacts(&self, dt: f64) -> Vec<(usize, usize, ContactPoint)> {
        let prims: Vec<Vec<Primitive>> = self.bodies.iter().map(|b| b.primitives()).collect();
        let boxes: Vec<Aabb> = prims.iter().map(|ps| ps.iter().fold(Aabb::empty(), |acc, p| acc.union(&p.aabb()))).collect();
        let reach: Vec<f64> = self
            .bodies
            .iter()
            .map(|b| dt * (DVec3::from_array(b.state.linear_velocity).length() + DVec3::from_array(b.state.angular_velocity).length() * b.radius))
            .collect();
        let mut out = Vec::new();
        for i in 0..self.bodies.len() {
            for j in i + 1..self.bodies.len() {
                if self.bodies[i].state.is_static() && self.bodies[j].state.is_static() {
                    continue;
                }
                let margin = self.settings.margin + reach[i] + reach[j];
                if !boxes[i].inflate(margin).overlaps(&boxes[j]) {
                    continue;
                }
                for pa in &prims[i] {
                    for pb in &prims[j] {
                        for c in collide(pa, pb, margin) {
                            out.push((i, j, c));
                        }
                    }
                }
            }
        }
        out
    }

    /// Advances by `dt`. On a non-finite result the world is left unchanged
    /// and the offending body is named.
    pub fn step(&mut self, dt: f64, actions: &[Action]) -> Result<usize> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("step: dt must be positive, got {dt}")));
        }
        let mut kin: Vec<Kin> = self
            .bodies
            .iter()
            .map(|b| Kin {
                v: DVec3::from_array(b.state.linear_velocity),
                w: DVec3::from_array(b.state.angular_velocity),
                im: b.state.inv_mass,
                ii: b.state.inv_inertia_world(),
            })
            .collect();
        for a in actions {
            let Some(i) = self.bodies.iter().position(|b| b.id == a.body) else {
                return Err(Error::InvalidInput(format!("step: action on unknown body {}", a.body)));
            };
            let j = DVec3::from_array(a.impulse);
            let r = a.point.map(|p| DVec3::from_array(p) - DVec3::from_array(self.bodies[i].state.position)).unwrap_or(DVec3::ZERO);
            kin[i].apply(r, j);
        }
        for (k, b) in kin.iter_mut().zip(&self.bodies) {
            if !b.state.is_static() {
                k.v += self.gravity * dt;
            }
        }
        // Contacts use the velocities after external forces for the reach.
        let mut probe = self.clone();
        for (b, k) in probe.bodies.iter_mut().zip(&kin) {
            b.state.linear_velocity = k.v.to_array();
            b.state.angular_velocity = k.w.to_array();
        }
        let raw = probe.contacts(dt);
        let s = &self.settings;
        let mut cs: Vec<SolverContact> = raw
            .iter()
            .map(|(a, b, c)| {
                let (ba, bb) = (&self.bodies[*a], &self.bodies[*b]);
                let ra = c.point - DVec3::from_array(ba.state.position);
                let rb = c.point - DVec3::from_array(bb.state.position);
                let n = c.normal;
                let (t1, t2) = tangents(n);
                let (ka, kb) = (&kin[*a], &kin[*b]);
                let vn = (kb.point_velocity(rb) - ka.point_velocity(ra)).dot(n);
                let e = ba.restitution.max(bb.restitution);
                let target = if vn < -s.restitution_threshold && (c.separation <= 0.0 || vn * dt < -c.separation) {
                    -e * vn
                } else if c.separation > 0.0 {
                    -c.separation / dt
                } else {
                    0.0
                };
                SolverContact {
                    a: *a,
                    b: *b,
                    ra,
                    rb,
                    n,
                    t1,
                    t2,
                    kn: effective_mass(ka, kb, ra, rb, n),
                    kt1: effective_mass(ka, kb, ra, rb, t1),
                    kt2: effective_mass(ka, kb, ra, rb, t2),
                    target,
                    mu: (ba.friction * bb.friction).sqrt(),
                    sep: c.separation,
                    jn: 0.0,
                    jt1: 0.0,
                    jt2: 0.0,
                }
            })
            .collect();
        for _ in 0..s.iterations {
            for c in cs.iter_mut() {
                let (lo, hi) = (c.a.min(c.b), c.a.max(c.b));
                let (left, right) = kin.split_at_mut(hi);
                let (ka, kb) = if c.a == lo { (&mut left[lo], &mut right[0]) } else { (&mut right[0], &mut left[lo]) };
                if c.mu > 0.0 {
                    for (t, k, acc) in [(c.t1, c.kt1, &mut c.jt1), (c.t2, c.kt2, &mut c.jt2)] {
                        let vt = (kb.point_velocity(c.rb) - ka.point_velocity(c.ra)).dot(t);
                        let lim = c.mu * c.jn;
                        let new = (*acc - k * vt).clamp(-lim, lim);
                        let d = new - *acc;
                        *acc = new;
                        ka.apply(c.ra, -t * d);
                        kb.apply(c.rb, t * d);
                    }
                }
                let vn = (kb.point_velocity(c.rb) - ka.point_velocity(c.ra)).dot(c.n);
                let new = (c.jn - c.kn * (vn - c.target)).max(0.0);
                let d = new - c.jn;
                c.jn = new;
                ka.apply(c.ra, -c.n * d);
                kb.apply(c.rb, c.n * d);
            }
        }
        let mut next: Vec<RigidBodyState> = self.bodies.iter().map(|b| b.state.clone()).collect();
        for (st, k) in next.iter_mut().zip(&kin) {
            if st.is_static() {
                continue;
            }
            let p = DVec3::from_array(st.position) + k.v * dt;
            let q = st.rotation();
            let dq = DQuat::from_xyzw(k.w.x, k.w.y, k.w.z, 0.0) * q * (0.5 * dt);
            let q = DQuat::from_xyzw(q.x + dq.x, q.y + dq.y, q.z + dq.z, q.w + dq.w).normalize();
            st.position = p.to_array();
            st.orientation = q.to_array();
            st.linear_velocity = k.v.to_array();
            st.angular_velocity = k.w.to_array();
        }
        for c in &cs {
            let vn = (kin[c.b].point_velocity(c.rb) - kin[c.a].point_velocity(c.ra)).dot(c.n);
            let pen = -(c.sep + vn * dt);
            let (ia, ib) = (kin[c.a].im, kin[c.b].im);
            if pen > s.slop && ia + ib > 0.0 {
                let corr = s.baumgarte * (pen - s.slop) / (ia + ib);
                let pa = DVec3::from_array(next[c.a].position) - c.n * (corr * ia);
                let pb = DVec3::from_array(next[c.b].position) + c.n * (corr * ib);
                next[c.a].position = pa.to_array();
                next[c.b].position = pb.to_array();
            }
        }
        for (st, b) in next.iter().zip(&self.bodies) {
            let all = st.position.iter().chain(&st.orientation).chain(&st.linear_velocity).chain(&st.angular_velocity);
            if all.into_iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("step: body {} ({}) became non-finite", b.id, b.label)));
            }
        }
        for (b, st) in self.bodies.iter_mut().zip(next) {
            b.state = st;
        }
        self.time += dt;
        Ok(cs.len())
    }

    /// Nearest hit with positive distance along a unit direction.
    pub fn raycast(&self, origin: DVec3, dir: DVec3, max_distance: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for b in &self.bodies {
            for p in b.primitives() {
                if let Some((t, n)) = ray_primitive(&p, origin, dir) {
                    if t > 0.0 && t <= max_distance && best.map_or(true, |h| t < h.distance) {
                        best = Some(RayHit { body: b.id, point: origin + dir * t, normal: n, distance: t });
                    }
                }
            }
        }
        best
    }
}

fn ray_triangle(o: DVec3, d: DVec3, a: DVec3, b: DVec3, c: DVec3) -> Option<(f64, DVec3)> {
    let (e1, e2) = (b - a, c - a);
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = d.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    let n = e1.cross(e2).normalize();
    Some((t, if n.dot(d) > 0.0 { -n } else { n }))
}

fn ray_primitive(p: &Primitive, o: DVec3, d: DVec3) -> Option<(f64, DVec3)> {
    match p {
        Primitive::Sphere { center, radius } => {
            let oc = o - *center;
            let b = oc.dot(d);
            let c = oc.length_squared() - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            (t > 0.0).then(|| (t, (o + d * t - *center) / *radius))
        }
        Primitive::Poly(poly) if poly.is_flat() => ray_triangle(o, d, poly.vertices[0], poly.vertices[1], poly.vertices[2]),
        Primitive::Poly(poly) => {
            let (mut t0, mut t1) = (0.0, f64::INFINITY);
            let mut normal = None;
            for f in 0..poly.faces.len() {
                let n = poly.normals[f];
                let denom = n.dot(d);
                let dist = poly.plane_offset(f) - n.dot(o);
                if denom.abs() < 1e-300 {
                    if dist < 0.0 {
                        return None;
                    }
                    continue;
                }
                let t = dist / denom;
                if denom < 0.0 {
                    if t > t0 {
                        t0 = t;
                        normal = Some(n);
                    }
                } else if t < t1 {
                    t1 = t;
                }
                if t0 > t1 {
                    return None;
                }
            }
            normal.map(|n| (t0, n))
        }
        Primitive::Triangles { vertices, faces, .. } => faces
            .iter()
            .filter_map(|f| {
                let [a, b, c] = f.map(|i| vertices[i as usize]);
                ray_triangle(o, d, a, b, c).filter(|h| h.0 > 0.0)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0)),
    }
}
