//! Software rasterizer producing per-pixel surface records.

use glam::DVec3;

use super::mesh::TriangleMesh;
use crate::scene::CameraModel;

pub const NO_HIT: u32 = u32::MAX;
/// Camera-space near plane used for clipping.
pub const NEAR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub jitter: [f64; 2],
    /// Face index per pixel, [`NO_HIT`] where nothing was rasterized.
    pub face: Vec<u32>,
    /// Barycentrics with respect to the face's own vertices.
    pub bary: Vec<[f64; 3]>,
    pub uv: Vec<[f64; 2]>,
    /// Distance along the camera ray; infinite on misses.
    pub depth: Vec<f64>,
}

impl GBuffer {
    pub fn hit(&self, i: usize) -> bool {
        self.face[i] != NO_HIT
    }

    pub fn hit_count(&self) -> usize {
        self.face.iter().filter(|f| **f != NO_HIT).count()
    }

    pub fn position(&self, mesh: &TriangleMesh, i: usize) -> DVec3 {
        let [a, b, c] = mesh.corners(self.face[i] as usize);
        let w = self.bary[i];
        a * w[0] + b * w[1] + c * w[2]
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Visits the sample points `(x + offset.0, y + offset.1)` of a `w x h` grid
/// covered by the triangle, with its barycentrics. Edges shared by two
/// triangles are owned by exactly one of them.
pub fn scan_triangle(v: [[f64; 2]; 3], w: usize, h: usize, offset: [f64; 2], mut visit: impl FnMut(usize, usize, [f64; 3])) {
    let mut v = v;
    let mut area = edge(v[0], v[1], v[2]);
    let mut perm = [0, 1, 2];
    if area < 0.0 {
        v.swap(1, 2);
        perm.swap(1, 2);
        area = -area;
    }
    if !(area > 1e-14) || !area.is_finite() {
        return;
    }
    let owned = |a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        dy > 0.0 || (dy == 0.0 && dx < 0.0)
    };
    let own = [owned(v[1], v[2]), owned(v[2], v[0]), owned(v[0], v[1])];
    let minx = v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let maxx = v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let miny = v.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let maxy = v.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (minx - offset[0]).ceil().max(0.0);
    let x1 = (maxx - offset[0]).floor().min(w as f64 - 1.0);
    let y0 = (miny - offset[1]).ceil().max(0.0);
    let y1 = (maxy - offset[1]).floor().min(h as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for y in y0 as usize..=y1 as usize {
        for x in x0 as usize..=x1 as usize {
            let p = [x as f64 + offset[0], y as f64 + offset[1]];
            let e = [edge(v[1], v[2], p), edge(v[2], v[0], p), edge(v[0], v[1], p)];
            if (0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && own[k])) {
                let mut l = [0.0; 3];
                for k in 0..3 {
                    l[perm[k]] = e[k] / area;
                }
                visit(x, y, l);
            }
        }
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: DVec3,
    bary: DVec3,
}

/// Sutherland-Hodgman against `z >= NEAR`.
fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let (a, b) = (tri[i], tri[(i + 1) % 3]);
        let (ina, inb) = (a.p.z >= NEAR, b.p.z >= NEAR);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR - a.p.z) / (b.p.z - a.p.z);
            out.push(ClipVertex { p: a.p.lerp(b.p, t), bary: a.bary.lerp(b.bary, t) });
        }
    }
    out
}

/// Rasterizes `mesh` with sample points offset by `jitter` pixels, matching
/// the rays of `camera_ray(cam, u, v, jitter)`.
pub fn rasterize(mesh: &TriangleMesh, cam: &CameraModel, jitter: [f64; 2]) -> GBuffer {
    let i = cam.intrinsics;
    let (w, h) = (i.w as usize, i.h as usize);
    let mut g = GBuffer {
        width: w,
        height: h,
        jitter,
        face: vec![NO_HIT; w * h],
        bary: vec![[0.0; 3]; w * h],
        uv: vec![[0.0; 2]; w * h],
        depth: vec![f64::INFINITY; w * h],
    };
    let mut zbuf = vec![f64::INFINITY; w * h];
    let offset = [0.5 + jitter[0], 0.5 + jitter[1]];
    let cam_pts: Vec<DVec3> = mesh.vertices.iter().map(|v| cam.world_to_camera(*v)).collect();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let tri = [0, 1, 2].map(|k| {
            let mut bary = DVec3::ZERO;
            bary[k] = 1.0;
            ClipVertex { p: cam_pts[f[k] as usize], bary }
        });
        if tri.iter().all(|c| c.p.z < NEAR) {
            continue;
        }
        let poly = if tri.iter().all(|c| c.p.z >= NEAR) { tri.to_vec() } else { clip_near(tri) };
        for k in 1..poly.len().saturating_sub(1) {
            let sub = [poly[0], poly[k], poly[k + 1]];
            let scr = sub.map(|c| [i.fx * c.p.x / c.p.z + i.cx, i.fy * c.p.y / c.p.z + i.cy]);
            scan_triangle(scr, w, h, offset, |x, y, l| {
                let wts = [l[0] / sub[0].p.z, l[1] / sub[1].p.z, l[2] / sub[2].p.z];
                let z = 1.0 / (wts[0] + wts[1] + wts[2]);
                let idx = y * w + x;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    let pc = (sub[0].p * wts[0] + sub[1].p * wts[1] + sub[2].p * wts[2]) * z;
                    let b = (sub[0].bary * wts[0] + sub[1].bary * wts[1] + sub[2].bary * wts[2]) * z;
                    g.face[idx] = fi as u32;
                    g.bary[idx] = b.to_array();
                    g.depth[idx] = pc.length();
                }
            });
        }
    }
    if let Some(uvs) = &mesh.uvs {
        for idx in 0..w * h {
            if g.face[idx] != NO_HIT {
                let f = mesh.faces[g.face[idx] as usize];
                let b = g.bary[idx];
                let mut uv = [0.0; 2];
                for k in 0..3 {
                    let t = uvs[f[k] as usize];
                    uv[0] += b[k] * t[0];
                    uv[1] += b[k] * t[1];
                }
                g.uv[idx] = uv;
            }
        }
    }
    g
}

/// Faces that own at least one sample of a 2x2 sub-pixel pattern in some
/// camera.
pub fn visible_faces(mesh: &TriangleMesh, cams: &[CameraModel]) -> Vec<bool> {
    let mut seen = vec![false; mesh.faces.len()];
    for cam in cams {
        for jitter in [[-0.25, -0.25], [0.25, -0.25], [-0.25, 0.25], [0.25, 0.25]] {
            let g = rasterize(mesh, cam, jitter);
            for f in g.face {
                if f != NO_HIT {
                    seen[f as usize] = true;
                }
            }
        }
    }
    seen
}
