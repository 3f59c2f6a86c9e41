//! Texture atlas: normal-clustered charts, planar projection, shelf packing.

use std::collections::{HashMap, VecDeque};

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use super::mesh::{edge_key, TriangleMesh};
use super::raster::scan_triangle;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UvConfig {
    pub resolution: u32,
    pub max_resolution: u32,
    /// Empty texels kept around every chart.
    pub gutter: u32,
    /// Faces join a chart while their normal is within this angle of the
    /// chart's seed normal.
    pub max_angle_deg: f64,
    /// Target fraction of the atlas covered by chart rectangles.
    pub fill: f64,
}

impl Default for UvConfig {
    fn default() -> Self {
        Self { resolution: 512, max_resolution: 8192, gutter: 2, max_angle_deg: 60.0, fill: 0.6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub faces: Vec<u32>,
    pub normal: [f64; 3],
    /// Texel rectangle `[x, y, w, h]` including gutters.
    pub rect: [u32; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub resolution: u32,
    pub texels_per_unit: f64,
    pub charts: Vec<Chart>,
    pub face_chart: Vec<u32>,
    /// Set when packing forced a larger resolution than requested.
    pub grown: bool,
}

fn basis(n: DVec3) -> (DVec3, DVec3) {
    let a = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        DVec3::X
    } else if n.y.abs() <= n.z.abs() {
        DVec3::Y
    } else {
        DVec3::Z
    };
    let u = n.cross(a).normalize();
    (u, n.cross(u))
}

/// Strict interior overlap of two triangles in the plane (touching along
/// an edge or a vertex does not count).
pub fn triangles_overlap(a: &[DVec2; 3], b: &[DVec2; 3], eps: f64) -> bool {
    for tri in [a, b] {
        for k in 0..3 {
            let e = tri[(k + 1) % 3] - tri[k];
            let axis = DVec2::new(-e.y, e.x);
            let proj = |t: &[DVec2; 3]| {
                let v = t.map(|p| p.dot(axis));
                (v[0].min(v[1]).min(v[2]), v[0].max(v[1]).max(v[2]))
            };
            let (amin, amax) = proj(a);
            let (bmin, bmax) = proj(b);
            let tol = eps * axis.length();
            if amax <= bmin + tol || bmax <= amin + tol {
                return false;
            }
        }
    }
    true
}

struct ChartGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl ChartGrid {
    fn keys(&self, t: &[DVec2; 3]) -> impl Iterator<Item = (i64, i64)> {
        let lo = t[0].min(t[1]).min(t[2]) / self.cell;
        let hi = t[0].max(t[1]).max(t[2]) / self.cell;
        let (x0, x1, y0, y1) = (lo.x.floor() as i64, hi.x.floor() as i64, lo.y.floor() as i64, hi.y.floor() as i64);
        (x0..=x1).flat_map(move |x| (y0..=y1).map(move |y| (x, y)))
    }
}

/// Groups faces into charts whose planar projections are free of overlaps.
fn grow_charts(mesh: &TriangleMesh, max_angle_deg: f64) -> Vec<(Vec<u32>, DVec3, Vec<[DVec2; 3]>)> {
    let nf = mesh.faces.len();
    let normals: Vec<DVec3> = (0..nf).map(|f| mesh.face_normal(f)).collect();
    let mut adj: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            adj.entry(edge_key(face[k], face[(k + 1) % 3])).or_default().push(f as u32);
        }
    }
    let mean_edge = {
        let s: f64 = mesh.faces.iter().map(|f| (mesh.vertices[f[0] as usize] - mesh.vertices[f[1] as usize]).length()).sum();
        (s / nf.max(1) as f64).max(1e-9)
    };
    let cos_max = max_angle_deg.to_radians().cos();
    let mut assigned = vec![false; nf];
    let mut charts = Vec::new();
    for seed in 0..nf {
        if assigned[seed] {
            continue;
        }
        let n = normals[seed];
        let (u, v) = basis(n);
        let proj = |f: usize| mesh.corners(f).map(|p| DVec2::new(p.dot(u), p.dot(v)));
        let mut grid = ChartGrid { cell: 2.0 * mean_edge, cells: HashMap::new() };
        let mut faces: Vec<u32> = Vec::new();
        let mut tris: Vec<[DVec2; 3]> = Vec::new();
        let mut queue = VecDeque::from([seed]);
        let mut queued = HashMap::from([(seed, ())]);
        while let Some(f) = queue.pop_front() {
            if assigned[f] || normals[f].dot(n) < cos_max {
                continue;
            }
            let t = proj(f);
            let scale = (t[1] - t[0]).length().max((t[2] - t[0]).length());
            let mut clash = false;
            'check: for key in grid.keys(&t) {
                if let Some(list) = grid.cells.get(&key) {
                    for &j in list {
                        if triangles_overlap(&t, &tris[j], 1e-9 * scale) {
                            clash = true;
                            break 'check;
                        }
                    }
                }
            }
            if clash {
                continue;
            }
            assigned[f] = true;
            for key in grid.keys(&t).collect::<Vec<_>>() {
                grid.cells.entry(key).or_default().push(tris.len());
            }
            faces.push(f as u32);
            tris.push(t);
            let face = mesh.faces[f];
            for k in 0..3 {
                let mut nb = adj[&edge_key(face[k], face[(k + 1) % 3])].clone();
                nb.sort_unstable();
                for g in nb {
                    let g = g as usize;
                    if !assigned[g] && queued.insert(g, ()).is_none() {
                        queue.push_back(g);
                    }
                }
            }
        }
        charts.push((faces, n, tris));
    }
    charts
}

/// Shelf packing of `(w, h)` rectangles into a square; `None` on overflow.
pub fn shelf_pack(sizes: &[(u32, u32)], res: u32) -> Option<Vec<(u32, u32)>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|a, b| sizes[*b].1.cmp(&sizes[*a].1).then(a.cmp(b)));
    let mut pos = vec![(0, 0); sizes.len()];
    let (mut x, mut y, mut shelf_h) = (0u32, 0u32, 0u32);
    for i in order {
        let (w, h) = sizes[i];
        if w > res {
            return None;
        }
        if x + w > res {
            y += shelf_h;
            x = 0;
            shelf_h = 0;
        }
        if y + h > res {
            return None;
        }
        pos[i] = (x, y);
        x += w;
        shelf_h = shelf_h.max(h);
    }
    Some(pos)
}

/// Splits vertices per chart and assigns UVs in `[0, 1]^2`.
pub fn uv_unwrap(mesh: &TriangleMesh, cfg: &UvConfig) -> Result<(TriangleMesh, Atlas)> {
    if mesh.is_empty() {
        return Err(Error::InvalidInput("uv_unwrap: empty mesh".into()));
    }
    mesh.validate()?;
    let charts = grow_charts(mesh, cfg.max_angle_deg);
    let bounds: Vec<(DVec2, DVec2)> = charts
        .iter()
        .map(|(_, _, tris)| {
            let lo = tris.iter().flatten().fold(DVec2::splat(f64::INFINITY), |a, p| a.min(*p));
            let hi = tris.iter().flatten().fold(DVec2::splat(f64::NEG_INFINITY), |a, p| a.max(*p));
            (lo, hi)
        })
        .collect();
    let area: f64 = bounds.iter().map(|(lo, hi)| (hi.x - lo.x).max(1e-12) * (hi.y - lo.y).max(1e-12)).sum();
    let g = cfg.gutter;
    let mut res = cfg.resolution.max(8);
    let mut grown = false;
    let (scale, placed) = 'outer: loop {
        let mut s = (cfg.fill * (res as f64).powi(2) / area).sqrt();
        for _ in 0..40 {
            let sizes: Vec<(u32, u32)> = bounds
                .iter()
                .map(|(lo, hi)| (((hi.x - lo.x) * s).ceil() as u32 + 1 + 2 * g, ((hi.y - lo.y) * s).ceil() as u32 + 1 + 2 * g))
                .collect();
            if let Some(p) = shelf_pack(&sizes, res) {
                break 'outer (s, p.into_iter().zip(sizes).collect::<Vec<_>>());
            }
            s *= 0.9;
        }
        if res >= cfg.max_resolution {
            return Err(Error::Validation(format!("uv_unwrap: {} charts do not fit a {res}^2 atlas", charts.len())));
        }
        res = (res * 2).min(cfg.max_resolution);
        grown = true;
        tracing::warn!(resolution = res, charts = charts.len(), "uv_unwrap: atlas overflow, increasing resolution");
    };

    let mut out = TriangleMesh::default();
    let mut uvs = Vec::new();
    let mut face_chart = vec![0u32; mesh.faces.len()];
    let mut out_faces = vec![[0u32; 3]; mesh.faces.len()];
    let mut atlas_charts = Vec::new();
    for (ci, ((faces, n, tris), ((x, y), (w, h)))) in charts.iter().zip(&placed).enumerate() {
        let lo = bounds[ci].0;
        let mut local: HashMap<u32, u32> = HashMap::new();
        for (f, t) in faces.iter().zip(tris) {
            let face = mesh.faces[*f as usize];
            let mut idx = [0u32; 3];
            for k in 0..3 {
                idx[k] = *local.entry(face[k]).or_insert_with(|| {
                    out.vertices.push(mesh.vertices[face[k] as usize]);
                    let p = (t[k] - lo) * scale;
                    let px = *x as f64 + g as f64 + 0.5 + p.x;
                    let py = *y as f64 + g as f64 + 0.5 + p.y;
                    uvs.push([px / res as f64, py / res as f64]);
                    (out.vertices.len() - 1) as u32
                });
            }
            out_faces[*f as usize] = idx;
            face_chart[*f as usize] = ci as u32;
        }
        atlas_charts.push(Chart { faces: faces.clone(), normal: n.to_array(), rect: [*x, *y, *w, *h] });
    }
    out.faces = out_faces;
    out.uvs = Some(uvs);
    let atlas = Atlas { resolution: res, texels_per_unit: scale, charts: atlas_charts, face_chart, grown };
    tracing::info!(charts = atlas.charts.len(), resolution = res, texels_per_unit = scale, "uv_unwrap");
    Ok((out, atlas))
}

/// Texel-center coverage of every face's UV triangle: per texel, the
/// covering face and its barycentrics. Returns the number of texels claimed
/// by more than one face alongside.
pub fn texel_coverage(mesh: &TriangleMesh, res: u32) -> (Vec<Option<(u32, [f64; 3])>>, usize) {
    let r = res as usize;
    let mut cov: Vec<Option<(u32, [f64; 3])>> = vec![None; r * r];
    let mut overlaps = 0;
    let Some(uvs) = &mesh.uvs else { return (cov, 0) };
    for (fi, f) in mesh.faces.iter().enumerate() {
        let t = f.map(|i| [uvs[i as usize][0] * res as f64, uvs[i as usize][1] * res as f64]);
        scan_triangle(t, r, r, [0.5, 0.5], |x, y, l| {
            let c = &mut cov[y * r + x];
            if c.is_some() {
                overlaps += 1;
            } else {
                *c = Some((fi as u32, l));
            }
        });
    }
    (cov, overlaps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_predicate() {
        let a = [DVec2::ZERO, DVec2::X, DVec2::Y];
        let b = [DVec2::X, DVec2::ONE, DVec2::Y];
        assert!(!triangles_overlap(&a, &b, 1e-12));
        let c = [DVec2::splat(0.1), DVec2::new(2.0, 0.1), DVec2::new(0.1, 2.0)];
        assert!(triangles_overlap(&a, &c, 1e-12));
        let d = [DVec2::ONE, DVec2::new(2.0, 1.0), DVec2::new(1.0, 2.0)];
        assert!(!triangles_overlap(&a, &d, 1e-12));
    }

    #[test]
    fn shelf_packing() {
        let p = shelf_pack(&[(4, 4), (4, 2), (4, 4)], 8).unwrap();
        assert_eq!(p, vec![(0, 0), (0, 4), (4, 0)]);
        assert!(shelf_pack(&[(5, 5), (5, 5)], 8).is_none());
    }
}
