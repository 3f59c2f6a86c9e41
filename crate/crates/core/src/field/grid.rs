//! Multi-resolution hash-grid encoding over the contracted domain `[-2, 2]^3`.

use std::sync::atomic::{AtomicU64, Ordering};

use glam::{DMat3, DVec3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Spatial-hash primes; the x prime is 1 so adjacent x cells stay adjacent in memory.
pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Half-width of the encoded cube.
pub const DOMAIN_HALF_WIDTH: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub per_level_scale: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { levels: 8, features_per_level: 4, log2_table_size: 15, base_resolution: 16, per_level_scale: 1.5 }
    }
}

impl GridConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    /// Length of the flat parameter array over all levels.
    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
    }

    pub fn resolution(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.per_level_scale.powi(level as i32)).floor() as u32
    }
}

#[inline]
pub fn spatial_hash(v: [u32; 3], log2_table_size: u32) -> u32 {
    let h = v[0].wrapping_mul(HASH_PRIMES[0]) ^ v[1].wrapping_mul(HASH_PRIMES[1]) ^ v[2].wrapping_mul(HASH_PRIMES[2]);
    if log2_table_size >= 32 {
        h
    } else {
        h & ((1u32 << log2_table_size) - 1)
    }
}

/// Trilinear corner set for one point at one level.
struct Corners {
    /// Flat offset of each corner's first feature in the parameter array.
    offset: [usize; 8],
    weight: [f64; 8],
    /// d weight / d (lattice coordinate).
    dweight: [[f64; 3]; 8],
}

/// Stateless encoder; parameters are passed in as a flat slice.
#[derive(Debug)]
pub struct HashEncoder {
    config: GridConfig,
    resolutions: Vec<u32>,
    clamped: AtomicU64,
}

impl Clone for HashEncoder {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            resolutions: self.resolutions.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl HashEncoder {
    pub fn new(config: GridConfig) -> Self {
        let resolutions = (0..config.levels).map(|l| config.resolution(l)).collect();
        Self { config, resolutions, clamped: AtomicU64::new(0) }
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Number of out-of-domain points that were clamped so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Uniform init in `[-scale, scale]`.
    pub fn init_params(&self, rng: &mut impl Rng, scale: f64) -> Vec<f64> {
        (0..self.config.param_count()).map(|_| rng.gen_range(-scale..=scale)).collect()
    }

    fn to_unit(&self, x: DVec3) -> DVec3 {
        let h = DOMAIN_HALF_WIDTH;
        let clamped = x.clamp(DVec3::splat(-h), DVec3::splat(h));
        if clamped != x {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        (clamped + DVec3::splat(h)) / (2.0 * h)
    }

    #[inline]
    fn corners(&self, unit: DVec3, level: usize) -> Corners {
        let res = self.resolutions[level] as f64;
        let f = self.config.features_per_level;
        let level_base = level * self.config.table_size() * f;
        let p = unit * res;
        let base = p.floor();
        let frac = p - base;
        let b = [base.x as u32, base.y as u32, base.z as u32];
        let mut out = Corners { offset: [0; 8], weight: [0.0; 8], dweight: [[0.0; 3]; 8] };
        for c in 0..8 {
            let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut wf = [0.0; 3];
            let mut sign = [0.0; 3];
            for a in 0..3 {
                if bits[a] == 1 {
                    wf[a] = frac[a];
                    sign[a] = 1.0;
                } else {
                    wf[a] = 1.0 - frac[a];
                    sign[a] = -1.0;
                }
            }
            let v = [b[0] + bits[0] as u32, b[1] + bits[1] as u32, b[2] + bits[2] as u32];
            out.offset[c] = level_base + spatial_hash(v, self.config.log2_table_size) as usize * f;
            out.weight[c] = wf[0] * wf[1] * wf[2];
            out.dweight[c] = [sign[0] * wf[1] * wf[2], sign[1] * wf[0] * wf[2], sign[2] * wf[0] * wf[1]];
        }
        out
    }

    /// Encode one contracted point into `out` (length `levels * features_per_level`).
    pub fn encode(&self, table: &[f64], x: DVec3, out: &mut [f64]) {
        let f = self.config.features_per_level;
        let unit = self.to_unit(x);
        for level in 0..self.config.levels {
            let cs = self.corners(unit, level);
            let dst = &mut out[level * f..(level + 1) * f];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..8 {
                let w = cs.weight[c];
                let src = &table[cs.offset[c]..cs.offset[c] + f];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// Accumulate d loss / d table given d loss / d encoding.
    pub fn encode_backward(&self, x: DVec3, grad_out: &[f64], grad_table: &mut [f64]) {
        let f = self.config.features_per_level;
        let unit = self.to_unit(x);
        for level in 0..self.config.levels {
            let cs = self.corners(unit, level);
            let g = &grad_out[level * f..(level + 1) * f];
            for c in 0..8 {
                let w = cs.weight[c];
                let dst = &mut grad_table[cs.offset[c]..cs.offset[c] + f];
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += w * gv;
                }
            }
        }
    }

    /// Spatial Jacobian of the encoding with respect to a world point whose
    /// contraction Jacobian is `chain` (identity when `x` is already the
    /// encoder input). Output layout: 3 rows (one per world axis) of `output_dim`.
    pub fn encode_jacobian(&self, table: &[f64], x: DVec3, chain: DMat3, out: &mut [f64]) {
        let f = self.config.features_per_level;
        let dim = self.output_dim();
        out[..3 * dim].iter_mut().for_each(|v| *v = 0.0);
        let unit = self.to_unit(x);
        for level in 0..self.config.levels {
            let cs = self.corners(unit, level);
            let scale = self.resolutions[level] as f64 / (2.0 * DOMAIN_HALF_WIDTH);
            for c in 0..8 {
                let dk = corner_world_derivative(&cs.dweight[c], scale, &chain);
                let src = &table[cs.offset[c]..cs.offset[c] + f];
                for k in 0..3 {
                    let row = &mut out[k * dim + level * f..k * dim + (level + 1) * f];
                    for (d, s) in row.iter_mut().zip(src) {
                        *d += dk[k] * s;
                    }
                }
            }
        }
    }

    /// Backward of [`Self::encode_jacobian`] with respect to the table.
    pub fn encode_jacobian_backward(&self, x: DVec3, chain: DMat3, grad_out: &[f64], grad_table: &mut [f64]) {
        let f = self.config.features_per_level;
        let dim = self.output_dim();
        let unit = self.to_unit(x);
        for level in 0..self.config.levels {
            let cs = self.corners(unit, level);
            let scale = self.resolutions[level] as f64 / (2.0 * DOMAIN_HALF_WIDTH);
            for c in 0..8 {
                let dk = corner_world_derivative(&cs.dweight[c], scale, &chain);
                let dst = &mut grad_table[cs.offset[c]..cs.offset[c] + f];
                for k in 0..3 {
                    let g = &grad_out[k * dim + level * f..k * dim + (level + 1) * f];
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += dk[k] * gv;
                    }
                }
            }
        }
    }
}

#[inline]
fn corner_world_derivative(dw: &[f64; 3], scale: f64, chain: &DMat3) -> [f64; 3] {
    // d w / d x_k = sum_j dw/dp_j * dp_j/dc_j * dc_j/dx_k
    let g = DVec3::new(dw[0], dw[1], dw[2]) * scale;
    let r = chain.transpose() * g;
    [r.x, r.y, r.z]
}

/// An encoder together with its own parameter table.
#[derive(Clone, Debug)]
pub struct FeatureGrid {
    pub encoder: HashEncoder,
    pub table: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(config: GridConfig, rng: &mut impl Rng, init_scale: f64) -> Self {
        let encoder = HashEncoder::new(config);
        let table = encoder.init_params(rng, init_scale);
        Self { encoder, table }
    }

    pub fn encode(&self, x: DVec3) -> Vec<f64> {
        let mut out = vec![0.0; self.encoder.output_dim()];
        self.encoder.encode(&self.table, x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> GridConfig {
        GridConfig { levels: 3, features_per_level: 2, log2_table_size: 10, base_resolution: 4, per_level_scale: 2.0 }
    }

    fn grid(seed: u64) -> FeatureGrid {
        FeatureGrid::new(small(), &mut ChaCha8Rng::seed_from_u64(seed), 1.0)
    }

    /// Straight-line re-implementation of hash + trilinear interpolation.
    fn oracle_encode(cfg: &GridConfig, table: &[f64], x: DVec3) -> Vec<f64> {
        let mut out = Vec::new();
        let t = 1usize << cfg.log2_table_size;
        for l in 0..cfg.levels {
            let res = (cfg.base_resolution as f64 * cfg.per_level_scale.powi(l as i32)).floor();
            let px = (x.x + 2.0) / 4.0 * res;
            let py = (x.y + 2.0) / 4.0 * res;
            let pz = (x.z + 2.0) / 4.0 * res;
            let (ix, iy, iz) = (px.floor(), py.floor(), pz.floor());
            let (fx, fy, fz) = (px - ix, py - iy, pz - iz);
            for feat in 0..cfg.features_per_level {
                let mut acc = 0.0;
                for dz in 0..2u32 {
                    for dy in 0..2u32 {
                        for dx in 0..2u32 {
                            let vx = ix as u32 + dx;
                            let vy = iy as u32 + dy;
                            let vz = iz as u32 + dz;
                            let h = (vx.wrapping_mul(1) ^ vy.wrapping_mul(2654435761) ^ vz.wrapping_mul(805459861))
                                % (t as u32);
                            let wx = if dx == 1 { fx } else { 1.0 - fx };
                            let wy = if dy == 1 { fy } else { 1.0 - fy };
                            let wz = if dz == 1 { fz } else { 1.0 - fz };
                            acc += wx * wy * wz * table[l * t * cfg.features_per_level + h as usize * cfg.features_per_level + feat];
                        }
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn matches_independent_oracle() {
        let g = grid(7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = DVec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let a = g.encode(x);
            let b = oracle_encode(&g.encoder.config, &g.table, x);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn lattice_vertex_is_bit_exact() {
        let g = grid(11);
        let cfg = small();
        // level 0 lattice vertex (i,j,k) = (1,2,3): x = i/res*4 - 2
        let res = cfg.resolution(0) as f64;
        let x = DVec3::new(1.0 / res * 4.0 - 2.0, 2.0 / res * 4.0 - 2.0, 3.0 / res * 4.0 - 2.0);
        let enc = g.encode(x);
        let h = spatial_hash([1, 2, 3], cfg.log2_table_size) as usize;
        for f in 0..cfg.features_per_level {
            assert_eq!(enc[f], g.table[h * cfg.features_per_level + f]);
        }
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let g = grid(5);
        let cfg = small();
        let res = cfg.resolution(0) as f64;
        let to_world = |i: f64| i / res * 4.0 - 2.0;
        let x = DVec3::new(to_world(1.5), to_world(0.5), to_world(2.5));
        let enc = g.encode(x);
        for f in 0..cfg.features_per_level {
            let mut mean = 0.0;
            for c in 0..8u32 {
                let v = [1 + (c & 1), (c >> 1) & 1, 2 + ((c >> 2) & 1)];
                let h = spatial_hash(v, cfg.log2_table_size) as usize;
                mean += g.table[h * cfg.features_per_level + f];
            }
            mean /= 8.0;
            assert!((enc[f] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn deterministic_and_clamps() {
        let g = grid(1);
        let x = DVec3::new(0.123, -1.7, 0.9);
        assert_eq!(g.encode(x), g.encode(x));
        let before = g.encoder.clamp_count();
        let inside = g.encode(DVec3::new(2.0, 0.0, 0.0));
        let outside = g.encode(DVec3::new(3.5, 0.0, 0.0));
        assert_eq!(inside, outside);
        assert_eq!(g.encoder.clamp_count(), before + 1);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = grid(9);
        let enc = &g.encoder;
        let dim = enc.output_dim();
        let x = DVec3::new(0.31, -0.47, 0.66);
        let mut jac = vec![0.0; 3 * dim];
        enc.encode_jacobian(&g.table, x, DMat3::IDENTITY, &mut jac);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = DVec3::ZERO;
            e[k] = h;
            let a = g.encode(x + e);
            let b = g.encode(x - e);
            for d in 0..dim {
                let fd = (a[d] - b[d]) / (2.0 * h);
                assert!((fd - jac[k * dim + d]).abs() < 1e-6 * (1.0 + fd.abs()), "k={k} d={d}");
            }
        }
    }

    #[test]
    fn backward_is_transpose_of_forward() {
        // <g, J t> = <J^T g, t> since the encoding is linear in the table.
        let g = grid(2);
        let enc = &g.encoder;
        let x = DVec3::new(-0.2, 1.1, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let go: Vec<f64> = (0..enc.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut gt = vec![0.0; g.table.len()];
        enc.encode_backward(x, &go, &mut gt);
        let lhs: f64 = g.encode(x).iter().zip(&go).map(|(a, b)| a * b).sum();
        let rhs: f64 = gt.iter().zip(&g.table).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let chain = DMat3::from_cols_array(&[1.0, 0.2, -0.1, 0.0, 0.9, 0.3, 0.5, 0.0, 1.1]);
        let gj: Vec<f64> = (0..3 * enc.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut jac = vec![0.0; 3 * enc.output_dim()];
        enc.encode_jacobian(&g.table, x, chain, &mut jac);
        let mut gt2 = vec![0.0; g.table.len()];
        enc.encode_jacobian_backward(x, chain, &gj, &mut gt2);
        let lhs: f64 = jac.iter().zip(&gj).map(|(a, b)| a * b).sum();
        let rhs: f64 = gt2.iter().zip(&g.table).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
