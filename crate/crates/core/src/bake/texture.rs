//! Neural texture (base color + specular feature) and the view-dependent
//! shader that turns them into pixel colors.

use glam::DVec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::GBuffer;
use crate::error::{Error, Result};
use crate::field::tape::Tap;
use crate::field::{Activation, ParamStore, TinyMlp};
use crate::scene::{camera_ray, CameraModel};

pub const CHANNELS: usize = 6;
pub const SHADER_WIDTHS: [usize; 3] = [6, 32, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralTexture {
    pub width: u32,
    pub height: u32,
    /// `CHANNELS` values per texel, row-major with row 0 at `v = 0`.
    pub data: Vec<f64>,
    /// Texels backed by a surface point.
    pub valid: Vec<bool>,
    /// Valid texels plus those filled by dilation.
    pub filled: Vec<bool>,
}

impl NeuralTexture {
    pub fn new(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self { width, height, data: vec![0.0; n * CHANNELS], valid: vec![false; n], filled: vec![false; n] }
    }

    pub fn texel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn texel(&self, i: usize) -> &[f64] {
        &self.data[i * CHANNELS..(i + 1) * CHANNELS]
    }

    pub fn set_texel(&mut self, i: usize, v: &[f64]) {
        self.data[i * CHANNELS..(i + 1) * CHANNELS].copy_from_slice(v);
        self.valid[i] = true;
        self.filled[i] = true;
    }

    /// Bilinear taps at `uv`; texel centers sit at `(i + 0.5) / width`.
    pub fn taps(&self, uv: [f64; 2]) -> [Tap; 4] {
        let (w, h) = (self.width as i64, self.height as i64);
        let x = uv[0] * w as f64 - 0.5;
        let y = uv[1] * h as f64 - 0.5;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let cx = |i: i64| i.clamp(0, w - 1);
        let cy = |i: i64| i.clamp(0, h - 1);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let id = |x: i64, y: i64| (cy(y) * w + cx(x)) as u32;
        [
            (id(x0, y0), (1.0 - fx) * (1.0 - fy)),
            (id(x0 + 1, y0), fx * (1.0 - fy)),
            (id(x0, y0 + 1), (1.0 - fx) * fy),
            (id(x0 + 1, y0 + 1), fx * fy),
        ]
    }

    /// Bilinear sample; the flag reports a tap on an unfilled texel.
    pub fn sample(&self, uv: [f64; 2]) -> ([f64; CHANNELS], bool) {
        let mut out = [0.0; CHANNELS];
        let mut bad = false;
        for (t, w) in self.taps(uv) {
            if w == 0.0 {
                continue;
            }
            bad |= !self.filled[t as usize];
            for (o, v) in out.iter_mut().zip(self.texel(t as usize)) {
                *o += w * v;
            }
        }
        (out, bad)
    }

    /// Fills unfilled texels from their filled 4-neighbours (mean), one ring
    /// per pass. Valid texels are never changed.
    pub fn dilate(&mut self, rings: usize) {
        let (w, h) = (self.width as usize, self.height as usize);
        for _ in 0..rings {
            let prev = self.filled.clone();
            let mut updates = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if prev[i] {
                        continue;
                    }
                    let mut acc = [0.0; CHANNELS];
                    let mut n = 0;
                    let nbrs = [(x > 0).then(|| i - 1), (x + 1 < w).then(|| i + 1), (y > 0).then(|| i - w), (y + 1 < h).then(|| i + w)];
                    for j in nbrs.into_iter().flatten() {
                        if prev[j] {
                            for (a, v) in acc.iter_mut().zip(self.texel(j)) {
                                *a += v;
                            }
                            n += 1;
                        }
                    }
                    if n > 0 {
                        updates.push((i, acc.map(|a| a / n as f64)));
                    }
                }
            }
            for (i, v) in updates {
                self.data[i * CHANNELS..(i + 1) * CHANNELS].copy_from_slice(&v);
                self.filled[i] = true;
            }
        }
    }

    pub fn clamp_base(&mut self) {
        for t in self.data.chunks_exact_mut(CHANNELS) {
            for v in &mut t[..3] {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Base color as 8-bit RGB, unfilled texels black.
    pub fn base_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.texel_count() * 3);
        for i in 0..self.texel_count() {
            let t = self.texel(i);
            for v in &t[..3] {
                out.push(if self.filled[i] { (v.clamp(0.0, 1.0) * 255.0).round() as u8 } else { 0 });
            }
        }
        out
    }

    /// Specular feature quantized per channel as `value = q * scale + offset`.
    pub fn specular_rgb8(&self) -> (Vec<u8>, [SpecularQuant; 3]) {
        let q = SpecularQuant::fit(&[self]);
        (self.specular_rgb8_with(&q), q)
    }

    /// Quantizes with a given quantizer; unfilled texels are 0.
    pub fn specular_rgb8_with(&self, quant: &[SpecularQuant; 3]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.texel_count() * 3);
        for i in 0..self.texel_count() {
            let t = self.texel(i);
            for k in 0..3 {
                out.push(if self.filled[i] { quant[k].encode(t[3 + k]) } else { 0 });
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecularQuant {
    pub scale: f64,
    pub offset: f64,
}

impl SpecularQuant {
    /// Per-channel range of the filled specular texels of all textures.
    pub fn fit(textures: &[&NeuralTexture]) -> [SpecularQuant; 3] {
        let mut quant = [SpecularQuant { scale: 1.0, offset: 0.0 }; 3];
        for (k, q) in quant.iter_mut().enumerate() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in textures {
                for i in (0..t.texel_count()).filter(|i| t.filled[*i]) {
                    lo = lo.min(t.texel(i)[3 + k]);
                    hi = hi.max(t.texel(i)[3 + k]);
                }
            }
            if lo.is_finite() {
                let scale = (hi - lo) / 255.0;
                *q = SpecularQuant { scale: if scale > 0.0 { scale } else { 1.0 }, offset: lo };
            }
        }
        quant
    }

    pub fn encode(&self, v: f64) -> u8 {
        ((v - self.offset) / self.scale).round().clamp(0.0, 255.0) as u8
    }

    pub fn decode(&self, q: u8) -> f64 {
        q as f64 * self.scale + self.offset
    }
}

/// `6 -> 32 (relu) -> 3` MLP mapping specular feature and view direction to
/// an RGB offset.
#[derive(Clone, Debug)]
pub struct ShaderMlp {
    pub params: ParamStore,
    pub mlp: TinyMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaderLayerJson {
    /// `[out, in]`; weights are row-major.
    pub shape: [usize; 2],
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaderJson {
    pub widths: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub layers: Vec<ShaderLayerJson>,
}

impl ShaderMlp {
    pub const PREFIX: &'static str = "shader";

    pub fn new(seed: u64) -> Self {
        let mut params = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = TinyMlp::new(&mut params, Self::PREFIX, &SHADER_WIDTHS, Activation::None, &mut rng);
        let (w, _) = mlp.layers()[1];
        params.get_mut(w).iter_mut().for_each(|v| *v *= 0.1);
        Self { params, mlp }
    }

    pub fn zeros() -> Self {
        let mut s = Self::new(0);
        for id in s.params.ids().collect::<Vec<_>>() {
            s.params.get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        s
    }

    /// Rebinds to `shader.*` tensors inside a larger store.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mut params = ParamStore::default();
        for id in store.ids().filter(|id| store.name(*id).starts_with("shader.")) {
            params.add(store.name(id), store.shape(id).to_vec(), store.get(id).to_vec());
        }
        let mlp = TinyMlp::bind(&params, Self::PREFIX, &SHADER_WIDTHS, Activation::None)?;
        Ok(Self { params, mlp })
    }

    pub fn eval(&self, spec: [f64; 3], dir: DVec3) -> [f64; 3] {
        let y = self.mlp.eval(&self.params, &[spec[0], spec[1], spec[2], dir.x, dir.y, dir.z]).expect("shader width");
        [y[0], y[1], y[2]]
    }

    pub fn to_json(&self) -> ShaderJson {
        let layers = self
            .mlp
            .layers()
            .iter()
            .map(|(w, b)| {
                let s = self.params.shape(*w);
                ShaderLayerJson {
                    shape: [s[0], s[1]],
                    weights: self.params.get(*w).iter().map(|v| *v as f32).collect(),
                    bias: self.params.get(*b).iter().map(|v| *v as f32).collect(),
                }
            })
            .collect();
        ShaderJson { widths: SHADER_WIDTHS.to_vec(), hidden_activation: "relu".into(), output_activation: "none".into(), layers }
    }

    pub fn from_json(j: &ShaderJson) -> Result<Self> {
        if j.widths != SHADER_WIDTHS || j.layers.len() != 2 || j.hidden_activation != "relu" || j.output_activation != "none" {
            return Err(Error::Validation(format!("shader json: unsupported architecture {:?}", j.widths)));
        }
        let mut s = Self::zeros();
        for (l, (w, b)) in j.layers.iter().zip(s.mlp.layers().to_vec()) {
            let shape = s.params.shape(w).to_vec();
            if l.shape != [shape[0], shape[1]] || l.weights.len() != shape[0] * shape[1] || l.bias.len() != shape[0] {
                return Err(Error::Validation(format!("shader json: layer shape {:?} != {shape:?}", l.shape)));
            }
            s.params.get_mut(w).iter_mut().zip(&l.weights).for_each(|(d, v)| *d = *v as f64);
            s.params.get_mut(b).iter_mut().zip(&l.bias).for_each(|(d, v)| *d = *v as f64);
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<DVec3>,
    /// Hit pixels whose bilinear footprint touched an unfilled texel.
    pub invalid_samples: usize,
}

/// `C = clamp(B + shader(S, d), 0, 1)` on hits, `background` elsewhere.
pub fn shade(g: &GBuffer, tex: &NeuralTexture, shader: &ShaderMlp, cam: &CameraModel, background: DVec3) -> ShadedImage {
    let mut rgb = vec![background; g.width * g.height];
    let mut invalid = 0;
    for i in 0..rgb.len() {
        if !g.hit(i) {
            continue;
        }
        let (t, bad) = tex.sample(g.uv[i]);
        invalid += bad as usize;
        let d = camera_ray(cam, (i % g.width) as f64, (i / g.width) as f64, g.jitter).dir;
        let o = shader.eval([t[3], t[4], t[5]], d);
        rgb[i] = DVec3::new(t[0] + o[0], t[1] + o[1], t[2] + o[2]).clamp(DVec3::ZERO, DVec3::ONE);
    }
    if invalid > 0 {
        tracing::warn!(invalid, "shade: samples touched unfilled texels");
    }
    ShadedImage { width: g.width, height: g.height, rgb, invalid_samples: invalid }
}
