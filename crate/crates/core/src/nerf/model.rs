//! The radiance field: density branch and color branch, each a hash grid
//! followed by small MLP heads.

use glam::{DMat3, DVec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::contract::{contract_jacobian, contract_unchecked};
use crate::field::mlp::MlpTrace;
use crate::field::{Activation, GridConfig, HashEncoder, ParamId, ParamStore, Tape, Tensor, TinyMlp, Var};
use crate::geom::Aabb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub density_grid: GridConfig,
    pub color_grid: GridConfig,
    /// Hidden widths of the density and color MLPs.
    pub hidden: Vec<usize>,
    /// Hidden widths of the semantic and normal heads.
    pub head_hidden: Vec<usize>,
    pub grid_init_scale: f64,
    pub density_bias_init: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            density_grid: GridConfig::default(),
            color_grid: GridConfig::default(),
            hidden: vec![32],
            head_hidden: vec![16],
            grid_init_scale: 1e-4,
            density_bias_init: -1.0,
        }
    }
}

impl FieldConfig {
    /// Widths used by the paper's appendix (16 levels, 8 features, 128-wide MLPs).
    pub fn paper_preset() -> Self {
        let grid = GridConfig { levels: 16, features_per_level: 8, log2_table_size: 19, base_resolution: 16, per_level_scale: 1.38 };
        Self { density_grid: grid.clone(), color_grid: grid, hidden: vec![128, 128], head_hidden: vec![128, 128], ..Self::default() }
    }
}

/// Similarity transform from world into the normalized space that is
/// contracted: `(x - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldFrame {
    pub center: [f64; 3],
    pub scale: f64,
}

impl FieldFrame {
    /// Maps the largest half-extent of `bounds` to 1.
    pub fn from_bounds(b: &Aabb) -> Self {
        Self { center: b.center().to_array(), scale: (b.extent() * 0.5).max_element().max(1e-9) }
    }

    pub fn to_local(&self, x: DVec3) -> DVec3 {
        (x - DVec3::from_array(self.center)) / self.scale
    }

    pub fn to_world(&self, y: DVec3) -> DVec3 {
        y * self.scale + DVec3::from_array(self.center)
    }
}

/// Field values at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub color: DVec3,
    pub semantics: Vec<f64>,
    pub normal_mlp: DVec3,
}

/// Scalar density with a spatial gradient, as consumed by normal
/// estimation and isosurface extraction.
pub trait DensityField {
    fn density(&self, x: DVec3) -> f64;
    fn density_gradient(&self, x: DVec3) -> DVec3;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityNormal {
    pub normal: DVec3,
    pub degenerate: bool,
}

/// `-grad sigma / |grad sigma|`; gradients shorter than 1e-8 yield the
/// fallback `(0, 0, 1)` with the degenerate flag set.
pub fn density_normal(f: &impl DensityField, x: DVec3) -> Result<DensityNormal> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("density_normal: non-finite point {x:?}")));
    }
    let g = f.density_gradient(x);
    let n = g.length();
    if !(n >= 1e-8) {
        return Ok(DensityNormal { normal: DVec3::Z, degenerate: true });
    }
    Ok(DensityNormal { normal: -g / n, degenerate: false })
}

#[derive(Clone, Debug)]
pub struct RadianceField {
    pub config: FieldConfig,
    pub frame: FieldFrame,
    pub num_classes: usize,
    pub params: ParamStore,
    density_enc: HashEncoder,
    color_enc: HashEncoder,
    density_table: ParamId,
    color_table: ParamId,
    density_mlp: TinyMlp,
    color_mlp: TinyMlp,
    semantic_mlp: TinyMlp,
    normal_mlp: TinyMlp,
}

/// Per-sample tape variables of a batch evaluation.
pub struct SampleVars {
    pub sigma: Var,
    pub color: Var,
    pub semantics: Option<Var>,
    pub normal_mlp: Option<Var>,
    /// Density normals for the first `n` samples requested.
    pub normal_density: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Heads {
    pub color: bool,
    pub semantics: bool,
    pub normals: bool,
    /// Number of leading samples that get density normals.
    pub density_normals: usize,
}

fn widths(input: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(out);
    w
}

impl RadianceField {
    pub fn new(config: FieldConfig, frame: FieldFrame, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let density_enc = HashEncoder::new(config.density_grid.clone());
        let color_enc = HashEncoder::new(config.color_grid.clone());
        let dt = density_enc.init_params(&mut rng, config.grid_init_scale);
        let density_table = params.add("density.grid", vec![dt.len()], dt);
        let ct = color_enc.init_params(&mut rng, config.grid_init_scale);
        let color_table = params.add("color.grid", vec![ct.len()], ct);
        let dd = density_enc.output_dim();
        let cd = color_enc.output_dim();
        let density_mlp = TinyMlp::new(&mut params, "density.mlp", &widths(dd, &config.hidden, 1), Activation::Softplus, &mut rng);
        let last_bias = density_mlp.layers().last().unwrap().1;
        params.get_mut(last_bias)[0] = config.density_bias_init;
        let color_mlp = TinyMlp::new(&mut params, "color.mlp", &widths(cd + 3, &config.hidden, 3), Activation::Sigmoid, &mut rng);
        let semantic_mlp = TinyMlp::new(
            &mut params,
            "semantic.mlp",
            &widths(cd, &config.head_hidden, num_classes.max(1)),
            Activation::Softmax,
            &mut rng,
        );
        let normal_mlp = TinyMlp::new(&mut params, "normal.mlp", &widths(cd, &config.head_hidden, 3), Activation::None, &mut rng);
        Self {
            config,
            frame,
            num_classes: num_classes.max(1),
            params,
            density_enc,
            color_enc,
            density_table,
            color_table,
            density_mlp,
            color_mlp,
            semantic_mlp,
            normal_mlp,
        }
    }

    /// Rebuilds the structure from `config` and copies tensors from `params`.
    pub fn from_params(config: FieldConfig, frame: FieldFrame, num_classes: usize, params: &ParamStore) -> Result<Self> {
        let mut f = Self::new(config, frame, num_classes, 0);
        f.params.load_from(params)?;
        Ok(f)
    }

    pub fn density_table(&self) -> ParamId {
        self.density_table
    }

    pub fn color_table(&self) -> ParamId {
        self.color_table
    }

    pub fn grid_clamp_count(&self) -> u64 {
        self.density_enc.clamp_count() + self.color_enc.clamp_count()
    }

    /// Contracted coordinate and d contracted / d world.
    pub fn contract_point(&self, x: DVec3) -> (DVec3, DMat3) {
        let l = self.frame.to_local(x);
        (contract_unchecked(l), contract_jacobian(l) * (1.0 / self.frame.scale))
    }

    fn check_points(points: &[DVec3]) -> Result<()> {
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("field: non-finite sample point {p:?}")));
        }
        Ok(())
    }

    fn density_trace<'a>(&'a self, tape: &mut Tape<'a>, contracted: Vec<DVec3>) -> Result<MlpTrace> {
        let feats = tape.grid(&self.density_enc, self.density_table, contracted);
        self.density_mlp.forward(tape, feats)
    }

    /// Densities only (N x 1), for free-space regularization.
    pub fn record_density<'a>(&'a self, tape: &mut Tape<'a>, points: &[DVec3]) -> Result<Var> {
        Self::check_points(points)?;
        let c = points.iter().map(|p| self.contract_point(*p).0).collect();
        Ok(self.density_trace(tape, c)?.out)
    }

    /// Records every requested head for a set of world points and unit view
    /// directions.
    pub fn record_samples<'a>(&'a self, tape: &mut Tape<'a>, points: &[DVec3], dirs: &[DVec3], heads: Heads) -> Result<SampleVars> {
        Self::check_points(points)?;
        let n = points.len();
        let mut contracted = Vec::with_capacity(n);
        let mut chains = Vec::with_capacity(heads.density_normals);
        for (i, p) in points.iter().enumerate() {
            let (c, j) = self.contract_point(*p);
            contracted.push(c);
            if i < heads.density_normals {
                chains.push(j);
            }
        }
        let dtrace = self.density_trace(tape, contracted.clone())?;
        let sigma = dtrace.out;

        let normal_density = if heads.density_normals > 0 {
            let k = heads.density_normals.min(n);
            let pts: Vec<DVec3> = contracted[..k].to_vec();
            let jac = tape.grid_jacobian(&self.density_enc, self.density_table, pts, chains);
            let rows: Vec<usize> = (0..k).collect();
            let sub = MlpTrace {
                out: dtrace.out,
                raw: dtrace.raw,
                hidden_pre: dtrace.hidden_pre.iter().map(|v| tape.select_rows(*v, rows.clone())).collect(),
            };
            let g = self.density_mlp.tangent(tape, &sub, jac, 3)?;
            let g = tape.reshape(g, k, 3)?;
            // softplus' > 0 only rescales the gradient, so the direction of
            // -grad(raw) equals that of -grad(sigma).
            let neg = tape.scale(g, -1.0);
            Some(tape.normalize_rows(neg, 1e-12))
        } else {
            None
        };

        let need_color_feats = heads.color || heads.semantics || heads.normals;
        let (color, semantics, normal_mlp) = if need_color_feats {
            let feats = tape.grid(&self.color_enc, self.color_table, contracted);
            let color = if heads.color {
                let d = tape.input(Tensor::from_vec3s(dirs));
                let x = tape.concat(&[feats, d])?;
                self.color_mlp.forward(tape, x)?.out
            } else {
                sigma
            };
            let semantics = if heads.semantics { Some(self.semantic_mlp.forward(tape, feats)?.out) } else { None };
            let normal_mlp = if heads.normals {
                let raw = self.normal_mlp.forward(tape, feats)?.out;
                Some(tape.normalize_rows(raw, 1e-12))
            } else {
                None
            };
            (color, semantics, normal_mlp)
        } else {
            (sigma, None, None)
        };
        Ok(SampleVars { sigma, color, semantics, normal_mlp, normal_density })
    }

    /// Straight-line evaluation of density at a world point.
    pub fn sigma(&self, x: DVec3) -> f64 {
        let (c, _) = self.contract_point(x);
        let mut feats = vec![0.0; self.density_enc.output_dim()];
        self.density_enc.encode(self.params.get(self.density_table), c, &mut feats);
        self.density_mlp.eval(&self.params, &feats).map(|v| v[0]).unwrap_or(0.0)
    }

    /// Straight-line color and semantics at a world point.
    pub fn color_semantics(&self, x: DVec3, d: DVec3) -> (DVec3, Vec<f64>) {
        let (c, _) = self.contract_point(x);
        let mut feats = vec![0.0; self.color_enc.output_dim()];
        self.color_enc.encode(self.params.get(self.color_table), c, &mut feats);
        let sem = self.semantic_mlp.eval(&self.params, &feats).expect("semantic head width");
        feats.extend_from_slice(&[d.x, d.y, d.z]);
        let col = self.color_mlp.eval(&self.params, &feats).expect("color head width");
        (DVec3::new(col[0], col[1], col[2]), sem)
    }
}

/// Evaluates every head of the field at one point.
pub fn field_query(f: &RadianceField, x: DVec3, d: DVec3) -> Result<FieldSample> {
    if !x.is_finite() || !d.is_finite() {
        return Err(Error::InvalidInput("field_query: non-finite input".into()));
    }
    let (color, semantics) = f.color_semantics(x, d);
    let (c, _) = f.contract_point(x);
    let mut feats = vec![0.0; f.color_enc.output_dim()];
    f.color_enc.encode(f.params.get(f.color_table), c, &mut feats);
    let n = f.normal_mlp.eval(&f.params, &feats)?;
    let n = DVec3::new(n[0], n[1], n[2]);
    Ok(FieldSample { sigma: f.sigma(x), color, semantics, normal_mlp: n / n.length().max(1e-12) })
}

impl DensityField for RadianceField {
    fn density(&self, x: DVec3) -> f64 {
        self.sigma(x)
    }

    fn density_gradient(&self, x: DVec3) -> DVec3 {
        let (c, j) = self.contract_point(x);
        let mut tape = Tape::new(&self.params);
        let Ok(tr) = self.density_trace(&mut tape, vec![c]) else { return DVec3::ZERO };
        let jac = tape.grid_jacobian(&self.density_enc, self.density_table, vec![c], vec![j]);
        let Ok(g) = self.density_mlp.tangent(&mut tape, &tr, jac, 3) else { return DVec3::ZERO };
        let raw = tape.value(tr.raw).data[0];
        let s = crate::field::tape::sigmoid(raw);
        let g = &tape.value(g).data;
        DVec3::new(g[0], g[1], g[2]) * s
    }
}
