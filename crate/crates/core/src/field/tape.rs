//! Batched reverse-mode differentiation.
//!
//! Every node holds a row-major matrix; one row per sample (or ray). The
//! backward sweep visits nodes in reverse creation order and accumulates
//! parameter gradients sequentially, so results are bit-reproducible.

use glam::{DMat3, DVec3};

use super::grid::HashEncoder;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(n, 1, data)
    }

    pub fn from_vec3s(v: &[DVec3]) -> Self {
        let mut data = Vec::with_capacity(v.len() * 3);
        for p in v {
            data.extend_from_slice(&[p.x, p.y, p.z]);
        }
        Self::new(v.len(), 3, data)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_vec3(&self, r: usize) -> DVec3 {
        let s = self.row(r);
        DVec3::new(s[0], s[1], s[2])
    }
}

/// Sample layout of a batch of rays: samples of ray `r` occupy
/// `offsets[r]..offsets[r + 1]`.
#[derive(Clone, Debug, Default)]
pub struct RayLayout {
    pub offsets: Vec<usize>,
    /// Sample distance along the ray.
    pub t: Vec<f64>,
    /// Interval length owned by each sample.
    pub delta: Vec<f64>,
}

impl RayLayout {
    pub fn num_rays(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn num_samples(&self) -> usize {
        self.t.len()
    }

    pub fn ray(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }
}

/// Front-to-back compositing weights for one ray. Returns the transmittance
/// after each sample in `t_after` when provided.
pub fn composite_weights(sigma: &[f64], delta: &[f64], weights: &mut [f64], mut t_after: Option<&mut [f64]>) {
    let mut trans = 1.0;
    for i in 0..sigma.len() {
        let alpha = 1.0 - (-sigma[i] * delta[i]).exp();
        weights[i] = trans * alpha;
        trans *= 1.0 - alpha;
        if let Some(ta) = t_after.as_deref_mut() {
            ta[i] = trans;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// One bilinear tap into a texture parameter: texel index and weight.
pub type Tap = (u32, f64);

enum Op<'a> {
    Input,
    Param(ParamId),
    Linear { x: Var, w: ParamId, b: Option<ParamId> },
    Grid { enc: &'a HashEncoder, table: ParamId, points: Vec<DVec3> },
    GridJacobian { enc: &'a HashEncoder, table: ParamId, points: Vec<DVec3>, chains: Vec<DMat3> },
    Reshape { x: Var },
    Relu { x: Var },
    MaskRepeat { x: Var, pre: Var, repeat: usize },
    Softplus { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    Exp { x: Var },
    Log { x: Var, floor: f64 },
    Square { x: Var },
    Abs { x: Var },
    ClampUnit { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulCol { x: Var, s: Var },
    Scale { x: Var, c: f64 },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    GatherCols { x: Var, cols: Vec<usize> },
    SumAll { x: Var },
    RowSum { x: Var },
    NormalizeRows { x: Var, eps: f64 },
    Composite { sigma: Var, layout: &'a RayLayout, t_after: Vec<f64> },
    RaySum { w: Var, attr: Var, layout: &'a RayLayout },
    DepthAlign { d: Var, target: Vec<f64>, groups: Vec<Vec<usize>>, scale: Vec<f64> },
    Texture { tex: ParamId, channels: usize, taps: Vec<[Tap; 4]> },
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
}

/// Closed-form least-squares scale and shift mapping `src` onto `dst`.
///
/// Centered form so that `dst == src` yields exactly `(1, 0)`. Returns
/// `None` when `src` is constant (the 2x2 system is singular).
pub fn least_squares_affine(src: &[f64], dst: &[f64]) -> Option<(f64, f64)> {
    let n = src.len() as f64;
    if src.len() < 2 {
        return None;
    }
    let ms = src.iter().sum::<f64>() / n;
    let md = dst.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        cov += (s - ms) * (d - md);
        var += (s - ms) * (s - ms);
    }
    if var <= 1e-300 * n || !var.is_finite() {
        return None;
    }
    let a = cov / var;
    Some((a, md - a * ms))
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.params.shape(id);
        let (rows, cols) = match shape {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (1, self.params.get(id).len()),
        };
        let value = Tensor::new(rows, cols, self.params.get(id).to_vec());
        self.push(value, Op::Param(id))
    }

    /// `y = x W^T + b`, with `W` stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let shape = self.params.shape(w);
        let (out, inp) = (shape[0], shape[1]);
        let xv = &self.nodes[x.0].value;
        if xv.cols != inp {
            return Err(Error::InvalidInput(format!("linear: input width {} != {}", xv.cols, inp)));
        }
        let wv = self.params.get(w);
        let bv = b.map(|b| self.params.get(b));
        let mut y = Tensor::zeros(xv.rows, out);
        for (xr, yr) in xv.data.chunks_exact(inp.max(1)).zip(y.data.chunks_exact_mut(out.max(1))) {
            for (o, (yo, wr)) in yr.iter_mut().zip(wv.chunks_exact(inp.max(1))).enumerate() {
                let acc: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                *yo = acc + bv.map_or(0.0, |b| b[o]);
            }
        }
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn grid(&mut self, enc: &'a HashEncoder, table: ParamId, points: Vec<DVec3>) -> Var {
        let dim = enc.output_dim();
        let tab = self.params.get(table);
        let mut y = Tensor::zeros(points.len(), dim);
        for (r, p) in points.iter().enumerate() {
            enc.encode(tab, *p, y.row_mut(r));
        }
        self.push(y, Op::Grid { enc, table, points })
    }

    /// Per point, 3 consecutive rows of d encoding / d world axis.
    pub fn grid_jacobian(&mut self, enc: &'a HashEncoder, table: ParamId, points: Vec<DVec3>, chains: Vec<DMat3>) -> Var {
        let dim = enc.output_dim();
        let tab = self.params.get(table);
        let mut y = Tensor::zeros(points.len() * 3, dim);
        for (r, (p, c)) in points.iter().zip(&chains).enumerate() {
            enc.encode_jacobian(tab, *p, *c, &mut y.data[r * 3 * dim..(r + 1) * 3 * dim]);
        }
        self.push(y, Op::GridJacobian { enc, table, points, chains })
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if rows * cols != xv.data.len() {
            return Err(Error::InvalidInput(format!("reshape {}x{} -> {rows}x{cols}", xv.rows, xv.cols)));
        }
        let y = Tensor::new(rows, cols, xv.data.clone());
        Ok(self.push(y, Op::Reshape { x }))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op<'a>) -> Var {
        let xv = &self.nodes[x.0].value;
        let y = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|v| f(*v)).collect());
        self.push(y, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu { x })
    }

    /// Zero every row block of `x` whose matching row of `pre` is not positive.
    /// `x` has `repeat` rows per row of `pre`.
    pub fn mask_repeat(&mut self, x: Var, pre: Var, repeat: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let pv = &self.nodes[pre.0].value;
        if xv.rows != pv.rows * repeat || xv.cols != pv.cols {
            return Err(Error::InvalidInput("mask_repeat: shape mismatch".into()));
        }
        let mut y = xv.clone();
        for r in 0..xv.rows {
            let pr = pv.row(r / repeat);
            for (v, p) in y.row_mut(r).iter_mut().zip(pr) {
                if *p <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(self.push(y, Op::MaskRepeat { x, pre, repeat }))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut y = xv.clone();
        for r in 0..y.rows {
            softmax_in_place(y.row_mut(r));
        }
        self.push(y, Op::Softmax { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp { x })
    }

    /// `ln(max(x, floor))`; the gradient is zero below the floor.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        self.map(x, move |v| v.max(floor).ln(), Op::Log { x, floor })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square { x })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs { x })
    }

    pub fn clamp_unit(&mut self, x: Var) -> Var {
        self.map(x, |v| v.clamp(0.0, 1.0), Op::ClampUnit { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, move |v| v * c, Op::Scale { x, c })
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op<'a>) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.rows != bv.rows || av.cols != bv.cols {
            return Err(Error::InvalidInput(format!(
                "elementwise shape mismatch {}x{} vs {}x{}",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let y = Tensor::new(av.rows, av.cols, av.data.iter().zip(&bv.data).map(|(p, q)| f(*p, *q)).collect());
        Ok(self.push(y, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p + q, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p - q, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p * q, Op::Mul { a, b })
    }

    /// Scale each row of `x` by the matching entry of column vector `s`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let sv = &self.nodes[s.0].value;
        if sv.cols != 1 || sv.rows != xv.rows {
            return Err(Error::InvalidInput("mul_col: shape mismatch".into()));
        }
        let mut y = xv.clone();
        for r in 0..y.rows {
            let k = sv.data[r];
            y.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        Ok(self.push(y, Op::MulCol { x, s }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.nodes[parts[0].0].value.rows;
        let mut cols = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows != rows {
                return Err(Error::InvalidInput("concat: row mismatch".into()));
            }
            cols += v.cols;
        }
        let mut y = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let v = &self.nodes[p.0].value;
                y.data[r * cols + c0..r * cols + c0 + v.cols].copy_from_slice(v.row(r));
                c0 += v.cols;
            }
        }
        Ok(self.push(y, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if start + len > xv.cols {
            return Err(Error::InvalidInput("slice out of range".into()));
        }
        let mut y = Tensor::zeros(xv.rows, len);
        for r in 0..xv.rows {
            y.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        Ok(self.push(y, Op::Slice { x, start }))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut y = Tensor::zeros(rows.len(), xv.cols);
        for (i, r) in rows.iter().enumerate() {
            y.row_mut(i).copy_from_slice(xv.row(*r));
        }
        self.push(y, Op::SelectRows { x, rows })
    }

    /// `y[r] = x[r, cols[r]]`.
    pub fn gather_cols(&mut self, x: Var, cols: Vec<usize>) -> Var {
        let xv = &self.nodes[x.0].value;
        let y = Tensor::column(cols.iter().enumerate().map(|(r, c)| xv.get(r, *c)).collect());
        self.push(y, Op::GatherCols { x, cols })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.data.len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let y = Tensor::column((0..xv.rows).map(|r| xv.row(r).iter().sum()).collect());
        self.push(y, Op::RowSum { x })
    }

    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let mut y = self.nodes[x.0].value.clone();
        for r in 0..y.rows {
            let row = y.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v /= n);
        }
        self.push(y, Op::NormalizeRows { x, eps })
    }

    /// Per-sample compositing weights from densities (N x 1).
    pub fn composite(&mut self, sigma: Var, layout: &'a RayLayout) -> Result<Var> {
        let sv = &self.nodes[sigma.0].value;
        if sv.cols != 1 || sv.rows != layout.num_samples() {
            return Err(Error::InvalidInput("composite: sigma must be N x 1".into()));
        }
        let mut w = vec![0.0; sv.rows];
        let mut t_after = vec![0.0; sv.rows];
        for r in 0..layout.num_rays() {
            let range = layout.ray(r);
            composite_weights(
                &sv.data[range.clone()],
                &layout.delta[range.clone()],
                &mut w[range.clone()],
                Some(&mut t_after[range]),
            );
        }
        Ok(self.push(Tensor::column(w), Op::Composite { sigma, layout, t_after }))
    }

    /// Per-ray weighted sums `sum_i w_i attr_i` (R x k).
    pub fn ray_sum(&mut self, w: Var, attr: Var, layout: &'a RayLayout) -> Result<Var> {
        let wv = &self.nodes[w.0].value;
        let av = &self.nodes[attr.0].value;
        if wv.rows != av.rows || wv.cols != 1 {
            return Err(Error::InvalidInput("ray_sum: shape mismatch".into()));
        }
        let k = av.cols;
        let mut y = Tensor::zeros(layout.num_rays(), k);
        for r in 0..layout.num_rays() {
            let out = &mut y.data[r * k..(r + 1) * k];
            for i in layout.ray(r) {
                let wi = wv.data[i];
                for (o, a) in out.iter_mut().zip(av.row(i)) {
                    *o += wi * a;
                }
            }
        }
        Ok(self.push(y, Op::RaySum { w, attr, layout }))
    }

    /// Per-group aligned depth error `sum_i (a_g d_i + b_g - m_i)^2` where
    /// `(a_g, b_g)` solve the least-squares fit inside each group. Output is
    /// one row per group. Constant-depth groups fall back to `a = 1`.
    pub fn depth_align(&mut self, d: Var, target: Vec<f64>, groups: Vec<Vec<usize>>) -> Result<Var> {
        let dv = &self.nodes[d.0].value;
        if dv.cols != 1 || dv.rows != target.len() {
            return Err(Error::InvalidInput("depth_align: shape mismatch".into()));
        }
        let mut out = Vec::with_capacity(groups.len());
        let mut scale = Vec::with_capacity(groups.len());
        for g in &groups {
            let src: Vec<f64> = g.iter().map(|&i| dv.data[i]).collect();
            let dst: Vec<f64> = g.iter().map(|&i| target[i]).collect();
            let (a, b) = align_or_fallback(&src, &dst);
            let e: f64 = src.iter().zip(&dst).map(|(s, m)| (a * s + b - m).powi(2)).sum();
            out.push(e);
            scale.push(a);
        }
        Ok(self.push(Tensor::column(out), Op::DepthAlign { d, target, groups, scale }))
    }

    /// Bilinear texture lookups: each output row is `sum_k w_k * tex[texel_k]`.
    pub fn texture(&mut self, tex: ParamId, channels: usize, taps: Vec<[Tap; 4]>) -> Var {
        let t = self.params.get(tex);
        let mut y = Tensor::zeros(taps.len(), channels);
        for (r, tp) in taps.iter().enumerate() {
            let row = y.row_mut(r);
            for &(texel, w) in tp {
                let src = &t[texel as usize * channels..(texel as usize + 1) * channels];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        self.push(y, Op::Texture { tex, channels, taps })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.rows != 1 || rv.cols != 1 {
            return Err(Error::InvalidInput(format!("backward: root is {}x{}, not a scalar", rv.rows, rv.cols)));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (d, v) in grads.get_mut(*id).iter_mut().zip(&g.data) {
                        *d += v;
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let shape = self.params.shape(*w);
                    let inp = shape[1];
                    let wv = self.params.get(*w);
                    {
                        let gw = grads.get_mut(*w);
                        for r in 0..xv.rows {
                            let xr = xv.row(r);
                            for (go, dst) in g.row(r).iter().zip(gw.chunks_exact_mut(inp.max(1))) {
                                if *go != 0.0 {
                                    for (d, xi) in dst.iter_mut().zip(xr) {
                                        *d += go * xi;
                                    }
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = grads.get_mut(*b);
                        for r in 0..g.rows {
                            for (d, v) in gb.iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                    if self.wants_grad(*x) {
                        let gx = adj_entry(&mut adj, *x, xv);
                        for r in 0..xv.rows {
                            let gr = g.row(r);
                            let dst = gx.row_mut(r);
                            for (go, wr) in gr.iter().zip(wv.chunks_exact(inp.max(1))) {
                                if *go != 0.0 {
                                    for (d, wi) in dst.iter_mut().zip(wr) {
                                        *d += go * wi;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Grid { enc, table, points } => {
                    let gt = grads.get_mut(*table);
                    for (r, p) in points.iter().enumerate() {
                        enc.encode_backward(*p, g.row(r), gt);
                    }
                }
                Op::GridJacobian { enc, table, points, chains } => {
                    let dim = enc.output_dim();
                    let gt = grads.get_mut(*table);
                    for (r, (p, c)) in points.iter().zip(chains).enumerate() {
                        enc.encode_jacobian_backward(*p, *c, &g.data[r * 3 * dim..(r + 1) * 3 * dim], gt);
                    }
                }
                Op::Reshape { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    add_into(&mut gx.data, &g.data);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), xv) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::MaskRepeat { x, pre, repeat } => {
                    let xv = &self.nodes[x.0].value;
                    let pv = &self.nodes[pre.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for r in 0..xv.rows {
                        let pr = pv.row(r / repeat);
                        for ((d, gv), p) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(pr) {
                            if *p > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Softplus { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), v) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        *d += gv * sigmoid(*v);
                    }
                }
                Op::Sigmoid { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), s) in gx.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *d += gv * s * (1.0 - s);
                    }
                }
                Op::Softmax { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for r in 0..y.rows {
                        let s = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, si), gi) in gx.row_mut(r).iter_mut().zip(s).zip(gr) {
                            *d += si * (gi - dot);
                        }
                    }
                }
                Op::Exp { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), e) in gx.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *d += gv * e;
                    }
                }
                Op::Log { x, floor } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), v) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        if *v > *floor {
                            *d += gv / v;
                        }
                    }
                }
                Op::Square { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), v) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        *d += 2.0 * gv * v;
                    }
                }
                Op::Abs { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), v) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        *d += gv * if *v > 0.0 { 1.0 } else if *v < 0.0 { -1.0 } else { 0.0 };
                    }
                }
                Op::ClampUnit { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for ((d, gv), v) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        if (0.0..=1.0).contains(v) {
                            *d += gv;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.wants_grad(v) {
                            let gv = adj_entry(&mut adj, v, &self.nodes[v.0].value);
                            add_into(&mut gv.data, &g.data);
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if self.wants_grad(*a) {
                        let ga = adj_entry(&mut adj, *a, &self.nodes[a.0].value);
                        add_into(&mut ga.data, &g.data);
                    }
                    if self.wants_grad(*b) {
                        let gb = adj_entry(&mut adj, *b, &self.nodes[b.0].value);
                        for (d, v) in gb.data.iter_mut().zip(&g.data) {
                            *d -= v;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.wants_grad(*a) {
                        let ga = adj_entry(&mut adj, *a, av);
                        for ((d, gv), o) in ga.data.iter_mut().zip(&g.data).zip(&bv.data) {
                            *d += gv * o;
                        }
                    }
                    if self.wants_grad(*b) {
                        let gb = adj_entry(&mut adj, *b, bv);
                        for ((d, gv), o) in gb.data.iter_mut().zip(&g.data).zip(&av.data) {
                            *d += gv * o;
                        }
                    }
                }
                Op::MulCol { x, s } => {
                    let xv = &self.nodes[x.0].value;
                    let sv = &self.nodes[s.0].value;
                    if self.wants_grad(*x) {
                        let gx = adj_entry(&mut adj, *x, xv);
                        for r in 0..xv.rows {
                            let k = sv.data[r];
                            for (d, gv) in gx.row_mut(r).iter_mut().zip(g.row(r)) {
                                *d += gv * k;
                            }
                        }
                    }
                    if self.wants_grad(*s) {
                        let gs = adj_entry(&mut adj, *s, sv);
                        for r in 0..xv.rows {
                            gs.data[r] += g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for (d, gv) in gx.data.iter_mut().zip(&g.data) {
                        *d += gv * c;
                    }
                }
                Op::Concat { parts } => {
                    let cols = y.cols;
                    let mut c0 = 0;
                    for p in parts {
                        let pv = &self.nodes[p.0].value;
                        let pc = pv.cols;
                        if self.wants_grad(*p) {
                            let gp = adj_entry(&mut adj, *p, pv);
                            for r in 0..y.rows {
                                let src = &g.data[r * cols + c0..r * cols + c0 + pc];
                                add_into(gp.row_mut(r), src);
                            }
                        }
                        c0 += pc;
                    }
                }
                Op::Slice { x, start } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for r in 0..y.rows {
                        add_into(&mut gx.row_mut(r)[*start..*start + y.cols], g.row(r));
                    }
                }
                Op::SelectRows { x, rows } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for (i, r) in rows.iter().enumerate() {
                        add_into(gx.row_mut(*r), g.row(i));
                    }
                }
                Op::GatherCols { x, cols } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    let w = xv.cols;
                    for (r, c) in cols.iter().enumerate() {
                        gx.data[r * w + c] += g.data[r];
                    }
                }
                Op::SumAll { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    let s = g.data[0];
                    gx.data.iter_mut().for_each(|d| *d += s);
                }
                Op::RowSum { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for r in 0..xv.rows {
                        let s = g.data[r];
                        gx.row_mut(r).iter_mut().for_each(|d| *d += s);
                    }
                }
                Op::NormalizeRows { x, eps } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = adj_entry(&mut adj, *x, xv);
                    for r in 0..xv.rows {
                        let xr = xv.row(r);
                        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gr = g.row(r);
                        if n <= *eps {
                            for (d, gv) in gx.row_mut(r).iter_mut().zip(gr) {
                                *d += gv / eps;
                            }
                            continue;
                        }
                        let yr = y.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, gv), yv) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d += (gv - yv * dot) / n;
                        }
                    }
                }
                Op::Composite { sigma, layout, t_after } => {
                    let sv = &self.nodes[sigma.0].value;
                    let gs = adj_entry(&mut adj, *sigma, sv);
                    for r in 0..layout.num_rays() {
                        // d L / d sigma_k = delta_k (g_k T_{k+1} - sum_{i>k} g_i w_i)
                        let range = layout.ray(r);
                        let mut suffix = 0.0;
                        for k in range.rev() {
                            gs.data[k] += layout.delta[k] * (g.data[k] * t_after[k] - suffix);
                            suffix += g.data[k] * y.data[k];
                        }
                    }
                }
                Op::RaySum { w, attr, layout } => {
                    let wv = &self.nodes[w.0].value;
                    let av = &self.nodes[attr.0].value;
                    if self.wants_grad(*w) {
                        let gw = adj_entry(&mut adj, *w, wv);
                        for r in 0..layout.num_rays() {
                            let gr = g.row(r);
                            for i in layout.ray(r) {
                                gw.data[i] += av.row(i).iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    if self.wants_grad(*attr) {
                        let ga = adj_entry(&mut adj, *attr, av);
                        for r in 0..layout.num_rays() {
                            let gr = g.row(r);
                            for i in layout.ray(r) {
                                let wi = wv.data[i];
                                for (d, gv) in ga.row_mut(i).iter_mut().zip(gr) {
                                    *d += wi * gv;
                                }
                            }
                        }
                    }
                }
                Op::DepthAlign { d, target, groups, scale } => {
                    // (a, b) minimise the group error, so its derivative through
                    // them vanishes and only the explicit dependence remains.
                    let dv = &self.nodes[d.0].value;
                    let gd = adj_entry(&mut adj, *d, dv);
                    for (gi, grp) in groups.iter().enumerate() {
                        let src: Vec<f64> = grp.iter().map(|&i| dv.data[i]).collect();
                        let dst: Vec<f64> = grp.iter().map(|&i| target[i]).collect();
                        let (a, b) = align_or_fallback(&src, &dst);
                        debug_assert_eq!(a, scale[gi]);
                        for (k, &i) in grp.iter().enumerate() {
                            gd.data[i] += g.data[gi] * 2.0 * a * (a * src[k] + b - dst[k]);
                        }
                    }
                }
                Op::Texture { tex, channels, taps } => {
                    let gt = grads.get_mut(*tex);
                    for (r, tp) in taps.iter().enumerate() {
                        let gr = g.row(r);
                        for &(texel, w) in tp {
                            let dst = &mut gt[texel as usize * channels..(texel as usize + 1) * channels];
                            for (d, gv) in dst.iter_mut().zip(gr) {
                                *d += w * gv;
                            }
                        }
                    }
                }
            }
        }
        Ok(grads)
    }

    fn wants_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }
}

fn align_or_fallback(src: &[f64], dst: &[f64]) -> (f64, f64) {
    least_squares_affine(src, dst).unwrap_or_else(|| {
        let n = src.len().max(1) as f64;
        (1.0, dst.iter().zip(src).map(|(m, s)| m - s).sum::<f64>() / n)
    })
}

fn adj_entry<'t>(adj: &'t mut [Option<Tensor>], v: Var, like: &Tensor) -> &'t mut Tensor {
    adj[v.0].get_or_insert_with(|| Tensor::zeros(like.rows, like.cols))
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Central-difference check of every parameter entry.
    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let grads = {
            let mut tape = Tape::new(store);
            let root = f(&mut tape);
            tape.backward(root).unwrap()
        };
        let h = 1e-5;
        for id in store.ids() {
            for k in 0..store.get(id).len() {
                let orig = store.get(id)[k];
                store.get_mut(id)[k] = orig + h;
                let fp = {
                    let mut t = Tape::new(store);
                    let r = f(&mut t);
                    t.scalar(r)
                };
                store.get_mut(id)[k] = orig - h;
                let fm = {
                    let mut t = Tape::new(store);
                    let r = f(&mut t);
                    t.scalar(r)
                };
                store.get_mut(id)[k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = grads.get(id)[k];
                let err = (fd - an).abs() / (1e-6 + fd.abs().max(an.abs()));
                assert!(err < 1e-4 || (fd - an).abs() < 1e-8, "{} [{k}]: fd {fd} vs analytic {an}", store.name(id));
            }
        }
    }

    #[test]
    fn sum_of_squares_gives_2p() {
        let mut store = ParamStore::default();
        let p = store.add("p", vec![4], vec![1.0, -2.0, 0.5, 3.0]);
        let unused = store.add("unused", vec![2], vec![7.0, 8.0]);
        let mut tape = Tape::new(&store);
        let v = tape.param(p);
        let s = tape.square(v);
        let root = tape.sum(s);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(p), &[2.0, -4.0, 1.0, 6.0]);
        assert_eq!(g.get(unused), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut store = ParamStore::default();
        let p = store.add("p", vec![3], vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::new(&store);
        let v = tape.param(p);
        assert!(matches!(tape.backward(v), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn elementwise_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let a = store.add("a", vec![3, 4], rand_vec(&mut rng, 12));
        let b = store.add("b", vec![3, 4], rand_vec(&mut rng, 12));
        let s = store.add("s", vec![3, 1], rand_vec(&mut rng, 3));
        check(&mut store, |t| {
            let av = t.param(a);
            let bv = t.param(b);
            let sv = t.param(s);
            let m = t.mul(av, bv).unwrap();
            let sp = t.softplus(m);
            let sg = t.sigmoid(bv);
            let sm = t.softmax(av);
            let e = t.exp(sm);
            let sum = t.add(sp, sg).unwrap();
            let diff = t.sub(sum, e).unwrap();
            let mc = t.mul_col(diff, sv).unwrap();
            let nr = t.normalize_rows(mc, 1e-12);
            let ab = t.abs(nr);
            let lg = t.log(ab, 1e-12);
            let cat = t.concat(&[lg, av]).unwrap();
            let sl = t.slice(cat, 2, 4).unwrap();
            let sel = t.select_rows(sl, vec![2, 0]);
            let g = t.gather_cols(sel, vec![1, 3]);
            let rs = t.row_sum(sl);
            let s1 = t.sum(g);
            let s2 = t.mean(rs);
            let sq = t.square(s2);
            let cl = t.clamp_unit(bv);
            let s3 = t.sum(cl);
            let tot = t.add(s1, sq).unwrap();
            t.add(tot, s3).unwrap()
        });
    }

    #[test]
    fn linear_and_mask_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::default();
        let x = store.add("x", vec![5, 3], rand_vec(&mut rng, 15));
        let w = store.add("w", vec![4, 3], rand_vec(&mut rng, 12));
        let b = store.add("b", vec![4], rand_vec(&mut rng, 4));
        let t3 = store.add("t", vec![15, 4], rand_vec(&mut rng, 60));
        check(&mut store, |t| {
            let xv = t.param(x);
            let y = t.linear(xv, w, Some(b)).unwrap();
            let r = t.relu(y);
            let tv = t.param(t3);
            let m = t.mask_repeat(tv, y, 3).unwrap();
            let rs = t.reshape(m, 5, 12).unwrap();
            let a = t.sum(r);
            let c = t.square(rs);
            let c = t.sum(c);
            t.add(a, c).unwrap()
        });
    }

    #[test]
    fn composite_and_ray_sum_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        let z = store.add("z", vec![7, 1], rand_vec(&mut rng, 7));
        let c = store.add("c", vec![7, 3], rand_vec(&mut rng, 21));
        let layout: &'static RayLayout = Box::leak(Box::new(RayLayout {
            offsets: vec![0, 4, 7],
            t: vec![0.1, 0.4, 0.8, 1.1, 0.2, 0.5, 0.9],
            delta: vec![0.3, 0.4, 0.3, 0.5, 0.3, 0.4, 0.6],
        }));
        check(&mut store, |t| {
            let zv = t.param(z);
            let sigma = t.softplus(zv);
            let s2 = t.scale(sigma, 3.0);
            let w = t.composite(s2, layout).unwrap();
            let cv = t.param(c);
            let col = t.ray_sum(w, cv, layout).unwrap();
            let sq = t.square(col);
            t.sum(sq)
        });
    }

    #[test]
    fn depth_align_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::default();
        let d = store.add("d", vec![6, 1], rand_vec(&mut rng, 6));
        let target = rand_vec(&mut rng, 6);
        check(&mut store, |t| {
            let dv = t.param(d);
            let e = t.depth_align(dv, target.clone(), vec![vec![0, 1, 2, 3], vec![4, 5]]).unwrap();
            t.sum(e)
        });
    }

    #[test]
    fn least_squares_exact_cases() {
        let d = [1.0, 2.5, 4.0, 7.0];
        assert_eq!(least_squares_affine(&d, &d), Some((1.0, 0.0)));
        let m: Vec<f64> = d.iter().map(|v| 2.0 * v + 3.0).collect();
        let (a, b) = least_squares_affine(&d, &m).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
        assert!(least_squares_affine(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn texture_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::default();
        let tex = store.add("tex", vec![6, 2], rand_vec(&mut rng, 12));
        let taps = vec![[(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)], [(5, 0.5), (4, 0.25), (1, 0.25), (0, 0.0)]];
        check(&mut store, |t| {
            let v = t.texture(tex, 2, taps.clone());
            let e = t.exp(v);
            t.sum(e)
        });
    }
}
