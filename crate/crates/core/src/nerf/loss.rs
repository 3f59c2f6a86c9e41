//! The six supervision terms and their weighted sum.

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::tape::least_squares_affine;
use crate::field::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub depth: f64,
    pub normal: f64,
    pub semantic: f64,
    pub sky: f64,
    pub sparsity: f64,
    /// Sharpness of the sparsity penalty `1 - exp(-alpha * sigma)`.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rgb: 1.0, depth: 0.05, normal: 1e-3, semantic: 0.01, sky: 1e-3, sparsity: 1e-3, alpha: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rgb, self.depth, self.normal, self.semantic, self.sky, self.sparsity, self.alpha];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Per-term values; `None` marks a term whose supervision was absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: Option<f64>,
    pub depth: Option<f64>,
    pub normal: Option<f64>,
    pub semantic: Option<f64>,
    pub sky: Option<f64>,
    pub sparsity: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthAlignment {
    pub a: f64,
    pub b: f64,
    /// Set when the rendered depths were constant (or too few) and the
    /// fallback `a = 1, b = mean difference` was used.
    pub degenerate: bool,
}

/// Scale and shift that best map rendered depth onto the monocular cue
/// over the unmasked entries.
pub fn depth_align(d_render: &[f64], d_mono: &[f64], mask: &[bool]) -> DepthAlignment {
    let (src, dst): (Vec<f64>, Vec<f64>) =
        d_render.iter().zip(d_mono).zip(mask).filter(|(_, m)| **m).map(|((r, m), _)| (*r, *m)).unzip();
    match least_squares_affine(&src, &dst) {
        Some((a, b)) => DepthAlignment { a, b, degenerate: false },
        None => {
            let n = src.len().max(1) as f64;
            let b = dst.iter().zip(&src).map(|(m, r)| m - r).sum::<f64>() / n;
            DepthAlignment { a: 1.0, b, degenerate: true }
        }
    }
}

/// Mean squared color error over rays and channels.
pub fn rgb_term(tape: &mut Tape, color: Var, gt: &[[f64; 3]]) -> Result<Var> {
    let target = tape.input(Tensor::new(gt.len(), 3, gt.iter().flatten().copied().collect()));
    let diff = tape.sub(color, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Aligned depth error: per group, the least-squares residual sum; divided
/// by the number of participating rays. `rows` are indices into `depth`.
pub fn depth_term(tape: &mut Tape, depth: Var, mono: &[f64], groups: &[Vec<usize>]) -> Result<Option<Var>> {
    let groups: Vec<Vec<usize>> = groups.iter().filter(|g| g.len() >= 2).cloned().collect();
    let count: usize = groups.iter().map(|g| g.len()).sum();
    if count == 0 {
        return Ok(None);
    }
    let e = tape.depth_align(depth, mono.to_vec(), groups)?;
    let s = tape.sum(e);
    Ok(Some(tape.scale(s, 1.0 / count as f64)))
}

/// `|N_mlp - N_mono|^2 + |N_mlp - N_density|^2` averaged over `rows`.
pub fn normal_term(tape: &mut Tape, n_mlp: Var, n_density: Option<Var>, rows: &[usize], mono_world: &[DVec3]) -> Result<Option<Var>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let a = tape.select_rows(n_mlp, rows.to_vec());
    let m = tape.input(Tensor::from_vec3s(mono_world));
    let d1 = tape.sub(a, m)?;
    let mut sq = tape.square(d1);
    if let Some(nd) = n_density {
        let b = tape.select_rows(nd, rows.to_vec());
        let d2 = tape.sub(a, b)?;
        let sq2 = tape.square(d2);
        sq = tape.add(sq, sq2)?;
    }
    let rs = tape.row_sum(sq);
    Ok(Some(tape.mean(rs)))
}

/// Mean cross-entropy `-ln max(S[label], 1e-12)`.
pub fn semantic_term(tape: &mut Tape, sem: Var, labels: &[usize]) -> Result<Option<Var>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let p = tape.gather_cols(sem, labels.to_vec());
    let l = tape.log(p, 1e-12);
    let m = tape.mean(l);
    Ok(Some(tape.scale(m, -1.0)))
}

/// Mean `exp(-D)` over the given sky rays.
pub fn sky_term(tape: &mut Tape, depth: Var, sky_rows: &[usize]) -> Var {
    if sky_rows.is_empty() {
        return tape.input(Tensor::scalar(0.0));
    }
    let d = tape.select_rows(depth, sky_rows.to_vec());
    let nd = tape.scale(d, -1.0);
    let e = tape.exp(nd);
    tape.mean(e)
}

/// Mean `1 - exp(-alpha * sigma)` over free-space samples.
pub fn sparsity_term(tape: &mut Tape, sigma: Var, alpha: f64) -> Result<Var> {
    let n = tape.value(sigma).data.len();
    let s = tape.scale(sigma, -alpha);
    let e = tape.exp(s);
    let ones = tape.input(Tensor::new(n, 1, vec![1.0; n]));
    let d = tape.sub(ones, e)?;
    Ok(tape.mean(d))
}

/// Weighted sum of the present terms; returns the scalar root and the
/// breakdown.
pub fn combine(tape: &mut Tape, terms: [(Option<Var>, f64); 6]) -> Result<(Var, LossTerms)> {
    let mut root: Option<Var> = None;
    let mut vals = [None; 6];
    for (k, (v, lambda)) in terms.iter().enumerate() {
        let Some(v) = v else { continue };
        vals[k] = Some(tape.scalar(*v));
        let s = tape.scale(*v, *lambda);
        root = Some(match root {
            Some(r) => tape.add(r, s)?,
            None => s,
        });
    }
    let root = match root {
        Some(r) => r,
        None => tape.input(Tensor::scalar(0.0)),
    };
    let terms = LossTerms {
        rgb: vals[0],
        depth: vals[1],
        normal: vals[2],
        semantic: vals[3],
        sky: vals[4],
        sparsity: vals[5],
        total: tape.scalar(root),
    };
    Ok((root, terms))
}
