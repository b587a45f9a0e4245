//! Adaptive fusion of the semantic-line and identity-line noise predictions.
//!
//! Both predictions are stacked on a two-way decision axis (semantic first,
//! identity second). Each branch gets a smoothed per-pixel saliency map from
//! the magnitude of its noise, which is turned into a spatial distribution by
//! a scaled softmax over all pixels of a batch item. Every element of the
//! fused noise is then taken from whichever branch puts more weight on that
//! pixel. Ties go to the semantic branch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{IndexTensor, Tensor, TensorError};

/// Position of the semantic prediction on the decision axis.
pub const SEMANTIC: usize = 0;
/// Position of the identity prediction on the decision axis.
pub const IDENTITY: usize = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid fusion config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Softmax scale for the semantic branch.
    pub lambda_semantic: f64,
    /// Softmax scale for the identity branch.
    pub lambda_identity: f64,
    pub pool_factor: usize,
    /// Channel count of the intermediate reshape; `None` uses the noise's own
    /// channel count.
    pub c_mid: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda_semantic: 1.0,
            lambda_identity: 5.0,
            pool_factor: 4,
            c_mid: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_semantic", self.lambda_semantic),
            ("lambda_identity", self.lambda_identity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FusionError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.pool_factor == 0 {
            return Err(FusionError::Config("pool_factor must be at least 1".into()));
        }
        if self.c_mid == Some(0) {
            return Err(FusionError::Config("c_mid must be at least 1".into()));
        }
        Ok(())
    }

    fn lambda(&self, branch: usize) -> f64 {
        if branch == SEMANTIC {
            self.lambda_semantic
        } else {
            self.lambda_identity
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport {
    /// Fused noise, `(B, C, H, W)`.
    pub fused: Tensor,
    /// Branch chosen for each element, `(B, C, H, W)`.
    pub decision_mask: IndexTensor,
    /// Per-branch spatial weights, `(2, B, H, W)`.
    pub weights: Tensor,
    pub identity_fraction: f64,
}

impl FusionReport {
    /// Decision mask of batch item `b` as a row-major `(H, W)` grid. The mask
    /// does not vary across channels, so channel 0 is representative.
    pub fn pixel_mask(&self, b: usize) -> Vec<usize> {
        let s = self.decision_mask.shape();
        let (c, hw) = (s[1], s[2] * s[3]);
        let start = b * c * hw;
        self.decision_mask.data()[start..start + hw].to_vec()
    }
}

fn dims4(x: &Tensor) -> Result<[usize; 4]> {
    x.expect_rank(4)?;
    let s = x.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

/// Stacks the two predictions on a leading decision axis of size 2.
pub fn build_stack(eps_semantic: &Tensor, eps_identity: &Tensor) -> Result<Tensor> {
    dims4(eps_semantic)?;
    eps_identity.expect_shape(eps_semantic.shape())?;
    Ok(Tensor::stack(&[eps_semantic, eps_identity], 0)?)
}

/// Smoothed mean absolute noise per pixel: `(2, B, C, H, W) -> (2, B, H, W)`.
pub fn saliency(stack: &Tensor, cfg: &FusionConfig) -> Result<Tensor> {
    cfg.validate()?;
    stack.expect_rank(5)?;
    let s = stack.shape();
    let (branches, batch, channels, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let c_mid = cfg.c_mid.unwrap_or(channels);
    let planes = branches * batch * channels;
    if planes % c_mid != 0 {
        return Err(FusionError::Config(format!(
            "c_mid {c_mid} does not divide {planes} channel planes"
        )));
    }
    let grouped = stack
        .abs()
        .reshape(&[-1, c_mid as isize, h as isize, w as isize])?;
    let smoothed = grouped
        .reshaped(&[planes, h, w])?
        .spatial_smooth(cfg.pool_factor)?;
    let standard = smoothed.reshape(&[
        branches as isize,
        batch as isize,
        -1,
        h as isize,
        w as isize,
    ])?;
    Ok(standard.mean_axis(2)?)
}

/// Per-branch softmax over all pixels of each batch item, scaled by that
/// branch's lambda: `(2, B, H, W) -> (2, B, H, W)`.
pub fn branch_weights(saliency: &Tensor, cfg: &FusionConfig) -> Result<Tensor> {
    cfg.validate()?;
    saliency.expect_rank(4)?;
    let s = saliency.shape();
    let (branches, batch, h, w) = (s[0], s[1], s[2], s[3]);
    let maps = (0..branches)
        .map(|i| {
            saliency
                .index_axis(0, i)?
                .reshaped(&[batch, h * w])?
                .scaled_softmax_rows(cfg.lambda(i))?
                .reshaped(&[batch, h, w])
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let refs: Vec<&Tensor> = maps.iter().collect();
    Ok(Tensor::stack(&refs, 0)?)
}

/// Fuses the two branch predictions. See the module docs.
pub fn fuse(
    eps_semantic: &Tensor,
    eps_identity: &Tensor,
    cfg: &FusionConfig,
) -> Result<FusionReport> {
    let [batch, channels, h, w] = dims4(eps_semantic)?;
    let stack = build_stack(eps_semantic, eps_identity)?;
    let weights = branch_weights(&saliency(&stack, cfg)?, cfg)?;

    // (2, B, H, W) -> (2, B, C, H, W), repeating each map over channels
    let per_branch = weights.reshaped(&[2 * batch, h * w])?;
    let mut broadcast = Vec::with_capacity(stack.len());
    for row in per_branch.data().chunks_exact(h * w) {
        for _ in 0..channels {
            broadcast.extend_from_slice(row);
        }
    }
    let broadcast = Tensor::new(stack.shape().to_vec(), broadcast)?;

    let decision_mask = broadcast.argmax_axis(0)?;
    let fused = Tensor::gather_axis(&stack, &decision_mask)?;
    let identity_fraction = identity_fraction(&decision_mask);
    Ok(FusionReport {
        fused,
        decision_mask,
        weights,
        identity_fraction,
    })
}

fn identity_fraction(mask: &IndexTensor) -> f64 {
    let hits = mask.data().iter().filter(|&&m| m == IDENTITY).count();
    hits as f64 / mask.len() as f64
}

/// Scalar-loop implementation of [`fuse`] that shares none of the tensor
/// kernels. Used as an oracle.
pub fn fuse_reference(
    eps_semantic: &Tensor,
    eps_identity: &Tensor,
    cfg: &FusionConfig,
) -> Result<FusionReport> {
    cfg.validate()?;
    let [batch, channels, h, w] = dims4(eps_semantic)?;
    eps_identity.expect_shape(eps_semantic.shape())?;
    let p = cfg.pool_factor;
    if h % p != 0 || w % p != 0 {
        return Err(TensorError::PoolFactor {
            factor: p,
            height: h,
            width: w,
        }
        .into());
    }
    let c_mid = cfg.c_mid.unwrap_or(channels);
    if (2 * batch * channels) % c_mid != 0 {
        return Err(FusionError::Config(format!(
            "c_mid {c_mid} does not divide {} channel planes",
            2 * batch * channels
        )));
    }
    let branches = [eps_semantic.data(), eps_identity.data()];
    let at = |b: usize, c: usize, y: usize, x: usize| ((b * channels + c) * h + y) * w + x;

    let mut weights = vec![0.0; 2 * batch * h * w];
    for (i, src) in branches.iter().enumerate() {
        for b in 0..batch {
            let mut sal = vec![0.0; h * w];
            for c in 0..channels {
                for y in 0..h {
                    for x in 0..w {
                        let (by, bx) = (y - y % p, x - x % p);
                        let mut total = 0.0;
                        for yy in by..by + p {
                            for xx in bx..bx + p {
                                total += src[at(b, c, yy, xx)].abs();
                            }
                        }
                        let block = if p == 1 {
                            src[at(b, c, y, x)].abs()
                        } else {
                            total / (p * p) as f64
                        };
                        sal[y * w + x] += block;
                    }
                }
            }
            for v in sal.iter_mut() {
                *v /= channels as f64;
            }
            let lambda = cfg.lambda(i);
            let mut max = f64::NEG_INFINITY;
            for &v in &sal {
                max = max.max(v);
            }
            let mut exps = vec![0.0; h * w];
            let mut total = 0.0;
            for (e, &v) in exps.iter_mut().zip(&sal) {
                *e = (lambda * v - lambda * max).exp();
                total += *e;
            }
            let base = (i * batch + b) * h * w;
            for (k, e) in exps.iter().enumerate() {
                weights[base + k] = e / total;
            }
        }
    }

    let mut fused = vec![0.0; eps_semantic.len()];
    let mut mask = vec![SEMANTIC; eps_semantic.len()];
    for b in 0..batch {
        for c in 0..channels {
            for y in 0..h {
                for x in 0..w {
                    let pix = y * w + x;
                    let ws = weights[(SEMANTIC * batch + b) * h * w + pix];
                    let wi = weights[(IDENTITY * batch + b) * h * w + pix];
                    let e = at(b, c, y, x);
                    let pick = if wi > ws { IDENTITY } else { SEMANTIC };
                    mask[e] = pick;
                    fused[e] = branches[pick][e];
                }
            }
        }
    }
    let decision_mask = IndexTensor::new(eps_semantic.shape().to_vec(), mask)?;
    let identity_fraction = identity_fraction(&decision_mask);
    Ok(FusionReport {
        fused: Tensor::new(eps_semantic.shape().to_vec(), fused)?,
        decision_mask,
        weights: Tensor::new(vec![2, batch, h, w], weights)?,
        identity_fraction,
    })
}
