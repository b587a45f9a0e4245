//! Variance-preserving noise schedule, the closed-form noise predictor for
//! isotropic Gaussian-mixture data, classifier-free guidance and the
//! deterministic DDIM update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("schedule index {index} is out of range for {len} base steps")]
    IndexRange { index: usize, len: usize },
    #[error("noise level at index {0} is zero; the noise prediction is undefined")]
    NoiseFree(usize),
    #[error("DDIM step must move to a less noisy level (alpha_bar {from} -> {to})")]
    StepOrder { from: f64, to: f64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid mixture: {0}")]
    Mixture(String),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// Parameters that fully determine a [`NoiseSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub base_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sample_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sample_steps: 50,
        }
    }
}

/// Linear-beta schedule with a uniformly strided set of sampling indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// Sampling indices, noisiest first.
    step_indices: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            base_steps,
            beta_start,
            beta_end,
            sample_steps,
        } = config;
        if base_steps < 2 {
            return Err(DiffusionError::Schedule(format!(
                "need at least 2 base steps, got {base_steps}"
            )));
        }
        if sample_steps == 0 || sample_steps > base_steps {
            return Err(DiffusionError::Schedule(format!(
                "sample steps {sample_steps} must lie in 1..={base_steps}"
            )));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::Schedule(format!(
                "betas must satisfy 0 < {beta_start} <= {beta_end} < 1"
            )));
        }
        let span = (base_steps - 1) as f64;
        let betas: Vec<f64> = (0..base_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect();
        let mut alpha_bar = Vec::with_capacity(base_steps);
        let mut acc = 1.0;
        for beta in &betas {
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        let stride = base_steps / sample_steps;
        let step_indices = (0..sample_steps).rev().map(|s| s * stride).collect();
        Ok(Self {
            config,
            betas,
            alpha_bar,
            step_indices,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn step_indices(&self) -> &[usize] {
        &self.step_indices
    }

    pub fn alpha_bar(&self, index: usize) -> Result<f64> {
        self.alpha_bar
            .get(index)
            .copied()
            .ok_or(DiffusionError::IndexRange {
                index,
                len: self.alpha_bar.len(),
            })
    }

    /// `None` denotes the clean endpoint, where alpha_bar is exactly 1.
    pub fn alpha_bar_at(&self, level: Option<usize>) -> Result<f64> {
        level.map_or(Ok(1.0), |i| self.alpha_bar(i))
    }

    /// `(from, to)` pairs for a full sampling pass. The last pair lands on the
    /// clean endpoint.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        self.step_indices
            .iter()
            .enumerate()
            .map(|(i, &from)| (from, self.step_indices.get(i + 1).copied()))
    }
}

/// Weighted isotropic Gaussian components with a shared variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Tensor>,
    variance: f64,
}

impl GaussianMixture {
    /// Variance zero is accepted as the point-mass limit.
    pub fn new(weights: Vec<f64>, means: Vec<Tensor>, variance: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(DiffusionError::Mixture("no components".into()));
        }
        if weights.len() != means.len() {
            return Err(DiffusionError::Mixture(format!(
                "{} weights for {} means",
                weights.len(),
                means.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(DiffusionError::Mixture(
                "negative or non-finite weight".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DiffusionError::Mixture(format!("weights sum to {total}")));
        }
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(DiffusionError::Mixture(format!("variance {variance}")));
        }
        let shape = means[0].shape().to_vec();
        for m in &means[1..] {
            m.expect_shape(&shape)?;
        }
        Ok(Self {
            weights,
            means,
            variance,
        })
    }

    /// Equal-weight mixture over `means`.
    pub fn uniform(means: Vec<Tensor>, variance: f64) -> Result<Self> {
        let n = means.len().max(1);
        Self::new(vec![1.0 / n as f64; means.len()], means, variance)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Tensor] {
        &self.means
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn shape(&self) -> &[usize] {
        self.means[0].shape()
    }
}

/// `sqrt(ab) * x0 + sqrt(1 - ab) * noise` at base index `index`.
pub fn forward_noise(
    x0: &Tensor,
    index: usize,
    noise: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let ab = schedule.alpha_bar(index)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(noise, |x, e| a * x + s * e)?)
}

/// Exact posterior mean `E[x0 | x_t]` under the mixture prior.
pub fn posterior_x0(
    x_t: &Tensor,
    index: usize,
    gm: &GaussianMixture,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    x_t.expect_shape(gm.shape())?;
    let ab = schedule.alpha_bar(index)?;
    let a = ab.sqrt();
    let v = (1.0 - ab) + ab * gm.variance;
    let gain = gm.variance * a / v;

    let logits: Vec<f64> = gm
        .weights
        .iter()
        .zip(&gm.means)
        .map(|(w, mu)| {
            let dist: f64 = x_t
                .data()
                .iter()
                .zip(mu.data())
                .map(|(x, m)| (x - a * m).powi(2))
                .sum();
            w.ln() - dist / (2.0 * v)
        })
        .collect();
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
    let unnorm: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();

    let mut out = vec![0.0; x_t.len()];
    for (r, mu) in unnorm.iter().zip(&gm.means) {
        let r = r / total;
        if r == 0.0 {
            continue;
        }
        for ((o, x), m) in out.iter_mut().zip(x_t.data()).zip(mu.data()) {
            *o += r * (m + gain * (x - a * m));
        }
    }
    Ok(Tensor::new(x_t.shape().to_vec(), out)?)
}

/// Noise prediction implied by the exact posterior mean.
pub fn eps_predict(
    x_t: &Tensor,
    index: usize,
    gm: &GaussianMixture,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let ab = schedule.alpha_bar(index)?;
    if ab >= 1.0 {
        return Err(DiffusionError::NoiseFree(index));
    }
    let x0 = posterior_x0(x_t, index, gm, schedule)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.zip_map(&x0, |x, m| (x - a * m) / s)?)
}

/// Classifier-free guidance: `uncond + scale * (cond - uncond)`.
/// A scale of exactly 1 returns the conditional prediction unchanged.
pub fn cfg_combine(cond: &Tensor, uncond: &Tensor, scale: f64) -> Result<Tensor> {
    cond.expect_shape(uncond.shape())?;
    if scale == 1.0 {
        return Ok(cond.clone());
    }
    Ok(uncond.zip_map(cond, |u, c| u + scale * (c - u))?)
}

/// Deterministic DDIM update from base index `from` to `to` (`None` = clean).
pub fn ddim_step(
    x_t: &Tensor,
    eps: &Tensor,
    from: usize,
    to: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let ab_from = schedule.alpha_bar(from)?;
    let ab_to = schedule.alpha_bar_at(to)?;
    if !(ab_from < ab_to) {
        return Err(DiffusionError::StepOrder {
            from: ab_from,
            to: ab_to,
        });
    }
    let (a_from, s_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (a_to, s_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    Ok(x_t.zip_map(eps, |x, e| {
        let x0 = (x - s_from * e) / a_from;
        a_to * x0 + s_to * e
    })?)
}
