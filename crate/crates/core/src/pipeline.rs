//! Dual-line sampling over a small synthetic world.
//!
//! The world holds a few scene templates (full-frame layouts with a hole where
//! the face goes) and a few identity signatures (supported only on the face
//! block). Each conditioning signal is a Gaussian mixture over such images, so
//! every noise prediction is exact. One latent is denoised with two guided
//! predictions per step: an identity line that only knows a face close-up and
//! a semantic line that knows the scene. Fusion and identity-token aggregation
//! are switched on after configurable numbers of steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{
    cfg_combine, ddim_step, eps_predict, DiffusionError, GaussianMixture, NoiseSchedule,
    ScheduleConfig,
};
use crate::idaf::{fuse, FusionConfig, FusionError};
use crate::idap::{aggregate, prepend, QueryBank, TokenError, TokenSequence};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(PipelineError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub world: u64,
    pub query: u64,
    pub noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            world: 0,
            query: 42,
            noise: 0,
        }
    }
}

/// Half-open pixel block `[row_start, row_end) x [col_start, col_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRegion {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl FaceRegion {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..self.row_end).contains(&row)
            && (self.col_start..self.col_end).contains(&col)
    }

    pub fn height(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn width(&self) -> usize {
        self.col_end - self.col_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_scenes: usize,
    pub num_identities: usize,
    /// Per-coordinate variance of every mixture component.
    pub data_variance: f64,
    pub face: FaceRegion,
    /// Integer magnification of the face crop in the close-up image.
    pub closeup_scale: usize,
    /// Passes of the periodic five-point averaging stencil applied to the raw
    /// normal fields before masking.
    pub smoothing_passes: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 16,
            width: 16,
            num_scenes: 4,
            num_identities: 4,
            data_variance: 0.0025,
            face: FaceRegion {
                row_start: 2,
                row_end: 8,
                col_start: 5,
                col_end: 11,
            },
            closeup_scale: 2,
            smoothing_passes: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenConfig {
    /// Number of aggregated tokens.
    pub k: usize,
    /// Length of the identity token sequence.
    pub id_len: usize,
    /// Length of the semantic token sequence.
    pub semantic_len: usize,
    pub dim: usize,
    /// Standard deviation of the per-entry distractor noise.
    pub distractor_rms: f64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            k: 8,
            id_len: 16,
            semantic_len: 16,
            dim: 16,
            distractor_rms: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub steps: usize,
    /// Fusion runs for step counters `t > m1`.
    pub m1: usize,
    /// Token aggregation runs for step counters `t > m2`.
    pub m2: usize,
    pub guidance_semantic: f64,
    pub guidance_identity: f64,
    pub fusion: FusionConfig,
    pub tokens: TokenConfig,
    pub seeds: Seeds,
    pub target_identity: usize,
    pub target_scene: usize,
    pub world: WorldConfig,
    pub base_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sched = ScheduleConfig::default();
        Self {
            steps: 50,
            m1: 10,
            m2: 15,
            guidance_semantic: 5.0,
            guidance_identity: 5.0,
            fusion: FusionConfig::default(),
            tokens: TokenConfig::default(),
            seeds: Seeds::default(),
            target_identity: 0,
            target_scene: 0,
            world: WorldConfig::default(),
            base_steps: sched.base_steps,
            beta_start: sched.beta_start,
            beta_end: sched.beta_end,
        }
    }
}

impl PipelineConfig {
    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig {
            base_steps: self.base_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            sample_steps: self.steps,
        }
    }

    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.seeds.noise = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return invalid("steps must be at least 1");
        }
        if self.m1 > self.steps || self.m2 > self.steps {
            return invalid(format!(
                "gates m1={} and m2={} must not exceed steps={}",
                self.m1, self.m2, self.steps
            ));
        }
        for (name, g) in [
            ("guidance_semantic", self.guidance_semantic),
            ("guidance_identity", self.guidance_identity),
        ] {
            if !g.is_finite() {
                return invalid(format!("{name} must be finite"));
            }
        }
        self.fusion.validate()?;
        NoiseSchedule::new(self.schedule_config())?;

        let w = &self.world;
        if w.channels == 0 || w.height == 0 || w.width == 0 {
            return invalid("image dimensions must be positive");
        }
        if w.num_scenes == 0 || w.num_identities < 2 {
            return invalid("need at least one scene and two identities");
        }
        if !(w.data_variance >= 0.0 && w.data_variance.is_finite()) {
            return invalid("data_variance must be finite and non-negative");
        }
        let f = &w.face;
        if f.row_start >= f.row_end || f.col_start >= f.col_end {
            return invalid("face region is empty");
        }
        if f.row_end > w.height || f.col_end > w.width {
            return invalid(format!(
                "face region rows {}..{} cols {}..{} lies outside the {}x{} frame",
                f.row_start, f.row_end, f.col_start, f.col_end, w.height, w.width
            ));
        }
        if f.height() == w.height && f.width() == w.width {
            return invalid("face region covers the whole frame, leaving no scene support");
        }
        if w.closeup_scale == 0 {
            return invalid("closeup_scale must be at least 1");
        }
        let p = self.fusion.pool_factor;
        if !w.height.is_multiple_of(p) || !w.width.is_multiple_of(p) {
            return invalid(format!(
                "pool_factor {p} must divide the {}x{} frame",
                w.height, w.width
            ));
        }

        if let Some(m) = self.fusion.c_mid {
            if !(2 * w.channels).is_multiple_of(m) {
                return invalid(format!(
                    "c_mid {m} must divide twice the channel count ({})",
                    2 * w.channels
                ));
            }
        }

        let t = &self.tokens;
        if t.k == 0 || t.id_len == 0 || t.semantic_len == 0 {
            return invalid("token counts must be positive");
        }
        if w.num_identities + w.num_scenes > t.dim {
            return invalid(format!(
                "token dim {} cannot hold {} identity and {} scene directions",
                t.dim, w.num_identities, w.num_scenes
            ));
        }
        if !(t.distractor_rms >= 0.0 && t.distractor_rms.is_finite()) {
            return invalid("distractor_rms must be finite and non-negative");
        }
        if self.target_identity >= w.num_identities || self.target_scene >= w.num_scenes {
            return invalid(format!(
                "target identity {} / scene {} out of range",
                self.target_identity, self.target_scene
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    config: WorldConfig,
    templates: Vec<Tensor>,
    signatures: Vec<Tensor>,
    closeups: Vec<Tensor>,
}

impl ToyWorld {
    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.config.channels, self.config.height, self.config.width]
    }

    pub fn templates(&self) -> &[Tensor] {
        &self.templates
    }

    pub fn signatures(&self) -> &[Tensor] {
        &self.signatures
    }

    /// Enlarged, frame-centered copies of each signature on a zero background.
    pub fn closeups(&self) -> &[Tensor] {
        &self.closeups
    }

    /// Row-major `(C, H, W)` flags marking face-region elements.
    pub fn face_mask(&self) -> Vec<bool> {
        face_mask_of(&self.config)
    }
}

fn face_mask_of(cfg: &WorldConfig) -> Vec<bool> {
    let mut mask = Vec::with_capacity(cfg.channels * cfg.height * cfg.width);
    for _ in 0..cfg.channels {
        for r in 0..cfg.height {
            for c in 0..cfg.width {
                mask.push(cfg.face.contains(r, c));
            }
        }
    }
    mask
}

fn smooth_periodic(field: &mut Tensor) {
    let s = field.shape().to_vec();
    let (h, w) = (s[1], s[2]);
    let src = field.clone();
    for ch in 0..s[0] {
        for r in 0..h {
            for c in 0..w {
                let at = |rr: usize, cc: usize| src.get(&[ch, rr, cc]);
                let v = at(r, c)
                    + at((r + h - 1) % h, c)
                    + at((r + 1) % h, c)
                    + at(r, (c + w - 1) % w)
                    + at(r, (c + 1) % w);
                field.set(&[ch, r, c], v / 5.0);
            }
        }
    }
}

/// Zeroes entries outside `support` and rescales to unit RMS over it.
fn normalize_on(field: &Tensor, support: &[bool]) -> Tensor {
    let mut out = field.clone();
    let mut ss = 0.0;
    for (v, &keep) in out.data_mut().iter_mut().zip(support) {
        if keep {
            ss += *v * *v;
        } else {
            *v = 0.0;
        }
    }
    let count = support.iter().filter(|&&k| k).count() as f64;
    let rms = (ss / count).sqrt();
    out.map(|v| v / rms)
}

fn closeup(signature: &Tensor, cfg: &WorldConfig) -> Tensor {
    let f = cfg.face;
    let s = cfg.closeup_scale;
    let (big_h, big_w) = (f.height() * s, f.width() * s);
    let r0 = (cfg.height as i64 - big_h as i64).div_euclid(2);
    let c0 = (cfg.width as i64 - big_w as i64).div_euclid(2);
    Tensor::from_fn(&[cfg.channels, cfg.height, cfg.width], |i| {
        let (br, bc) = (i[1] as i64 - r0, i[2] as i64 - c0);
        if br < 0 || bc < 0 || br >= big_h as i64 || bc >= big_w as i64 {
            return 0.0;
        }
        let src_r = f.row_start + br as usize / s;
        let src_c = f.col_start + bc as usize / s;
        signature.get(&[i[0], src_r, src_c])
    })
}

/// Builds the synthetic world from `seeds.world`: all template fields are
/// drawn first, then all signature fields, each row-major from one ChaCha8
/// stream.
pub fn build_world(cfg: &PipelineConfig) -> Result<ToyWorld> {
    cfg.validate()?;
    let wc = cfg.world;
    let shape = [wc.channels, wc.height, wc.width];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.world);
    let field = |rng: &mut ChaCha8Rng| {
        let mut t = Tensor::from_fn(&shape, |_| StandardNormal.sample(rng));
        for _ in 0..wc.smoothing_passes {
            smooth_periodic(&mut t);
        }
        t
    };
    let face = face_mask_of(&wc);
    let scene: Vec<bool> = face.iter().map(|&f| !f).collect();
    let templates: Vec<Tensor> = (0..wc.num_scenes)
        .map(|_| normalize_on(&field(&mut rng), &scene))
        .collect();
    let signatures: Vec<Tensor> = (0..wc.num_identities)
        .map(|_| normalize_on(&field(&mut rng), &face))
        .collect();
    let closeups = signatures.iter().map(|g| closeup(g, &wc)).collect();
    Ok(ToyWorld {
        config: wc,
        templates,
        signatures,
        closeups,
    })
}

/// One-hot direction for identity `k`; scene `s` uses direction
/// `num_identities + s`.
fn basis(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

/// Identity and semantic token sequences for one run. Distractor noise comes
/// from stream 1 of ChaCha8 seeded with `seeds.noise` (identity tokens first,
/// then semantic tokens).
pub fn encode_tokens(
    world: &ToyWorld,
    identity: usize,
    scene: usize,
    cfg: &PipelineConfig,
) -> Result<(TokenSequence, TokenSequence)> {
    let wc = world.config();
    if identity >= wc.num_identities || scene >= wc.num_scenes {
        return invalid(format!("identity {identity} / scene {scene} out of range"));
    }
    let t = cfg.tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.noise);
    rng.set_stream(1);
    let mut sequence = |len: usize, axis: usize| -> Result<TokenSequence> {
        let e = basis(t.dim, axis);
        let mut data = Vec::with_capacity(len * t.dim);
        for _ in 0..len {
            for &base in &e {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(base + t.distractor_rms * z);
            }
        }
        Ok(TokenSequence::new(Tensor::new(vec![1, len, t.dim], data)?)?)
    };
    let id = sequence(t.id_len, identity)?;
    let sem = sequence(t.semantic_len, wc.num_identities + scene)?;
    Ok((id, sem))
}

/// Below this top-2 gap the readout refuses to name an identity.
pub const DECODE_MARGIN: f64 = 1e-6;

/// Linear readout: mean over batch and aggregated tokens, then the largest
/// identity coordinate; `None` when the best two are closer than
/// [`DECODE_MARGIN`].
pub fn decode_identity(aggregated: &Tensor, world: &ToyWorld) -> Result<Option<usize>> {
    aggregated.expect_rank(3)?;
    let d = aggregated.shape()[2];
    let n = world.config().num_identities;
    if d < n {
        return invalid(format!("token dim {d} is smaller than {n} identities"));
    }
    let rows = aggregated.len() / d;
    let mut scores = vec![0.0; n];
    for row in aggregated.data().chunks(d) {
        for (s, v) in scores.iter_mut().zip(row) {
            *s += v;
        }
    }
    for s in &mut scores {
        *s /= rows as f64;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (best, second) = (scores[order[0]], scores[order[1]]);
    Ok((best - second >= DECODE_MARGIN).then_some(order[0]))
}

/// The four data distributions conditioning the two lines.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMixtures {
    pub id_branch: GaussianMixture,
    pub semantic_plain: GaussianMixture,
    /// Scene plus the decoded identity; `None` if decoding failed.
    pub semantic_with_id: Option<GaussianMixture>,
    pub uncond: GaussianMixture,
}

impl BranchMixtures {
    pub fn build(
        world: &ToyWorld,
        identity: usize,
        scene: usize,
        decoded: Option<usize>,
    ) -> Result<Self> {
        let var = world.config().data_variance;
        let t = &world.templates;
        let g = &world.signatures;
        let add = |a: &Tensor, b: &Tensor| a.zip_map(b, |x, y| x + y);
        let plain = g
            .iter()
            .map(|gk| add(&t[scene], gk))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut all = Vec::with_capacity(t.len() * g.len());
        for ts in t {
            for gk in g {
                all.push(add(ts, gk)?);
            }
        }
        let with_id = match decoded {
            Some(k) => Some(GaussianMixture::uniform(vec![add(&t[scene], &g[k])?], var)?),
            None => None,
        };
        Ok(Self {
            id_branch: GaussianMixture::uniform(vec![world.closeups[identity].clone()], var)?,
            semantic_plain: GaussianMixture::uniform(plain, var)?,
            semantic_with_id: with_id,
            uncond: GaussianMixture::uniform(all, var)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Progress counter, `1..=steps`.
    pub t: usize,
    /// Base schedule index the step starts from.
    pub level: usize,
    pub alpha_bar_from: f64,
    pub alpha_bar_to: f64,
    pub idaf_active: bool,
    pub idap_active: bool,
    /// Whether the semantic line was conditioned on the decoded identity.
    pub semantic_with_id: bool,
    /// Share of noise elements taken from the identity line (0 when fusion
    /// is off).
    pub identity_fraction: f64,
}

/// Noises seen at one step, for inspection.
#[derive(Debug, Clone, Copy)]
pub struct StepNoises<'a> {
    pub record: &'a StepRecord,
    pub eps_semantic: &'a Tensor,
    /// Only computed while fusion is active.
    pub eps_identity: Option<&'a Tensor>,
    pub applied: &'a Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Final clean sample, `(C, H, W)`.
    pub sample: Tensor,
    pub trace: Vec<StepRecord>,
    pub decoded_identity: Option<usize>,
    /// `(H, W)` decision mask of the last fused step, if fusion ever ran.
    pub last_mask: Option<Vec<usize>>,
}

impl RunOutput {
    /// Mean identity fraction over the steps where fusion ran (0 if none).
    pub fn mean_identity_fraction(&self) -> f64 {
        let active: Vec<f64> = self
            .trace
            .iter()
            .filter(|r| r.idaf_active)
            .map(|r| r.identity_fraction)
            .collect();
        if active.is_empty() {
            0.0
        } else {
            active.iter().sum::<f64>() / active.len() as f64
        }
    }
}

/// Initial latent, drawn row-major from ChaCha8 seeded with `seeds.noise`.
pub fn initial_noise(world: &ToyWorld, cfg: &PipelineConfig) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.noise);
    Tensor::from_fn(&world.image_shape(), |_| StandardNormal.sample(&mut rng))
}

/// Runs the dual-line sampler from `x_init` with explicit mixtures, calling
/// `observe` after every step.
pub fn sample_dual_line(
    mixtures: &BranchMixtures,
    x_init: Tensor,
    cfg: &PipelineConfig,
    schedule: &NoiseSchedule,
    mut observe: impl FnMut(StepNoises<'_>),
) -> Result<(Tensor, Vec<StepRecord>, Option<Vec<usize>>)> {
    let mut x = x_init;
    let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut last_mask = None;
    for (i, (from, to)) in schedule.transitions().enumerate() {
        let t = i + 1;
        let eps_uncond = eps_predict(&x, from, &mixtures.uncond, schedule)?;

        let idap_active = t > cfg.m2;
        let semantic_gm = match (&mixtures.semantic_with_id, idap_active) {
            (Some(gm), true) => gm,
            _ => &mixtures.semantic_plain,
        };
        let eps_semantic = cfg_combine(
            &eps_predict(&x, from, semantic_gm, schedule)?,
            &eps_uncond,
            cfg.guidance_semantic,
        )?;

        let idaf_active = t > cfg.m1;
        let (applied, eps_identity, fraction) = if idaf_active {
            let eps_id = cfg_combine(
                &eps_predict(&x, from, &mixtures.id_branch, schedule)?,
                &eps_uncond,
                cfg.guidance_identity,
            )?;
            let report = fuse(
                &eps_semantic.reshaped(&[1, c, h, w])?,
                &eps_id.reshaped(&[1, c, h, w])?,
                &cfg.fusion,
            )?;
            last_mask = Some(report.pixel_mask(0));
            (
                report.fused.reshaped(&[c, h, w])?,
                Some(eps_id),
                report.identity_fraction,
            )
        } else {
            (eps_semantic.clone(), None, 0.0)
        };

        let record = StepRecord {
            t,
            level: from,
            alpha_bar_from: schedule.alpha_bar(from)?,
            alpha_bar_to: schedule.alpha_bar_at(to)?,
            idaf_active,
            idap_active,
            semantic_with_id: !std::ptr::eq(semantic_gm, &mixtures.semantic_plain),
            identity_fraction: fraction,
        };
        x = ddim_step(&x, &applied, from, to, schedule)?;
        observe(StepNoises {
            record: &record,
            eps_semantic: &eps_semantic,
            eps_identity: eps_identity.as_ref(),
            applied: &applied,
        });
        trace.push(record);
    }
    Ok((x, trace, last_mask))
}

/// Aggregates the identity tokens, prepends them to the semantic tokens and
/// reads the identity back from the aggregated block.
pub fn resolve_identity(world: &ToyWorld, cfg: &PipelineConfig) -> Result<Option<usize>> {
    let (t_id, t_sem) = encode_tokens(world, cfg.target_identity, cfg.target_scene, cfg)?;
    let bank = QueryBank::new(cfg.tokens.k, cfg.tokens.dim, cfg.seeds.query);
    let agg = aggregate(&t_id, &bank)?;
    let combined = prepend(Some(&agg), &t_sem)?;
    let head = Tensor::from_fn(&[1, cfg.tokens.k, cfg.tokens.dim], |i| {
        combined.tensor().get(&[i[0], i[1], i[2]])
    });
    decode_identity(&head, world)
}

pub fn run_dual_line(world: &ToyWorld, cfg: &PipelineConfig) -> Result<RunOutput> {
    run_dual_line_observed(world, cfg, |_| {})
}

pub fn run_dual_line_observed(
    world: &ToyWorld,
    cfg: &PipelineConfig,
    observe: impl FnMut(StepNoises<'_>),
) -> Result<RunOutput> {
    cfg.validate()?;
    let schedule = NoiseSchedule::new(cfg.schedule_config())?;
    // Decoding only matters once aggregation can switch on.
    let decoded = if cfg.m2 < cfg.steps {
        resolve_identity(world, cfg)?
    } else {
        None
    };
    let mixtures = BranchMixtures::build(world, cfg.target_identity, cfg.target_scene, decoded)?;
    let (sample, trace, last_mask) = sample_dual_line(
        &mixtures,
        initial_noise(world, cfg),
        cfg,
        &schedule,
        observe,
    )?;
    Ok(RunOutput {
        sample,
        trace,
        decoded_identity: decoded,
        last_mask,
    })
}

/// Plain guided DDIM on the scene-only conditioning, no identity line.
pub fn run_single_line(world: &ToyWorld, cfg: &PipelineConfig) -> Result<Tensor> {
    single_line(world, cfg, |m| &m.semantic_plain, cfg.guidance_semantic)
}

/// Plain guided DDIM on the close-up conditioning alone.
pub fn run_identity_line(world: &ToyWorld, cfg: &PipelineConfig) -> Result<Tensor> {
    single_line(world, cfg, |m| &m.id_branch, cfg.guidance_identity)
}

fn single_line(
    world: &ToyWorld,
    cfg: &PipelineConfig,
    branch: impl Fn(&BranchMixtures) -> &GaussianMixture,
    guidance: f64,
) -> Result<Tensor> {
    cfg.validate()?;
    let schedule = NoiseSchedule::new(cfg.schedule_config())?;
    let mixtures = BranchMixtures::build(world, cfg.target_identity, cfg.target_scene, None)?;
    let cond = branch(&mixtures);
    let mut x = initial_noise(world, cfg);
    for (from, to) in schedule.transitions() {
        let eps = cfg_combine(
            &eps_predict(&x, from, cond, &schedule)?,
            &eps_predict(&x, from, &mixtures.uncond, &schedule)?,
            guidance,
        )?;
        x = ddim_step(&x, &eps, from, to, &schedule)?;
    }
    Ok(x)
}
