//! Artifact emission: PNG images, decision masks, CSV tables and JSON run
//! manifests. Everything written is a pure function of the results, so
//! repeating a run reproduces every file byte for byte.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::ScheduleConfig;
use crate::idap::QuerySpec;
use crate::metrics::{to_csv, MetricsRow};
use crate::pipeline::{PipelineConfig, Seeds};
use crate::sweep::{CellResult, SweepSpec};
use crate::tensor::Tensor;

pub const SOFTWARE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("png encoding failed for {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("image must be (1|3, H, W), got {0:?}")]
    Shape(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, RenderError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RenderError + '_ {
    move |source| RenderError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Largest absolute value in the image; the PNG scale is `[-vmax, vmax]`.
pub fn vmax(image: &Tensor) -> f64 {
    image.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `v -> clamp(floor(127.5 * v / vmax + 127.5 + 0.5), 0, 255)`, i.e. round
/// half up. An all-zero image maps to 128 everywhere.
pub fn quantize(v: f64, vmax: f64) -> u8 {
    let scaled = if vmax > 0.0 {
        127.5 * (v / vmax) + 127.5
    } else {
        127.5
    };
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Inverse of [`quantize`] up to rounding.
pub fn dequantize(q: u8, vmax: f64) -> f64 {
    (f64::from(q) - 127.5) / 127.5 * vmax
}

/// Interleaved 8-bit pixels of a `(C, H, W)` image plus its scale.
pub fn image_pixels(image: &Tensor) -> Result<(Vec<u8>, f64)> {
    let s = image.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(RenderError::Shape(s.to_vec()));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    let m = vmax(image);
    let mut px = vec![0u8; c * hw];
    for ch in 0..c {
        for p in 0..hw {
            px[p * c + ch] = quantize(image.data()[ch * hw + p], m);
        }
    }
    Ok((px, m))
}

fn encode_png(
    path: &Path,
    pixels: &[u8],
    width: usize,
    height: usize,
    color: png::ColorType,
) -> Result<Vec<u8>> {
    let png_err = |e: png::EncodingError| RenderError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(pixels).map_err(png_err)?;
    }
    Ok(bytes)
}

/// Writes `image` as PNG, returning the scale used.
pub fn write_image_png(path: &Path, image: &Tensor) -> Result<f64> {
    let (px, m) = image_pixels(image)?;
    let color = if image.shape()[0] == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    };
    let bytes = encode_png(path, &px, image.shape()[2], image.shape()[1], color)?;
    fs::write(path, bytes).map_err(io_err(path))?;
    Ok(m)
}

/// Decision mask as grayscale PNG: 0 = semantic branch, 255 = identity branch.
pub fn write_mask_png(path: &Path, mask: &[usize], width: usize, height: usize) -> Result<()> {
    let px: Vec<u8> = mask.iter().map(|&b| if b == 0 { 0 } else { 255 }).collect();
    let bytes = encode_png(path, &px, width, height, png::ColorType::Grayscale)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Decoded 8-bit PNG: `(pixels, width, height, channels)`.
pub fn read_png(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let dec_err = |e: png::DecodingError| RenderError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = png::Decoder::new(file).read_info().map_err(dec_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(dec_err)?;
    buf.truncate(info.buffer_size());
    Ok((
        buf,
        info.width as usize,
        info.height as usize,
        info.color_type.samples(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub idaf_steps: usize,
    pub idap_steps: usize,
    pub semantic_with_id_steps: usize,
    /// Per-step identity fraction, `t = 1..=steps`.
    pub identity_fraction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub param: String,
    pub seed: u64,
    pub image: String,
    pub mask: Option<String>,
    pub vmax: f64,
    pub decoded_identity: Option<usize>,
    pub trace: TraceSummary,
}

/// Everything needed to reproduce a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub sweep: SweepSpec,
    pub seeds: Vec<u64>,
    pub config: PipelineConfig,
    pub schedule: ScheduleConfig,
    pub query_bank: QuerySpec,
    pub world_seeds: Seeds,
    pub csv: String,
    pub runs: Vec<RunRecord>,
}

/// Writes `metrics.csv`, `manifest.json` and per-run images and masks into
/// `dir`, and returns the manifest.
pub fn render_outputs(
    dir: &Path,
    base: &PipelineConfig,
    sweep: &SweepSpec,
    seeds: &[u64],
    results: &[CellResult],
) -> Result<RunManifest> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [dir, &images, &masks] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let (h, w) = (base.world.height, base.world.width);
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        let id = &r.row.run_id;
        let image = format!("images/{id}.png");
        let vmax = write_image_png(&dir.join(&image), &r.output.sample)?;
        let mask = match &r.output.last_mask {
            Some(m) => {
                let name = format!("masks/{id}.png");
                write_mask_png(&dir.join(&name), m, w, h)?;
                Some(name)
            }
            None => None,
        };
        let t = &r.output.trace;
        runs.push(RunRecord {
            run_id: id.clone(),
            param: r.row.param.clone(),
            seed: r.row.seed,
            image,
            mask,
            vmax,
            decoded_identity: r.output.decoded_identity,
            trace: TraceSummary {
                steps: t.len(),
                idaf_steps: t.iter().filter(|s| s.idaf_active).count(),
                idap_steps: t.iter().filter(|s| s.idap_active).count(),
                semantic_with_id_steps: t.iter().filter(|s| s.semantic_with_id).count(),
                identity_fraction: t.iter().map(|s| s.identity_fraction).collect(),
            },
        });
    }
    let rows: Vec<MetricsRow> = results.iter().map(|r| r.row.clone()).collect();
    let csv_path = dir.join("metrics.csv");
    fs::write(&csv_path, to_csv(&rows)).map_err(io_err(&csv_path))?;

    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let manifest = RunManifest {
        software: SOFTWARE_VERSION.to_string(),
        sweep: sweep.clone(),
        seeds,
        config: *base,
        schedule: base.schedule_config(),
        query_bank: QuerySpec {
            k: base.tokens.k,
            dim: base.tokens.dim,
            seed: base.seeds.query,
        },
        world_seeds: base.seeds,
        csv: "metrics.csv".into(),
        runs,
    };
    let json_path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest is plain data");
    json.push('\n');
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    Ok(manifest)
}
