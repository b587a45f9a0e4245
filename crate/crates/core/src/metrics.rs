//! Identity and scene similarity scores and the per-run metrics record.

use serde::{Deserialize, Serialize};

use crate::pipeline::{PipelineError, Result, ToyWorld};
use crate::tensor::Tensor;

/// Cosine similarity of the mean-removed inputs. A constant input has no
/// direction, so its similarity to anything is defined as 0.
pub fn centered_cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

fn split(
    sample: &Tensor,
    reference: &Tensor,
    world: &ToyWorld,
    face: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    sample.expect_shape(&world.image_shape())?;
    let mask = world.face_mask();
    let pick = |t: &Tensor| -> Vec<f64> {
        t.data()
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m == face)
            .map(|(v, _)| *v)
            .collect()
    };
    Ok((pick(sample), pick(reference)))
}

/// Similarity of the sample's face block to the signature of `identity`.
pub fn identity_score(sample: &Tensor, world: &ToyWorld, identity: usize) -> Result<f64> {
    let g = world
        .signatures()
        .get(identity)
        .ok_or_else(|| PipelineError::Config(format!("no identity {identity}")))?;
    let (s, r) = split(sample, g, world, true)?;
    Ok(centered_cosine(&s, &r))
}

/// Similarity of everything outside the face block to the template of `scene`.
pub fn semantic_score(sample: &Tensor, world: &ToyWorld, scene: usize) -> Result<f64> {
    let t = world
        .templates()
        .get(scene)
        .ok_or_else(|| PipelineError::Config(format!("no scene {scene}")))?;
    let (s, r) = split(sample, t, world, false)?;
    Ok(centered_cosine(&s, &r))
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    /// Sweep coordinate: a ratio such as `1:5`, a gate value, or an arm name.
    pub param: String,
    pub seed: u64,
    pub identity_score: f64,
    pub semantic_score: f64,
    pub identity_fraction: f64,
    pub lambda_semantic: f64,
    pub lambda_identity: f64,
    pub m1: usize,
    pub m2: usize,
    pub k: usize,
}

/// Column order of the CSV tables.
pub const CSV_HEADER: [&str; 6] = [
    "run_id",
    "ratio_or_M_or_arm",
    "seed",
    "identity_score",
    "semantic_score",
    "identity_fraction",
];

impl MetricsRow {
    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.run_id.clone(),
            self.param.clone(),
            self.seed.to_string(),
            self.identity_score.to_string(),
            self.semantic_score.to_string(),
            self.identity_fraction.to_string(),
        ]
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in rows {
        w.write_record(row.csv_fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            std_err: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary { n, mean, std_err }
}
