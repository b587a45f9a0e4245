//! Line-oriented `key = value` configuration files.
//!
//! Blank lines and text after `#` are ignored. Every key is optional; absent
//! keys keep their defaults. `c_mid` accepts `none` or a positive integer.

use std::fmt::Write as _;

use thiserror::Error;

use crate::pipeline::{PipelineConfig, PipelineError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("unknown key(s): {}", .0.iter().map(|(k, l)| format!("`{k}` (line {l})")).collect::<Vec<_>>().join(", "))]
    UnknownKeys(Vec<(String, usize)>),
    #[error("line {line}: `{key}` expects {expected}, got `{value}`")]
    Type {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("line {line}: `{key}` was already set on line {first}")]
    Duplicate {
        line: usize,
        key: String,
        first: usize,
    },
    #[error(transparent)]
    Invalid(#[from] PipelineError),
}

trait Value: Sized {
    const EXPECTED: &'static str;
    fn parse(s: &str) -> Option<Self>;
    fn emit(&self) -> String;
}

impl Value for usize {
    const EXPECTED: &'static str = "a non-negative integer";
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn emit(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    const EXPECTED: &'static str = "a 64-bit unsigned integer";
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn emit(&self) -> String {
        self.to_string()
    }
}

impl Value for f64 {
    const EXPECTED: &'static str = "a real number";
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn emit(&self) -> String {
        // Shortest representation that parses back to the same value.
        self.to_string()
    }
}

impl Value for Option<usize> {
    const EXPECTED: &'static str = "`none` or a positive integer";
    fn parse(s: &str) -> Option<Self> {
        if s == "none" {
            Some(None)
        } else {
            s.parse().ok().map(Some)
        }
    }
    fn emit(&self) -> String {
        self.map_or_else(|| "none".to_string(), |v| v.to_string())
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        /// Every accepted key, in emission order.
        pub const KEYS: &[&str] = &[$($key),*];

        fn set(cfg: &mut PipelineConfig, key: &str, value: &str) -> Option<Result<(), &'static str>> {
            match key {
                $($key => Some(match Value::parse(value) {
                    Some(v) => {
                        cfg.$($field).+ = v;
                        Ok(())
                    }
                    None => Err(expected_of(&cfg.$($field).+)),
                }),)*
                _ => None,
            }
        }

        fn values(cfg: &PipelineConfig) -> Vec<(&'static str, String)> {
            vec![$(($key, Value::emit(&cfg.$($field).+))),*]
        }
    };
}

fn expected_of<T: Value>(_: &T) -> &'static str {
    T::EXPECTED
}

keys! {
    "steps" => steps,
    "m1" => m1,
    "m2" => m2,
    "guidance_semantic" => guidance_semantic,
    "guidance_identity" => guidance_identity,
    "lambda_semantic" => fusion.lambda_semantic,
    "lambda_identity" => fusion.lambda_identity,
    "pool_factor" => fusion.pool_factor,
    "c_mid" => fusion.c_mid,
    "k" => tokens.k,
    "id_tokens" => tokens.id_len,
    "semantic_tokens" => tokens.semantic_len,
    "token_dim" => tokens.dim,
    "distractor_rms" => tokens.distractor_rms,
    "seed_world" => seeds.world,
    "seed_query" => seeds.query,
    "seed_noise" => seeds.noise,
    "target_identity" => target_identity,
    "target_scene" => target_scene,
    "channels" => world.channels,
    "height" => world.height,
    "width" => world.width,
    "num_scenes" => world.num_scenes,
    "num_identities" => world.num_identities,
    "data_variance" => world.data_variance,
    "face_row_start" => world.face.row_start,
    "face_row_end" => world.face.row_end,
    "face_col_start" => world.face.col_start,
    "face_col_end" => world.face.col_end,
    "closeup_scale" => world.closeup_scale,
    "smoothing_passes" => world.smoothing_passes,
    "base_steps" => base_steps,
    "beta_start" => beta_start,
    "beta_end" => beta_end,
}

/// Parses a configuration file body and validates the result.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    let mut seen: Vec<(&str, usize)> = Vec::new();
    let mut unknown = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Malformed { line });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Malformed { line });
        }
        if let Some(&(_, first)) = seen.iter().find(|(k, _)| *k == key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
                first,
            });
        }
        match set(&mut cfg, key, value) {
            None => unknown.push((key.to_string(), line)),
            Some(Err(expected)) => {
                return Err(ConfigError::Type {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                    expected,
                })
            }
            Some(Ok(())) => {}
        }
        seen.push((key, line));
    }
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes every key, so the output fully determines the configuration.
pub fn emit_config(cfg: &PipelineConfig) -> String {
    let mut out = String::new();
    for (key, value) in values(cfg) {
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}
