//! Identity token aggregation and prepending.
//!
//! A fixed bank of `K` query vectors attends over the `N` identity tokens
//! (softmax over the sequence axis), producing `K` convex combinations of the
//! tokens. Those are placed in front of the semantic tokens; the semantic
//! tokens themselves are never modified.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token sequences must be finite and shaped (B, N, D), got {0:?}")]
    Sequence(Vec<usize>),
    #[error("token dimension {tokens} does not match query dimension {queries}")]
    Dim { tokens: usize, queries: usize },
    #[error("batch size {left} does not match {right}")]
    Batch { left: usize, right: usize },
}

pub type Result<T> = std::result::Result<T, TokenError>;

/// A `(B, N, D)` batch of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence(Tensor);

impl TokenSequence {
    pub fn new(tokens: Tensor) -> Result<Self> {
        if tokens.rank() != 3 || !tokens.is_finite() {
            return Err(TokenError::Sequence(tokens.shape().to_vec()));
        }
        Ok(Self(tokens))
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Serializable description of a [`QueryBank`]; the matrix itself is always
/// regenerated from these three numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
}

/// `K x D` query matrix with standard-normal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBank {
    spec: QuerySpec,
    queries: Tensor,
}

impl QueryBank {
    /// Entries are drawn row-major from ChaCha8 seeded with `seed`
    /// (`SeedableRng::seed_from_u64`), mapped through `StandardNormal`.
    pub fn new(k: usize, dim: usize, seed: u64) -> Self {
        assert!(k >= 1 && dim >= 1, "query bank needs K, D >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..k * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            spec: QuerySpec { k, dim, seed },
            queries: Tensor::new(vec![k, dim], data).expect("shape matches data"),
        }
    }

    pub fn from_spec(spec: QuerySpec) -> Self {
        Self::new(spec.k, spec.dim, spec.seed)
    }

    pub fn spec(&self) -> QuerySpec {
        self.spec
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn queries(&self) -> &Tensor {
        &self.queries
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Per batch item, the token order that sorts tokens lexicographically.
fn canonical_order(tokens: &Tensor) -> Vec<Vec<usize>> {
    let s = tokens.shape();
    let (batch, n, d) = (s[0], s[1], s[2]);
    (0..batch)
        .map(|b| {
            let item = &tokens.data()[b * n * d..(b + 1) * n * d];
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                lexicographic(&item[i * d..(i + 1) * d], &item[j * d..(j + 1) * d])
            });
            order
        })
        .collect()
}

fn reorder(tokens: &Tensor, order: &[Vec<usize>]) -> Tensor {
    let s = tokens.shape();
    let (n, d) = (s[1], s[2]);
    let mut data = Vec::with_capacity(tokens.len());
    for (b, perm) in order.iter().enumerate() {
        for &i in perm {
            let start = (b * n + i) * d;
            data.extend_from_slice(&tokens.data()[start..start + d]);
        }
    }
    Tensor::new(s.to_vec(), data).expect("same shape")
}

/// `S = T Q^T`, softmax-normalized over the sequence axis: `(B, N, K)`.
/// Rows are in canonical token order.
fn canonical_weights(sorted: &Tensor, bank: &QueryBank) -> Result<Tensor> {
    let s = sorted.shape();
    let (batch, n) = (s[0], s[1]);
    let k = bank.k();
    let scores = sorted.matmul_batched(&bank.queries().permute(&[1, 0])?)?;
    Ok(scores
        .permute(&[0, 2, 1])?
        .reshaped(&[batch * k, n])?
        .scaled_softmax_rows(1.0)?
        .reshaped(&[batch, k, n])?
        .permute(&[0, 2, 1])?)
}

fn check_dims(tokens: &TokenSequence, bank: &QueryBank) -> Result<()> {
    if tokens.dim() != bank.dim() {
        return Err(TokenError::Dim {
            tokens: tokens.dim(),
            queries: bank.dim(),
        });
    }
    Ok(())
}

/// Attention of each query over the identity tokens, `(B, N, K)`; every
/// `(b, k)` column sums to one over `N`.
pub fn attention_weights(tokens: &TokenSequence, bank: &QueryBank) -> Result<Tensor> {
    check_dims(tokens, bank)?;
    let order = canonical_order(tokens.tensor());
    let sorted = canonical_weights(&reorder(tokens.tensor(), &order), bank)?;
    let (n, k) = (tokens.len(), bank.k());
    let mut out = vec![0.0; sorted.len()];
    for (b, perm) in order.iter().enumerate() {
        for (rank, &i) in perm.iter().enumerate() {
            let src = (b * n + rank) * k;
            let dst = (b * n + i) * k;
            out[dst..dst + k].copy_from_slice(&sorted.data()[src..src + k]);
        }
    }
    Ok(Tensor::new(sorted.shape().to_vec(), out)?)
}

/// Aggregated identity tokens `(B, K, D)`: each output token is the
/// attention-weighted average of the input tokens.
pub fn aggregate(tokens: &TokenSequence, bank: &QueryBank) -> Result<Tensor> {
    check_dims(tokens, bank)?;
    let sorted = reorder(tokens.tensor(), &canonical_order(tokens.tensor()));
    let weights = canonical_weights(&sorted, bank)?;
    Ok(weights.permute(&[0, 2, 1])?.matmul_batched(&sorted)?)
}

/// Places `aggregated` (if any) in front of the semantic tokens along the
/// sequence axis. `None` stands for an empty aggregate.
pub fn prepend(aggregated: Option<&Tensor>, semantic: &TokenSequence) -> Result<TokenSequence> {
    let Some(agg) = aggregated else {
        return Ok(semantic.clone());
    };
    if agg.rank() != 3 {
        return Err(TokenError::Sequence(agg.shape().to_vec()));
    }
    let (batch, k, d) = (agg.shape()[0], agg.shape()[1], agg.shape()[2]);
    if batch != semantic.batch() {
        return Err(TokenError::Batch {
            left: batch,
            right: semantic.batch(),
        });
    }
    if d != semantic.dim() {
        return Err(TokenError::Dim {
            tokens: semantic.dim(),
            queries: d,
        });
    }
    let m = semantic.len();
    let mut data = Vec::with_capacity(batch * (k + m) * d);
    for b in 0..batch {
        data.extend_from_slice(&agg.data()[b * k * d..(b + 1) * k * d]);
        data.extend_from_slice(&semantic.tensor().data()[b * m * d..(b + 1) * m * d]);
    }
    TokenSequence::new(Tensor::new(vec![batch, k + m, d], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(shape: &[usize], f: impl FnMut(&[usize]) -> f64) -> TokenSequence {
        TokenSequence::new(Tensor::from_fn(shape, f)).unwrap()
    }

    #[test]
    fn bank_is_seed_deterministic() {
        assert_eq!(QueryBank::new(8, 16, 42), QueryBank::new(8, 16, 42));
        assert_ne!(
            QueryBank::new(8, 16, 42).queries(),
            QueryBank::new(8, 16, 43).queries()
        );
        let spec = QueryBank::new(3, 5, 9).spec();
        assert_eq!(QueryBank::from_spec(spec), QueryBank::new(3, 5, 9));
    }

    #[test]
    fn bank_moments() {
        let q = QueryBank::new(8, 16, 42);
        let n = q.queries().len() as f64;
        let mean = q.queries().sum() / n;
        let var = q
            .queries()
            .data()
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((0.5..=1.5).contains(&var), "var {var}");
    }

    #[test]
    fn singleton_sequence() {
        let bank = QueryBank::new(4, 3, 1);
        let t = seq(&[2, 1, 3], |i| i[0] as f64 - 0.5 * i[2] as f64);
        let w = attention_weights(&t, &bank).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0));
        let agg = aggregate(&t, &bank).unwrap();
        assert_eq!(agg.shape(), &[2, 4, 3]);
        for b in 0..2 {
            for k in 0..4 {
                for d in 0..3 {
                    assert_eq!(agg.get(&[b, k, d]), t.tensor().get(&[b, 0, d]));
                }
            }
        }
    }

    #[test]
    fn identical_tokens() {
        let bank = QueryBank::new(3, 4, 5);
        let t = seq(&[1, 5, 4], |i| [0.3, -1.2, 2.0, 0.7][i[2]]);
        let w = attention_weights(&t, &bank).unwrap();
        assert!(w.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let agg = aggregate(&t, &bank).unwrap();
        for k in 0..3 {
            for d in 0..4 {
                assert!((agg.get(&[0, k, d]) - t.tensor().get(&[0, 0, d])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_instance_matches_loop_oracle() {
        // B=1, N=3, K=2, D=2
        let t = seq(&[1, 3, 2], |i| {
            [[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]][i[1]][i[2]]
        });
        let q = Tensor::new(vec![2, 2], vec![0.3, -0.8, 1.1, 0.4]).unwrap();
        let bank = QueryBank {
            spec: QuerySpec {
                k: 2,
                dim: 2,
                seed: 0,
            },
            queries: q.clone(),
        };
        // softmax over the three tokens of S[:, k], from 50-digit arithmetic
        let expected_w = [
            [0.6414636535926171, 0.14722142861950493],
            [0.3185414232904373, 0.7291925095181789],
            [0.03999492311694563, 0.12358606186231615],
        ];
        let w = attention_weights(&t, &bank).unwrap();
        #[allow(clippy::needless_range_loop)]
        for n in 0..3 {
            for k in 0..2 {
                let (got, want) = (w.get(&[0, n, k]), expected_w[n][k]);
                assert!(
                    ((got - want) / want).abs() <= 1e-12,
                    "w[{n},{k}] {got} vs {want}"
                );
            }
        }
        let agg = aggregate(&t, &bank).unwrap();
        #[allow(clippy::needless_range_loop)]
        for k in 0..2 {
            for d in 0..2 {
                let want: f64 = (0..3)
                    .map(|n| expected_w[n][k] * t.tensor().get(&[0, n, d]))
                    .sum();
                assert!((agg.get(&[0, k, d]) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let bank = QueryBank::new(2, 4, 0);
        let t = seq(&[1, 3, 5], |_| 0.0);
        assert!(matches!(
            attention_weights(&t, &bank),
            Err(TokenError::Dim { .. })
        ));
        assert!(aggregate(&t, &bank).is_err());
        assert!(TokenSequence::new(Tensor::zeros(&[3, 5])).is_err());
        assert!(TokenSequence::new(Tensor::full(&[1, 1, 1], f64::NAN)).is_err());
    }

    #[test]
    fn prepend_lengths_and_suffix() {
        let sem = seq(&[1, 69, 16], |i| (i[1] * 16 + i[2]) as f64 * 0.01);
        assert_eq!(prepend(None, &sem).unwrap(), sem);
        let agg = Tensor::full(&[1, 8, 16], -1.0);
        let out = prepend(Some(&agg), &sem).unwrap();
        assert_eq!(out.len(), 77);
        assert_eq!(&out.tensor().data()[..8 * 16], agg.data());
        assert_eq!(&out.tensor().data()[8 * 16..], sem.tensor().data());
        assert!(prepend(Some(&Tensor::zeros(&[2, 8, 16])), &sem).is_err());
        assert!(prepend(Some(&Tensor::zeros(&[1, 8, 15])), &sem).is_err());
    }

    fn tokens(max_b: usize, max_n: usize, d: usize) -> impl Strategy<Value = TokenSequence> {
        (1..=max_b, 1..=max_n).prop_flat_map(move |(b, n)| {
            proptest::collection::vec(-3.0f64..3.0, b * n * d).prop_map(move |v| {
                TokenSequence::new(Tensor::new(vec![b, n, d], v).unwrap()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn columns_are_stochastic_and_outputs_stay_in_hull(t in tokens(2, 12, 6), seed in 0u64..1000) {
            let bank = QueryBank::new(4, 6, seed);
            let w = attention_weights(&t, &bank).unwrap();
            let (b, n, k) = (t.batch(), t.len(), 4);
            for bi in 0..b {
                for ki in 0..k {
                    let total: f64 = (0..n).map(|ni| w.get(&[bi, ni, ki])).sum();
                    prop_assert!((total - 1.0).abs() < 1e-9);
                }
            }
            let agg = aggregate(&t, &bank).unwrap();
            for bi in 0..b {
                for d in 0..6 {
                    let col: Vec<f64> = (0..n).map(|ni| t.tensor().get(&[bi, ni, d])).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    for ki in 0..k {
                        let v = agg.get(&[bi, ki, d]);
                        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn aggregate_ignores_token_order(t in tokens(2, 10, 5), shift in 0usize..10) {
            let bank = QueryBank::new(3, 5, 11);
            let (b, n, d) = (t.batch(), t.len(), t.dim());
            let rotated = Tensor::from_fn(&[b, n, d], |i| t.tensor().get(&[i[0], (i[1] + shift) % n, i[2]]));
            let rotated = TokenSequence::new(rotated).unwrap();
            prop_assert_eq!(aggregate(&t, &bank).unwrap(), aggregate(&rotated, &bank).unwrap());
        }
    }
}
