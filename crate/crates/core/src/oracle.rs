//! Self-checks exposed through the `oracle-check` command: the fused noise
//! against its scalar-loop reference, and the closed-form noise prediction
//! against a finite-difference gradient of the noisy log-density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diffusion::{
    eps_predict, forward_noise, GaussianMixture, NoiseSchedule, ScheduleConfig,
};
use crate::idaf::{fuse, fuse_reference, FusionConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Largest observed discrepancy (0 for bitwise checks that passed).
    pub max_error: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// `fuse` and `fuse_reference` on random `(B <= 2, 3, 16, 16)` inputs,
/// cycling through temperatures 1, 3, 5, 7 and pool factors 1, 2, 4.
pub fn fusion_equivalence(instances: usize, seed: u64) -> OracleReport {
    const LAMBDAS: [f64; 4] = [1.0, 3.0, 5.0, 7.0];
    const POOLS: [usize; 3] = [1, 2, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_error: f64 = 0.0;
    for i in 0..instances {
        let batch = rng.gen_range(1..=2);
        let cfg = FusionConfig {
            lambda_semantic: LAMBDAS[i % 4],
            lambda_identity: LAMBDAS[(i / 4) % 4],
            pool_factor: POOLS[(i / 16) % 3],
            c_mid: None,
        };
        let shape = [batch, 3, 16, 16];
        let scale: f64 = rng.gen_range(0.1..3.0);
        let a = normal(&mut rng, &shape).map(|v| v * scale);
        let b = normal(&mut rng, &shape);
        let (Ok(fast), Ok(slow)) = (fuse(&a, &b, &cfg), fuse_reference(&a, &b, &cfg)) else {
            failures += 1;
            continue;
        };
        let diff = fast
            .fused
            .data()
            .iter()
            .zip(slow.fused.data())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        max_error = max_error.max(diff);
        if fast != slow {
            failures += 1;
        }
    }
    OracleReport {
        name: "fuse_matches_reference",
        instances,
        failures,
        max_error,
        tolerance: 0.0,
    }
}

/// `log p_t(x)` for the mixture after forward noising to base index `index`.
pub fn log_density(
    x: &Tensor,
    index: usize,
    gm: &GaussianMixture,
    schedule: &NoiseSchedule,
) -> f64 {
    let ab = schedule.alpha_bars()[index];
    let a = ab.sqrt();
    let v = (1.0 - ab) + ab * gm.variance();
    let n = x.len() as f64;
    let terms: Vec<f64> = gm
        .weights()
        .iter()
        .zip(gm.means())
        .map(|(w, mu)| {
            let d: f64 = x
                .data()
                .iter()
                .zip(mu.data())
                .map(|(xi, m)| (xi - a * m).powi(2))
                .sum();
            w.ln() - d / (2.0 * v)
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    lse - 0.5 * n * (2.0 * std::f64::consts::PI * v).ln()
}

/// Relative error `|eps - eps_fd| / |eps_fd|` where
/// `eps_fd = -sqrt(1 - ab) * grad log p_t` by central differences with step
/// `h`.
pub fn score_relative_error(
    x: &Tensor,
    index: usize,
    gm: &GaussianMixture,
    schedule: &NoiseSchedule,
    h: f64,
) -> f64 {
    let eps = eps_predict(x, index, gm, schedule).expect("valid oracle instance");
    let s = (1.0 - schedule.alpha_bars()[index]).sqrt();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        let grad = (log_density(&up, index, gm, schedule)
            - log_density(&down, index, gm, schedule))
            / (2.0 * h);
        let fd = -s * grad;
        num += (eps.data()[i] - fd).powi(2);
        den += fd * fd;
    }
    (num / den).sqrt()
}

/// Random 1-4 component mixtures on `(2, 3, 3)` images at random noise levels.
pub fn score_consistency(points: usize, seed: u64) -> OracleReport {
    const TOL: f64 = 1e-4;
    let schedule = NoiseSchedule::new(ScheduleConfig::default()).expect("default schedule");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 3, 3];
    let mut failures = 0;
    let mut max_error: f64 = 0.0;
    for _ in 0..points {
        let k = rng.gen_range(1..=4);
        let means: Vec<Tensor> = (0..k).map(|_| normal(&mut rng, &shape)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let variance = rng.gen_range(0.05..1.0);
        let gm = GaussianMixture::new(weights, means, variance).expect("valid mixture");
        let index = rng.gen_range(0..1000);
        let comp = rng.gen_range(0..k);
        let x0 = gm.means()[comp]
            .zip_map(&normal(&mut rng, &shape), |m, z| m + variance.sqrt() * z)
            .unwrap();
        let x = forward_noise(&x0, index, &normal(&mut rng, &shape), &schedule).unwrap();
        let err = score_relative_error(&x, index, &gm, &schedule, 1e-4);
        max_error = max_error.max(err);
        if !(err <= TOL) {
            failures += 1;
        }
    }
    OracleReport {
        name: "eps_matches_density_gradient",
        instances: points,
        failures,
        max_error,
        tolerance: TOL,
    }
}
