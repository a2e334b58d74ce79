//! Helpers shared by the integration targets.
#![allow(dead_code)]

use mnemonics::diffcore::DenseTensor;
use mnemonics::model::{Activation, ClassifierParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseTensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    DenseTensor::matrix(rows, cols, data).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, widths: &[usize]) -> ClassifierParams<f64> {
    let model = ClassifierParams::init(widths, Activation::Tanh, rng).unwrap();
    let mut flat = model.to_flat();
    for v in flat.values_mut() {
        *v += rng.random_range(-0.2..0.2);
    }
    model.with_flat(&flat).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Exhaustive greedy herding: at every step each remaining row is scored by
/// the distance between the full-data mean and the mean of the selection
/// with that row appended, recomputed from scratch.
pub fn herding_oracle(rows: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = rows.len();
    let d = rows[0].len();
    let mu: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..m {
        let mut scored: Vec<(f64, usize)> = (0..n)
            .filter(|r| !chosen.contains(r))
            .map(|r| {
                let pick: Vec<usize> = chosen.iter().copied().chain([r]).collect();
                let dist = (0..d)
                    .map(|j| {
                        let mean = pick.iter().map(|&p| rows[p][j]).sum::<f64>() / pick.len() as f64;
                        (mu[j] - mean).powi(2)
                    })
                    .sum::<f64>();
                (dist, r)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        chosen.push(scored[0].1);
    }
    chosen
}
