use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::DenseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_count(m: usize, rows: usize) -> Result<()> {
    if m == 0 || m > rows {
        return Err(Error::Argument(format!("cannot select {m} exemplars from {rows} rows")));
    }
    Ok(())
}

/// `m` distinct row indices drawn uniformly without replacement, sorted
/// ascending.
pub fn select_random_indices(rows: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_count(m, rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, rows, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn select_random<T: Scalar>(class_data: &DenseTensor<T>, m: usize, seed: u64) -> Result<DenseTensor<T>> {
    let idx = select_random_indices(class_data.rows(), m, seed)?;
    Ok(class_data.select_rows(&idx))
}

/// Greedy mean matching: step `k` picks the unselected row that brings the
/// running mean of the selection closest to the mean of all rows. Ties go
/// to the lowest index.
pub fn select_herding<T: Scalar>(features: &DenseTensor<T>, m: usize) -> Result<Vec<usize>> {
    let n = features.rows();
    check_count(m, n)?;
    let d = features.cols();
    let x: Vec<f64> = features.data().iter().map(|v| v.primal()).collect();
    let mut mu = vec![0.0; d];
    for r in 0..n {
        for j in 0..d {
            mu[j] += x[r * d + j];
        }
    }
    mu.iter_mut().for_each(|v| *v /= n as f64);

    let mut taken = vec![false; n];
    let mut sum = vec![0.0; d];
    let mut order = Vec::with_capacity(m);
    for k in 1..=m {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..n {
            if taken[r] {
                continue;
            }
            let dist: f64 = (0..d)
                .map(|j| {
                    let diff = mu[j] - (sum[j] + x[r * d + j]) / k as f64;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((r, dist));
            }
        }
        let (r, _) = best.expect("m ≤ n leaves a candidate");
        taken[r] = true;
        for j in 0..d {
            sum[j] += x[r * d + j];
        }
        order.push(r);
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DenseTensor<f64> {
        DenseTensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn herding_small_line() {
        assert_eq!(select_herding(&col(&[0.0, 1.0, 2.0, 10.0]), 2).unwrap(), vec![2, 1]);
    }

    #[test]
    fn herding_tie_takes_lowest_index() {
        assert_eq!(select_herding(&col(&[-1.0, 1.0]), 1).unwrap(), vec![0]);
    }

    #[test]
    fn herding_identical_rows() {
        let x = DenseTensor::matrix(5, 2, vec![0.5; 10]).unwrap();
        assert_eq!(select_herding(&x, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn count_out_of_range() {
        assert!(matches!(select_herding(&col(&[1.0]), 2), Err(Error::Argument(_))));
        assert!(matches!(select_random_indices(3, 0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn random_all_rows_is_whole_class() {
        let x = col(&[3.0, 1.0, 2.0]);
        assert_eq!(select_random(&x, 3, 99).unwrap(), x);
    }

    #[test]
    fn random_is_deterministic() {
        assert_eq!(
            select_random_indices(50, 7, 1234).unwrap(),
            select_random_indices(50, 7, 1234).unwrap()
        );
    }
}
