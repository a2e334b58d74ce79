use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::DenseTensor;
use crate::error::{Error, Result};
use crate::protocol::PhaseSchedule;
use crate::scalar::Scalar;

use super::dataset::LabeledDataset;

/// One phase of a class-incremental stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase<T> {
    /// Class ids introduced in this phase, in order.
    pub classes: Vec<usize>,
    pub train: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
}

/// Phases with pairwise disjoint class sets. A class may carry a drift
/// vector: evaluated `k` phases after it was introduced, its test rows are
/// translated by `k · drift`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseStream<T> {
    phases: Vec<Phase<T>>,
    drift: BTreeMap<usize, Vec<T>>,
}

impl<T: Scalar> PhaseStream<T> {
    pub fn new(phases: Vec<Phase<T>>, drift: BTreeMap<usize, Vec<T>>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, p) in phases.iter().enumerate() {
            for &c in &p.classes {
                if !seen.insert(c) {
                    return Err(Error::Schedule(format!("class {c} appears again in phase {i}")));
                }
            }
            for ds in [&p.train, &p.test] {
                if let Some(&c) = ds.class_ids().iter().find(|c| !p.classes.contains(c)) {
                    return Err(Error::Schedule(format!("phase {i} holds rows of foreign class {c}")));
                }
            }
        }
        Ok(Self { phases, drift })
    }

    pub fn num_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn phase(&self, i: usize) -> &Phase<T> {
        &self.phases[i]
    }

    pub fn phases(&self) -> &[Phase<T>] {
        &self.phases
    }

    pub fn width(&self) -> usize {
        self.phases.first().map_or(0, |p| p.train.width())
    }

    pub fn drift(&self) -> &BTreeMap<usize, Vec<T>> {
        &self.drift
    }

    /// Classes in arrival order.
    pub fn class_order(&self) -> Vec<usize> {
        self.phases.iter().flat_map(|p| p.classes.iter().copied()).collect()
    }

    fn drifted(&self, from: usize, at: usize) -> Result<LabeledDataset<T>> {
        let mut ds = self.phases[from].test.clone();
        let k = T::from_count(at - from);
        for &c in &self.phases[from].classes {
            if let Some(d) = self.drift.get(&c) {
                let shift: Vec<T> = d.iter().map(|&v| v * k).collect();
                ds.translate_class(c, &shift)?;
            }
        }
        Ok(ds)
    }

    /// Test rows of phases `0..=i` as seen at phase `i`.
    pub fn cumulative_test(&self, i: usize) -> Result<LabeledDataset<T>> {
        let parts = (0..=i).map(|p| self.drifted(p, i)).collect::<Result<Vec<_>>>()?;
        LabeledDataset::concat(&parts.iter().collect::<Vec<_>>())
    }

    /// Phase-0 test rows as seen at phase `i`.
    pub fn initial_test(&self, i: usize) -> Result<LabeledDataset<T>> {
        self.drifted(0, i)
    }

    /// Training rows of phases `0..=i`.
    pub fn cumulative_train(&self, i: usize) -> Result<LabeledDataset<T>> {
        let parts: Vec<&LabeledDataset<T>> = self.phases[..=i].iter().map(|p| &p.train).collect();
        LabeledDataset::concat(&parts)
    }
}

/// One Gaussian class of a synthetic mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianClass {
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub variance: Vec<f64>,
    pub train_count: usize,
    pub test_count: usize,
    /// Mean shift per phase after the class is introduced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureSpec {
    pub classes: Vec<GaussianClass>,
}

impl GaussianMixtureSpec {
    /// `n` isotropic classes with means evenly spaced on a circle of the
    /// given radius in 2-D. `drift` is a per-phase shift, in units of the
    /// standard deviation, along the circle (counter-clockwise).
    pub fn ring(n: usize, radius: f64, variance: f64, train_count: usize, test_count: usize, drift: f64) -> Self {
        let sd = variance.sqrt();
        let classes = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                GaussianClass {
                    mean: vec![radius * a.cos(), radius * a.sin()],
                    variance: vec![variance; 2],
                    train_count,
                    test_count,
                    drift: (drift != 0.0).then(|| vec![-drift * sd * a.sin(), drift * sd * a.cos()]),
                }
            })
            .collect();
        Self { classes }
    }

    /// Six unit-variance classes on a radius-4 hexagon, 500 train and 100
    /// test rows each.
    pub fn hexagon() -> Self {
        Self::ring(6, 4.0, 1.0, 500, 100, 0.0)
    }

    pub fn width(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        if self.classes.is_empty() || w == 0 {
            return Err(Error::Spec(
                "at least one class with a non-empty mean is required".into(),
            ));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if c.mean.len() != w || c.variance.len() != w || c.drift.as_ref().is_some_and(|d| d.len() != w) {
                return Err(Error::Spec(format!("class {k} does not match feature width {w}")));
            }
            if c.variance.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Spec(format!("class {k} needs positive finite variances")));
            }
            if c.train_count == 0 || c.test_count == 0 {
                return Err(Error::Spec(format!("class {k} needs positive sample counts")));
            }
            if c.mean.iter().chain(c.drift.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::Spec(format!("class {k} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

fn sample_class(rng: &mut ChaCha8Rng, c: &GaussianClass, n: usize) -> Vec<f64> {
    let sd: Vec<f64> = c.variance.iter().map(|v| v.sqrt()).collect();
    let mut out = Vec::with_capacity(n * c.mean.len());
    for _ in 0..n {
        for (m, s) in c.mean.iter().zip(&sd) {
            let z: f64 = StandardNormal.sample(rng);
            out.push(m + s * z);
        }
    }
    out
}

/// Samples every class of `spec`; class `k` gets label `k` and classes
/// enter phases in spec order.
pub fn generate_gaussian_stream(
    spec: &GaussianMixtureSpec,
    schedule: &PhaseSchedule,
    seed: u64,
) -> Result<PhaseStream<f64>> {
    spec.validate()?;
    if spec.classes.len() != schedule.total_classes {
        return Err(Error::Spec(format!(
            "{} classes specified but the schedule expects {}",
            spec.classes.len(),
            schedule.total_classes
        )));
    }
    let w = spec.width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phases = Vec::with_capacity(schedule.num_phases());
    for i in 0..schedule.num_phases() {
        let classes: Vec<usize> = schedule.phase_classes(i).collect();
        let (mut tr_x, mut tr_y, mut te_x, mut te_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &k in &classes {
            let c = &spec.classes[k];
            tr_x.extend(sample_class(&mut rng, c, c.train_count));
            tr_y.extend(std::iter::repeat_n(k, c.train_count));
            te_x.extend(sample_class(&mut rng, c, c.test_count));
            te_y.extend(std::iter::repeat_n(k, c.test_count));
        }
        phases.push(Phase {
            classes,
            train: LabeledDataset::new(DenseTensor::new(vec![tr_y.len(), w], tr_x)?, tr_y)?,
            test: LabeledDataset::new(DenseTensor::new(vec![te_y.len(), w], te_x)?, te_y)?,
        });
    }
    let drift = spec
        .classes
        .iter()
        .enumerate()
        .filter_map(|(k, c)| c.drift.clone().map(|d| (k, d)))
        .collect();
    PhaseStream::new(phases, drift)
}

/// Splits a labelled dataset into a stream: classes are assigned to phases
/// by a seeded shuffle, and each class's rows are split into train and test
/// with `round(test_fraction · rows)` test rows.
pub fn partition_stream<T: Scalar>(
    ds: &LabeledDataset<T>,
    schedule: &PhaseSchedule,
    test_fraction: f64,
    seed: u64,
) -> Result<PhaseStream<T>> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Argument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    if ds.class_ids().len() != schedule.total_classes {
        return Err(Error::Schedule(format!(
            "dataset has {} classes but the schedule expects {}",
            ds.class_ids().len(),
            schedule.total_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = ds.class_ids().to_vec();
    order.shuffle(&mut rng);
    let mut phases = Vec::with_capacity(schedule.num_phases());
    for i in 0..schedule.num_phases() {
        let classes: Vec<usize> = order[schedule.phase_classes(i)].to_vec();
        let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
        for &c in &classes {
            let mut rows = ds.rows_of(c);
            rows.shuffle(&mut rng);
            let n_test = (test_fraction * rows.len() as f64).round() as usize;
            let (te, tr) = rows.split_at(n_test.min(rows.len()));
            let (mut te, mut tr) = (te.to_vec(), tr.to_vec());
            te.sort_unstable();
            tr.sort_unstable();
            train_rows.extend(tr);
            test_rows.extend(te);
        }
        phases.push(Phase {
            classes,
            train: ds.select(&train_rows),
            test: ds.select(&test_rows),
        });
    }
    PhaseStream::new(phases, BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::build_schedule;

    #[test]
    fn tiny_variance_collapses_to_mean() {
        let mut spec = GaussianMixtureSpec::ring(2, 3.0, 1e-30, 5, 2, 0.0);
        spec.classes[1].mean = vec![-1.5, 0.25];
        let s = generate_gaussian_stream(&spec, &build_schedule(2, 1).unwrap(), 3).unwrap();
        for p in s.phases() {
            for (r, &y) in p.train.labels().iter().enumerate() {
                for (v, m) in p.train.features().row(r).iter().zip(&spec.classes[y].mean) {
                    assert!((v - m).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let sched = PhaseSchedule::explicit(vec![2, 2, 2]).unwrap();
        let a = generate_gaussian_stream(&GaussianMixtureSpec::hexagon(), &sched, 42).unwrap();
        let b = generate_gaussian_stream(&GaussianMixtureSpec::hexagon(), &sched, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.phase(1).classes, vec![2, 3]);
    }

    #[test]
    fn width_mismatch_is_spec_error() {
        let mut spec = GaussianMixtureSpec::hexagon();
        spec.classes[2].mean.push(0.0);
        assert!(matches!(
            generate_gaussian_stream(&spec, &PhaseSchedule::explicit(vec![2, 2, 2]).unwrap(), 1),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn drift_shifts_old_test_rows() {
        let spec = GaussianMixtureSpec::ring(2, 1.0, 1.0, 3, 2, 0.5);
        let s = generate_gaussian_stream(&spec, &build_schedule(2, 1).unwrap(), 7).unwrap();
        let d = &s.drift()[&0];
        let now = s.initial_test(1).unwrap();
        let then = s.phase(0).test.clone();
        for r in 0..then.len() {
            for j in 0..2 {
                assert_eq!(now.features().row(r)[j], then.features().row(r)[j] + d[j]);
            }
        }
        assert_eq!(s.cumulative_test(1).unwrap().len(), 4);
    }

    #[test]
    fn zero_test_fraction() {
        let ds = LabeledDataset::new(DenseTensor::<f64>::zeros(&[6, 1]), vec![0, 0, 1, 1, 2, 2]).unwrap();
        let s = partition_stream(&ds, &build_schedule(3, 0).unwrap(), 0.0, 1).unwrap();
        assert_eq!(s.num_phases(), 1);
        assert!(s.phase(0).test.is_empty());
        assert_eq!(s.phase(0).train.len(), 6);
    }

    #[test]
    fn class_count_mismatch() {
        let ds = LabeledDataset::new(DenseTensor::<f64>::zeros(&[2, 1]), vec![0, 1]).unwrap();
        assert!(matches!(
            partition_stream(&ds, &build_schedule(4, 1).unwrap(), 0.5, 1),
            Err(Error::Schedule(_))
        ));
    }
}
