use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::DenseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How a class's exemplars were first obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Random,
    Herding,
    Mnemonics,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Random => "random",
            Origin::Herding => "herding",
            Origin::Mnemonics => "mnemonics",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Origin::Random),
            "herding" => Some(Origin::Herding),
            "mnemonics" => Some(Origin::Mnemonics),
            _ => None,
        }
    }
}

/// Exemplars of one class together with the rows they started from.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassExemplars<T> {
    pub current: DenseTensor<T>,
    pub init: DenseTensor<T>,
    pub origin: Origin,
}

/// Per-class exemplar tensors, ordered by class id.
#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarSet<T> {
    width: usize,
    classes: BTreeMap<usize, ClassExemplars<T>>,
}

impl<T: Scalar> ExemplarSet<T> {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            classes: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check(&self, class: usize, t: &DenseTensor<T>) -> Result<()> {
        if t.rank() != 2 || t.cols() != self.width {
            return Err(Error::shape(
                format!("exemplars of class {class}"),
                format!("{:?} for feature width {}", t.shape(), self.width),
            ));
        }
        if t.rows() == 0 {
            return Err(Error::Argument(format!("class {class} needs at least one exemplar")));
        }
        Ok(())
    }

    /// Adds (or replaces) a class; the snapshot is taken from `rows`.
    pub fn insert(&mut self, class: usize, rows: DenseTensor<T>, origin: Origin) -> Result<()> {
        self.check(class, &rows)?;
        self.classes.insert(
            class,
            ClassExemplars {
                init: rows.clone(),
                current: rows,
                origin,
            },
        );
        Ok(())
    }

    /// Replaces the current rows of an existing class, keeping its snapshot.
    pub fn update(&mut self, class: usize, rows: DenseTensor<T>) -> Result<()> {
        self.check(class, &rows)?;
        let entry = self
            .classes
            .get_mut(&class)
            .ok_or_else(|| Error::Argument(format!("no exemplars stored for class {class}")))?;
        if entry.current.shape() != rows.shape() {
            return Err(Error::shape(
                format!("exemplars of class {class}"),
                format!(
                    "update {:?} differs from stored {:?}",
                    rows.shape(),
                    entry.current.shape()
                ),
            ));
        }
        entry.current = rows;
        Ok(())
    }

    /// Keeps only the listed rows (and the matching snapshot rows).
    pub fn retain_rows(&mut self, class: usize, rows: &[usize]) -> Result<()> {
        let entry = self
            .classes
            .get_mut(&class)
            .ok_or_else(|| Error::Argument(format!("no exemplars stored for class {class}")))?;
        if rows.is_empty() || rows.iter().any(|&r| r >= entry.current.rows()) {
            return Err(Error::Argument(format!("invalid row selection for class {class}")));
        }
        entry.current = entry.current.select_rows(rows);
        entry.init = entry.init.select_rows(rows);
        Ok(())
    }

    pub fn get(&self, class: usize) -> Option<&ClassExemplars<T>> {
        self.classes.get(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ClassExemplars<T>)> {
        self.classes.iter().map(|(&c, e)| (c, e))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn count(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, |e| e.current.rows())
    }

    pub fn total(&self) -> usize {
        self.classes.values().map(|e| e.current.rows()).sum()
    }

    /// Merges `other` into `self`; classes in `other` win.
    pub fn extend(&mut self, other: ExemplarSet<T>) -> Result<()> {
        if other.width != self.width && !other.is_empty() {
            return Err(Error::shape(
                "exemplar set",
                format!("width {} vs {}", other.width, self.width),
            ));
        }
        self.classes.extend(other.classes);
        Ok(())
    }

    /// The subset holding the listed classes.
    pub fn subset(&self, classes: &[usize]) -> Self {
        Self {
            width: self.width,
            classes: self
                .classes
                .iter()
                .filter(|(c, _)| classes.contains(c))
                .map(|(&c, e)| (c, e.clone()))
                .collect(),
        }
    }

    /// All current exemplars stacked in class order, with their labels.
    pub fn stacked(&self) -> (DenseTensor<T>, Vec<usize>) {
        let parts: Vec<&DenseTensor<T>> = self.classes.values().map(|e| &e.current).collect();
        let x = if parts.is_empty() {
            DenseTensor::zeros(&[0, self.width])
        } else {
            DenseTensor::vstack(&parts).expect("widths checked on insert")
        };
        let labels = self
            .classes
            .iter()
            .flat_map(|(&c, e)| std::iter::repeat_n(c, e.current.rows()))
            .collect();
        (x, labels)
    }

    /// Classes whose exemplar count is below the largest count in the set.
    pub fn unbalanced_classes(&self) -> Vec<usize> {
        let max = self.classes.values().map(|e| e.current.rows()).max().unwrap_or(0);
        self.classes
            .iter()
            .filter(|(_, e)| e.current.rows() != max)
            .map(|(&c, _)| c)
            .collect()
    }
}

/// Mean distances between exemplars and their starting rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub cosine: f64,
    pub euclidean: f64,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        // Undefined angle against a distinct vector.
        return 1.0;
    }
    (1.0 - dot / (na * nb)).max(0.0)
}

/// Per-class mean (cosine, Euclidean) distance from each exemplar to its
/// own starting row.
pub fn exemplar_drift<T: Scalar>(set: &ExemplarSet<T>) -> BTreeMap<usize, Drift> {
    set.iter()
        .map(|(c, e)| {
            let n = e.current.rows();
            let (mut cos, mut euc) = (0.0, 0.0);
            for r in 0..n {
                let a: Vec<f64> = e.current.row(r).iter().map(|v| v.primal()).collect();
                let b: Vec<f64> = e.init.row(r).iter().map(|v| v.primal()).collect();
                cos += cosine_distance(&a, &b);
                euc += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            }
            let n = n.max(1) as f64;
            (
                c,
                Drift {
                    cosine: cos / n,
                    euclidean: euc / n,
                },
            )
        })
        .collect()
}

/// Euclidean drift averaged over every exemplar of the set.
pub fn mean_euclidean_drift<T: Scalar>(set: &ExemplarSet<T>) -> f64 {
    let total = set.total();
    if total == 0 {
        return 0.0;
    }
    exemplar_drift(set)
        .iter()
        .map(|(c, d)| d.euclidean * set.count(*c) as f64)
        .sum::<f64>()
        / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[&[f64]]) -> DenseTensor<f64> {
        DenseTensor::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn fresh_set_has_zero_drift() {
        let mut s = ExemplarSet::new(2);
        s.insert(0, rows(&[&[1.0, 2.0], &[0.0, 0.0]]), Origin::Random).unwrap();
        s.insert(3, rows(&[&[-1.0, 5.0]]), Origin::Herding).unwrap();
        for d in exemplar_drift(&s).values() {
            assert_eq!(
                *d,
                Drift {
                    cosine: 0.0,
                    euclidean: 0.0
                }
            );
        }
    }

    #[test]
    fn translation_by_norm_three() {
        let mut s = ExemplarSet::new(2);
        s.insert(1, rows(&[&[1.0, 1.0]]), Origin::Mnemonics).unwrap();
        s.update(1, rows(&[&[1.0 + 1.8, 1.0 + 2.4]])).unwrap();
        let d = exemplar_drift(&s)[&1];
        assert!((d.euclidean - 3.0).abs() < 1e-12);
        assert!(d.cosine > 0.0);
    }

    #[test]
    fn width_and_emptiness_are_checked() {
        let mut s = ExemplarSet::<f64>::new(3);
        assert!(s.insert(0, rows(&[&[1.0, 2.0]]), Origin::Random).is_err());
        assert!(s.insert(0, DenseTensor::zeros(&[0, 3]), Origin::Random).is_err());
    }

    #[test]
    fn retain_keeps_snapshot_aligned() {
        let mut s = ExemplarSet::new(1);
        s.insert(0, rows(&[&[0.0], &[1.0], &[2.0]]), Origin::Random).unwrap();
        s.update(0, rows(&[&[10.0], &[11.0], &[12.0]])).unwrap();
        s.retain_rows(0, &[2, 0]).unwrap();
        let e = s.get(0).unwrap();
        assert_eq!(e.current.data(), &[12.0, 10.0]);
        assert_eq!(e.init.data(), &[2.0, 0.0]);
    }

    #[test]
    fn stacked_is_class_ordered() {
        let mut s = ExemplarSet::new(1);
        s.insert(5, rows(&[&[5.0]]), Origin::Random).unwrap();
        s.insert(2, rows(&[&[2.0], &[2.5]]), Origin::Random).unwrap();
        let (x, y) = s.stacked();
        assert_eq!(x.data(), &[2.0, 2.5, 5.0]);
        assert_eq!(y, vec![2, 2, 5]);
        assert_eq!(s.unbalanced_classes(), vec![5]);
    }
}
