use crate::diffcore::DenseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Feature rows with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    features: DenseTensor<T>,
    labels: Vec<usize>,
    class_ids: Vec<usize>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(features: DenseTensor<T>, labels: Vec<usize>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::shape(
                "dataset",
                format!("features must be a matrix, got {:?}", features.shape()),
            ));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} rows but {} labels", features.rows(), labels.len()),
            ));
        }
        let mut class_ids = labels.clone();
        class_ids.sort_unstable();
        class_ids.dedup();
        Ok(Self {
            features,
            labels,
            class_ids,
        })
    }

    pub fn empty(width: usize) -> Self {
        Self {
            features: DenseTensor::zeros(&[0, width]),
            labels: Vec::new(),
            class_ids: Vec::new(),
        }
    }

    pub fn features(&self) -> &DenseTensor<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted distinct labels.
    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self::new(
            self.features.select_rows(rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
        .expect("row selection preserves shape")
    }

    /// Row indices carrying label `class`, ascending.
    pub fn rows_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.labels[r] == class).collect()
    }

    pub fn class_features(&self, class: usize) -> DenseTensor<T> {
        self.features.select_rows(&self.rows_of(class))
    }

    /// Rows whose label is in `classes`, in original order.
    pub fn filter_classes(&self, classes: &[usize]) -> Self {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| classes.contains(&self.labels[r])).collect();
        self.select(&rows)
    }

    /// Stacks datasets of equal width.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let width = parts.first().map_or(0, |p| p.width());
        let feats: Vec<&DenseTensor<T>> = parts.iter().map(|p| &p.features).collect();
        if feats.is_empty() {
            return Ok(Self::empty(width));
        }
        let features = DenseTensor::vstack(&feats)?;
        Self::new(features, parts.iter().flat_map(|p| p.labels.iter().copied()).collect())
    }

    /// Relabels through `map`; every label must be present.
    pub fn relabel(&self, map: impl Fn(usize) -> Option<usize>) -> Result<Self> {
        let labels = self
            .labels
            .iter()
            .map(|&y| map(y).ok_or_else(|| Error::Argument(format!("label {y} has no mapping"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.features.clone(), labels)
    }

    /// Adds `shift` to every row of class `class`.
    pub fn translate_class(&mut self, class: usize, shift: &[T]) -> Result<()> {
        if shift.len() != self.width() {
            return Err(Error::shape(
                "translate",
                format!("shift of width {} for {}", shift.len(), self.width()),
            ));
        }
        for r in 0..self.len() {
            if self.labels[r] == class {
                for (v, &s) in self.features.row_mut(r).iter_mut().zip(shift) {
                    *v += s;
                }
            }
        }
        Ok(())
    }
}
