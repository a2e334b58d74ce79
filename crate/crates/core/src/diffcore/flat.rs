use crate::error::{Error, Result};
use crate::scalar::{Lift, Scalar};

use super::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl BlockLayout {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named parameter blocks packed into one contiguous vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatParams<S> {
    values: Vec<S>,
    layout: Vec<BlockLayout>,
}

impl<S: Scalar> FlatParams<S> {
    pub fn from_blocks<N: Into<String>>(blocks: impl IntoIterator<Item = (N, DenseTensor<S>)>) -> Self {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for (name, t) in blocks {
            layout.push(BlockLayout {
                name: name.into(),
                shape: t.shape().to_vec(),
                offset: values.len(),
            });
            values.extend_from_slice(t.data());
        }
        Self { values, layout }
    }

    /// Same layout as `like`, with the given values.
    pub fn with_layout_of<U>(like: &FlatParams<U>, values: Vec<S>) -> Result<Self> {
        if values.len() != like.values.len() {
            return Err(Error::shape(
                "flat params",
                format!("{} values for layout of {}", values.len(), like.values.len()),
            ));
        }
        Ok(Self {
            values,
            layout: like.layout.clone(),
        })
    }

    pub fn zeros_like<U>(like: &FlatParams<U>) -> Self {
        Self {
            values: vec![S::zero(); like.values.len()],
            layout: like.layout.clone(),
        }
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn layout(&self) -> &[BlockLayout] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_blocks(&self) -> usize {
        self.layout.len()
    }

    pub fn block_values(&self, i: usize) -> &[S] {
        let b = &self.layout[i];
        &self.values[b.offset..b.offset + b.size()]
    }

    pub fn block_tensor(&self, i: usize) -> DenseTensor<S> {
        DenseTensor::raw(self.layout[i].shape.clone(), self.block_values(i).to_vec())
    }

    pub fn block(&self, name: &str) -> Option<DenseTensor<S>> {
        self.layout
            .iter()
            .position(|b| b.name == name)
            .map(|i| self.block_tensor(i))
    }

    pub fn tensors(&self) -> Vec<DenseTensor<S>> {
        (0..self.layout.len()).map(|i| self.block_tensor(i)).collect()
    }

    pub fn same_layout<U>(&self, other: &FlatParams<U>) -> bool {
        self.layout == other.layout
    }

    pub fn check_layout<U>(&self, other: &FlatParams<U>, context: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::shape(context, "parameter layouts differ"))
        }
    }

    /// Blocks of `self` followed by blocks of `other`.
    pub fn concat(&self, other: &Self) -> Self {
        let mut layout = self.layout.clone();
        let base = self.values.len();
        layout.extend(other.layout.iter().map(|b| BlockLayout {
            offset: b.offset + base,
            ..b.clone()
        }));
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self { values, layout }
    }

    /// Splits after the first `n` blocks.
    pub fn split_blocks(&self, n: usize) -> (Self, Self) {
        let cut = self.layout.get(n).map_or(self.values.len(), |b| b.offset);
        let head = Self {
            values: self.values[..cut].to_vec(),
            layout: self.layout[..n].to_vec(),
        };
        let tail = Self {
            values: self.values[cut..].to_vec(),
            layout: self.layout[n..]
                .iter()
                .map(|b| BlockLayout {
                    offset: b.offset - cut,
                    ..b.clone()
                })
                .collect(),
        };
        (head, tail)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn lift<U: Lift<S>>(&self) -> FlatParams<U> {
        FlatParams {
            values: self.values.iter().map(|&v| U::lift(v)).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn scaled(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    /// `self += k · other`
    pub fn axpy(&mut self, k: S, other: &Self) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
    }

    pub fn dot(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.primal().abs()).fold(0.0, f64::max)
    }

    /// Name of the first block holding a non-finite entry.
    pub fn first_non_finite_block(&self) -> Option<&str> {
        self.layout.iter().find_map(|b| {
            self.values[b.offset..b.offset + b.size()]
                .iter()
                .any(|v| !v.is_finite())
                .then_some(b.name.as_str())
        })
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite_block() {
            Some(name) => Err(Error::NonFinite {
                block: name.to_string(),
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let p = FlatParams::from_blocks([
            ("a", DenseTensor::<f64>::zeros(&[2, 3])),
            ("b", DenseTensor::zeros(&[4])),
        ]);
        assert_eq!(p.len(), 10);
        assert_eq!(p.layout()[1].offset, 6);
        let (h, t) = p.split_blocks(1);
        assert_eq!(h.len(), 6);
        assert_eq!(t.layout()[0].offset, 0);
        assert_eq!(h.concat(&t), p);
    }

    #[test]
    fn non_finite_block_is_named() {
        let mut p = FlatParams::from_blocks([("w", DenseTensor::<f64>::zeros(&[2])), ("b", DenseTensor::zeros(&[2]))]);
        p.values_mut()[3] = f64::INFINITY;
        assert_eq!(p.first_non_finite_block(), Some("b"));
    }
}
