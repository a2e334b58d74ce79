//! Plain-text classifier checkpoints.
//!
//! ```text
//! mnemonics-classifier 1
//! activation tanh
//! layers 2
//! layer0.weight 8 2
//! <16 values, one per line>
//! layer0.bias 8
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so `f64` models reload
//! bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::diffcore::DenseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::classifier::{bias_name, weight_name, Activation, ClassifierParams, Layer};

const MAGIC: &str = "mnemonics-classifier 1";

pub fn to_text<S: Scalar>(model: &ClassifierParams<S>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "activation {}", model.activation().name());
    let _ = writeln!(out, "layers {}", model.layers().len());
    for (q, l) in model.layers().iter().enumerate() {
        for (name, t) in [(weight_name(q), &l.weight), (bias_name(q), &l.bias)] {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "{name} {}", dims.join(" "));
            for v in t.data() {
                let _ = writeln!(out, "{}", v.primal());
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => return Ok((i + 1, l.trim())),
                None => {
                    return Err(Error::Format("checkpoint ended early".into()));
                }
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, text) = self.next()?;
        let mut parts = text.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Parse {
                line,
                message: format!("expected `{key}`"),
            });
        }
        Ok((line, parts.collect()))
    }
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{s}` is not a count"),
    })
}

fn read_block<S: Scalar>(lines: &mut Lines<'_>, name: &str, rank: usize) -> Result<DenseTensor<S>> {
    let (line, dims) = lines.keyed(name)?;
    if dims.len() != rank {
        return Err(Error::Parse {
            line,
            message: format!("`{name}` needs {rank} dims"),
        });
    }
    let shape = dims.iter().map(|d| parse_usize(line, d)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, text) = lines.next()?;
        let v: f64 = text.parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{text}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: "non-finite weight".into(),
            });
        }
        data.push(S::from_f64_lossy(v));
    }
    DenseTensor::new(shape, data)
}

pub fn from_text<S: Scalar>(text: &str) -> Result<ClassifierParams<S>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (line, header) = lines.next()?;
    if header != MAGIC {
        return Err(Error::Parse {
            line,
            message: format!("expected header `{MAGIC}`"),
        });
    }
    let (line, act) = lines.keyed("activation")?;
    let activation = act
        .first()
        .and_then(|a| Activation::parse(a))
        .ok_or_else(|| Error::Parse {
            line,
            message: "unknown activation".into(),
        })?;
    let (line, n) = lines.keyed("layers")?;
    let n = parse_usize(line, n.first().copied().unwrap_or(""))?;
    let mut layers = Vec::with_capacity(n);
    for q in 0..n {
        let weight = read_block(&mut lines, &weight_name(q), 2)?;
        let bias = read_block(&mut lines, &bias_name(q), 1)?;
        layers.push(Layer { weight, bias });
    }
    ClassifierParams::new(layers, activation)
}

pub fn save<S: Scalar>(model: &ClassifierParams<S>, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<ClassifierParams<S>> {
    from_text(&std::fs::read_to_string(path)?)
}
