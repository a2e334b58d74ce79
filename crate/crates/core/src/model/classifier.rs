use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{DenseTensor, FlatParams, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{Lift, Scalar};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer: `weight` is `out × in`, `bias` has length `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S> {
    pub weight: DenseTensor<S>,
    pub bias: DenseTensor<S>,
}

impl<S: Scalar> Layer<S> {
    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// Weights of a fully-connected classifier whose last layer produces one
/// logit per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<S> {
    layers: Vec<Layer<S>>,
    activation: Activation,
}

pub(crate) fn weight_name(q: usize) -> String {
    format!("layer{q}.weight")
}

pub(crate) fn bias_name(q: usize) -> String {
    format!("layer{q}.bias")
}

pub(crate) fn sample_normal<S: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<S> {
    if std == 0.0 {
        return vec![S::zero(); n];
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    (0..n).map(|_| S::from_f64_lossy(normal.sample(rng))).collect()
}

impl<S: Scalar> ClassifierParams<S> {
    pub fn new(layers: Vec<Layer<S>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("classifier", "at least one layer required"));
        }
        for (q, l) in layers.iter().enumerate() {
            if l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.len() != l.outputs() {
                return Err(Error::shape(
                    format!("layer {q}"),
                    format!("weight {:?} with bias {:?}", l.weight.shape(), l.bias.shape()),
                ));
            }
            if q > 0 && layers[q - 1].outputs() != l.inputs() {
                return Err(Error::shape(
                    format!("layer {q}"),
                    format!(
                        "expects {} inputs but layer {} produces {}",
                        l.inputs(),
                        q - 1,
                        layers[q - 1].outputs()
                    ),
                ));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Gaussian init with std `1/√fan_in` for weights, zero biases.
    /// `widths = [input, hidden…, classes]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Argument(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    weight: DenseTensor::raw(vec![fan_out, fan_in], sample_normal(rng, fan_in * fan_out, std)),
                    bias: DenseTensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: DenseTensor::zeros(&[w[1], w[0]]),
                bias: DenseTensor::zeros(&[w[1]]),
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn has_hidden(&self) -> bool {
        self.layers.len() > 1
    }

    fn check_input(&self, x: &DenseTensor<S>) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.input_width() {
            return Err(Error::shape(
                "layer 0",
                format!("input {:?} but layer expects width {}", x.shape(), self.input_width()),
            ));
        }
        Ok(())
    }

    fn activate(&self, h: DenseTensor<S>) -> DenseTensor<S> {
        match self.activation {
            Activation::Tanh => h.map(Scalar::tanh),
            Activation::Identity => h,
        }
    }

    /// Logits (`rows(x) × num_classes`). With `transfer`, each layer uses
    /// `W ⊙ scale` and `b + shift`.
    pub fn forward(&self, transfer: Option<&TransferParams<S>>, x: &DenseTensor<S>) -> Result<DenseTensor<S>> {
        match transfer {
            Some(t) => apply_transfer(self, t)?.forward(None, x),
            None => {
                self.check_input(x)?;
                let mut h = x.clone();
                for (q, l) in self.layers.iter().enumerate() {
                    h = h.matmul_nt(&l.weight)?.add_row(&l.bias)?;
                    if q + 1 < self.layers.len() {
                        h = self.activate(h);
                    }
                }
                Ok(h)
            }
        }
    }

    /// Penultimate-layer activations, or the raw inputs for a single-layer
    /// model.
    pub fn features(&self, x: &DenseTensor<S>) -> Result<DenseTensor<S>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers[..self.layers.len() - 1] {
            h = self.activate(h.matmul_nt(&l.weight)?.add_row(&l.bias)?);
        }
        Ok(h)
    }

    /// Arg-max class per row; ties resolve to the lowest index.
    pub fn predict(&self, x: &DenseTensor<S>) -> Result<Vec<usize>> {
        let z = self.forward(None, x)?;
        Ok(z.iter_rows()
            .map(|row| {
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if v.primal() > row[best].primal() {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Appends `extra` output rows to the last layer, Gaussian weights with
    /// the given std and zero biases. Old-class logits are unchanged.
    pub fn grow_head<R: Rng + ?Sized>(&self, extra: usize, std: f64, rng: &mut R) -> Self {
        let mut out = self.clone();
        let last = out.layers.last_mut().unwrap();
        let (rows, cols) = (last.outputs(), last.inputs());
        let mut w = last.weight.data().to_vec();
        w.extend(sample_normal::<S, R>(rng, extra * cols, std));
        let mut b = last.bias.data().to_vec();
        b.extend(std::iter::repeat_n(S::zero(), extra));
        last.weight = DenseTensor::raw(vec![rows + extra, cols], w);
        last.bias = DenseTensor::raw(vec![rows + extra], b);
        out
    }

    pub fn to_flat(&self) -> FlatParams<S> {
        FlatParams::from_blocks(
            self.layers
                .iter()
                .enumerate()
                .flat_map(|(q, l)| [(weight_name(q), l.weight.clone()), (bias_name(q), l.bias.clone())]),
        )
    }

    /// Rebuilds parameters with this model's shapes from a flat vector.
    pub fn with_flat(&self, flat: &FlatParams<S>) -> Result<Self> {
        if flat.num_blocks() != 2 * self.layers.len() {
            return Err(Error::shape("classifier", "flat layout does not match layer count"));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(q, l)| {
                let w = flat.block_tensor(2 * q);
                let b = flat.block_tensor(2 * q + 1);
                if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                    return Err(Error::shape(format!("layer {q}"), "flat block shape mismatch"));
                }
                Ok(Layer { weight: w, bias: b })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            activation: self.activation,
        })
    }

    pub fn lift<U: Lift<S>>(&self) -> ClassifierParams<U> {
        ClassifierParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.lift(),
                    bias: l.bias.lift(),
                })
                .collect(),
            activation: self.activation,
        }
    }
}

/// Per-neuron scaling of weights and shifting of biases, one pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferParams<S> {
    pub layers: Vec<(DenseTensor<S>, DenseTensor<S>)>,
}

impl<S: Scalar> TransferParams<S> {
    /// Scales of one and shifts of zero: leaves the base model unchanged.
    pub fn identity(base: &ClassifierParams<S>) -> Self {
        Self {
            layers: base
                .layers
                .iter()
                .map(|l| {
                    (
                        DenseTensor::filled(&[l.outputs()], S::one()),
                        DenseTensor::zeros(&[l.outputs()]),
                    )
                })
                .collect(),
        }
    }

    pub fn check_compatible(&self, base: &ClassifierParams<S>) -> Result<()> {
        if self.layers.len() != base.layers.len() {
            return Err(Error::shape(
                "transfer",
                format!(
                    "{} transfer layers for {} model layers",
                    self.layers.len(),
                    base.layers.len()
                ),
            ));
        }
        for (q, ((s, b), l)) in self.layers.iter().zip(&base.layers).enumerate() {
            if s.shape() != [l.outputs()] || b.shape() != [l.outputs()] {
                return Err(Error::shape(
                    format!("layer {q}"),
                    format!("transfer {:?}/{:?} for {} neurons", s.shape(), b.shape(), l.outputs()),
                ));
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> FlatParams<S> {
        FlatParams::from_blocks(self.layers.iter().enumerate().flat_map(|(q, (s, b))| {
            [
                (format!("layer{q}.scale"), s.clone()),
                (format!("layer{q}.shift"), b.clone()),
            ]
        }))
    }

    pub fn from_flat(flat: &FlatParams<S>) -> Result<Self> {
        if !flat.num_blocks().is_multiple_of(2) {
            return Err(Error::shape("transfer", "odd number of blocks"));
        }
        Ok(Self {
            layers: (0..flat.num_blocks() / 2)
                .map(|q| (flat.block_tensor(2 * q), flat.block_tensor(2 * q + 1)))
                .collect(),
        })
    }
}

/// Materialises `W ⊙ scale`, `b + shift` layer by layer.
pub fn apply_transfer<S: Scalar>(
    base: &ClassifierParams<S>,
    transfer: &TransferParams<S>,
) -> Result<ClassifierParams<S>> {
    transfer.check_compatible(base)?;
    let layers = base
        .layers
        .iter()
        .zip(&transfer.layers)
        .map(|(l, (s, sh))| {
            Ok(Layer {
                weight: l.weight.scale_rows(s)?,
                bias: l.bias.add(sh),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ClassifierParams::new(layers, base.activation)
}

/// Records a forward pass on a tape. `layers` holds `(weight, bias)` vars.
pub(crate) fn forward_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    layers: &[(Var, Var)],
    activation: Activation,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for (q, &(w, b)) in layers.iter().enumerate() {
        let (hc, wc) = (tape.value(h).cols(), tape.value(w).cols());
        if hc != wc {
            return Err(Error::shape(
                format!("layer {q}"),
                format!("input width {hc} but weights expect {wc}"),
            ));
        }
        h = tape.matmul_nt(h, w)?;
        h = tape.add_row(h, b)?;
        if q + 1 < layers.len() && activation == Activation::Tanh {
            h = tape.tanh(h);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_layer() -> ClassifierParams<f64> {
        ClassifierParams::new(
            vec![Layer {
                weight: DenseTensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: DenseTensor::vector(vec![0.5, -0.5]),
            }],
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn hand_forward() {
        let x = DenseTensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(one_layer().forward(None, &x).unwrap().data(), &[1.5, 0.5]);
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = ClassifierParams::<f64>::zeros(&[3, 4, 2], Activation::Identity).unwrap();
        let x = DenseTensor::matrix(2, 3, vec![1., 2., 3., -1., 0., 5.]).unwrap();
        assert!(m.forward(None, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_transfer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ClassifierParams::<f64>::init(&[2, 5, 3], Activation::Tanh, &mut rng).unwrap();
        let t = TransferParams::identity(&m);
        assert_eq!(apply_transfer(&m, &t).unwrap(), m);
        let x = DenseTensor::matrix(1, 2, vec![0.3, -0.9]).unwrap();
        assert_eq!(m.forward(Some(&t), &x).unwrap(), m.forward(None, &x).unwrap());
    }

    #[test]
    fn scaling_by_two_doubles_weights_only() {
        let m = one_layer();
        let t = TransferParams {
            layers: vec![(DenseTensor::vector(vec![2.0, 2.0]), DenseTensor::zeros(&[2]))],
        };
        let a = apply_transfer(&m, &t).unwrap();
        assert_eq!(a.layers()[0].weight.data(), &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(a.layers()[0].bias.data(), &[0.5, -0.5]);
    }

    #[test]
    fn input_width_mismatch_names_layer() {
        let x = DenseTensor::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        match one_layer().forward(None, &x) {
            Err(Error::Shape { context, .. }) => assert_eq!(context, "layer 0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_layers_rejected() {
        let bad = ClassifierParams::new(
            vec![
                Layer {
                    weight: DenseTensor::<f64>::zeros(&[4, 2]),
                    bias: DenseTensor::zeros(&[4]),
                },
                Layer {
                    weight: DenseTensor::zeros(&[3, 5]),
                    bias: DenseTensor::zeros(&[3]),
                },
            ],
            Activation::Tanh,
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }

    #[test]
    fn growing_head_preserves_old_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = ClassifierParams::<f64>::init(&[2, 6, 3], Activation::Tanh, &mut rng).unwrap();
        let g = m.grow_head(2, 0.01, &mut rng);
        assert_eq!(g.num_classes(), 5);
        let x = DenseTensor::matrix(3, 2, vec![0.1, 0.2, -1.0, 0.5, 2.0, -2.0]).unwrap();
        let (a, b) = (m.forward(None, &x).unwrap(), g.forward(None, &x).unwrap());
        for r in 0..3 {
            assert_eq!(&b.row(r)[..3], a.row(r));
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ClassifierParams::<f64>::init(&[2, 4, 3], Activation::Tanh, &mut rng).unwrap();
        assert_eq!(m.with_flat(&m.to_flat()).unwrap(), m);
        let t = TransferParams::identity(&m);
        assert_eq!(TransferParams::from_flat(&t.to_flat()).unwrap(), t);
    }
}
