use crate::error::{Error, Result};
use crate::scalar::{Dual, Lift, Scalar};

use super::flat::FlatParams;
use super::tape::{Tape, Var};

/// A scalar loss of a set of parameter blocks.
///
/// `eval` is generic over the tape scalar so the same objective can be
/// differentiated once (over `T`) or twice (over [`Dual<T>`]).
pub trait Objective<T: Scalar> {
    /// Records the loss on `tape`. `params` holds one leaf per block of the
    /// parameter layout, in layout order.
    fn eval<S: Lift<T>>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var>;
}

impl<T: Scalar, O: Objective<T> + ?Sized> Objective<T> for &O {
    fn eval<S: Lift<T>>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var> {
        (**self).eval(tape, params)
    }
}

/// Loss value and gradient at `theta`, computed on a tape over `S`.
pub(crate) fn gradient_at<T, S, O>(loss: &O, theta: &FlatParams<S>) -> Result<(S, FlatParams<S>)>
where
    T: Scalar,
    S: Lift<T>,
    O: Objective<T> + ?Sized,
{
    let mut tape = Tape::<S>::new();
    let leaves: Vec<Var> = theta.tensors().into_iter().map(|t| tape.leaf(t)).collect();
    let out = loss.eval(&mut tape, &leaves)?;
    let value = tape.value(out).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { block: "loss".into() });
    }
    let grads = tape.backward(out)?;
    let mut values = Vec::with_capacity(theta.len());
    for &leaf in &leaves {
        values.extend_from_slice(grads.get_or_zeros(&tape, leaf).data());
    }
    let grad = FlatParams::with_layout_of(theta, values)?;
    grad.ensure_finite()?;
    Ok((value, grad))
}

/// Loss value and exact reverse-mode gradient, laid out like `theta`.
pub fn value_and_grad<T, O>(loss: &O, theta: &FlatParams<T>) -> Result<(T, FlatParams<T>)>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    theta.ensure_finite()?;
    gradient_at::<T, T, O>(loss, theta)
}

/// Loss value, gradient and Hessian-vector product `H(θ)·v` in one
/// forward-over-reverse sweep.
pub fn grad_and_hvp<T, O>(
    loss: &O,
    theta: &FlatParams<T>,
    v: &FlatParams<T>,
) -> Result<(T, FlatParams<T>, FlatParams<T>)>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    theta.check_layout(v, "hessian-vector product")?;
    let values = theta
        .values()
        .iter()
        .zip(v.values())
        .map(|(&re, &eps)| Dual::new(re, eps))
        .collect();
    let seeded = FlatParams::<Dual<T>>::with_layout_of(theta, values)?;
    let (value, grad) = gradient_at::<T, Dual<T>, O>(loss, &seeded)?;
    let g = FlatParams::with_layout_of(theta, grad.values().iter().map(|d| d.re).collect())?;
    let hv = FlatParams::with_layout_of(theta, grad.values().iter().map(|d| d.eps).collect())?;
    Ok((value.re, g, hv))
}

/// `H(θ)·v` where `H` is the Hessian of `loss` at `theta`.
pub fn hessian_vector_product<T, O>(loss: &O, theta: &FlatParams<T>, v: &FlatParams<T>) -> Result<FlatParams<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    grad_and_hvp(loss, theta, v).map(|(_, _, hv)| hv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tensor::DenseTensor;

    /// Σθ² over every block.
    struct SumSquares;

    impl Objective<f64> for SumSquares {
        fn eval<S: Lift<f64>>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var> {
            let mut total: Option<Var> = None;
            for &p in params {
                let sq = tape.mul(p, p)?;
                let s = tape.sum(sq);
                total = Some(match total {
                    Some(t) => tape.add(t, s)?,
                    None => s,
                });
            }
            Ok(total.expect("at least one block"))
        }
    }

    struct Constant;

    impl Objective<f64> for Constant {
        fn eval<S: Lift<f64>>(&self, tape: &mut Tape<S>, _params: &[Var]) -> Result<Var> {
            Ok(tape.leaf(crate::diffcore::DenseTensor::scalar(S::lift(7.0))))
        }
    }

    /// ½ θᵀ diag(a) θ.
    struct DiagQuadratic(Vec<f64>);

    impl Objective<f64> for DiagQuadratic {
        fn eval<S: Lift<f64>>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var> {
            let a = tape.constant(&DenseTensor::vector(self.0.clone()));
            let sq = tape.mul(params[0], params[0])?;
            let w = tape.mul(a, sq)?;
            let s = tape.sum(w);
            Ok(tape.scale(s, S::lift(0.5)))
        }
    }

    struct Exploding;

    impl Objective<f64> for Exploding {
        fn eval<S: Lift<f64>>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var> {
            let big = tape.scale(params[0], S::lift(1e300));
            let sq = tape.mul(big, big)?;
            Ok(tape.sum(sq))
        }
    }

    fn vec_params(v: &[f64]) -> FlatParams<f64> {
        FlatParams::from_blocks([("theta", DenseTensor::vector(v.to_vec()))])
    }

    #[test]
    fn sum_of_squares() {
        let (v, g) = value_and_grad(&SumSquares, &vec_params(&[1.0, 2.0])).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g.values(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let (v, g) = value_and_grad(&Constant, &vec_params(&[1.0, -3.0, 0.5])).unwrap();
        assert_eq!(v, 7.0);
        assert!(g.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hvp_of_diagonal_quadratic() {
        let q = DiagQuadratic(vec![2.0, 4.0]);
        let hv = hessian_vector_product(&q, &vec_params(&[0.3, -0.7]), &vec_params(&[1.0, 1.0])).unwrap();
        assert_eq!(hv.values(), &[2.0, 4.0]);
        let zero = hessian_vector_product(&q, &vec_params(&[0.3, -0.7]), &vec_params(&[0.0, 0.0])).unwrap();
        assert!(zero.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hvp_rejects_layout_mismatch() {
        let q = DiagQuadratic(vec![2.0, 4.0]);
        let err = hessian_vector_product(&q, &vec_params(&[0.3, -0.7]), &vec_params(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn overflow_reports_numeric_failure() {
        let err = value_and_grad(&Exploding, &vec_params(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
