//! Hypergradients through an unrolled sequence of gradient-descent steps.
//!
//! The inner problem runs `θ_{t+1} = θ_t − α ∇_θ f(θ_t, E)` for `K` steps.
//! The reverse sweep carries `g_t = ∂L/∂θ_t` back from the outer loss `L`:
//!
//! ```text
//! ∂L/∂E  += −α · ∂²f/∂E∂θ (θ_t, E) · g_{t+1}
//! g_t     = g_{t+1} − α · ∂²f/∂θ² (θ_t, E) · g_{t+1}
//! ```
//!
//! Both second-order terms come from a single Hessian-vector product of `f`
//! over the joint `(θ, E)` layout with tangent `(g_{t+1}, 0)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Lift, Scalar};

use super::flat::FlatParams;
use super::grad::{grad_and_hvp, gradient_at, Objective};
use super::tape::{Tape, Var};

/// Parameter magnitude beyond which an unrolled trajectory is declared
/// divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// A loss of model parameters `θ` and exemplar tensors `E`.
pub trait BilevelObjective<T: Scalar> {
    fn eval<S: Lift<T>>(&self, tape: &mut Tape<S>, theta: &[Var], exemplars: &[Var]) -> Result<Var>;
}

/// Views a [`BilevelObjective`] as an [`Objective`] over the concatenated
/// `(θ, E)` layout.
struct Joint<'a, O: ?Sized> {
    objective: &'a O,
    theta_blocks: usize,
}

impl<T: Scalar, O: BilevelObjective<T> + ?Sized> Objective<T> for Joint<'_, O> {
    fn eval<S: Lift<T>>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var> {
        let (theta, ex) = params.split_at(self.theta_blocks);
        self.objective.eval(tape, theta, ex)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnrollSpec {
    /// Number of inner gradient steps `K`.
    pub steps: usize,
    /// Inner learning rate `α₂`.
    pub inner_lr: f64,
}

impl UnrollSpec {
    pub fn new(steps: usize, inner_lr: f64) -> Result<Self> {
        let spec = Self { steps, inner_lr };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::Argument(format!(
                "inner learning rate must be positive, got {}",
                self.inner_lr
            )));
        }
        Ok(())
    }
}

impl Default for UnrollSpec {
    fn default() -> Self {
        Self {
            steps: 5,
            inner_lr: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Hypergradient<T> {
    /// Outer loss at the final inner iterate.
    pub outer_loss: T,
    /// `d outer / d E`, laid out like the exemplars.
    pub grad: FlatParams<T>,
    /// Final inner iterate `θ_K`.
    pub theta: FlatParams<T>,
}

fn check_iterate<T: Scalar>(theta: &FlatParams<T>, step: usize) -> Result<()> {
    if let Some(block) = theta.first_non_finite_block() {
        return Err(Error::Divergence {
            step,
            reason: format!("non-finite parameters in `{block}`"),
        });
    }
    let m = theta.max_abs();
    if m > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            step,
            reason: format!("parameter magnitude {m:e} exceeds {DIVERGENCE_LIMIT:e}"),
        });
    }
    Ok(())
}

fn as_divergence(err: Error, step: usize) -> Error {
    match err {
        Error::NonFinite { block } => Error::Divergence {
            step,
            reason: format!("non-finite gradient in `{block}`"),
        },
        other => other,
    }
}

/// Runs the inner descent and returns every iterate `θ_0 … θ_K`.
pub fn unroll_trajectory<T, I>(
    inner: &I,
    theta0: &FlatParams<T>,
    exemplars: &FlatParams<T>,
    spec: UnrollSpec,
) -> Result<Vec<FlatParams<T>>>
where
    T: Scalar,
    I: BilevelObjective<T> + ?Sized,
{
    spec.validate()?;
    let joint = Joint {
        objective: inner,
        theta_blocks: theta0.num_blocks(),
    };
    let lr = T::from_f64_lossy(spec.inner_lr);
    let mut trajectory = Vec::with_capacity(spec.steps + 1);
    trajectory.push(theta0.clone());
    for t in 0..spec.steps {
        let theta = &trajectory[t];
        check_iterate(theta, t)?;
        let point = theta.concat(exemplars);
        let (_, g) = gradient_at::<T, T, _>(&joint, &point).map_err(|e| as_divergence(e, t))?;
        let (g_theta, _) = g.split_blocks(theta.num_blocks());
        let mut next = theta.clone();
        next.axpy(-lr, &g_theta);
        check_iterate(&next, t)?;
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Exact `d outer(θ_K, E) / d E` through `K` unrolled inner steps.
pub fn unrolled_hypergradient<T, I, O>(
    inner: &I,
    outer: &O,
    theta0: &FlatParams<T>,
    exemplars: &FlatParams<T>,
    spec: UnrollSpec,
) -> Result<Hypergradient<T>>
where
    T: Scalar,
    I: BilevelObjective<T> + ?Sized,
    O: BilevelObjective<T> + ?Sized,
{
    exemplars.ensure_finite()?;
    let n_theta = theta0.num_blocks();
    let trajectory = unroll_trajectory(inner, theta0, exemplars, spec)?;
    let theta_k = trajectory.last().expect("trajectory holds θ_0").clone();

    let outer_joint = Joint {
        objective: outer,
        theta_blocks: n_theta,
    };
    let (outer_loss, g) =
        gradient_at::<T, T, _>(&outer_joint, &theta_k.concat(exemplars)).map_err(|e| as_divergence(e, spec.steps))?;
    let (mut g_theta, mut g_ex) = g.split_blocks(n_theta);

    let inner_joint = Joint {
        objective: inner,
        theta_blocks: n_theta,
    };
    let lr = T::from_f64_lossy(spec.inner_lr);
    let zero_ex = FlatParams::<T>::zeros_like(exemplars);
    for t in (0..spec.steps).rev() {
        let point = trajectory[t].concat(exemplars);
        let tangent = g_theta.concat(&zero_ex);
        let (_, _, hv) = grad_and_hvp(&inner_joint, &point, &tangent).map_err(|e| as_divergence(e, t))?;
        let (h_theta, h_ex) = hv.split_blocks(n_theta);
        g_ex.axpy(-lr, &h_ex);
        g_theta.axpy(-lr, &h_theta);
    }
    Ok(Hypergradient {
        outer_loss,
        grad: g_ex,
        theta: theta_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::DenseTensor;

    /// f(θ, e) = ½ (θ − e)ᵀ(θ − e), elementwise on matching shapes.
    struct Pull;

    impl BilevelObjective<f64> for Pull {
        fn eval<S: Lift<f64>>(&self, tape: &mut Tape<S>, th: &[Var], ex: &[Var]) -> Result<Var> {
            let d = tape.sub(th[0], ex[0])?;
            let sq = tape.mul(d, d)?;
            let s = tape.sum(sq);
            Ok(tape.scale(s, S::lift(0.5)))
        }
    }

    /// L(θ) = ½ ‖θ − c‖².
    struct Target(Vec<f64>);

    impl BilevelObjective<f64> for Target {
        fn eval<S: Lift<f64>>(&self, tape: &mut Tape<S>, th: &[Var], _ex: &[Var]) -> Result<Var> {
            let c = tape.constant(&DenseTensor::vector(self.0.clone()));
            let d = tape.sub(th[0], c)?;
            let sq = tape.mul(d, d)?;
            let s = tape.sum(sq);
            Ok(tape.scale(s, S::lift(0.5)))
        }
    }

    struct Blowup;

    impl BilevelObjective<f64> for Blowup {
        fn eval<S: Lift<f64>>(&self, tape: &mut Tape<S>, th: &[Var], _ex: &[Var]) -> Result<Var> {
            // f = −½ 10⁴ θ², so each step multiplies θ by (1 + α·10⁴).
            let sq = tape.mul(th[0], th[0])?;
            let s = tape.sum(sq);
            Ok(tape.scale(s, S::lift(-0.5e4)))
        }
    }

    fn v(x: &[f64], name: &str) -> FlatParams<f64> {
        FlatParams::from_blocks([(name, DenseTensor::vector(x.to_vec()))])
    }

    #[test]
    fn zero_steps_give_zero_gradient() {
        let h = unrolled_hypergradient(
            &Pull,
            &Target(vec![1.0, 2.0]),
            &v(&[0.5, 0.5], "theta"),
            &v(&[3.0, -1.0], "e"),
            UnrollSpec::new(0, 0.1).unwrap(),
        )
        .unwrap();
        assert!(h.grad.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn one_step_matches_chain_rule() {
        // θ1 = θ0 − α(θ0 − e) ⇒ dθ1/de = α; dL/dθ1 = θ1 − c.
        let (th0, e, c, a) = ([0.5, -0.2], [3.0, -1.0], [1.0, 2.0], 0.1);
        let h = unrolled_hypergradient(
            &Pull,
            &Target(c.to_vec()),
            &v(&th0, "theta"),
            &v(&e, "e"),
            UnrollSpec::new(1, a).unwrap(),
        )
        .unwrap();
        for i in 0..2 {
            let th1 = th0[i] - a * (th0[i] - e[i]);
            let expected = a * (th1 - c[i]);
            assert!((h.grad.values()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let err = unrolled_hypergradient(
            &Blowup,
            &Target(vec![0.0]),
            &v(&[1.0], "theta"),
            &v(&[0.0], "e"),
            UnrollSpec::new(10, 1.0).unwrap(),
        )
        .unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(UnrollSpec::new(3, 0.0).is_err());
        assert!(UnrollSpec::new(3, -1.0).is_err());
    }
}
