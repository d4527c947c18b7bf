//! Loss functions of the local update together with their exact gradients.
//!
//! Every function returns the scalar loss and the gradient with respect to
//! the parameters being optimized; the value path is forward-only so the
//! gradients can be validated by finite differences.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{backward_batch, forward_batch, forward_batch_taped, ParamVector};

pub(crate) fn critic_input(obs: ArrayView2<f64>, act: ArrayView2<f64>) -> Array2<f64> {
    concatenate![Axis(1), obs, act]
}

fn column(values: Array2<f64>) -> Array1<f64> {
    values.index_axis_move(Axis(1), 0)
}

pub(crate) fn q_values(critic: &ParamVector, input: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(column(forward_batch(critic, input)?))
}

/// Elementwise minimum over a critic pair.
pub(crate) fn pair_min(critics: &[ParamVector; 2], input: ArrayView2<f64>) -> Result<Array1<f64>> {
    let mut q = q_values(&critics[0], input)?;
    let q2 = q_values(&critics[1], input)?;
    Zip::from(&mut q).and(&q2).for_each(|a, &b| *a = a.min(b));
    Ok(q)
}

fn ensure_finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("{what} loss is {loss}")))
    }
}

/// Mean squared Bellman error `mean((Q(s, a) - y)^2)` against fixed targets.
pub fn critic_loss_and_grad(critic: &ParamVector, batch: &Batch, targets: ArrayView1<f64>) -> Result<(f64, Vec<f64>)> {
    let b = batch.len();
    if targets.len() != b {
        return Err(Error::Shape(format!("{} targets for a batch of {b}", targets.len())));
    }
    let input = critic_input(batch.obs.view(), batch.act.view());
    let (q, tape) = forward_batch_taped(critic, input.view())?;
    let diff = &q.column(0) - &targets;
    let loss = ensure_finite(diff.mapv(|d| d * d).sum() / b as f64, "critic")?;
    let upstream = diff.mapv(|d| 2.0 * d / b as f64).insert_axis(Axis(1));
    let mut grads = vec![0.0; critic.len()];
    backward_batch(critic, &tape, upstream.view(), Some(&mut grads))?;
    Ok((loss, grads))
}

/// Weights of the actor objective terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorLossWeights {
    /// Multiplier on the whole local (value + behavior cloning) term.
    pub local_coeff: f64,
    /// Relative weight of the value term inside the local term.
    pub lambda: f64,
    /// Weight of the squared action distance to the federated policy.
    pub prox_coeff: f64,
}

/// Actor loss
/// `c * mean(-lambda * Q1(s, pi(s)) + (pi(s) - a)^2) + prox * mean((pi(s) - pi_fed(s))^2)`,
/// with squared action distances averaged over batch and action dims.
///
/// The critic is held fixed; only the actor gradient is returned.
pub fn actor_loss_and_grad(
    actor: &ParamVector,
    critic: &ParamVector,
    batch: &Batch,
    fed_actor: Option<&ParamVector>,
    weights: ActorLossWeights,
) -> Result<(f64, Vec<f64>)> {
    let b = batch.len() as f64;
    let (pi, actor_tape) = forward_batch_taped(actor, batch.obs.view())?;
    let act_dim = pi.ncols();
    let n_elems = b * act_dim as f64;

    let input = critic_input(batch.obs.view(), pi.view());
    let (q, critic_tape) = forward_batch_taped(critic, input.view())?;
    let q = q.column(0).to_owned();

    let bc_diff = &pi - &batch.act;
    let mut loss = weights.local_coeff
        * (-weights.lambda * q.sum() / b + bc_diff.mapv(|d| d * d).sum() / n_elems);

    // d loss / d q, pushed through the critic to its action inputs
    let dq = Array2::from_elem((q.len(), 1), -weights.local_coeff * weights.lambda / b);
    let input_grad = backward_batch(critic, &critic_tape, dq.view(), None)?;
    let mut upstream = input_grad.slice(s![.., input.ncols() - act_dim..]).to_owned();
    upstream.scaled_add(2.0 * weights.local_coeff / n_elems, &bc_diff);

    if weights.prox_coeff != 0.0 {
        let fed_actor = fed_actor
            .ok_or_else(|| Error::InvalidArgument("proximal term requires the federated policy".into()))?;
        let prox_diff = &pi - &forward_batch(fed_actor, batch.obs.view())?;
        loss += weights.prox_coeff * prox_diff.mapv(|d| d * d).sum() / n_elems;
        upstream.scaled_add(2.0 * weights.prox_coeff / n_elems, &prox_diff);
    }
    let loss = ensure_finite(loss, "actor")?;

    let mut grads = vec![0.0; actor.len()];
    backward_batch(actor, &actor_tape, upstream.view(), Some(&mut grads))?;
    Ok((loss, grads))
}

/// Parameter-space proximal penalty `(mu / 2) * ||theta - anchor||^2`.
pub fn proximal_penalty_and_grad(params: &ParamVector, anchor: &ParamVector, mu: f64) -> Result<(f64, Vec<f64>)> {
    if !params.conforms_to(anchor) {
        return Err(Error::Shape("proximal anchor has a different shape".into()));
    }
    let grads: Vec<f64> = params.values().iter().zip(anchor.values()).map(|(p, a)| mu * (p - a)).collect();
    let sq: f64 = params.values().iter().zip(anchor.values()).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((0.5 * mu * sq, grads))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::nn::{NetworkSpec, OutputActivation};
    use crate::rng::rng_from_seed;

    #[test]
    fn proximal_gradient_vanishes_at_anchor() {
        let spec = Arc::new(NetworkSpec::new(2, vec![3], 1, OutputActivation::Linear).unwrap());
        let p = ParamVector::init_uniform(spec, &mut rng_from_seed(0));
        let (loss, grads) = proximal_penalty_and_grad(&p, &p, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn identical_federated_policy_adds_nothing() {
        let actor_spec = Arc::new(NetworkSpec::new(3, vec![4], 2, OutputActivation::BoundedSquash { bound: 1.0 }).unwrap());
        let critic_spec = Arc::new(NetworkSpec::new(5, vec![4], 1, OutputActivation::Linear).unwrap());
        let mut rng = rng_from_seed(1);
        let actor = ParamVector::init_uniform(actor_spec, &mut rng);
        let critic = ParamVector::init_uniform(critic_spec, &mut rng);
        let batch = Batch {
            obs: Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64) * 0.3),
            act: Array2::from_shape_fn((6, 2), |(i, j)| ((i + j) as f64 * 0.7).sin()),
            rew: Array1::zeros(6),
            next_obs: Array2::zeros((6, 3)),
            done: Array1::zeros(6),
        };
        let base = ActorLossWeights { local_coeff: 1.0, lambda: 1.0, prox_coeff: 0.0 };
        let with_prox = ActorLossWeights { prox_coeff: 3.0, ..base };
        let (l0, g0) = actor_loss_and_grad(&actor, &critic, &batch, None, base).unwrap();
        let (l1, g1) = actor_loss_and_grad(&actor, &critic, &batch, Some(&actor), with_prox).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
    }
}
