//! Deep Q-learning: epsilon-greedy selection, TD updates against a target
//! network, hard target syncs.

use rand::Rng;

use super::nn::{Adam, Gradients, Mlp};
use super::replay::Transition;
use crate::error::{Error, Result};
use crate::model::Action;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy over the network's Q-values.
pub fn dqn_select<R: Rng + ?Sized>(model: &Mlp, input: &[f64], epsilon: f64, rng: &mut R) -> Result<Action> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    // Draw only when exploring is possible so epsilon = 0 consumes no randomness.
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(Action::ALL[rng.random_range(0..Action::COUNT)]);
    }
    let q = model.predict(input)?;
    Ok(Action::from_index(argmax(&q)).expect("five outputs"))
}

/// Linear decay from 1 to `final_epsilon` over the first
/// `exploration_fraction * total_steps` steps.
pub fn epsilon_at(step: u64, total_steps: u64, exploration_fraction: f64, final_epsilon: f64) -> f64 {
    let span = exploration_fraction * total_steps as f64;
    if span <= 0.0 || step as f64 >= span {
        return final_epsilon;
    }
    let progress = (step as f64 / span).min(1.0);
    1.0 + (final_epsilon - 1.0) * progress
}

/// `r + gamma * max_a' Q_target(s', a')`, or `r` for terminal steps.
pub fn td_target(reward: f64, next_q_max: f64, gamma: f64, done: bool) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_q_max
    }
}

/// Mean squared TD error over `batch` and its parameter gradients.
pub fn dqn_loss_and_grad(model: &Mlp, target: &Mlp, batch: &[&Transition], gamma: f64) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for t in batch {
        let next_max = target
            .predict(&t.next_state)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let y = td_target(t.reward, next_max, gamma, t.done);
        let (q, cache) = model.forward(&t.state)?;
        let err = q[t.action] - y;
        loss += err * err / n;
        let mut g = vec![0.0; q.len()];
        g[t.action] = 2.0 * err / n;
        model.backward_into(&cache, &g, &mut grads)?;
    }
    Ok((loss, grads))
}

/// One optimizer step on the TD loss; returns the loss before the step.
pub fn dqn_update(
    model: &mut Mlp,
    target: &Mlp,
    batch: &[&Transition],
    gamma: f64,
    optimizer: &mut Adam,
    max_grad_norm: f64,
) -> Result<f64> {
    let (loss, mut grads) = dqn_loss_and_grad(model, target, batch, gamma)?;
    grads.clip_global_norm(max_grad_norm);
    optimizer.step(model, &grads);
    Ok(loss)
}

/// Copies the online network into the target every `interval` steps;
/// returns whether a copy happened.
pub fn target_sync(model: &Mlp, target: &mut Mlp, interval: u64, step: u64) -> bool {
    if interval > 0 && step.is_multiple_of(interval) {
        target.copy_from(model);
        true
    } else {
        false
    }
}
