//! Proximal policy optimization with a shared trunk: five action logits and
//! one value output.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::nn::{Adam, Gradients, Mlp};
use crate::error::{Error, Result};
use crate::model::Action;

/// Output width of a policy network: logits then value.
pub const PPO_OUTPUTS: usize = Action::COUNT + 1;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Action probabilities and value estimate for one input.
pub fn policy_value(model: &Mlp, input: &[f64]) -> Result<(Vec<f64>, f64)> {
    let out = model.predict(input)?;
    Ok((softmax(&out[..Action::COUNT]), out[Action::COUNT]))
}

/// Samples from the policy, or takes its mode when `greedy`. Returns the
/// action, its log-probability and the value estimate.
pub fn ppo_select<R: Rng + ?Sized>(model: &Mlp, input: &[f64], greedy: bool, rng: &mut R) -> Result<(Action, f64, f64)> {
    let out = model.predict(input)?;
    let logp = log_softmax(&out[..Action::COUNT]);
    let idx = if greedy {
        super::dqn::argmax(&logp)
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = Action::COUNT - 1;
        for (i, lp) in logp.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    };
    Ok((Action::from_index(idx).expect("index < 5"), logp[idx], out[Action::COUNT]))
}

/// Generalized advantage estimation. `dones[t]` marks that the episode
/// ended after step `t`; `last_value` bootstraps the step after the rollout.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: if values.len() != n { values.len() } else { dones.len() },
        });
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit (population) deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
}

/// `min(ratio * A, clip(ratio, 1 - c, 1 + c) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Running scale of the discounted return, used to bring rewards to unit
/// scale for the learner.
#[derive(Debug, Clone)]
pub struct ReturnScaler {
    gamma: f64,
    ret: f64,
    count: f64,
    mean: f64,
    m2: f64,
}

impl ReturnScaler {
    /// Scaled rewards are clipped to this magnitude.
    pub const CLIP: f64 = 10.0;

    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            ret: 0.0,
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }

    /// Folds `reward` into the running return and returns it scaled.
    pub fn scale(&mut self, reward: f64, done: bool) -> f64 {
        self.ret = self.ret * self.gamma + reward;
        self.count += 1.0;
        let d = self.ret - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (self.ret - self.mean);
        if done {
            self.ret = 0.0;
        }
        (reward / (self.std() + 1e-8)).clamp(-Self::CLIP, Self::CLIP)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, state: Vec<f64>, action: usize, log_prob: f64, reward: f64, value: f64, done: bool) {
        self.states.push(state);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// Minibatch element with its advantage already prepared.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoSample<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub updates: usize,
}

impl PpoStats {
    /// Composite objective the optimizer descends.
    pub fn total(&self, vf_coef: f64, ent_coef: f64) -> f64 {
        self.policy_loss + vf_coef * self.value_loss - ent_coef * self.entropy
    }
}

/// Composite loss `policy + vf_coef * value - ent_coef * entropy`, each a
/// minibatch mean, and its parameter gradients.
pub fn ppo_loss_and_grad(
    model: &Mlp,
    batch: &[PpoSample<'_>],
    clip: f64,
    vf_coef: f64,
    ent_coef: f64,
) -> Result<(PpoStats, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut stats = PpoStats {
        updates: 1,
        ..PpoStats::default()
    };
    let mut g = vec![0.0; PPO_OUTPUTS];
    for s in batch {
        let (out, cache) = model.forward(s.state)?;
        let logp = log_softmax(&out[..Action::COUNT]);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let ratio = (logp[s.action] - s.old_log_prob).exp();
        let a = s.advantage;
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
        stats.policy_loss -= unclipped.min(clipped) / n;
        stats.entropy += entropy / n;
        let v_err = out[Action::COUNT] - s.ret;
        stats.value_loss += v_err * v_err / n;
        stats.approx_kl += (ratio - 1.0 - ratio.ln()) / n;
        if (ratio - 1.0).abs() > clip {
            stats.clip_fraction += 1.0 / n;
        }
        // d(-min)/d logp_a is -A * ratio when the unclipped term is the min.
        let d_logp = if unclipped <= clipped { -a * ratio / n } else { 0.0 };
        for j in 0..Action::COUNT {
            let ind = if j == s.action { 1.0 } else { 0.0 };
            let d_pol = d_logp * (ind - probs[j]);
            // dH/dz_j = -p_j (log p_j + H)
            let d_ent = -probs[j] * (logp[j] + entropy);
            g[j] = d_pol - ent_coef * d_ent / n;
        }
        g[Action::COUNT] = vf_coef * 2.0 * v_err / n;
        model.backward_into(&cache, &g, &mut grads)?;
    }
    Ok((stats, grads))
}

/// Advantages and returns for a finished rollout.
pub fn rollout_targets(rollout: &Rollout, last_value: f64, cfg: &TrainConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    gae(
        &rollout.rewards,
        &rollout.values,
        &rollout.dones,
        last_value,
        cfg.gamma,
        cfg.gae_lambda,
    )
}

/// `n_epochs` passes over shuffled minibatches of the rollout. Returns
/// statistics averaged over all minibatch updates.
pub fn ppo_update<R: Rng + ?Sized>(
    model: &mut Mlp,
    optimizer: &mut Adam,
    rollout: &Rollout,
    last_value: f64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    if rollout.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "rollout of {} steps shorter than batch size {}",
            rollout.len(),
            cfg.batch_size
        )));
    }
    let (advantages, returns) = rollout_targets(rollout, last_value, cfg)?;
    let mut order: Vec<usize> = (0..rollout.len()).collect();
    let mut total = PpoStats::default();
    for _ in 0..cfg.n_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            if cfg.normalize_advantage && adv.len() > 1 {
                normalize_advantages(&mut adv);
            }
            let batch: Vec<PpoSample<'_>> = chunk
                .iter()
                .zip(&adv)
                .map(|(&i, &a)| PpoSample {
                    state: &rollout.states[i],
                    action: rollout.actions[i],
                    old_log_prob: rollout.log_probs[i],
                    advantage: a,
                    ret: returns[i],
                })
                .collect();
            let (stats, mut grads) = ppo_loss_and_grad(model, &batch, cfg.clip_range, cfg.vf_coef, cfg.ent_coef)?;
            grads.clip_global_norm(cfg.max_grad_norm);
            optimizer.step(model, &grads);
            total.policy_loss += stats.policy_loss;
            total.value_loss += stats.value_loss;
            total.entropy += stats.entropy;
            total.approx_kl += stats.approx_kl;
            total.clip_fraction += stats.clip_fraction;
            total.updates += 1;
        }
    }
    let k = total.updates.max(1) as f64;
    total.policy_loss /= k;
    total.value_loss /= k;
    total.entropy /= k;
    total.approx_kl /= k;
    total.clip_fraction /= k;
    Ok(total)
}
