//! Actor-critic agents for the head-cluster, operation and tail-cluster
//! decisions.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::info::InfoContext;
use crate::nn::{log_softmax, softmax, DenseNet, Head, OptimState, StepOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub beta: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    pub clip_norm: f64,
    /// Differentiate through the bootstrap target as well.
    pub full_gradient_critic: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.9,
            beta: 0.01,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden: 64,
            clip_norm: 5.0,
            full_gradient_critic: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// One scalar logit per candidate input.
    Candidate,
    /// A fixed number of logits from one state input.
    Categorical,
}

/// What the actor sees at one decision: candidate inputs for a
/// [`PolicyKind::Candidate`] actor, or the single state for a categorical one.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Critic input.
    pub state: Vec<f64>,
    /// Actor inputs; for categorical actors this is `[state]`.
    pub candidates: Vec<Vec<f64>>,
}

impl Observation {
    pub fn categorical(state: Vec<f64>) -> Self {
        Observation {
            candidates: vec![state.clone()],
            state,
        }
    }

    /// Candidate `i` is scored on `prefix ⊕ candidate_states[i]`.
    pub fn candidates(prefix: Vec<f64>, candidate_states: &[Vec<f64>]) -> Self {
        let candidates = candidate_states
            .iter()
            .map(|c| prefix.iter().chain(c).copied().collect())
            .collect();
        Observation {
            state: prefix,
            candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub action: usize,
    pub log_prob: f64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Losses {
    pub critic_loss: f64,
    /// `mean(log π(a|S)·δ + β·H)`, to be maximized.
    pub actor_objective: f64,
    pub critic_grad: Vec<f64>,
    /// Gradient of `actor_objective`.
    pub actor_grad: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentBundle {
    pub kind: PolicyKind,
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub actor_opt: OptimState,
    pub critic_opt: OptimState,
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `dH/dz_j = −p_j (ln p_j + H)` for `p = softmax(z)`.
fn entropy_grad(probs: &[f64]) -> Vec<f64> {
    let h = entropy(probs);
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect()
}

impl AgentBundle {
    /// Per-candidate scorer over `prefix_len + candidate_len` inputs with a
    /// critic over the prefix.
    pub fn candidate(prefix_len: usize, candidate_len: usize, cfg: &AgentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_nets(
            PolicyKind::Candidate,
            DenseNet::new(prefix_len + candidate_len, cfg.hidden, 1, Head::Scalar, &mut rng),
            DenseNet::new(prefix_len, cfg.hidden, 1, Head::Scalar, &mut rng),
            cfg,
        )
    }

    pub fn categorical(state_len: usize, actions: usize, cfg: &AgentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_nets(
            PolicyKind::Categorical,
            DenseNet::new(state_len, cfg.hidden, actions, Head::Softmax, &mut rng),
            DenseNet::new(state_len, cfg.hidden, 1, Head::Scalar, &mut rng),
            cfg,
        )
    }

    pub fn from_nets(kind: PolicyKind, actor: DenseNet, critic: DenseNet, cfg: &AgentConfig) -> Self {
        AgentBundle {
            kind,
            actor,
            critic,
            actor_opt: OptimState::new(cfg.actor_lr, cfg.clip_norm),
            critic_opt: OptimState::new(cfg.critic_lr, cfg.clip_norm),
        }
    }

    pub fn logits(&self, obs: &Observation) -> Result<Vec<f64>> {
        if obs.candidates.is_empty() {
            return Err(Error::EmptyCluster);
        }
        match self.kind {
            PolicyKind::Candidate => obs.candidates.iter().map(|c| self.actor.value(c)).collect(),
            PolicyKind::Categorical => Ok(self.actor.forward_trace(&obs.candidates[0])?.logits),
        }
    }

    pub fn probs(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(obs)?))
    }

    pub fn log_prob(&self, obs: &Observation, action: usize) -> Result<f64> {
        let lp = log_softmax(&self.logits(obs)?);
        lp.get(action).copied().ok_or(Error::IndexOutOfRange {
            index: action,
            len: lp.len(),
        })
    }

    /// Sample an action, or take the most probable one (lowest index on
    /// ties) when `greedy`.
    pub fn select(&self, obs: &Observation, rng: &mut impl Rng, greedy: bool) -> Result<Selection> {
        let logits = self.logits(obs)?;
        let probs = softmax(&logits);
        let log_probs = log_softmax(&logits);
        let action = if greedy {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        Ok(Selection {
            action,
            log_prob: log_probs[action],
            probs,
        })
    }

    /// Gradient of `w · log π(a|S) + β·H(π(S))` in the actor parameters, and
    /// the value of that expression.
    fn actor_term(&self, t: &Transition, weight: f64, beta: f64) -> Result<(f64, Vec<f64>)> {
        let logits = self.logits(&t.obs)?;
        let probs = softmax(&logits);
        let lp = log_softmax(&logits);
        if t.action >= probs.len() {
            return Err(Error::IndexOutOfRange {
                index: t.action,
                len: probs.len(),
            });
        }
        let dh = entropy_grad(&probs);
        let g_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, p)| weight * (f64::from(u8::from(j == t.action)) - p) + beta * dh[j])
            .collect();
        let value = weight * lp[t.action] + beta * entropy(&probs);
        let grad = match self.kind {
            PolicyKind::Categorical => self.actor.backward_logits(&t.obs.candidates[0], &g_logits)?.0,
            PolicyKind::Candidate => {
                let mut g = vec![0.0; self.actor.num_params()];
                for (c, gz) in t.obs.candidates.iter().zip(&g_logits) {
                    let (gc, _) = self.actor.backward(c, &[*gz])?;
                    for (a, b) in g.iter_mut().zip(gc) {
                        *a += b;
                    }
                }
                g
            }
        };
        Ok((value, grad))
    }

    /// Critic loss `mean(δ²)` and actor objective
    /// `mean(log π(a|S)·δ + β·H)` with `δ = r + γV(S') − V(S)`, plus their
    /// gradients. The advantage is a constant for the actor.
    pub fn losses(&self, batch: &[Transition], cfg: &AgentConfig) -> Result<Losses> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty transition batch".into()));
        }
        let n = batch.len() as f64;
        let mut critic_loss = 0.0;
        let mut actor_objective = 0.0;
        let mut critic_grad = vec![0.0; self.critic.num_params()];
        let mut actor_grad = vec![0.0; self.actor.num_params()];
        let mut advantages = Vec::with_capacity(batch.len());
        for t in batch {
            let v = self.critic.value(&t.obs.state)?;
            let v_next = self.critic.value(&t.next_state)?;
            let delta = t.reward + cfg.gamma * v_next - v;
            advantages.push(delta);
            critic_loss += delta * delta / n;
            let (gv, _) = self.critic.backward(&t.obs.state, &[-2.0 * delta / n])?;
            for (a, b) in critic_grad.iter_mut().zip(gv) {
                *a += b;
            }
            if cfg.full_gradient_critic {
                let (gn, _) = self.critic.backward(&t.next_state, &[2.0 * delta * cfg.gamma / n])?;
                for (a, b) in critic_grad.iter_mut().zip(gn) {
                    *a += b;
                }
            }
            let (val, ga) = self.actor_term(t, delta, cfg.beta)?;
            actor_objective += val / n;
            for (a, b) in actor_grad.iter_mut().zip(ga) {
                *a += b / n;
            }
        }
        Ok(Losses {
            critic_loss,
            actor_objective,
            critic_grad,
            actor_grad,
            advantages,
        })
    }

    /// One descent step on the critic loss and one ascent step on the actor
    /// objective. Non-finite losses skip the update.
    pub fn update(&mut self, batch: &[Transition], cfg: &AgentConfig) -> Result<UpdateReport> {
        let l = self.losses(batch, cfg)?;
        if !l.critic_loss.is_finite() || !l.actor_objective.is_finite() {
            log::warn!("skipping agent update: non-finite loss");
            return Ok(UpdateReport {
                critic_loss: l.critic_loss,
                actor_objective: l.actor_objective,
                applied: false,
            });
        }
        let descent: Vec<f64> = l.actor_grad.iter().map(|g| -g).collect();
        let a = self.actor.sgd_step(&descent, &mut self.actor_opt);
        let c = self.critic.sgd_step(&l.critic_grad, &mut self.critic_opt);
        Ok(UpdateReport {
            critic_loss: l.critic_loss,
            actor_objective: l.actor_objective,
            applied: matches!(a, StepOutcome::Applied { .. }) && matches!(c, StepOutcome::Applied { .. }),
        })
    }

    /// `agent v1`, the policy kind, then the actor and critic networks.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "agent v1")?;
        let kind = match self.kind {
            PolicyKind::Candidate => "candidate",
            PolicyKind::Categorical => "categorical",
        };
        writeln!(w, "policy {kind}")?;
        self.actor.write_checkpoint(&mut w)?;
        self.critic.write_checkpoint(&mut w)
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R, cfg: &AgentConfig) -> Result<Self> {
        let mut line = String::new();
        let mut next = |r: &mut R| -> Result<String> {
            line.clear();
            r.read_line(&mut line).map_err(|e| Error::Checkpoint(e.to_string()))?;
            Ok(line.trim_end().to_string())
        };
        if next(&mut r)? != "agent v1" {
            return Err(Error::Checkpoint("expected `agent v1`".into()));
        }
        let kind = match next(&mut r)?.as_str() {
            "policy candidate" => PolicyKind::Candidate,
            "policy categorical" => PolicyKind::Categorical,
            other => return Err(Error::Checkpoint(format!("unknown policy line `{other}`"))),
        };
        let actor = DenseNet::read_checkpoint(&mut r)?;
        let critic = DenseNet::read_checkpoint(&mut r)?;
        Ok(Self::from_nets(kind, actor, critic, cfg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rewards {
    /// `U(head | y)`.
    pub head: f64,
    /// `U(F_{t+1} | y) + P_A(F_{t+1}) − P_A(F_t)`.
    pub op: f64,
    /// `U(F_{t+1} | y)`.
    pub tail: f64,
}

impl Rewards {
    pub fn from_parts(u_head: f64, u_next: f64, pa_before: f64, pa_after: f64) -> Self {
        Rewards {
            head: u_head,
            op: u_next + pa_after - pa_before,
            tail: u_next,
        }
    }
}

/// Rewards of one cascade step, recomputing every term.
pub fn compute_rewards(
    before: &FeatureSet,
    after: &FeatureSet,
    head: &FeatureSet,
    ctx: &InfoContext,
    evaluator: &Evaluator,
) -> Result<Rewards> {
    Ok(Rewards::from_parts(
        ctx.quality(head),
        ctx.quality(after),
        evaluator.score(before)?,
        evaluator.score(after)?,
    ))
}
