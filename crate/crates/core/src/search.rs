//! The episodic search loop: cluster, encode, pick head/op/tail, generate,
//! reward, and update the three agents after each episode.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{AgentBundle, AgentConfig, Observation, Rewards, Transition, UpdateReport};
use crate::clustering::{cluster_for_step, ClusterSet};
use crate::dataset::{default_bins, FeatureSet};
use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, MetricKind};
use crate::forest::ForestConfig;
use crate::info::{DistanceKind, InfoContext};
use crate::state::{concat_states, encode, state_op, EncoderConfig, EncoderKind, StateVector};
use crate::transform::{generation_step, GenerationConfig, Operation, OperationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    #[default]
    Learned,
    /// Uniform random head/op/tail with no learning, under the same budget.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: SearchMode,
    pub distance: DistanceKind,
    /// Multiplier on the mean singleton distance for the clustering threshold.
    pub delta: f64,
    /// MI bins; `None` uses `min(16, ⌈√M⌉)`.
    pub bins: Option<usize>,
    pub encoder: EncoderKind,
    pub k: usize,
    pub d: usize,
    pub encoder_epochs: usize,
    pub si_raw_count: bool,
    pub gae_standardize: bool,
    pub ops: OperationSet,
    /// `None` allows twice the original feature count.
    pub max_size: Option<usize>,
    pub cap: usize,
    pub max_depth: usize,
    /// `None` picks macro-F1 or 1-RAE from the task.
    pub metric: Option<MetricKind>,
    pub forest: ForestConfig,
    pub agent: AgentConfig,
    pub carry_features: bool,
    pub skip_tail_on_unary: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            episodes: 30,
            steps: 15,
            seed: 0,
            mode: SearchMode::Learned,
            distance: DistanceKind::Euclidean,
            delta: 1.0,
            bins: None,
            encoder: EncoderKind::default(),
            k: 8,
            d: 4,
            encoder_epochs: 20,
            si_raw_count: false,
            gae_standardize: true,
            ops: OperationSet::default(),
            max_size: None,
            cap: 64,
            max_depth: 6,
            metric: None,
            forest: ForestConfig::default(),
            agent: AgentConfig::default(),
            carry_features: false,
            skip_tail_on_unary: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("episodes and steps must be at least 1".into()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if self.bins == Some(0) || self.max_size == Some(0) || self.cap == 0 {
            return Err(Error::InvalidConfig("bins, max_size and cap must be at least 1".into()));
        }
        if self.k == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("encoder latent sizes must be at least 1".into()));
        }
        self.agent.validate()
    }

    /// Seeds derived from the run seed, in a fixed order:
    /// split, forest, encoders, head/op/tail agent initialization, actions.
    pub fn seed_block(&self) -> SeedBlock {
        let s = self.seed;
        SeedBlock {
            split: s,
            forest: s.wrapping_add(self.forest.seed),
            encoder: s.wrapping_add(17),
            head_agent: s.wrapping_add(101),
            op_agent: s.wrapping_add(202),
            tail_agent: s.wrapping_add(303),
            actions: s ^ 0x9e37_79b9_7f4a_7c15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedBlock {
    pub split: u64,
    pub forest: u64,
    pub encoder: u64,
    pub head_agent: u64,
    pub op_agent: u64,
    pub tail_agent: u64,
    pub actions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub step: usize,
    /// Column indices of the head group in `F_t`.
    pub head: Vec<usize>,
    pub op: Operation,
    pub tail: Option<Vec<usize>>,
    pub rewards: Rewards,
    /// `U(F_{t+1} | y)`.
    pub quality: f64,
    /// `P_A(F_{t+1})`.
    pub score: f64,
    pub n_features: usize,
    pub no_op: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub best_score: f64,
    pub final_score: f64,
    /// Head, op, tail update reports; empty in random mode.
    pub updates: Vec<Option<UpdateReport>>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub original: FeatureSet,
    pub original_score: f64,
    pub original_quality: f64,
    pub best: FeatureSet,
    pub best_score: f64,
    pub best_quality: f64,
    /// `(episode, step)` that produced the best set; `None` if no step beat
    /// the original features.
    pub best_at: Option<(usize, usize)>,
    pub metric: MetricKind,
    pub seeds: SeedBlock,
    pub trace: Vec<TraceRow>,
    pub episodes: Vec<EpisodeSummary>,
    /// Head, op, tail agents after the last update (learned mode only).
    pub agents: Option<[AgentBundle; 3]>,
    pub evaluator: Evaluator,
}

fn content_key(fs: &FeatureSet) -> u64 {
    let mut h = DefaultHasher::new();
    fs.n_cols().hash(&mut h);
    for c in fs.columns() {
        for v in c.values.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

struct Engine<'a> {
    cfg: &'a SearchConfig,
    ctx: InfoContext,
    evaluator: Evaluator,
    encoder: EncoderConfig,
    gen: GenerationConfig,
    scores: HashMap<u64, f64>,
    states: HashMap<u64, StateVector>,
}

/// Everything decided at one step, plus the agent observations.
struct Cascade {
    clusters: ClusterSet,
    head_obs: Observation,
    head: usize,
    head_log_prob: f64,
    op_obs: Option<Observation>,
    op: usize,
    op_log_prob: f64,
    tail_obs: Option<Observation>,
    /// Index into `clusters`, not into the candidate list.
    tail: Option<usize>,
    tail_log_prob: f64,
}

impl Engine<'_> {
    fn score(&mut self, fs: &FeatureSet) -> Result<f64> {
        let key = content_key(fs);
        if let Some(&s) = self.scores.get(&key) {
            return Ok(s);
        }
        let s = self.evaluator.score(fs)?;
        self.scores.insert(key, s);
        Ok(s)
    }

    fn state(&mut self, fs: &FeatureSet) -> Result<StateVector> {
        let key = content_key(fs);
        if let Some(s) = self.states.get(&key) {
            return Ok(s.clone());
        }
        let s = encode(fs, &self.encoder)?;
        self.states.insert(key, s.clone());
        Ok(s)
    }

    fn cascade(
        &mut self,
        fs: &FeatureSet,
        generation: usize,
        agents: Option<&[AgentBundle; 3]>,
        rng: &mut ChaCha8Rng,
        greedy: bool,
    ) -> Result<Cascade> {
        let clusters = cluster_for_step(fs, &self.ctx, self.cfg.distance, self.cfg.delta, generation);
        let n_ops = self.cfg.ops.len();
        let Some(agents) = agents else {
            let head = rng.gen_range(0..clusters.len());
            let op = rng.gen_range(0..n_ops);
            let tail = (clusters.len() > 1).then(|| {
                let t = rng.gen_range(0..clusters.len() - 1);
                if t >= head {
                    t + 1
                } else {
                    t
                }
            });
            return Ok(Cascade {
                clusters,
                head_obs: Observation::categorical(Vec::new()),
                head,
                head_log_prob: 0.0,
                op_obs: None,
                op,
                op_log_prob: 0.0,
                tail_obs: None,
                tail,
                tail_log_prob: 0.0,
            });
        };
        let s_f = self.state(fs)?;
        let mut cluster_states = Vec::with_capacity(clusters.len());
        for g in &clusters.groups {
            cluster_states.push(self.state(&fs.select_columns(g)?)?.values);
        }
        let head_obs = Observation::candidates(s_f.values.clone(), &cluster_states);
        let h = agents[0].select(&head_obs, rng, greedy)?;
        let s_1 = StateVector {
            values: cluster_states[h.action].clone(),
            tag: s_f.tag.clone(),
        };
        let op_obs = Observation::categorical(concat_states(&[&s_f, &s_1]).values);
        let o = agents[1].select(&op_obs, rng, greedy)?;
        let op = self.cfg.ops.get(o.action).expect("actor width matches op set");
        let s_o = state_op(op, &self.cfg.ops)?;
        let others: Vec<usize> = (0..clusters.len()).filter(|&i| i != h.action).collect();
        let (tail_obs, tail, tail_log_prob) = if others.is_empty() {
            (None, None, 0.0)
        } else {
            let prefix = concat_states(&[&s_f, &s_1, &s_o]).values;
            let cands: Vec<Vec<f64>> = others.iter().map(|&i| cluster_states[i].clone()).collect();
            let obs = Observation::candidates(prefix, &cands);
            let t = agents[2].select(&obs, rng, greedy)?;
            (Some(obs), Some(others[t.action]), t.log_prob)
        };
        Ok(Cascade {
            clusters,
            head_obs,
            head: h.action,
            head_log_prob: h.log_prob,
            op_obs: Some(op_obs),
            op: o.action,
            op_log_prob: o.log_prob,
            tail_obs,
            tail,
            tail_log_prob,
        })
    }
}

struct Pending {
    head: Transition,
    op: Transition,
    tail: Option<Transition>,
}

fn pending_transitions(c: &Cascade, rewards: Rewards, record_tail: bool) -> Pending {
    let tail_action = |c: &Cascade| {
        let t = c.tail.expect("tail observation implies a tail");
        if t > c.head {
            t - 1
        } else {
            t
        }
    };
    Pending {
        head: Transition {
            obs: c.head_obs.clone(),
            action: c.head,
            log_prob: c.head_log_prob,
            reward: rewards.head,
            next_state: Vec::new(),
        },
        op: Transition {
            obs: c.op_obs.clone().expect("learned cascade"),
            action: c.op,
            log_prob: c.op_log_prob,
            reward: rewards.op,
            next_state: Vec::new(),
        },
        tail: c.tail_obs.as_ref().filter(|_| record_tail).map(|obs| Transition {
            obs: obs.clone(),
            action: tail_action(c),
            log_prob: c.tail_log_prob,
            reward: rewards.tail,
            next_state: Vec::new(),
        }),
    }
}

/// Tail critic input at the next step; a step with a single group has no
/// tail observation, so the tail prefix is built directly.
fn tail_prefix(c: &Cascade, ops: &OperationSet) -> Result<Vec<f64>> {
    if let Some(obs) = &c.tail_obs {
        return Ok(obs.state.clone());
    }
    let op = ops.get(c.op).expect("valid op index");
    let mut v = c.op_obs.as_ref().expect("learned cascade").state.clone();
    v.extend(state_op(op, ops)?.values);
    Ok(v)
}

fn close_pending(p: Pending, next: &Cascade, ops: &OperationSet, batches: &mut [Vec<Transition>; 3]) -> Result<()> {
    let Pending { mut head, mut op, tail } = p;
    head.next_state = next.head_obs.state.clone();
    op.next_state = next.op_obs.as_ref().expect("learned cascade").state.clone();
    batches[0].push(head);
    batches[1].push(op);
    if let Some(mut t) = tail {
        t.next_state = tail_prefix(next, ops)?;
        batches[2].push(t);
    }
    Ok(())
}

/// Run the search on `original` and return the best feature set found.
pub fn run_search(original: &FeatureSet, cfg: &SearchConfig) -> Result<RunResult> {
    cfg.validate()?;
    let seeds = cfg.seed_block();
    let metric = cfg.metric.unwrap_or_else(|| MetricKind::default_for(original.task()));
    let bins = cfg.bins.unwrap_or_else(|| default_bins(original.n_rows()));
    let forest = ForestConfig {
        seed: seeds.forest,
        ..cfg.forest.clone()
    };
    let evaluator = Evaluator::new(original, seeds.split, metric, forest)?;
    let mut encoder = EncoderConfig::new(cfg.encoder, original, seeds.encoder);
    encoder.k = cfg.k;
    encoder.d = cfg.d;
    encoder.epochs = cfg.encoder_epochs;
    encoder.si_raw_count = cfg.si_raw_count;
    encoder.gae_standardize = cfg.gae_standardize;
    let mut gen = GenerationConfig::for_original(original.n_cols());
    if let Some(m) = cfg.max_size {
        gen.max_size = m;
    }
    gen.cap = cfg.cap;
    gen.max_depth = cfg.max_depth;

    let mut engine = Engine {
        cfg,
        ctx: InfoContext::new(original.target(), bins),
        evaluator,
        encoder,
        gen,
        scores: HashMap::new(),
        states: HashMap::new(),
    };

    let state_len = engine.encoder.state_len();
    let n_ops = cfg.ops.len();
    let mut agents: Option<[AgentBundle; 3]> = match cfg.mode {
        SearchMode::Learned => Some([
            AgentBundle::candidate(state_len, state_len, &cfg.agent, seeds.head_agent),
            AgentBundle::categorical(2 * state_len, n_ops, &cfg.agent, seeds.op_agent),
            AgentBundle::candidate(2 * state_len + n_ops, state_len, &cfg.agent, seeds.tail_agent),
        ]),
        SearchMode::Random => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.actions);

    let original_score = engine.score(original)?;
    let original_quality = engine.ctx.quality(original);
    let mut best = original.clone();
    let mut best_score = original_score;
    let mut best_at = None;
    let mut trace = Vec::with_capacity(cfg.episodes * cfg.steps);
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut fs = original.clone();

    for episode in 0..cfg.episodes {
        if !cfg.carry_features {
            fs = original.clone();
        }
        let mut batches: [Vec<Transition>; 3] = Default::default();
        let mut pending: Option<Pending> = None;
        let mut episode_score = engine.score(&fs)?;
        for step in 0..cfg.steps {
            let generation = episode * cfg.steps + step;
            let c = engine.cascade(&fs, generation, agents.as_ref(), &mut rng, false)?;
            if let Some(p) = pending.take() {
                close_pending(p, &c, &cfg.ops, &mut batches)?;
            }
            let op = cfg.ops.get(c.op).expect("valid op index");
            let head_idx = &c.clusters.groups[c.head];
            let tail_idx = c.tail.map(|t| c.clusters.groups[t].clone());
            let (next, no_op) = if !op.is_unary() && tail_idx.is_none() {
                log::debug!("single feature group; binary step skipped");
                (fs.clone(), true)
            } else {
                let out = generation_step(&fs, head_idx, op, tail_idx.as_deref(), generation, &engine.gen, &engine.ctx)?;
                (out.features, out.no_op)
            };
            let pa_before = engine.score(&fs)?;
            let pa_after = engine.score(&next)?;
            let u_head = engine.ctx.quality(&fs.select_columns(head_idx)?);
            let u_next = engine.ctx.quality(&next);
            let rewards = Rewards::from_parts(u_head, u_next, pa_before, pa_after);
            if ![rewards.head, rewards.op, rewards.tail].iter().all(|r| r.is_finite()) {
                return Err(Error::NonFinite("reward"));
            }
            if pa_after > best_score {
                best_score = pa_after;
                best = next.clone();
                best_at = Some((episode, step));
            }
            trace.push(TraceRow {
                episode,
                step,
                head: head_idx.clone(),
                op,
                tail: if op.is_unary() { None } else { tail_idx },
                rewards,
                quality: u_next,
                score: pa_after,
                n_features: next.n_cols(),
                no_op,
            });
            if agents.is_some() {
                let record_tail = !(op.is_unary() && cfg.skip_tail_on_unary);
                pending = Some(pending_transitions(&c, rewards, record_tail));
            }
            episode_score = pa_after;
            fs = next;
        }
        let mut updates = Vec::new();
        if let Some(bundles) = agents.as_mut() {
            if let Some(p) = pending.take() {
                let generation = (episode + 1) * cfg.steps;
                let terminal = engine.cascade(&fs, generation, Some(bundles), &mut rng.clone(), true)?;
                close_pending(p, &terminal, &cfg.ops, &mut batches)?;
            }
            for (agent, batch) in bundles.iter_mut().zip(&batches) {
                updates.push(if batch.is_empty() {
                    None
                } else {
                    Some(agent.update(batch, &cfg.agent)?)
                });
            }
            log::info!(
                "episode {episode}: best {best_score} last {episode_score} losses {:?}",
                updates.iter().map(|u| u.map(|r| r.critic_loss)).collect::<Vec<_>>()
            );
        }
        episodes.push(EpisodeSummary {
            episode,
            best_score,
            final_score: episode_score,
            updates,
        });
    }

    let best_quality = engine.ctx.quality(&best);
    Ok(RunResult {
        original: original.clone(),
        original_score,
        original_quality,
        best,
        best_score,
        best_quality,
        best_at,
        metric,
        seeds,
        trace,
        episodes,
        agents,
        evaluator: engine.evaluator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Target;

    fn fixture(m: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..4).map(|_| (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..m).map(|r| (cols[0][r] + cols[1][r]).powi(2)).collect();
        FeatureSet::from_columns(&["a", "b", "c", "d"], cols, Target::regression("y", y)).unwrap()
    }

    fn quick() -> SearchConfig {
        SearchConfig {
            episodes: 1,
            steps: 1,
            encoder_epochs: 2,
            agent: AgentConfig { hidden: 8, ..AgentConfig::default() },
            ..SearchConfig::default()
        }
    }

    #[test]
    fn single_step_records_three_transitions() {
        let fs = fixture(60, 1);
        let r = run_search(&fs, &quick()).unwrap();
        assert_eq!(r.trace.len(), 1);
        let e = &r.episodes[0];
        assert_eq!(e.updates.len(), 3);
        let step = &r.trace[0];
        if step.op.is_unary() || step.tail.is_some() {
            assert!(e.updates.iter().all(Option::is_some));
        }
        assert!(r.best_score >= r.original_score);
        assert!(r.best.lineage_mismatches(&fs).is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        let fs = fixture(80, 2);
        let cfg = SearchConfig { episodes: 2, steps: 3, ..quick() };
        let a = run_search(&fs, &cfg).unwrap();
        let b = run_search(&fs, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.best.bitwise_eq(&b.best));
        assert_eq!(a.agents, b.agents);
    }

    #[test]
    fn random_mode_has_no_agents() {
        let fs = fixture(60, 3);
        let cfg = SearchConfig { episodes: 2, steps: 2, mode: SearchMode::Random, ..quick() };
        let r = run_search(&fs, &cfg).unwrap();
        assert!(r.agents.is_none());
        assert_eq!(r.trace.len(), 4);
        assert_eq!(r.trace[2].episode, 1);
    }

    #[test]
    fn single_feature_input() {
        let t = Target::regression("y", (0..30).map(|i| (i as f64).sin()).collect());
        let fs = FeatureSet::from_columns(&["x"], vec![(0..30).map(f64::from).collect()], t).unwrap();
        let cfg = SearchConfig { episodes: 2, steps: 3, ..quick() };
        let r = run_search(&fs, &cfg).unwrap();
        assert_eq!(r.trace.len(), 6);
        assert!(r.best.lineage_mismatches(&fs).is_empty());
    }

    #[test]
    fn config_validation() {
        let fs = fixture(30, 4);
        for bad in [
            SearchConfig { episodes: 0, ..quick() },
            SearchConfig { delta: 0.0, ..quick() },
            SearchConfig { agent: AgentConfig { gamma: 1.5, ..AgentConfig::default() }, ..quick() },
            SearchConfig { metric: Some(MetricKind::F1Macro), ..quick() },
        ] {
            assert!(run_search(&fs, &bad).is_err());
        }
    }
}
