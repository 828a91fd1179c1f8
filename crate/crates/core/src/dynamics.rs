//! The stochastic interaction loop: recommend, collect biased feedback,
//! update.
//!
//! One step processes every user against the same snapshot `U(t)` and only
//! then writes `U(t+1)`. Each user draws from its own counter-addressed
//! random stream (see [`crate::rng`]), so the result does not depend on how
//! the per-user work is scheduled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{ItemCatalog, ModelParams, SocialGraph, UserStates};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricSettings, MetricsRecord};
use crate::rng::{self, Purpose};

/// Inner products are clamped to `[-1 + DOT_CLAMP, 1 - DOT_CLAMP]` before
/// entering the feedback law.
pub const DOT_CLAMP: f64 = 1e-9;

/// Binary user response to a recommended item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Feedback {
    Positive,
    Negative,
}

impl Feedback {
    pub fn sign(self) -> f64 {
        match self {
            Feedback::Positive => 1.0,
            Feedback::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationSlate {
    pub user: usize,
    pub items: Vec<usize>,
    /// The length-`m` distribution the slate was sampled from, when the
    /// engine is asked to record it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities_used: Option<Vec<f64>>,
    /// Set when fewer than `h` items had positive probability and the slate
    /// was completed uniformly from the rest.
    pub padded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeedbackRecord {
    pub user: usize,
    pub item: usize,
    pub sign: Feedback,
    pub p_pos_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub t: usize,
    pub slates: Vec<RecommendationSlate>,
    pub feedback: Vec<Vec<FeedbackRecord>>,
}

impl StepLog {
    pub fn padded_slates(&self) -> usize {
        self.slates.iter().filter(|s| s.padded).count()
    }
}

/// `γ·u_i + (1−γ)·mean(u_j for j ∈ N_i)`. Isolated users use their own
/// vector as the neighbor mean. The graph is not touched when `γ = 1`.
pub fn social_representation(
    states: &UserStates,
    graph: &SocialGraph,
    i: usize,
    gamma: f64,
) -> Vec<f64> {
    let own = states.user(i);
    if gamma == 1.0 {
        return own.to_vec();
    }
    let mean = graph.neighbor_mean(states, i);
    own.iter()
        .zip(&mean)
        .map(|(u, s)| gamma * u + (1.0 - gamma) * s)
        .collect()
}

/// `v_jᵀ s` for every item.
pub fn item_scores(s: &[f64], catalog: &ItemCatalog) -> Vec<f64> {
    (0..catalog.num_items()).map(|j| catalog.dot(j, s)).collect()
}

/// Log-probabilities of the softmax over `alpha · scores`, computed with
/// max-subtraction.
pub fn log_softmax(scores: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidRequest("softmax over an empty catalog".into()));
    }
    let mut max = f64::NEG_INFINITY;
    for &x in scores {
        let z = alpha * x;
        if !z.is_finite() {
            return Err(Error::Numerical(format!("non-finite score {z}")));
        }
        max = max.max(z);
    }
    let sum: f64 = scores.iter().map(|&x| (alpha * x - max).exp()).sum();
    let log_sum = sum.ln();
    Ok(scores.iter().map(|&x| alpha * x - max - log_sum).collect())
}

/// Softmax recommendation distribution `p_j ∝ exp(α v_jᵀ s)`.
pub fn recommendation_distribution(
    s: &[f64],
    catalog: &ItemCatalog,
    alpha: f64,
) -> Result<Vec<f64>> {
    if alpha < 0.0 {
        return Err(Error::InvalidRequest("alpha must be >= 0".into()));
    }
    let scores = item_scores(s, catalog);
    softmax(&scores, alpha)
}

/// Normalized softmax of `alpha · scores`.
pub fn softmax(scores: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidRequest("softmax over an empty catalog".into()));
    }
    let scaled: Vec<f64> = scores.iter().map(|&x| alpha * x).collect();
    if let Some(bad) = scaled.iter().find(|z| !z.is_finite()) {
        return Err(Error::Numerical(format!("non-finite score {bad}")));
    }
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scaled.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    Ok(p)
}

/// Items drawn for one slate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSlate {
    pub items: Vec<usize>,
    pub padded: bool,
}

/// Draws `h` distinct indices from `p` without replacement.
///
/// Equivalent to drawing one item at a time and renormalizing the rest; the
/// implementation uses exponential race keys `ln p_j − ln E_j` and returns the
/// items in draw order.
pub fn sample_without_replacement(
    p: &[f64],
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampledSlate> {
    let log_w: Vec<f64> = p
        .iter()
        .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
        .collect();
    sample_by_log_weights(&log_w, h, rng)
}

/// Same as [`sample_without_replacement`] but takes (possibly unnormalized)
/// log-weights, which keeps items whose probability would underflow.
pub fn sample_by_log_weights(
    log_w: &[f64],
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampledSlate> {
    let m = log_w.len();
    if h > m {
        return Err(Error::InvalidRequest(format!(
            "cannot draw {h} distinct items from {m}"
        )));
    }
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(m);
    for (j, &lw) in log_w.iter().enumerate() {
        if lw == f64::NEG_INFINITY {
            continue;
        }
        if lw.is_nan() || lw == f64::INFINITY {
            return Err(Error::Numerical(format!("invalid log-weight {lw} for item {j}")));
        }
        let e: f64 = rng.sample(Exp1);
        keyed.push((lw - e.ln(), j));
    }
    let by_key = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let take = h.min(keyed.len());
    if keyed.len() > take && take > 0 {
        keyed.select_nth_unstable_by(take - 1, by_key);
    }
    keyed.truncate(take);
    keyed.sort_unstable_by(by_key);
    let mut items: Vec<usize> = keyed.into_iter().map(|(_, j)| j).collect();

    let padded = items.len() < h;
    if padded {
        let mut chosen = vec![false; m];
        items.iter().for_each(|&j| chosen[j] = true);
        let mut rest: Vec<usize> = (0..m).filter(|&j| !chosen[j]).collect();
        while items.len() < h {
            let k = rng.random_range(0..rest.len());
            items.push(rest.swap_remove(k));
        }
    }
    Ok(SampledSlate { items, padded })
}

fn clamp_score(d: f64) -> f64 {
    d.clamp(-1.0 + DOT_CLAMP, 1.0 - DOT_CLAMP)
}

/// Positive/negative feedback probabilities for inner product `score`
/// before the probabilities themselves are clamped. The score is clamped to
/// the open interval `(-1, 1)`; both entries are evaluated from their own
/// expressions, so their sum is exactly the leniency-free identity.
pub fn raw_feedback_probabilities(score: f64, beta: f64, epsilon: f64) -> (f64, f64) {
    let d = clamp_score(score);
    let a = (1.0 + d).powf(beta);
    let b = (1.0 - d).powf(beta);
    let (share_pos, share_neg) = if (a + b).is_finite() && a + b > 0.0 {
        (a / (a + b), b / (a + b))
    } else {
        // (1±d)^β overflowed; use the logistic form instead.
        let r = beta * ((1.0 + d).ln() - (1.0 - d).ln());
        let pos = 1.0 / (1.0 + (-r).exp());
        (pos, 1.0 / (1.0 + r.exp()))
    };
    (share_pos + epsilon / 2.0, share_neg - epsilon / 2.0)
}

/// Feedback probabilities `(p_pos, p_neg)` for inner product `score`,
/// clamped to `[0, 1]` and renormalized to sum to one.
pub fn feedback_probabilities(score: f64, beta: f64, epsilon: f64) -> (f64, f64) {
    let (pos, neg) = raw_feedback_probabilities(score, beta, epsilon);
    let pos = pos.clamp(0.0, 1.0);
    let neg = neg.clamp(0.0, 1.0);
    let total = pos + neg;
    if total == 1.0 {
        (pos, neg)
    } else {
        (pos / total, 1.0 - pos / total)
    }
}

/// `+1` with probability `p_pos`, `-1` otherwise.
pub fn draw_feedback(rng: &mut ChaCha8Rng, p_pos: f64) -> Feedback {
    let x: f64 = rng.random();
    if x < p_pos {
        Feedback::Positive
    } else {
        Feedback::Negative
    }
}

/// `u + (η/h) Σ_k w_k v_{items_k}`. No renormalization.
pub fn update_user(
    u: &[f64],
    items: &[usize],
    weights: &[f64],
    eta: f64,
    h: usize,
    catalog: &ItemCatalog,
) -> Vec<f64> {
    assert_eq!(items.len(), weights.len(), "one weight per item");
    let mut out = u.to_vec();
    let scale = eta / h as f64;
    for (&j, &w) in items.iter().zip(weights) {
        catalog.axpy(j, scale * w, &mut out);
    }
    out
}

/// Everything a slate-selection hook can see for one user.
pub struct SlateContext<'a> {
    pub user: usize,
    /// The user's own (unnormalized) vector `u_i(t)`.
    pub own: &'a [f64],
    /// Log-probabilities of the recommendation distribution.
    pub log_probs: &'a [f64],
    pub catalog: &'a ItemCatalog,
    pub h: usize,
}

/// Per-step overrides used by the mitigation strategies. Every method has a
/// default that reproduces the unmitigated model.
pub trait StepHooks: Sync {
    fn alpha(&self, _user: usize, base: f64) -> f64 {
        base
    }

    /// Replacement for the social representation of `user`.
    fn social_representation(
        &self,
        _states: &UserStates,
        _graph: &SocialGraph,
        _user: usize,
        _gamma: f64,
    ) -> Option<Vec<f64>> {
        None
    }

    /// Update weight of a feedback event.
    fn feedback_weight(&self, sign: Feedback) -> f64 {
        sign.sign()
    }

    /// Custom slate selection; `None` falls back to sampling `h` items.
    fn select_slate(
        &self,
        _ctx: &SlateContext<'_>,
        _rng: &mut ChaCha8Rng,
    ) -> Option<Result<SampledSlate>> {
        None
    }
}

/// Builds the hooks for one step from the current snapshot.
pub trait Strategy: Sync {
    type Hooks: StepHooks;

    fn prepare(&self, states: &UserStates, graph: &SocialGraph, params: &ModelParams)
        -> Self::Hooks;
}

/// The unmitigated model.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHooks;

impl StepHooks for NoHooks {}

impl Strategy for NoHooks {
    type Hooks = NoHooks;

    fn prepare(&self, _: &UserStates, _: &SocialGraph, _: &ModelParams) -> NoHooks {
        NoHooks
    }
}

/// Which steps get a metrics record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricSchedule {
    pub every: usize,
}

impl MetricSchedule {
    pub const fn every_step() -> Self {
        MetricSchedule { every: 1 }
    }

    /// Every step up to 1000 steps, every 10th step beyond.
    pub fn default_for(steps: usize) -> Self {
        MetricSchedule {
            every: if steps <= 1000 { 1 } else { 10 },
        }
    }

    pub fn includes(&self, t: usize) -> bool {
        self.every > 0 && t.is_multiple_of(self.every)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<MetricsRecord>,
    /// `(t, U(t))` pairs, when snapshots were requested.
    pub snapshots: Vec<UserStates>,
    /// Per-step logs, when requested.
    pub logs: Vec<StepLog>,
    pub final_states: UserStates,
    pub padded_slates: usize,
}

/// Options for [`Simulation::run`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub steps: usize,
    pub schedule: MetricSchedule,
    pub metrics: MetricSettings,
    pub snapshot_every: Option<usize>,
    pub keep_logs: bool,
}

impl RunOptions {
    pub fn new(steps: usize, metrics: MetricSettings) -> Self {
        RunOptions {
            steps,
            schedule: MetricSchedule::default_for(steps),
            metrics,
            snapshot_every: None,
            keep_logs: false,
        }
    }
}

/// The simulation engine for a fixed catalog, graph, parameter set and
/// master seed.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    pub catalog: &'a ItemCatalog,
    pub graph: &'a SocialGraph,
    pub params: ModelParams,
    pub seed: u64,
    pub record_probabilities: bool,
    pub parallel: bool,
}

struct UserOutcome {
    updated: Vec<f64>,
    slate: RecommendationSlate,
    feedback: Vec<FeedbackRecord>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        catalog: &'a ItemCatalog,
        graph: &'a SocialGraph,
        params: ModelParams,
        seed: u64,
    ) -> Self {
        Simulation {
            catalog,
            graph,
            params,
            seed,
            record_probabilities: false,
            parallel: true,
        }
    }

    fn check_dims(&self, states: &UserStates) -> Result<()> {
        self.params.validate(self.catalog.num_items())?;
        if states.dim() != self.catalog.num_categories() {
            return Err(Error::InvalidRequest(format!(
                "user dimension {} does not match {} categories",
                states.dim(),
                self.catalog.num_categories()
            )));
        }
        if self.params.gamma != 1.0 && self.graph.num_users() != states.num_users() {
            return Err(Error::InvalidRequest(format!(
                "graph has {} users, state has {}",
                self.graph.num_users(),
                states.num_users()
            )));
        }
        Ok(())
    }

    fn user_round<H: StepHooks>(
        &self,
        states: &UserStates,
        hooks: &H,
        i: usize,
    ) -> Result<UserOutcome> {
        let params = &self.params;
        let catalog = self.catalog;
        let t = states.step() as u64;
        let mut rng = rng::stream(self.seed, Purpose::Step, t, i as u64);
        let own = states.user(i);

        let s = hooks
            .social_representation(states, self.graph, i, params.gamma)
            .unwrap_or_else(|| social_representation(states, self.graph, i, params.gamma));
        let alpha = hooks.alpha(i, params.alpha);
        let log_probs = log_softmax(&item_scores(&s, catalog), alpha)?;

        let ctx = SlateContext {
            user: i,
            own,
            log_probs: &log_probs,
            catalog,
            h: params.h,
        };
        let sampled = match hooks.select_slate(&ctx, &mut rng) {
            Some(result) => result?,
            None => sample_by_log_weights(&log_probs, params.h, &mut rng)?,
        };

        let mut feedback = Vec::with_capacity(params.h);
        let mut weights = Vec::with_capacity(params.h);
        for &j in &sampled.items {
            let (p_pos, _) = feedback_probabilities(catalog.dot(j, own), params.beta, params.epsilon);
            let sign = draw_feedback(&mut rng, p_pos);
            weights.push(hooks.feedback_weight(sign));
            feedback.push(FeedbackRecord {
                user: i,
                item: j,
                sign,
                p_pos_used: p_pos,
            });
        }
        let updated = update_user(own, &sampled.items, &weights, params.eta, params.h, catalog);
        let probabilities_used = self
            .record_probabilities
            .then(|| log_probs.iter().map(|l| l.exp()).collect());
        Ok(UserOutcome {
            updated,
            slate: RecommendationSlate {
                user: i,
                items: sampled.items,
                probabilities_used,
                padded: sampled.padded,
            },
            feedback,
        })
    }

    /// One synchronous round for every user. Returns `U(t+1)` and the log
    /// of what happened at step `t`.
    pub fn step<H: StepHooks>(
        &self,
        states: &UserStates,
        hooks: &H,
    ) -> Result<(UserStates, StepLog)> {
        self.check_dims(states)?;
        let n = states.num_users();
        let outcomes: Vec<UserOutcome> = if self.parallel {
            (0..n)
                .into_par_iter()
                .map(|i| self.user_round(states, hooks, i))
                .collect::<Result<_>>()?
        } else {
            (0..n)
                .map(|i| self.user_round(states, hooks, i))
                .collect::<Result<_>>()?
        };

        let c = states.dim();
        let mut next = states.matrix().clone();
        let mut slates = Vec::with_capacity(n);
        let mut feedback = Vec::with_capacity(n);
        for (i, outcome) in outcomes.into_iter().enumerate() {
            next.as_mut_slice()[i * c..(i + 1) * c].copy_from_slice(&outcome.updated);
            slates.push(outcome.slate);
            feedback.push(outcome.feedback);
        }
        let log = StepLog {
            t: states.step(),
            slates,
            feedback,
        };
        Ok((UserStates::with_step(next, states.step() + 1), log))
    }

    /// Applies [`Simulation::step`] `options.steps` times, recording metrics
    /// on the scheduled steps. The record for step `t` pairs `U(t)` with the
    /// slates served at `t`.
    pub fn run<S: Strategy>(
        &self,
        initial: &UserStates,
        strategy: &S,
        options: &RunOptions,
    ) -> Result<Trajectory> {
        if options.steps == 0 {
            return Err(Error::InvalidRequest("run needs at least one step".into()));
        }
        self.check_dims(initial)?;
        let mut states = initial.clone();
        let mut records = Vec::new();
        let mut snapshots = Vec::new();
        let mut logs = Vec::new();
        let mut padded_slates = 0;
        for _ in 0..options.steps {
            let t = states.step();
            if options.snapshot_every.is_some_and(|k| k > 0 && t.is_multiple_of(k)) {
                snapshots.push(states.clone());
            }
            let hooks = strategy.prepare(&states, self.graph, &self.params);
            let (next, log) = self.step(&states, &hooks)?;
            padded_slates += log.padded_slates();
            if options.schedule.includes(t) {
                records.push(metrics::evaluate(
                    &states,
                    &log.slates,
                    self.catalog,
                    self.graph,
                    &options.metrics,
                )?);
            }
            if options.keep_logs {
                logs.push(log);
            }
            states = next;
        }
        Ok(Trajectory {
            records,
            snapshots,
            logs,
            final_states: states,
            padded_slates,
        })
    }
}

/// Free-function form of [`Simulation::step`].
pub fn simulate_step<H: StepHooks>(
    states: &UserStates,
    catalog: &ItemCatalog,
    graph: &SocialGraph,
    params: &ModelParams,
    seed: u64,
    hooks: &H,
) -> Result<(UserStates, StepLog)> {
    Simulation::new(catalog, graph, *params, seed).step(states, hooks)
}
