//! Mitigation strategies, expressed as [`StepHooks`] on the engine.
//!
//! - user-adaptive temperature (`UaAlpha`): per-user `α_i` from interest
//!   dispersion
//! - feedback-update adjustment (`Fua`): asymmetric update weights
//! - diversity re-ranking (`Dpp`): greedy relevance/redundancy trade-off over
//!   a sampled candidate pool
//! - social aggregation reweighting (`Sar`): neighbors weighted by
//!   `exp(−ω·dispersion)`

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ItemCatalog, ModelParams, SocialGraph, UserStates, ZERO_NORM};
use crate::dynamics::{sample_by_log_weights, Feedback, SampledSlate, SlateContext, StepHooks, Strategy};
use crate::error::{Error, Result};
use crate::metrics;

/// Dispersions below this are raised to it before taking powers.
pub const DISPERSION_FLOOR: f64 = 1e-12;

pub const DEFAULT_DPP_CANDIDATES: usize = 1000;

/// The strategy active in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum MitigationConfig {
    #[default]
    None,
    UaAlpha {
        sigma: f64,
        /// Multiply every `α_i` by `n`, so a population of equal dispersion
        /// keeps `α₀`.
        #[serde(default)]
        rescale_by_n: bool,
    },
    Fua {
        rho: f64,
    },
    Dpp {
        theta: f64,
        /// Candidate pool size; `None` uses `min(1000, m)`.
        #[serde(default)]
        candidates: Option<usize>,
    },
    Sar {
        omega: f64,
        /// Divide the weighted neighbor sum by `Σw·|N_i|` instead of `Σw`.
        #[serde(default)]
        strict: bool,
    },
}

impl MitigationConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MitigationConfig::None => "none",
            MitigationConfig::UaAlpha { .. } => "ua_alpha",
            MitigationConfig::Fua { .. } => "fua",
            MitigationConfig::Dpp { .. } => "dpp",
            MitigationConfig::Sar { .. } => "sar",
        }
    }

    pub fn validate(&self, m: usize, h: usize) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidRequest(format!("{name} must be finite")))
            }
        };
        match *self {
            MitigationConfig::None => Ok(()),
            MitigationConfig::UaAlpha { sigma, .. } => {
                finite("sigma", sigma)?;
                if sigma < 0.0 {
                    return Err(Error::InvalidRequest("sigma must be >= 0".into()));
                }
                Ok(())
            }
            MitigationConfig::Fua { rho } => finite("rho", rho),
            MitigationConfig::Dpp { theta, candidates } => {
                finite("theta", theta)?;
                if !(0.0..=1.0).contains(&theta) {
                    return Err(Error::InvalidRequest("theta must lie in [0, 1]".into()));
                }
                let pool = candidates.unwrap_or(DEFAULT_DPP_CANDIDATES.min(m));
                if pool < h || pool > m {
                    return Err(Error::InvalidRequest(format!(
                        "candidate pool {pool} must lie in [h, m] = [{h}, {m}]"
                    )));
                }
                Ok(())
            }
            MitigationConfig::Sar { omega, .. } => {
                finite("omega", omega)?;
                if omega < 0.0 {
                    return Err(Error::InvalidRequest("omega must be >= 0".into()));
                }
                Ok(())
            }
        }
    }
}

/// `α_i = α₀ · φ_i / Σ_k φ_k` with `φ_i = dis_i^(−σ)`, computed from
/// logarithms.
pub fn adaptive_alpha(dispersions: &[f64], sigma: f64, alpha0: f64) -> Vec<f64> {
    if dispersions.is_empty() {
        return Vec::new();
    }
    let log_phi: Vec<f64> = dispersions
        .iter()
        .map(|&d| -sigma * d.max(DISPERSION_FLOOR).ln())
        .collect();
    let max = log_phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_phi.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| alpha0 * w / total).collect()
}

/// Update weight of a feedback event: `1 − ρ` for positive, `−1 − ρ` for
/// negative.
pub fn fua_weight(sign: Feedback, rho: f64) -> f64 {
    match sign {
        Feedback::Positive => 1.0 - rho,
        Feedback::Negative => -1.0 - rho,
    }
}

/// Greedy diversity re-ranking of `candidates` into `h` items.
pub fn dpp_rerank(
    u: &[f64],
    candidates: &[usize],
    catalog: &ItemCatalog,
    theta: f64,
    h: usize,
) -> Result<Vec<usize>> {
    if candidates.len() < h {
        return Err(Error::InvalidRequest(format!(
            "candidate pool of {} is smaller than h = {h}",
            candidates.len()
        )));
    }
    let relevance: Vec<f64> = candidates.iter().map(|&j| catalog.dot(j, u)).collect();
    let c = catalog.num_categories();
    let mut taken = vec![false; candidates.len()];
    let mut chosen = Vec::with_capacity(h);
    let mut sum = vec![0.0; c];

    for step in 0..h {
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        let direction: Vec<f64> = if norm > ZERO_NORM {
            sum.iter().map(|x| x / norm).collect()
        } else {
            vec![0.0; c]
        };
        let mut best: Option<(usize, f64)> = None;
        for (pos, &j) in candidates.iter().enumerate() {
            if taken[pos] {
                continue;
            }
            let score = if step == 0 {
                relevance[pos]
            } else {
                (1.0 - theta) * relevance[pos] - theta * catalog.dot(j, &direction)
            };
            let better = match best {
                None => true,
                Some((bp, bs)) => score > bs || (score == bs && j < candidates[bp]),
            };
            if better {
                best = Some((pos, score));
            }
        }
        let (pos, _) = best.expect("pool has at least h items");
        taken[pos] = true;
        chosen.push(candidates[pos]);
        catalog.axpy(candidates[pos], 1.0, &mut sum);
    }
    Ok(chosen)
}

/// Convex weights `exp(−ω·dis_j) / Σ exp(−ω·dis_k)` over `neighbors`.
pub fn sar_weights(neighbor_dispersions: &[f64], omega: f64) -> Vec<f64> {
    if neighbor_dispersions.is_empty() {
        return Vec::new();
    }
    let logs: Vec<f64> = neighbor_dispersions.iter().map(|d| -omega * d).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Social representation with dispersion-weighted neighbors. `strict`
/// additionally divides the weighted mean by `|N_i|`.
pub fn sar_social_representation(
    states: &UserStates,
    graph: &SocialGraph,
    i: usize,
    gamma: f64,
    omega: f64,
    dispersions: &[f64],
    strict: bool,
) -> Vec<f64> {
    let own = states.user(i);
    let neighbors = graph.neighbors(i);
    if neighbors.is_empty() {
        return own.to_vec();
    }
    let d: Vec<f64> = neighbors.iter().map(|&j| dispersions[j]).collect();
    let w = sar_weights(&d, omega);
    let scale = if strict { 1.0 / neighbors.len() as f64 } else { 1.0 };
    let mut agg = vec![0.0; own.len()];
    for (&j, wj) in neighbors.iter().zip(&w) {
        for (a, x) in agg.iter_mut().zip(states.user(j)) {
            *a += wj * scale * x;
        }
    }
    own.iter()
        .zip(&agg)
        .map(|(u, s)| gamma * u + (1.0 - gamma) * s)
        .collect()
}

/// Per-step hooks for a [`MitigationConfig`].
#[derive(Debug, Clone)]
pub struct MitigationHooks {
    config: MitigationConfig,
    alphas: Vec<f64>,
    dispersions: Vec<f64>,
}

impl StepHooks for MitigationHooks {
    fn alpha(&self, user: usize, base: f64) -> f64 {
        match self.config {
            MitigationConfig::UaAlpha { .. } => self.alphas[user],
            _ => base,
        }
    }

    fn social_representation(
        &self,
        states: &UserStates,
        graph: &SocialGraph,
        user: usize,
        gamma: f64,
    ) -> Option<Vec<f64>> {
        match self.config {
            MitigationConfig::Sar { omega, strict } => Some(sar_social_representation(
                states,
                graph,
                user,
                gamma,
                omega,
                &self.dispersions,
                strict,
            )),
            _ => None,
        }
    }

    fn feedback_weight(&self, sign: Feedback) -> f64 {
        match self.config {
            MitigationConfig::Fua { rho } => fua_weight(sign, rho),
            _ => sign.sign(),
        }
    }

    fn select_slate(
        &self,
        ctx: &SlateContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Option<Result<SampledSlate>> {
        let MitigationConfig::Dpp { theta, candidates } = self.config else {
            return None;
        };
        let m = ctx.catalog.num_items();
        let pool_size = candidates.unwrap_or(DEFAULT_DPP_CANDIDATES.min(m));
        Some((|| {
            let pool = sample_by_log_weights(ctx.log_probs, pool_size, rng)?;
            let items = dpp_rerank(ctx.own, &pool.items, ctx.catalog, theta, ctx.h)?;
            Ok(SampledSlate {
                items,
                padded: pool.padded,
            })
        })())
    }
}

impl Strategy for MitigationConfig {
    type Hooks = MitigationHooks;

    fn prepare(&self, states: &UserStates, _graph: &SocialGraph, params: &ModelParams) -> MitigationHooks {
        let needs_dispersion = matches!(
            self,
            MitigationConfig::UaAlpha { .. } | MitigationConfig::Sar { .. }
        );
        let dispersions = if needs_dispersion {
            metrics::dispersions(states)
        } else {
            Vec::new()
        };
        let alphas = match *self {
            MitigationConfig::UaAlpha { sigma, rescale_by_n } => {
                let mut a = adaptive_alpha(&dispersions, sigma, params.alpha);
                if rescale_by_n {
                    let n = a.len() as f64;
                    a.iter_mut().for_each(|x| *x *= n);
                }
                a
            }
            _ => Vec::new(),
        };
        MitigationHooks {
            config: *self,
            alphas,
            dispersions,
        }
    }
}
