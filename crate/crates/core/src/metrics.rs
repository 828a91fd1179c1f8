//! Echo-chamber and homogenization metrics.
//!
//! All user-side metrics read the ℓ2-normalized user vectors; the raw state
//! is never modified.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{ItemCatalog, SocialGraph, UserStates, ZERO_NORM};
use crate::dynamics::RecommendationSlate;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Default alignment threshold for recommendation accuracy.
pub const RA_THRESHOLD: f64 = 0.7;

/// Largest population for which pairwise-distance variance is computed over
/// all pairs by default.
pub const PDV_EXACT_LIMIT: usize = 5000;

pub const PDV_DEFAULT_PAIRS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdvMode {
    Exact,
    Sampled { pairs: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub ra_threshold: f64,
    /// Requested `k` for TS@k; clipped to `n − 1`.
    pub ts_k: usize,
    pub pdv_exact_limit: usize,
    pub pdv_pairs: usize,
    pub pdv_seed: u64,
}

impl MetricSettings {
    pub fn with_ts_k(ts_k: usize) -> Self {
        MetricSettings {
            ts_k,
            ..Default::default()
        }
    }

    pub fn pdv_mode(&self, n: usize) -> PdvMode {
        if n <= self.pdv_exact_limit {
            PdvMode::Exact
        } else {
            PdvMode::Sampled {
                pairs: self.pdv_pairs,
                seed: self.pdv_seed,
            }
        }
    }
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            ra_threshold: RA_THRESHOLD,
            ts_k: 50,
            pdv_exact_limit: PDV_EXACT_LIMIT,
            pdv_pairs: PDV_DEFAULT_PAIRS,
            pdv_seed: 0,
        }
    }
}

/// Metrics at one step. Metrics that are undefined for the current
/// population (no edges, fewer than two users) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub t: usize,
    pub rce: f64,
    pub ra: f64,
    pub nd: Option<f64>,
    pub pdv: Option<f64>,
    pub ts_at_k: Option<f64>,
    pub k_used: usize,
    pub pdv_mode: PdvMode,
    /// Users left out of RA because their vector is zero.
    pub ra_excluded: usize,
}

/// Category entropy of one slate. A `k`-category item adds `1/k` to each of
/// its categories.
pub fn category_entropy(items: &[usize], catalog: &ItemCatalog) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidSlate("empty slate".into()));
    }
    let mut shares = vec![0.0; catalog.num_categories()];
    for &j in items {
        if j >= catalog.num_items() {
            return Err(Error::IndexOutOfRange {
                index: j,
                bound: catalog.num_items(),
            });
        }
        let w = catalog.weight(j);
        for &l in catalog.categories(j) {
            shares[l] += w * w;
        }
    }
    Ok(entropy_of_counts(&shares))
}

/// Shannon entropy (nats) of the normalized nonnegative `counts`, with
/// `0 ln 0 = 0`.
pub fn entropy_of_counts(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -counts
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Recommendation category entropy: mean slate entropy over users.
pub fn rce(slates: &[RecommendationSlate], catalog: &ItemCatalog) -> Result<f64> {
    if slates.is_empty() {
        return Err(Error::InvalidSlate("no slates".into()));
    }
    let mut sum = 0.0;
    for s in slates {
        sum += category_entropy(&s.items, catalog)?;
    }
    Ok(sum / slates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaResult {
    pub value: f64,
    pub excluded: usize,
}

/// Recommendation accuracy: share of served `(user, item)` pairs whose
/// normalized alignment exceeds `threshold`.
pub fn ra(
    states: &UserStates,
    slates: &[RecommendationSlate],
    catalog: &ItemCatalog,
    threshold: f64,
) -> Result<RaResult> {
    ra_normalized(&states.normalized(), slates, catalog, threshold)
}

fn is_zero(col: &[f64]) -> bool {
    col.iter().map(|x| x * x).sum::<f64>().sqrt() < ZERO_NORM
}

fn ra_normalized(
    units: &DMatrix<f64>,
    slates: &[RecommendationSlate],
    catalog: &ItemCatalog,
    threshold: f64,
) -> Result<RaResult> {
    if slates.is_empty() {
        return Err(Error::InvalidSlate("no slates".into()));
    }
    let c = units.nrows();
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut excluded = 0usize;
    for slate in slates {
        if slate.user >= units.ncols() {
            return Err(Error::IndexOutOfRange {
                index: slate.user,
                bound: units.ncols(),
            });
        }
        let u = &units.as_slice()[slate.user * c..(slate.user + 1) * c];
        if is_zero(u) {
            excluded += 1;
            continue;
        }
        hits += slate
            .items
            .iter()
            .filter(|&&j| catalog.dot(j, u) > threshold)
            .count();
        total += slate.items.len();
    }
    let value = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    Ok(RaResult { value, excluded })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn column(units: &DMatrix<f64>, i: usize) -> &[f64] {
    let c = units.nrows();
    &units.as_slice()[i * c..(i + 1) * c]
}

/// Neighbor distance: mean distance between normalized endpoints over the
/// directed edge set.
pub fn nd(states: &UserStates, graph: &SocialGraph) -> Result<f64> {
    nd_normalized(&states.normalized(), graph)
}

fn nd_normalized(units: &DMatrix<f64>, graph: &SocialGraph) -> Result<f64> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let sum: f64 = edges
        .iter()
        .map(|&(i, j)| distance(column(units, i), column(units, j)))
        .sum();
    Ok(sum / edges.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdvResult {
    pub value: f64,
    pub mode: PdvMode,
}

/// Pairwise distance variance (population variance over distinct pairs).
pub fn pdv(states: &UserStates, mode: PdvMode) -> Result<PdvResult> {
    pdv_normalized(&states.normalized(), mode)
}

fn pdv_normalized(units: &DMatrix<f64>, mode: PdvMode) -> Result<PdvResult> {
    let n = units.ncols();
    if n < 2 {
        return Err(Error::InvalidRequest(
            "pairwise distance variance needs at least two users".into(),
        ));
    }
    let value = match mode {
        PdvMode::Exact => {
            let pairs = (n * (n - 1) / 2) as f64;
            let mut sum = 0.0;
            for i in 0..n - 1 {
                for j in i + 1..n {
                    sum += distance(column(units, i), column(units, j));
                }
            }
            let mean = sum / pairs;
            let mut ss = 0.0;
            for i in 0..n - 1 {
                for j in i + 1..n {
                    let d = distance(column(units, i), column(units, j)) - mean;
                    ss += d * d;
                }
            }
            ss / pairs
        }
        PdvMode::Sampled { pairs, seed } => {
            if pairs == 0 {
                return Err(Error::InvalidRequest("sampled PDV needs pairs > 0".into()));
            }
            let mut rng = rng::stream(seed, Purpose::PairSample, 0, 0);
            let dists: Vec<f64> = (0..pairs)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    distance(column(units, i), column(units, j))
                })
                .collect();
            let mean = dists.iter().sum::<f64>() / pairs as f64;
            dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / pairs as f64
        }
    };
    Ok(PdvResult { value, mode })
}

/// TS@k: mean inner product between each user and its `k` most similar
/// other users (self excluded), averaged over users.
pub fn ts_at_k(states: &UserStates, k: usize) -> Result<f64> {
    ts_at_k_normalized(&states.normalized(), k)
}

fn ts_at_k_normalized(units: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = units.ncols();
    if k == 0 || k >= n {
        return Err(Error::InvalidRequest(format!(
            "TS@k needs 1 <= k <= n - 1 (k = {k}, n = {n})"
        )));
    }
    let per_user: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ui = column(units, i);
            let mut sims: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ui.iter().zip(column(units, j)).map(|(a, b)| a * b).sum())
                .collect();
            sims.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            let mut top = sims[..k].to_vec();
            top.sort_unstable_by(|a, b| b.total_cmp(a));
            top.iter().sum::<f64>() / k as f64
        })
        .collect();
    Ok(per_user.iter().sum::<f64>() / n as f64)
}

/// Dispersion of a user's interests: `Σ_o (û^(o) − mean(û))²` on the
/// normalized vector `û`. Zero vectors have dispersion 0.
pub fn dispersion(u: &[f64]) -> f64 {
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        return 0.0;
    }
    let c = u.len() as f64;
    let mean = u.iter().map(|x| x / norm).sum::<f64>() / c;
    u.iter()
        .map(|x| {
            let d = x / norm - mean;
            d * d
        })
        .sum()
}

/// Dispersion of every user.
pub fn dispersions(states: &UserStates) -> Vec<f64> {
    (0..states.num_users())
        .map(|i| dispersion(states.user(i)))
        .collect()
}

/// Computes every metric for `U(t)` and the slates served at `t`.
pub fn evaluate(
    states: &UserStates,
    slates: &[RecommendationSlate],
    catalog: &ItemCatalog,
    graph: &SocialGraph,
    settings: &MetricSettings,
) -> Result<MetricsRecord> {
    let units = states.normalized();
    let n = units.ncols();
    let rce = rce(slates, catalog)?;
    let ra = ra_normalized(&units, slates, catalog, settings.ra_threshold)?;
    let nd = match nd_normalized(&units, graph) {
        Ok(v) => Some(v),
        Err(Error::NoEdges) => None,
        Err(e) => return Err(e),
    };
    let pdv_mode = settings.pdv_mode(n);
    let (pdv, ts, k_used) = if n >= 2 {
        let k = settings.ts_k.clamp(1, n - 1);
        (
            Some(pdv_normalized(&units, pdv_mode)?.value),
            Some(ts_at_k_normalized(&units, k)?),
            k,
        )
    } else {
        (None, None, 0)
    };
    Ok(MetricsRecord {
        t: states.step(),
        rce,
        ra: ra.value,
        nd,
        pdv,
        ts_at_k: ts,
        k_used,
        pdv_mode,
        ra_excluded: ra.excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn slate(user: usize, items: Vec<usize>) -> RecommendationSlate {
        RecommendationSlate {
            user,
            items,
            probabilities_used: None,
            padded: false,
        }
    }

    fn states(cols: &[&[f64]]) -> UserStates {
        UserStates::from_columns(
            &cols
                .iter()
                .map(|c| DVector::from_column_slice(c))
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn entropy_examples() {
        let cat = ItemCatalog::single_category(&(0..200).map(|j| j % 10).collect::<Vec<_>>(), 10).unwrap();
        let one_cat: Vec<usize> = (0..20).map(|k| k * 10).collect();
        assert_eq!(category_entropy(&one_cat, &cat).unwrap(), 0.0);

        let spread: Vec<usize> = (0..20).collect();
        assert_abs_diff_eq!(category_entropy(&spread, &cat).unwrap(), 10f64.ln(), epsilon = 1e-12);

        let cat3 = ItemCatalog::single_category(&[0, 0, 1, 2], 3).unwrap();
        assert_abs_diff_eq!(
            category_entropy(&[0, 1, 2, 3], &cat3).unwrap(),
            1.5 * 2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(category_entropy(&[0, 1, 2, 3], &cat3).unwrap(), 1.039721, epsilon = 1e-6);

        assert!(matches!(category_entropy(&[], &cat), Err(Error::InvalidSlate(_))));
    }

    #[test]
    fn entropy_multi_category_items_split_mass() {
        // one item in {0,1} and one in {0}: shares 1.5 / 0.5
        let cat = ItemCatalog::from_category_sets(vec![vec![0, 1], vec![0]], 2).unwrap();
        let expected = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert_abs_diff_eq!(category_entropy(&[0, 1], &cat).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn rce_examples() {
        let cat = ItemCatalog::single_category(&(0..20).map(|j| j % 10).collect::<Vec<_>>(), 10).unwrap();
        let spread: Vec<usize> = (0..20).collect();
        let same = vec![slate(0, spread.clone()), slate(1, spread.clone())];
        assert_abs_diff_eq!(rce(&same, &cat).unwrap(), 10f64.ln(), epsilon = 1e-12);

        let narrow = vec![0, 10, 0, 10];
        let mixed = vec![slate(0, narrow.clone()), slate(1, spread.clone()), slate(2, narrow), slate(3, spread)];
        assert_abs_diff_eq!(rce(&mixed, &cat).unwrap(), 10f64.ln() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ra_examples() {
        let cat = ItemCatalog::single_category(&[0, 0, 1, 1], 2).unwrap();
        let s = states(&[&[1.0, 0.0]]);
        assert_eq!(ra(&s, &[slate(0, vec![0, 1])], &cat, 0.7).unwrap().value, 1.0);
        assert_eq!(ra(&s, &[slate(0, vec![2, 3])], &cat, 0.7).unwrap().value, 0.0);

        let h = 0.5f64.sqrt();
        let s = states(&[&[h, h]]);
        assert_eq!(ra(&s, &[slate(0, vec![0, 2])], &cat, 0.7).unwrap().value, 1.0);

        // reads normalized vectors
        let s = states(&[&[5.0, 0.0]]);
        assert_eq!(ra(&s, &[slate(0, vec![0])], &cat, 0.7).unwrap().value, 1.0);

        let s = states(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let r = ra(&s, &[slate(0, vec![0]), slate(1, vec![0, 2])], &cat, 0.7).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn nd_examples() {
        let s = states(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let g = SocialGraph::new([(0, 1)], 2).unwrap();
        assert_eq!(nd(&s, &g).unwrap(), 0.0);

        let s = states(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_abs_diff_eq!(nd(&s, &g).unwrap(), 2f64.sqrt(), epsilon = 1e-15);

        let h = 0.5f64.sqrt();
        let s = states(&[&[1.0, 0.0], &[0.0, 1.0], &[h, h]]);
        let g = SocialGraph::new([(0, 2), (1, 2)], 3).unwrap();
        let expected = (2.0 - 2f64.sqrt()).sqrt();
        assert_abs_diff_eq!(nd(&s, &g).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.76537, epsilon = 1e-5);

        assert!(matches!(nd(&s, &SocialGraph::empty(3)), Err(Error::NoEdges)));
    }

    #[test]
    fn pdv_examples() {
        let s = states(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(pdv(&s, PdvMode::Exact).unwrap().value, 0.0);

        let s = states(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert_abs_diff_eq!(pdv(&s, PdvMode::Exact).unwrap().value, 4.0 / 9.0, epsilon = 1e-15);

        let s = states(&[&[1.0, 0.0]]);
        assert!(matches!(pdv(&s, PdvMode::Exact), Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn ts_examples() {
        let s = states(&[&[0.6, 0.8], &[0.6, 0.8], &[0.6, 0.8], &[0.6, 0.8]]);
        for k in 1..4 {
            assert_abs_diff_eq!(ts_at_k(&s, k).unwrap(), 1.0, epsilon = 1e-15);
        }
        let s = states(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(ts_at_k(&s, 1).unwrap(), 0.0);
        assert!(matches!(ts_at_k(&s, 3), Err(Error::InvalidRequest(_))));
        assert!(matches!(ts_at_k(&s, 0), Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn ts_hand_built() {
        // unit vectors at angles 0, 30, 90, 180 degrees
        let a = |deg: f64| {
            let r = deg.to_radians();
            vec![r.cos(), r.sin()]
        };
        let cols = [a(0.0), a(30.0), a(90.0), a(180.0)];
        let s = UserStates::from_columns(&cols.iter().map(|c| DVector::from_vec(c.clone())).collect::<Vec<_>>());
        let c30 = 30f64.to_radians().cos();
        let c60 = 60f64.to_radians().cos();
        // top-2 per user: 0 -> {30°: c30, 90°: 0}; 30 -> {0°: c30, 90°: c60};
        // 90 -> {30°: c60, 0°/180°: 0}; 180 -> {90°: 0, 30°: -c30}
        let expected = ((c30 + 0.0) + (c30 + c60) + (c60 + 0.0) + (0.0 - c30)) / 8.0;
        assert_abs_diff_eq!(ts_at_k(&s, 2).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn dispersion_examples() {
        let c = 4;
        let uniform = vec![1.0 / (c as f64).sqrt(); c];
        assert_abs_diff_eq!(dispersion(&uniform), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dispersion(&[1.0, 0.0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(dispersion(&[1.0, 0.0, 0.0, 0.0]), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(dispersion(&[3.0, 0.0, 0.0, 0.0]), 0.75, epsilon = 1e-15);
        assert_eq!(dispersion(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn evaluate_handles_tiny_populations() {
        let cat = ItemCatalog::single_category(&[0, 1], 2).unwrap();
        let s = states(&[&[1.0, 0.0]]);
        let r = evaluate(&s, &[slate(0, vec![0])], &cat, &SocialGraph::empty(1), &MetricSettings::default()).unwrap();
        assert_eq!(r.nd, None);
        assert_eq!(r.pdv, None);
        assert_eq!(r.ts_at_k, None);
        assert_eq!(r.k_used, 0);
    }
}
