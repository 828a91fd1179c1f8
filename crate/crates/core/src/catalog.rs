//! Items, users, the social graph and model parameters.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Norm below which a vector is treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Builds the vector of an item that belongs to `categories`.
///
/// Each listed category gets weight `sqrt(1/k)` where `k` is the number of
/// distinct categories, so the result has unit norm.
pub fn build_item_vector(categories: &[usize], c: usize) -> Result<DVector<f64>> {
    let set = category_set(categories, c)?;
    let weight = (1.0 / set.len() as f64).sqrt();
    let mut v = DVector::zeros(c);
    for &l in &set {
        v[l] = weight;
    }
    Ok(v)
}

fn category_set(categories: &[usize], c: usize) -> Result<Vec<usize>> {
    if categories.is_empty() {
        return Err(Error::InvalidItem("item has no category".into()));
    }
    if let Some(&bad) = categories.iter().find(|&&l| l >= c) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            bound: c,
        });
    }
    let set: BTreeSet<usize> = categories.iter().copied().collect();
    Ok(set.into_iter().collect())
}

/// The item side of the model: a `c × m` matrix whose columns are item
/// vectors, plus the category membership that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    vectors: DMatrix<f64>,
    categories: Vec<Vec<usize>>,
    weights: Vec<f64>,
    mass: DVector<f64>,
}

impl ItemCatalog {
    pub fn from_category_sets<I>(sets: I, c: usize) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: AsRef<[usize]>,
    {
        let categories = sets
            .into_iter()
            .map(|s| category_set(s.as_ref(), c))
            .collect::<Result<Vec<_>>>()?;
        let m = categories.len();
        let mut vectors = DMatrix::zeros(c, m);
        let mut weights = Vec::with_capacity(m);
        for (j, set) in categories.iter().enumerate() {
            let w = (1.0 / set.len() as f64).sqrt();
            for &l in set {
                vectors[(l, j)] = w;
            }
            weights.push(w);
        }
        let mut catalog = ItemCatalog {
            vectors,
            categories,
            weights,
            mass: DVector::zeros(c),
        };
        catalog.mass = category_mass(&catalog);
        Ok(catalog)
    }

    /// Catalog where item `j` belongs to the single category `labels[j]`.
    pub fn single_category(labels: &[usize], c: usize) -> Result<Self> {
        Self::from_category_sets(labels.iter().map(|&l| [l]), c)
    }

    pub fn num_items(&self) -> usize {
        self.categories.len()
    }

    pub fn num_categories(&self) -> usize {
        self.vectors.nrows()
    }

    /// The `c × m` item matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, j: usize) -> DVector<f64> {
        self.vectors.column(j).into_owned()
    }

    /// Sorted category indices of item `j`.
    pub fn categories(&self, j: usize) -> &[usize] {
        &self.categories[j]
    }

    /// Per-category entry `sqrt(1/k)` of item `j`.
    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn category_mass(&self) -> &DVector<f64> {
        &self.mass
    }

    pub fn is_single_category(&self) -> bool {
        self.categories.iter().all(|s| s.len() == 1)
    }

    /// `v_jᵀ x` using the sparse category structure.
    #[inline]
    pub fn dot(&self, j: usize, x: &[f64]) -> f64 {
        let w = self.weights[j];
        self.categories[j].iter().map(|&l| w * x[l]).sum()
    }

    /// Adds `scale · v_j` to `acc`.
    #[inline]
    pub fn axpy(&self, j: usize, scale: f64, acc: &mut [f64]) {
        let w = scale * self.weights[j];
        for &l in &self.categories[j] {
            acc[l] += w;
        }
    }
}

/// `n_o = Σ_j v_j^(o)`, the summed category-`o` weight over all items.
pub fn category_mass(catalog: &ItemCatalog) -> DVector<f64> {
    let c = catalog.num_categories();
    let mut n = DVector::zeros(c);
    for j in 0..catalog.num_items() {
        for &l in catalog.categories(j) {
            n[l] += catalog.weight(j);
        }
    }
    n
}

/// Initial user vector from an interaction history: the normalized
/// difference between the sums of positively and negatively rated items.
pub fn init_user_from_history(
    positives: &[usize],
    negatives: &[usize],
    catalog: &ItemCatalog,
) -> Result<DVector<f64>> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::DegenerateHistory);
    }
    let m = catalog.num_items();
    let mut acc = vec![0.0; catalog.num_categories()];
    for (&j, sign) in positives
        .iter()
        .map(|j| (j, 1.0))
        .chain(negatives.iter().map(|j| (j, -1.0)))
    {
        if j >= m {
            return Err(Error::IndexOutOfRange { index: j, bound: m });
        }
        catalog.axpy(j, sign, &mut acc);
    }
    let v = DVector::from_vec(acc);
    let norm = v.norm();
    if norm < ZERO_NORM {
        return Err(Error::DegenerateHistory);
    }
    Ok(v / norm)
}

/// Random unit vector: i.i.d. standard normal coordinates, then scaled to
/// unit length. Deterministic in `seed`.
pub fn init_user_random(seed: u64, c: usize) -> DVector<f64> {
    random_unit_vector(&mut rng::stream(seed, Purpose::UserInit, 0, 0), c)
}

/// Draws a standard normal vector from `rng` and normalizes it, redrawing in
/// the (measure-zero) case of a zero vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, c: usize) -> DVector<f64> {
    assert!(c >= 1, "need at least one category");
    loop {
        let v = DVector::from_fn(c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm >= ZERO_NORM {
            return v / norm;
        }
    }
}

/// User matrix `U(t)` (one column per user) and the step counter.
///
/// Columns are not renormalized by the dynamics; use
/// [`UserStates::normalized`] for metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStates {
    matrix: DMatrix<f64>,
    t: usize,
}

impl UserStates {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        UserStates { matrix, t: 0 }
    }

    pub fn with_step(matrix: DMatrix<f64>, t: usize) -> Self {
        UserStates { matrix, t }
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Self {
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn step(&self) -> usize {
        self.t
    }

    pub fn num_users(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Column `i` as a contiguous slice.
    pub fn user(&self, i: usize) -> &[f64] {
        let c = self.dim();
        &self.matrix.as_slice()[i * c..(i + 1) * c]
    }

    /// Copy with every nonzero column scaled to unit norm. Zero columns stay
    /// zero.
    pub fn normalized(&self) -> DMatrix<f64> {
        let mut out = self.matrix.clone();
        for mut col in out.column_iter_mut() {
            let norm = col.norm();
            if norm >= ZERO_NORM {
                col /= norm;
            }
        }
        out
    }
}

/// Directed trust graph and its row-normalized influence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl SocialGraph {
    /// Builds the graph on `n` users. `(i, j)` means user `i` trusts `j`.
    /// Duplicate edges are merged.
    pub fn new<I>(edges: I, n: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            for idx in [i, j] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        bound: n,
                    });
                }
            }
            set.insert((i, j));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &set {
            neighbors[i].push(j);
        }
        Ok(SocialGraph {
            n,
            edges: set.into_iter().collect(),
            neighbors,
        })
    }

    pub fn empty(n: usize) -> Self {
        SocialGraph {
            n,
            edges: Vec::new(),
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn num_users(&self) -> usize {
        self.n
    }

    /// Sorted, de-duplicated directed edges.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    pub fn isolated_count(&self) -> usize {
        self.neighbors.iter().filter(|nb| nb.is_empty()).count()
    }

    /// Nonzero entries of row `i` of the influence matrix. Isolated users
    /// get the unit self-loop.
    pub fn influence_row(&self, i: usize) -> Vec<(usize, f64)> {
        let nb = &self.neighbors[i];
        if nb.is_empty() {
            return vec![(i, 1.0)];
        }
        let w = 1.0 / nb.len() as f64;
        nb.iter().map(|&j| (j, w)).collect()
    }

    /// Dense `n × n` influence matrix.
    pub fn influence_matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.influence_row(i) {
                s[(i, j)] += w;
            }
        }
        s
    }

    /// Mean of the neighbor columns of `states` for user `i` (the user's own
    /// column when isolated).
    pub fn neighbor_mean(&self, states: &UserStates, i: usize) -> Vec<f64> {
        let nb = &self.neighbors[i];
        if nb.is_empty() {
            return states.user(i).to_vec();
        }
        let mut acc = vec![0.0; states.dim()];
        for &j in nb {
            for (a, x) in acc.iter_mut().zip(states.user(j)) {
                *a += x;
            }
        }
        let inv = 1.0 / nb.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}

/// Knobs of the recommender and the user feedback model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Softmax temperature of the recommender.
    pub alpha: f64,
    /// Confirmation-bias exponent.
    pub beta: f64,
    /// Weight of the user's own vector against the neighbor mean.
    pub gamma: f64,
    /// Leniency shift added to the positive-feedback probability.
    pub epsilon: f64,
    /// Update rate.
    pub eta: f64,
    /// Recommendation list length.
    pub h: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            alpha: 5.0,
            beta: 5.0,
            gamma: 0.5,
            epsilon: 0.0,
            eta: 0.1,
            h: 20,
        }
    }
}

impl ModelParams {
    pub fn validate(&self, m: usize) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("eta", self.eta),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidRequest(format!("{name} must be finite")));
        }
        let bad = |msg: &str| Err(Error::InvalidRequest(msg.to_string()));
        if self.alpha < 0.0 {
            return bad("alpha must be >= 0");
        }
        if self.beta < 0.0 {
            return bad("beta must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(-1.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [-1, 1]");
        }
        if self.eta <= 0.0 {
            return bad("eta must be > 0");
        }
        if self.h == 0 {
            return bad("h must be >= 1");
        }
        if self.h > m {
            return Err(Error::InvalidRequest(format!(
                "h = {} exceeds the item count {m}",
                self.h
            )));
        }
        Ok(())
    }

    /// `λ = ηβ/m`, the per-item growth rate of the coordinate-scaling map.
    pub fn lambda(&self, m: usize) -> f64 {
        self.eta * self.beta / m as f64
    }
}
