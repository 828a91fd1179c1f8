//! Linearized matrix dynamics, convergence conditions, closed-form fixed
//! points and the homogenization / entropy-decay statements for the
//! deterministic coordinate-scaling map.
//!
//! Matrices follow the column convention used everywhere else: `U` is
//! `c × n` with one user per column, `V` is `c × m`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::catalog::{ItemCatalog, ModelParams, SocialGraph};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Condition numbers above this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Largest `n·c` solved with a dense factorization by default.
pub const DENSE_LIMIT: usize = 2000;

/// The operators of the linearized dynamics `U ← X + Y U + Z U S̃ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSet {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub s_tilde: DMatrix<f64>,
    pub params_used: ModelParams,
    /// `true` when `Y` has had the identity removed (see
    /// [`OperatorSet::without_identity`]).
    pub identity_dropped: bool,
}

impl OperatorSet {
    pub fn num_users(&self) -> usize {
        self.s_tilde.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    /// The same operators with `Y − I` in place of `Y`.
    ///
    /// The printed `Y = I + …` has spectral radius at least one (its
    /// non-identity part is positive semidefinite), so iterating it cannot
    /// converge. The convergence bounds on `‖Y‖∞` are derived for the
    /// increment part alone, and this is the form for which iteration
    /// converges under those bounds.
    pub fn without_identity(&self) -> OperatorSet {
        if self.identity_dropped {
            return self.clone();
        }
        let c = self.dim();
        OperatorSet {
            y: &self.y - DMatrix::identity(c, c),
            identity_dropped: true,
            ..self.clone()
        }
    }
}

/// `Σ_j v_j` as a column vector.
fn mass(catalog: &ItemCatalog) -> DVector<f64> {
    catalog.category_mass().clone()
}

/// Builds `X`, `Y`, `Z` and `S̃` for `catalog`, `graph` and `params`.
pub fn build_operators(
    catalog: &ItemCatalog,
    graph: &SocialGraph,
    params: &ModelParams,
) -> Result<OperatorSet> {
    params.validate(catalog.num_items())?;
    let m = catalog.num_items() as f64;
    let c = catalog.num_categories();
    let n = graph.num_users();
    let ModelParams {
        alpha,
        beta,
        gamma,
        epsilon,
        eta,
        ..
    } = *params;

    let v = catalog.matrix();
    let vvt = v * v.transpose();
    let nv = mass(catalog);
    let nnt = &nv * nv.transpose();

    let x = DMatrix::from_fn(c, n, |o, _| eta * epsilon / m * nv[o]);
    let y = DMatrix::identity(c, c) + &vvt * (eta * (alpha * epsilon * gamma + beta) / m)
        - &nnt * (eta * alpha * epsilon * gamma / (m * m));
    let z = (&vvt - &nnt / m) * (eta * alpha * epsilon * (1.0 - gamma) / m);
    Ok(OperatorSet {
        x,
        y,
        z,
        s_tilde: graph.influence_matrix(),
        params_used: *params,
        identity_dropped: false,
    })
}

fn check_shape(u: &DMatrix<f64>, ops: &OperatorSet) -> Result<()> {
    if u.nrows() != ops.dim() || u.ncols() != ops.num_users() {
        return Err(Error::InvalidRequest(format!(
            "state is {}x{}, operators expect {}x{}",
            u.nrows(),
            u.ncols(),
            ops.dim(),
            ops.num_users()
        )));
    }
    Ok(())
}

/// `X + Y U + Z U S̃ᵀ`.
pub fn matrix_step(u: &DMatrix<f64>, ops: &OperatorSet) -> Result<DMatrix<f64>> {
    check_shape(u, ops)?;
    Ok(&ops.x + &ops.y * u + &ops.z * u * ops.s_tilde.transpose())
}

/// Expected one-step update under the first-order expansion of the
/// recommendation and feedback probabilities, evaluated user by user and
/// item by item:
///
/// `u_i + (η/m) Σ_j (αε v_jᵀs_i − (αε/m) Σ_k v_kᵀs_i + β v_jᵀu_i + ε) v_j`.
pub fn linearized_expected_update(
    u: &DMatrix<f64>,
    catalog: &ItemCatalog,
    graph: &SocialGraph,
    params: &ModelParams,
) -> Result<DMatrix<f64>> {
    let c = catalog.num_categories();
    let n = u.ncols();
    if u.nrows() != c || graph.num_users() != n {
        return Err(Error::InvalidRequest(format!(
            "state is {}x{}, catalog has {c} categories and graph {} users",
            u.nrows(),
            n,
            graph.num_users()
        )));
    }
    let m = catalog.num_items();
    let mf = m as f64;
    let ModelParams {
        alpha,
        beta,
        gamma,
        epsilon,
        eta,
        ..
    } = *params;

    let mut out = u.clone();
    for i in 0..n {
        let own: Vec<f64> = u.column(i).iter().copied().collect();
        let mut neighbor = vec![0.0; c];
        for (j, w) in graph.influence_row(i) {
            for (acc, x) in neighbor.iter_mut().zip(u.column(j).iter()) {
                *acc += w * x;
            }
        }
        let s: Vec<f64> = own
            .iter()
            .zip(&neighbor)
            .map(|(a, b)| gamma * a + (1.0 - gamma) * b)
            .collect();
        let mean_score = (0..m).map(|k| catalog.dot(k, &s)).sum::<f64>() / mf;
        let mut delta = vec![0.0; c];
        for j in 0..m {
            let g = alpha * epsilon * (catalog.dot(j, &s) - mean_score)
                + beta * catalog.dot(j, &own)
                + epsilon;
            catalog.axpy(j, g, &mut delta);
        }
        for (o, d) in delta.iter().enumerate() {
            out[(o, i)] += eta / mf * d;
        }
    }
    Ok(out)
}

/// Outcome of the sufficient-condition checks for convergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// `η(β/2 + αεγ/2 + β²/(8αεγ))`; `None` when `αεγ ≤ 0`.
    pub margin: Option<f64>,
    /// `‖Y‖∞ + ‖Z‖∞` of the operators the report was computed from.
    pub norm_bound: f64,
    pub margin_satisfied: bool,
    /// `margin < 1` or `norm_bound < 1`.
    pub satisfied: bool,
    pub degenerate: bool,
    pub identity_dropped: bool,
}

/// `η(β/2 + αεγ/2 + β²/(8αεγ))`, or `None` when `αεγ ≤ 0`.
pub fn margin(params: &ModelParams) -> Option<f64> {
    let aeg = params.alpha * params.epsilon * params.gamma;
    (aeg > 0.0).then(|| {
        params.eta * (params.beta / 2.0 + aeg / 2.0 + params.beta * params.beta / (8.0 * aeg))
    })
}

/// Upper bound on `‖Y − I‖∞ + ‖Z‖∞` for single-category catalogs: the
/// margin plus the `‖Z‖∞ ≤ ηαε(1−γ)/2` term.
pub fn analytic_norm_cap(params: &ModelParams) -> Option<f64> {
    margin(params)
        .map(|g| g + params.eta * params.alpha * params.epsilon * (1.0 - params.gamma) / 2.0)
}

/// Convergence report for `ops`, using the parameters they were built with.
pub fn convergence_margin(ops: &OperatorSet) -> ConvergenceReport {
    let margin = margin(&ops.params_used);
    let norm_bound = infinity_norm_bound(ops);
    let margin_satisfied = margin.is_some_and(|g| g < 1.0);
    ConvergenceReport {
        margin,
        norm_bound,
        margin_satisfied,
        satisfied: margin_satisfied || norm_bound < 1.0,
        degenerate: margin.is_none(),
        identity_dropped: ops.identity_dropped,
    }
}

/// Maximum absolute row sum.
pub fn infinity_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖Y‖∞ + ‖Z‖∞`.
pub fn infinity_norm_bound(ops: &OperatorSet) -> f64 {
    infinity_norm(&ops.y) + infinity_norm(&ops.z)
}

/// Column-stacking `vec(A)`.
pub fn vectorize(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Dense when `n·c ≤` [`DENSE_LIMIT`], iterative otherwise.
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub u: DMatrix<f64>,
    /// 1-norm condition estimate of the system matrix (dense solves only).
    pub condition_estimate: Option<f64>,
    pub method: SolveMethod,
    /// `‖step(U*) − U*‖∞`.
    pub residual: f64,
}

/// Solves `(I − (I⊗Y + S̃⊗Z)) vec(U*) = vec(X)`.
pub fn fixed_point(ops: &OperatorSet) -> Result<FixedPoint> {
    fixed_point_with(ops, SolveMethod::Auto)
}

pub fn fixed_point_with(ops: &OperatorSet, method: SolveMethod) -> Result<FixedPoint> {
    let c = ops.dim();
    let n = ops.num_users();
    let method = match method {
        SolveMethod::Auto if n * c <= DENSE_LIMIT => SolveMethod::Dense,
        SolveMethod::Auto => SolveMethod::Iterative,
        other => other,
    };
    let (u, condition_estimate) = match method {
        SolveMethod::Dense => {
            let (u, cond) = dense_solve(ops)?;
            (u, Some(cond))
        }
        _ => (iterative_solve(ops)?, None),
    };
    let residual = infinity_norm(&(matrix_step(&u, ops)? - &u));
    Ok(FixedPoint {
        u,
        condition_estimate,
        method,
        residual,
    })
}

/// `I − (I_n⊗Y + S̃⊗Z)`, assembled block by block.
fn system_matrix(ops: &OperatorSet) -> DMatrix<f64> {
    let c = ops.dim();
    let n = ops.num_users();
    let mut a = DMatrix::zeros(n * c, n * c);
    for bi in 0..n {
        for bj in 0..n {
            let s = ops.s_tilde[(bi, bj)];
            if s == 0.0 && bi != bj {
                continue;
            }
            for r in 0..c {
                for q in 0..c {
                    let mut v = -s * ops.z[(r, q)];
                    if bi == bj {
                        v -= ops.y[(r, q)];
                        if r == q {
                            v += 1.0;
                        }
                    }
                    a[(bi * c + r, bj * c + q)] = v;
                }
            }
        }
    }
    a
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn dense_solve(ops: &OperatorSet) -> Result<(DMatrix<f64>, f64)> {
    let a = system_matrix(ops);
    let dim = a.nrows();
    let lu = a.clone().lu();
    let lu_t = a.transpose().lu();
    let solve = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, b: &DVector<f64>| {
        lu.solve(b).filter(|x| x.iter().all(|v| v.is_finite()))
    };

    // Hager's estimate of ‖A⁻¹‖₁, with Higham's alternating-sign probe as a
    // lower-bound safeguard.
    let mut x = DVector::from_element(dim, 1.0 / dim as f64);
    let mut inv_norm = 0.0;
    for _ in 0..5 {
        let Some(y) = solve(&lu, &x) else {
            return Err(Error::SingularSystem {
                condition: f64::INFINITY,
            });
        };
        inv_norm = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = solve(&lu_t, &xi) else {
            return Err(Error::SingularSystem {
                condition: f64::INFINITY,
            });
        };
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .fold((0, f64::NEG_INFINITY), |acc, it| if it.1 > acc.1 { it } else { acc });
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(dim);
        x[jmax] = 1.0;
    }
    let probe = DVector::from_fn(dim, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        sign * (1.0 + i as f64 / (dim.max(2) - 1) as f64)
    });
    if let Some(w) = solve(&lu, &probe) {
        let alt = 2.0 * w.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * dim as f64);
        inv_norm = f64::max(inv_norm, alt);
    }
    let condition = one_norm(&a) * inv_norm;
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::SingularSystem { condition });
    }
    let b = vectorize(&ops.x);
    let sol = solve(&lu, &b).ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    Ok((unvectorize(&sol, ops.dim(), ops.num_users()), condition))
}

/// Applies `vec(U) ↦ vec(U − Y U − Z U S̃ᵀ)` without forming the Kronecker
/// product.
fn apply_system(ops: &OperatorSet, v: &DVector<f64>) -> DVector<f64> {
    let u = unvectorize(v, ops.dim(), ops.num_users());
    let out = &u - &ops.y * &u - &ops.z * &u * ops.s_tilde.transpose();
    vectorize(&out)
}

const GMRES_RESTART: usize = 60;
const GMRES_MAX_RESTARTS: usize = 500;

fn iterative_solve(ops: &OperatorSet) -> Result<DMatrix<f64>> {
    let b = vectorize(&ops.x);
    let dim = b.len();
    let mut x = DVector::zeros(dim);
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(unvectorize(&x, ops.dim(), ops.num_users()));
    }
    let tol = 1e-14 * bnorm;
    let k_max = GMRES_RESTART.min(dim);

    for _ in 0..GMRES_MAX_RESTARTS {
        let r = &b - apply_system(ops, &x);
        let beta = r.norm();
        if beta <= tol {
            break;
        }
        let mut basis: Vec<DVector<f64>> = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(k_max + 1, k_max);
        let mut cs = vec![0.0; k_max];
        let mut sn = vec![0.0; k_max];
        let mut g = DVector::<f64>::zeros(k_max + 1);
        g[0] = beta;
        let mut used = 0;
        for k in 0..k_max {
            let mut w = apply_system(ops, &basis[k]);
            // modified Gram-Schmidt
            for (i, q) in basis.iter().enumerate() {
                h[(i, k)] = w.dot(q);
                w -= q * h[(i, k)];
            }
            h[(k + 1, k)] = w.norm();
            for i in 0..k {
                let tmp = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = tmp;
            }
            let denom = h[(k, k)].hypot(h[(k + 1, k)]);
            if denom == 0.0 {
                return Err(Error::SingularSystem {
                    condition: f64::INFINITY,
                });
            }
            cs[k] = h[(k, k)] / denom;
            sn[k] = h[(k + 1, k)] / denom;
            let hk1 = h[(k + 1, k)];
            h[(k, k)] = cs[k] * h[(k, k)] + sn[k] * hk1;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            used = k + 1;
            let next_norm = w.norm();
            if g[k + 1].abs() <= tol || next_norm == 0.0 {
                break;
            }
            basis.push(w / next_norm);
        }
        // back substitution on the triangular system
        let mut yk = vec![0.0; used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for j in i + 1..used {
                acc -= h[(i, j)] * yk[j];
            }
            yk[i] = acc / h[(i, i)];
        }
        for (i, coef) in yk.iter().enumerate() {
            x += &basis[i] * *coef;
        }
    }
    let r = &b - apply_system(ops, &x);
    if r.norm() > 1e-10 * bnorm.max(1.0) {
        return Err(Error::Numerical(format!(
            "iterative fixed-point solve stalled at residual {:e}",
            r.norm()
        )));
    }
    Ok(unvectorize(&x, ops.dim(), ops.num_users()))
}

/// One step of the deterministic map `u^(o) ← (1 + λ n_o) u^(o)`.
pub fn coordinate_scaling_step(u: &mut [f64], category_mass: &DVector<f64>, lambda: f64) {
    for (x, n) in u.iter_mut().zip(category_mass.iter()) {
        *x *= 1.0 + lambda * n;
    }
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The sufficient condition for the coordinate-scaling map to increase
/// `u_iᵀu_j`, evaluated at dimension `k`.
pub fn homogenization_condition(
    u_i: &[f64],
    u_j: &[f64],
    k: usize,
    category_mass: &DVector<f64>,
    lambda: f64,
) -> Result<bool> {
    let c = category_mass.len();
    if u_i.len() != c || u_j.len() != c {
        return Err(Error::InvalidRequest(format!(
            "vectors must have {c} coordinates"
        )));
    }
    if k >= c {
        return Err(Error::IndexOutOfRange { index: k, bound: c });
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidRequest("lambda must be > 0".into()));
    }
    let w = |n: f64| 2.0 * n + lambda * n * n;
    let rest: f64 = (0..c).filter(|&l| l != k).map(|l| w(category_mass[l])).sum();
    if rest <= 0.0 {
        return Err(Error::DegenerateCatalog(format!(
            "no mass outside category {k}"
        )));
    }
    let ratio = w(category_mass[k]) / rest;
    let rhs = norm(u_i) * norm(u_j) / (1.0 + ratio * ratio).sqrt();
    Ok(u_i[k] * u_j[k] >= rhs)
}

/// Index of the largest category mass (lowest index on ties).
pub fn dominant_category(category_mass: &DVector<f64>) -> usize {
    let mut best = 0;
    for (o, &n) in category_mass.iter().enumerate() {
        if n > category_mass[best] {
            best = o;
        }
    }
    best
}

/// Slack allowed when comparing consecutive inner products, relative to
/// their magnitude.
pub const MONOTONE_TOLERANCE: f64 = 1e-12;

/// Runs `steps` coordinate-scaling steps on a pair and returns the first
/// step at which `u_iᵀu_j` decreased, if any.
pub fn first_inner_product_decrease(
    u_i: &[f64],
    u_j: &[f64],
    category_mass: &DVector<f64>,
    lambda: f64,
    steps: usize,
) -> Option<usize> {
    let mut a = u_i.to_vec();
    let mut b = u_j.to_vec();
    let mut prev = dot(&a, &b);
    for t in 0..steps {
        coordinate_scaling_step(&mut a, category_mass, lambda);
        coordinate_scaling_step(&mut b, category_mass, lambda);
        let next = dot(&a, &b);
        if next < prev - MONOTONE_TOLERANCE * prev.abs().max(1.0) {
            return Some(t);
        }
        prev = next;
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairViolation {
    pub i: usize,
    pub j: usize,
    pub step: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HomogenizationReport {
    pub k: usize,
    pub steps: usize,
    /// Pairs that satisfy the condition at `t = 0` and were checked.
    pub checked_pairs: usize,
    /// Pairs that did not satisfy the condition and were left out.
    pub excluded_pairs: Vec<(usize, usize)>,
    pub violations: Vec<PairViolation>,
}

/// Checks that `u_iᵀu_j` never decreases over `steps` scaling steps for every
/// pair of columns of `u0` satisfying the condition at the dominant category.
pub fn steady_homogenization_check(
    u0: &DMatrix<f64>,
    catalog: &ItemCatalog,
    params: &ModelParams,
    steps: usize,
) -> Result<HomogenizationReport> {
    if params.epsilon != 0.0 || params.gamma != 1.0 {
        return Err(Error::InvalidRequest(
            "the coordinate-scaling map needs epsilon = 0 and gamma = 1".into(),
        ));
    }
    if !catalog.is_single_category() {
        return Err(Error::DegenerateCatalog(
            "the homogenization check needs a single-category catalog".into(),
        ));
    }
    let mass = mass(catalog);
    let k = dominant_category(&mass);
    let mut report = HomogenizationReport {
        k,
        steps,
        ..Default::default()
    };
    if steps == 0 {
        return Ok(report);
    }
    let lambda = params.lambda(catalog.num_items());
    let cols: Vec<Vec<f64>> = u0.column_iter().map(|c| c.iter().copied().collect()).collect();
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            if !homogenization_condition(&cols[i], &cols[j], k, &mass, lambda)? {
                report.excluded_pairs.push((i, j));
                continue;
            }
            report.checked_pairs += 1;
            if let Some(step) = first_inner_product_decrease(&cols[i], &cols[j], &mass, lambda, steps)
            {
                report.violations.push(PairViolation { i, j, step });
            }
        }
    }
    Ok(report)
}

/// Entropy of the category distribution `p_o ∝ n_o e^{α u^(o)}`, with
/// `0 ln 0 = 0`.
pub fn category_distribution_entropy(u: &[f64], category_mass: &DVector<f64>, alpha: f64) -> f64 {
    let logits: Vec<f64> = u
        .iter()
        .zip(category_mass.iter())
        .map(|(&x, &n)| if n > 0.0 { n.ln() + alpha * x } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|w| {
            let p = w / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// `H(t)` for `t = 0..steps` along the coordinate-scaling map started at
/// `u0`.
pub fn expected_entropy_series(
    u0: &[f64],
    category_mass: &DVector<f64>,
    alpha: f64,
    lambda: f64,
    steps: usize,
) -> Vec<f64> {
    let mut u = u0.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(category_distribution_entropy(&u, category_mass, alpha));
        coordinate_scaling_step(&mut u, category_mass, lambda);
    }
    out
}

/// First index `t` with `H(t+1) > H(t) + tol`, if any.
pub fn first_entropy_increase(series: &[f64], tol: f64) -> Option<usize> {
    series.windows(2).position(|w| w[1] > w[0] + tol)
}

/// A small random instance for self-checks: catalog, graph and state.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub catalog: ItemCatalog,
    pub graph: SocialGraph,
    pub u: DMatrix<f64>,
}

/// Draws a random catalog (optionally with multi-category items), a random
/// directed graph and a Gaussian state. Every category gets at least one
/// item.
pub fn random_instance(
    seed: u64,
    n: usize,
    c: usize,
    m: usize,
    multi_category: bool,
) -> Result<RandomInstance> {
    if m < c || n == 0 || c == 0 {
        return Err(Error::InvalidRequest(
            "random instance needs n >= 1, c >= 1 and m >= c".into(),
        ));
    }
    let mut rng = rng::stream(seed, Purpose::Catalog, 0, 0);
    let sets: Vec<Vec<usize>> = (0..m)
        .map(|j| {
            let first = if j < c { j } else { rng.random_range(0..c) };
            let mut set = vec![first];
            if multi_category && c > 1 && rng.random_bool(0.3) {
                let extra = rng.random_range(0..c);
                if extra != first {
                    set.push(extra);
                }
            }
            set
        })
        .collect();
    let catalog = ItemCatalog::from_category_sets(sets, c)?;

    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    let graph = SocialGraph::new(edges, n)?;
    let u = DMatrix::from_fn(c, n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
    Ok(RandomInstance { catalog, graph, u })
}

/// Result of one built-in theory check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Runs the built-in theory checks used by the command line.
pub fn verification_report(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for r in 0..100u64 {
        let inst = random_instance(seed.wrapping_add(r), 2 + (r % 9) as usize, 1 + (r % 5) as usize, 10 + (r % 41) as usize, r % 2 == 1)?;
        let params = ModelParams {
            alpha: 0.5,
            beta: 0.7,
            gamma: 0.4,
            epsilon: 0.2,
            eta: 0.1,
            h: 1,
        };
        let ops = build_operators(&inst.catalog, &inst.graph, &params)?;
        let a = matrix_step(&inst.u, &ops)?;
        let b = linearized_expected_update(&inst.u, &inst.catalog, &inst.graph, &params)?;
        worst = worst.max(infinity_norm(&(a - b)));
    }
    out.push(CheckOutcome {
        name: "matrix form equals per-user linearized update".into(),
        passed: worst <= 1e-12,
        detail: format!("max deviation {worst:e} over 100 instances"),
    });

    let params = ModelParams {
        alpha: 1.0,
        beta: 1.0,
        gamma: 0.5,
        epsilon: 0.2,
        eta: 0.05,
        h: 1,
    };
    let inst = random_instance(seed, 20, 5, 50, false)?;
    let printed = build_operators(&inst.catalog, &inst.graph, &params)?;
    let printed_report = convergence_margin(&printed);
    let ops = printed.without_identity();
    let report = convergence_margin(&ops);
    out.push(CheckOutcome {
        name: "convergence condition".into(),
        passed: report.satisfied,
        detail: format!(
            "margin {:?}, norm bound {:.6} (with identity kept: {:.6})",
            report.margin, report.norm_bound, printed_report.norm_bound
        ),
    });
    let fp = fixed_point(&ops)?;
    let mut u = inst.u.clone();
    let mut gap = f64::INFINITY;
    for _ in 0..10_000 {
        u = matrix_step(&u, &ops)?;
        gap = infinity_norm(&(&u - &fp.u));
        if gap <= 1e-8 {
            break;
        }
    }
    out.push(CheckOutcome {
        name: "iteration reaches the closed-form fixed point".into(),
        passed: gap <= 1e-8 && fp.residual <= 1e-10 * (1.0 + infinity_norm(&fp.u)),
        detail: format!("gap {gap:e}, residual {:e}", fp.residual),
    });

    let c = 10;
    let m = 1000;
    let labels: Vec<usize> = (0..m).map(|j| j % c).collect();
    let catalog = ItemCatalog::single_category(&labels, c)?;
    let mass = mass(&catalog);
    let lambda = ModelParams::default().lambda(m);
    let mut rng = rng::stream(seed, Purpose::UserInit, 1, 0);
    let mut entropy_violations = 0;
    for _ in 0..100 {
        let u0: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
        let series = expected_entropy_series(&u0, &mass, 5.0, lambda, 200);
        if first_entropy_increase(&series, 1e-12).is_some() {
            entropy_violations += 1;
        }
    }
    out.push(CheckOutcome {
        name: "recommended-category entropy is non-increasing".into(),
        passed: entropy_violations == 0,
        detail: format!("{entropy_violations} of 100 users increased"),
    });
    Ok(out)
}
