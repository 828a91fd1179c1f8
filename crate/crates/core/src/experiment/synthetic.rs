//! Synthetic datasets: uniform categories, random unit users and uniformly
//! sampled directed links.

use std::path::Path;

use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;

use crate::catalog::{random_unit_vector, ItemCatalog, SocialGraph, UserStates};
use crate::error::{Error, Result};
use crate::experiment::io;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub catalog: ItemCatalog,
    pub states: UserStates,
    pub graph: SocialGraph,
}

/// Generates a dataset of `n` users, `m` single-category items over `c`
/// categories and `links` distinct directed links. Deterministic in `seed`.
pub fn generate_synthetic(
    n: usize,
    m: usize,
    c: usize,
    links: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 || m == 0 || c == 0 {
        return Err(Error::InvalidRequest("n, m and c must be positive".into()));
    }
    let possible = n
        .checked_mul(n - 1)
        .ok_or_else(|| Error::InvalidRequest("n is too large".into()))?;
    if links > possible {
        return Err(Error::InvalidRequest(format!(
            "{links} links requested but only {possible} ordered pairs exist"
        )));
    }

    let mut rng = rng::stream(seed, Purpose::Catalog, 0, 0);
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
    let catalog = ItemCatalog::single_category(&labels, c)?;

    let columns: Vec<DVector<f64>> = (0..n)
        .map(|i| random_unit_vector(&mut rng::stream(seed, Purpose::UserInit, 1, i as u64), c))
        .collect();
    let states = UserStates::from_columns(&columns);

    let mut rng = rng::stream(seed, Purpose::Links, 0, 0);
    let edges = index::sample(&mut rng, possible, links).into_iter().map(|k| {
        let i = k / (n - 1);
        let r = k % (n - 1);
        (i, if r >= i { r + 1 } else { r })
    });
    let graph = SocialGraph::new(edges, n)?;
    Ok(SyntheticDataset {
        catalog,
        states,
        graph,
    })
}

/// Writes `items.csv`, `trust.csv` and `initial_states.csv` into `dir`.
pub fn write_synthetic(dataset: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_items(&dataset.catalog, &dir.join("items.csv"))?;
    io::write_trust(&dataset.graph, &dir.join("trust.csv"))?;
    io::export_states(&dataset.states, &dir.join("initial_states.csv"))
}
