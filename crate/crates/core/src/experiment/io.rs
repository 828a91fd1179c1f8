//! CSV ingestion and export.
//!
//! All inputs are comma-separated UTF-8 without quoting requirements. A
//! first row whose leading field is the documented column name (`item_id`,
//! `user_id`, `truster_id`) is treated as a header and skipped.
//!
//! - items: `item_id,category_ids` with categories separated by `;`
//! - interactions: `user_id,item_id,rating`
//! - trust: `truster_id,trustee_id`

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};
use nalgebra::DMatrix;

use crate::catalog::{ItemCatalog, SocialGraph, UserStates};
use crate::error::{Error, Result};

/// Ratings at or above this count as positive feedback.
pub const POSITIVE_RATING: f64 = 3.0;

/// Ids seen in a file, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Interactions {
    pub catalog: ItemCatalog,
    pub items: IdMap,
    pub categories: IdMap,
    pub users: IdMap,
    pub histories: Vec<History>,
}

#[derive(Debug, Clone)]
pub struct TrustGraph {
    pub graph: SocialGraph,
    pub self_loops_dropped: usize,
    pub duplicates_merged: usize,
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

/// Reads every record with its 1-based line number, skipping a header row
/// whose first field equals `header`.
fn records(path: &Path, header: &str) -> Result<Vec<(u64, StringRecord)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if k == 0 && rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case(header)) {
            continue;
        }
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<'r>(path: &Path, line: u64, rec: &'r StringRecord, i: usize, name: &str) -> Result<&'r str> {
    match rec.get(i) {
        Some(f) if !f.is_empty() => Ok(f),
        _ => Err(parse_error(path, line, format!("missing {name}"))),
    }
}

/// Reads the items file and the interactions file.
pub fn ingest_interactions(interactions: &Path, items: &Path) -> Result<Interactions> {
    let mut item_ids = IdMap::default();
    let mut categories = IdMap::default();
    let mut sets = Vec::new();
    for (line, rec) in records(items, "item_id")? {
        let id = field(items, line, &rec, 0, "item_id")?;
        if item_ids.get(id).is_some() {
            return Err(parse_error(items, line, format!("duplicate item id {id}")));
        }
        let cats = field(items, line, &rec, 1, "category_ids")?;
        let set: Vec<usize> = cats
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|label| categories.intern(label))
            .collect();
        if set.is_empty() {
            return Err(parse_error(items, line, format!("item {id} has no categories")));
        }
        item_ids.intern(id);
        sets.push(set);
    }
    if sets.is_empty() {
        return Err(parse_error(items, 0, "no items"));
    }
    let catalog = ItemCatalog::from_category_sets(sets, categories.len())?;

    let mut users = IdMap::default();
    let mut histories: Vec<History> = Vec::new();
    for (line, rec) in records(interactions, "user_id")? {
        let user = field(interactions, line, &rec, 0, "user_id")?;
        let item = field(interactions, line, &rec, 1, "item_id")?;
        let rating = field(interactions, line, &rec, 2, "rating")?;
        let j = item_ids
            .get(item)
            .ok_or_else(|| parse_error(interactions, line, format!("unknown item {item}")))?;
        let rating: f64 = rating
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| parse_error(interactions, line, format!("rating {rating:?} is not a number")))?;
        let i = users.intern(user);
        if i == histories.len() {
            histories.push(History::default());
        }
        if rating >= POSITIVE_RATING {
            histories[i].positives.push(j);
        } else {
            histories[i].negatives.push(j);
        }
    }
    Ok(Interactions {
        catalog,
        items: item_ids,
        categories,
        users,
        histories,
    })
}

/// Reads the trust file against the known users. Self-loops are dropped and
/// counted; duplicates are merged.
pub fn ingest_trust(path: &Path, users: &IdMap) -> Result<TrustGraph> {
    let mut edges = Vec::new();
    let mut self_loops_dropped = 0;
    for (line, rec) in records(path, "truster_id")? {
        let mut ends = [0usize; 2];
        for (k, name) in ["truster_id", "trustee_id"].into_iter().enumerate() {
            let id = field(path, line, &rec, k, name)?;
            ends[k] = users
                .get(id)
                .ok_or_else(|| parse_error(path, line, format!("unknown user {id}")))?;
        }
        if ends[0] == ends[1] {
            self_loops_dropped += 1;
            continue;
        }
        edges.push((ends[0], ends[1]));
    }
    let total = edges.len();
    let graph = SocialGraph::new(edges, users.len())?;
    if self_loops_dropped > 0 {
        log::warn!("{}: dropped {self_loops_dropped} self-loops", path.display());
    }
    Ok(TrustGraph {
        duplicates_merged: total - graph.edges().len(),
        graph,
        self_loops_dropped,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the normalized state as `user_id,coord_0,…,coord_{c−1}`.
pub fn export_states(states: &UserStates, path: &Path) -> Result<()> {
    let units = states.normalized();
    let c = units.nrows();
    let mut w = create(path)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(w, "user_id")?;
        for o in 0..c {
            write!(w, ",coord_{o}")?;
        }
        writeln!(w)?;
        for (i, col) in units.column_iter().enumerate() {
            write!(w, "{i}")?;
            for x in col.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_states`] back into a `c × n` matrix.
pub fn read_states(path: &Path) -> Result<DMatrix<f64>> {
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in records(path, "user_id")? {
        let i: usize = field(path, line, &rec, 0, "user_id")?
            .parse()
            .map_err(|_| parse_error(path, line, "user_id is not an index"))?;
        if i != columns.len() {
            return Err(parse_error(path, line, format!("expected user {}", columns.len())));
        }
        let col = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        if columns.first().is_some_and(|c0| c0.len() != col.len()) {
            return Err(parse_error(path, line, "ragged row"));
        }
        columns.push(col);
    }
    let c = columns.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(c, columns.len(), |o, i| columns[i][o]))
}

/// Writes a catalog as an items file with numeric ids and category labels.
pub fn write_items(catalog: &ItemCatalog, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "item_id,category_ids")?;
        for j in 0..catalog.num_items() {
            let cats: Vec<String> = catalog.categories(j).iter().map(|c| c.to_string()).collect();
            writeln!(w, "{j},{}", cats.join(";"))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Writes the directed edge list as a trust file.
pub fn write_trust(graph: &SocialGraph, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "truster_id,trustee_id")?;
        for &(i, j) in graph.edges() {
            writeln!(w, "{i},{j}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn interactions_examples() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(dir.path(), "items.csv", "item_id,category_ids\nA,x\nB,y;x\n");
        let inter = write(dir.path(), "inter.csv", "u1,A,5\nu2,B,3\nu1,B,2\n");
        let data = ingest_interactions(&inter, &items).unwrap();
        assert_eq!(data.catalog.num_items(), 2);
        assert_eq!(data.catalog.num_categories(), 2);
        assert_eq!(data.catalog.categories(1), &[0, 1]);
        assert_eq!(data.users.ids(), &["u1".to_string(), "u2".to_string()]);
        assert_eq!(data.histories[0], History { positives: vec![0], negatives: vec![1] });
        assert_eq!(data.histories[1], History { positives: vec![1], negatives: vec![] });
    }

    #[test]
    fn interactions_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(dir.path(), "items.csv", "A,0\n");
        let inter = write(dir.path(), "inter.csv", "u1,A,5\nu1,Z,4\n");
        match ingest_interactions(&inter, &items) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let inter = write(dir.path(), "inter.csv", "user_id,item_id,rating\nu1,A,five\n");
        match ingest_interactions(&inter, &items) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            ingest_interactions(&dir.path().join("missing.csv"), &items),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn trust_examples() {
        let dir = tempfile::tempdir().unwrap();
        let mut users = IdMap::default();
        users.intern("0");
        users.intern("1");
        let p = write(dir.path(), "t.csv", "0,1\n1,0\n");
        assert_eq!(ingest_trust(&p, &users).unwrap().graph.edges().len(), 2);

        let p = write(dir.path(), "t.csv", "0,0\n0,1\n0,1\n");
        let t = ingest_trust(&p, &users).unwrap();
        assert_eq!(t.self_loops_dropped, 1);
        assert_eq!(t.duplicates_merged, 1);
        assert_eq!(t.graph.edges(), &[(0, 1)]);

        let p = write(dir.path(), "t.csv", "0,7\n");
        assert!(matches!(ingest_trust(&p, &users), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn states_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = UserStates::from_columns(&[
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ]);
        export_states(&s, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "user_id,coord_0,coord_1\n0,1,0\n1,0,1\n"
        );

        let s = UserStates::from_columns(&[
            DVector::from_vec(vec![0.3, -1.7, 2.2]),
            DVector::from_vec(vec![1e-3, 4.0, 0.1]),
        ]);
        export_states(&s, &p).unwrap();
        let back = read_states(&p).unwrap();
        assert!((back - s.normalized()).amax() <= 1e-15);

        assert!(matches!(
            export_states(&s, &dir.path().join("no/such/dir/s.csv")),
            Err(Error::Io { .. })
        ));
    }
}
