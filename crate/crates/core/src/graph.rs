//! Item–item co-purchase graph: `E = XᵀX` computed sparsely, then
//! discretised into an unweighted, loop-free, symmetric neighbourhood
//! structure with threshold `ε`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};

/// Sparse symmetric co-purchase counts. Row `i` lists `(j, E_ij)` for every
/// `j` sharing at least one user with `i`, sorted by `j`, diagonal included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoPurchase {
    rows: Vec<Vec<(usize, u32)>>,
}

impl CoPurchase {
    pub fn n_items(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, u32)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(0, |k| self.rows[i][k].1)
    }

    pub fn to_dense(&self) -> Array2<u32> {
        let n = self.n_items();
        let mut e = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                e[[i, j]] = v;
            }
        }
        e
    }
}

/// `E = XᵀX`, touching only item pairs that co-occur under some user.
pub fn build_copurchase(x: &InteractionMatrix) -> CoPurchase {
    let mut acc: Vec<HashMap<usize, u32>> = vec![HashMap::new(); x.n_items()];
    for u in 0..x.n_users() {
        let items = x.user_items(u);
        for &i in items {
            let row = &mut acc[i];
            for &j in items {
                *row.entry(j).or_insert(0) += 1;
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|m| {
            let mut r: Vec<(usize, u32)> = m.into_iter().collect();
            r.sort_unstable();
            r
        })
        .collect();
    CoPurchase { rows }
}

/// Unweighted item graph with `j ∈ N(i) ⇔ E_ij ≥ ε ∧ i ≠ j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemGraph {
    epsilon: u32,
    adjacency: Vec<Vec<usize>>,
}

impl ItemGraph {
    pub fn from_adjacency(epsilon: u32, mut adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.sort_unstable();
            nbrs.dedup();
            if nbrs.binary_search(&i).is_ok() {
                return Err(Error::Input(format!("self-loop on item {i}")));
            }
            if nbrs.last().is_some_and(|&j| j >= n) {
                return Err(Error::Shape(format!("neighbour index out of range for item {i}")));
            }
        }
        for (i, nbrs) in adjacency.iter().enumerate() {
            if nbrs.iter().any(|&j| adjacency[j].binary_search(&i).is_err()) {
                return Err(Error::Input(format!("asymmetric edge at item {i}")));
            }
        }
        Ok(ItemGraph { epsilon, adjacency })
    }

    /// Graph without edges; every node is isolated.
    pub fn empty(n_items: usize) -> Self {
        ItemGraph {
            epsilon: u32::MAX,
            adjacency: vec![Vec::new(); n_items],
        }
    }

    pub fn n_items(&self) -> usize {
        self.adjacency.len()
    }

    pub fn epsilon(&self) -> u32 {
        self.epsilon
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }
}

pub fn threshold_graph(e: &CoPurchase, epsilon: i64) -> Result<ItemGraph> {
    if epsilon < 1 || epsilon > u32::MAX as i64 {
        return Err(Error::Config(format!("epsilon must be a positive integer, got {epsilon}")));
    }
    let eps = epsilon as u32;
    let adjacency = e
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .filter(|&&(j, v)| j != i && v >= eps)
                .map(|&(j, _)| j)
                .collect()
        })
        .collect();
    Ok(ItemGraph {
        epsilon: eps,
        adjacency,
    })
}

/// SHA-256 over the user-major entry list of `X`.
pub fn interaction_checksum(x: &InteractionMatrix) -> String {
    let mut h = Sha256::new();
    h.update((x.n_users() as u64).to_le_bytes());
    h.update((x.n_items() as u64).to_le_bytes());
    for u in 0..x.n_users() {
        h.update((x.user_items(u).len() as u64).to_le_bytes());
        for &i in x.user_items(u) {
            h.update((i as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Writes the graph as `# epsilon=<ε> items=<n> checksum=<hex>` followed by
/// one `i<TAB>j` line per undirected edge.
pub fn save_graph_cache(path: &Path, graph: &ItemGraph, checksum: &str) -> Result<()> {
    let mut out = format!(
        "# epsilon={} items={} checksum={}\n",
        graph.epsilon,
        graph.n_items(),
        checksum
    )
    .into_bytes();
    for (i, j) in graph.edges() {
        writeln!(out, "{i}\t{j}").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Returns the cached graph when the file exists and was built with the
/// same `ε` and interaction checksum; `None` when stale or absent.
pub fn load_graph_cache(path: &Path, epsilon: u32, checksum: &str) -> Result<Option<ItemGraph>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let mut fields = HashMap::new();
    for kv in header.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = kv.split_once('=') {
            fields.insert(k, v);
        }
    }
    let eps_ok = fields.get("epsilon").and_then(|v| v.parse::<u32>().ok()) == Some(epsilon);
    if !eps_ok || fields.get("checksum") != Some(&checksum) {
        return Ok(None);
    }
    let n: usize = fields
        .get("items")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "missing item count"))?;
    let mut adjacency = vec![Vec::new(); n];
    for (k, line) in lines.enumerate() {
        let parse = |s: Option<&str>| s.and_then(|v| v.parse::<usize>().ok());
        let mut it = line.split('\t');
        match (parse(it.next()), parse(it.next())) {
            (Some(i), Some(j)) if i < n && j < n => {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
            _ => return Err(Error::parse(path, k + 2, "expected `i<TAB>j`")),
        }
    }
    ItemGraph::from_adjacency(epsilon, adjacency).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn x_example() -> InteractionMatrix {
        InteractionMatrix::from_dense(&array![[1, 1, 0], [1, 1, 1]])
    }

    #[test]
    fn hand_example_copurchase() {
        let e = build_copurchase(&x_example());
        // Item 2 is held by one user, so E[2,2] = 1.
        assert_eq!(e.to_dense(), array![[2, 2, 1], [2, 2, 1], [1, 1, 1]]);
    }

    #[test]
    fn zero_x_gives_zero_e() {
        let e = build_copurchase(&InteractionMatrix::from_dense(&Array2::zeros((3, 4))));
        assert!(e.to_dense().iter().all(|&v| v == 0));
    }

    #[test]
    fn hand_example_thresholds() {
        let e = build_copurchase(&x_example());
        let g2 = threshold_graph(&e, 2).unwrap();
        assert_eq!(g2.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(g2.neighbors(0), &[1]);
        assert_eq!(g2.neighbors(1), &[0]);
        assert!(g2.neighbors(2).is_empty());
        let g1 = threshold_graph(&e, 1).unwrap();
        let directed: usize = (0..3).map(|i| g1.degree(i)).sum();
        assert_eq!(directed, 6);
        assert!(threshold_graph(&e, 0).is_err());
        assert!(threshold_graph(&e, -3).is_err());
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        let x = x_example();
        let g = threshold_graph(&build_copurchase(&x), 1).unwrap();
        let sum = interaction_checksum(&x);
        save_graph_cache(&p, &g, &sum).unwrap();
        assert_eq!(load_graph_cache(&p, 1, &sum).unwrap(), Some(g));
        assert_eq!(load_graph_cache(&p, 2, &sum).unwrap(), None);
        assert_eq!(load_graph_cache(&p, 1, "deadbeef").unwrap(), None);
        assert_eq!(load_graph_cache(&dir.path().join("nope"), 1, &sum).unwrap(), None);
    }

    fn binary_matrix() -> impl Strategy<Value = Array2<u8>> {
        (1usize..12, 1usize..15).prop_flat_map(|(u, i)| {
            proptest::collection::vec(prop::bool::weighted(0.35), u * i).prop_map(move |v| {
                Array2::from_shape_vec((u, i), v.into_iter().map(u8::from).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn graph_is_symmetric_loop_free_and_monotone(x in binary_matrix(), e1 in 1i64..4, extra in 0i64..3) {
            let e = build_copurchase(&InteractionMatrix::from_dense(&x));
            let lo = threshold_graph(&e, e1).unwrap();
            let hi = threshold_graph(&e, e1 + extra).unwrap();
            for i in 0..lo.n_items() {
                prop_assert!(!lo.neighbors(i).contains(&i));
                for &j in lo.neighbors(i) {
                    prop_assert!(lo.neighbors(j).contains(&i));
                    prop_assert!(e.get(i, j) as i64 >= e1);
                }
                for &j in hi.neighbors(i) {
                    prop_assert!(lo.neighbors(i).contains(&j));
                }
            }
        }
    }
}
