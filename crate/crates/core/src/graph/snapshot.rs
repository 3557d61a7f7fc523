use crate::error::{CoevoError, Result};

/// One time step of graph structure.
///
/// The directed edge list is kept as ingested (deduplicated, weights summed).
/// Aggregation and link prediction use the undirected view, in which every
/// directed edge connects both endpoints and self-loops are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotGraph {
    n: usize,
    edges: Vec<(u32, u32, f64)>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl SnapshotGraph {
    pub fn empty(n: usize) -> Self {
        SnapshotGraph {
            n,
            edges: Vec::new(),
            offsets: vec![0; n + 1],
            neighbors: Vec::new(),
        }
    }

    /// Builds a snapshot from directed weighted edges. Repeated `(src, dst)`
    /// pairs are merged with summed weights.
    pub fn from_directed<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut list = Vec::new();
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(CoevoError::Contract(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            list.push((u as u32, v as u32, w));
        }
        list.sort_by_key(|a| (a.0, a.1));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(list.len());
        for (u, v, w) in list {
            match merged.last_mut() {
                Some(last) if last.0 == u && last.1 == v => last.2 += w,
                _ => merged.push((u, v, w)),
            }
        }

        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(u, v, _) in &merged {
            if u != v {
                adjacency[u as usize].push(v);
                adjacency[v as usize].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adjacency {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        Ok(SnapshotGraph {
            n,
            edges: merged,
            offsets,
            neighbors,
        })
    }

    /// Builds a snapshot from unweighted undirected pairs, storing each pair
    /// once as `(min, max)`.
    pub fn from_undirected<I>(n: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut seen: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        Self::from_directed(n, seen.into_iter().map(|(u, v)| (u, v, 1.0)))
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of distinct directed edges, self-loops included.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn directed_edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    /// Sorted undirected neighbors of `v`, excluding `v` itself.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .map(|&v| v as usize)
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn undirected_edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Per-node (in-degree, out-degree) over distinct directed edges.
    pub fn directed_degrees(&self) -> (Vec<usize>, Vec<usize>) {
        let mut indeg = vec![0; self.n];
        let mut outdeg = vec![0; self.n];
        for &(u, v, _) in &self.edges {
            outdeg[u as usize] += 1;
            indeg[v as usize] += 1;
        }
        (indeg, outdeg)
    }
}

/// Sparse node-by-attribute matrix with at most one entry per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMatrix {
    r: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl AttributeMatrix {
    pub fn zeros(n: usize, r: usize) -> Self {
        AttributeMatrix {
            r,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.r
    }

    /// Sets one cell and returns whether an existing entry was overwritten.
    pub fn set(&mut self, node: usize, attr: usize, value: f64) -> Result<bool> {
        if node >= self.rows.len() || attr >= self.r {
            return Err(CoevoError::Contract(format!(
                "attribute cell ({node}, {attr}) out of range for {}x{}",
                self.rows.len(),
                self.r
            )));
        }
        let row = &mut self.rows[node];
        match row.binary_search_by_key(&(attr as u32), |e| e.0) {
            Ok(i) => {
                row[i].1 = value;
                Ok(true)
            }
            Err(i) => {
                row.insert(i, (attr as u32, value));
                Ok(false)
            }
        }
    }

    pub fn get(&self, node: usize, attr: usize) -> f64 {
        let row = &self.rows[node];
        row.binary_search_by_key(&(attr as u32), |e| e.0)
            .map(|i| row[i].1)
            .unwrap_or(0.0)
    }

    /// Stored entries of one node, sorted by attribute index.
    pub fn row(&self, node: usize) -> &[(u32, f64)] {
        &self.rows[node]
    }

    /// Attribute indices with a nonzero value.
    pub fn support(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[node]
            .iter()
            .filter(|e| e.1 != 0.0)
            .map(|e| e.0 as usize)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(v, row)| row.iter().map(move |&(a, x)| (v, a as usize, x)))
    }

    /// Dense row-major copy.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len() * self.r];
        for (v, a, x) in self.entries() {
            out[v * self.r + a] = x;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_duplicates_and_builds_undirected_view() {
        let g = SnapshotGraph::from_directed(
            4,
            [(0, 1, 1.0), (0, 1, 2.5), (1, 0, 1.0), (2, 2, 1.0), (3, 1, 1.0)],
        )
        .unwrap();
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.directed_edges()[0], (0, 1, 3.5));
        assert_eq!(g.neighbors(1), &[0, 3]);
        assert_eq!(g.neighbors(2), &[] as &[u32]);
        assert!(g.has_edge(1, 3) && g.has_edge(3, 1) && !g.has_edge(2, 2));
        assert_eq!(g.undirected_edges().collect::<Vec<_>>(), vec![(0, 1), (1, 3)]);
        assert_eq!(g.undirected_edge_count(), 2);
    }

    #[test]
    fn rejects_out_of_range_nodes() {
        assert!(SnapshotGraph::from_directed(2, [(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn degree_counts() {
        // node 0: two out-edges and one in-edge
        let g = SnapshotGraph::from_directed(4, [(0, 1, 1.0), (0, 2, 1.0), (3, 0, 1.0)]).unwrap();
        let (indeg, outdeg) = g.directed_degrees();
        assert_eq!((indeg[0], outdeg[0]), (1, 2));
        assert_eq!(indeg.iter().sum::<usize>(), g.edge_count());
    }

    #[test]
    fn attribute_cells() {
        let mut x = AttributeMatrix::zeros(3, 4);
        assert!(!x.set(1, 2, 5.0).unwrap());
        assert!(x.set(1, 2, 6.0).unwrap());
        x.set(1, 0, 0.0).unwrap();
        assert_eq!(x.get(1, 2), 6.0);
        assert_eq!(x.support(1).collect::<Vec<_>>(), vec![2]);
        assert!(x.set(3, 0, 1.0).is_err());
        assert!(x.set(0, 4, 1.0).is_err());
        assert_eq!(x.dense()[4 + 2], 6.0);
    }
}
