//! The discretized environment: a `c x c` lattice with self-edges, and the
//! uniform-over-neighbours transition matrix of the walk on it.
//!
//! Nodes are labelled `1..=c*c` in row-major order starting from the bottom-left
//! corner, so label 1 is the bottom-left node and label `c` the bottom-right.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result, SquareMatrix};

/// Tolerance on row sums when validating a stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A grid node. Stored zero-based, displayed and serialized by its 1-based label.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node(usize);

impl Node {
    /// Node with the given 1-based label; `None` for label 0.
    pub fn from_label(label: usize) -> Option<Self> {
        label.checked_sub(1).map(Node)
    }

    #[inline]
    pub const fn from_index(index: usize) -> Self {
        Node(index)
    }

    /// Zero-based position, suitable for indexing matrices.
    #[inline]
    pub const fn index(self) -> usize {
        self.0
    }

    /// 1-based label.
    #[inline]
    pub const fn label(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Node({})", self.label())
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.label() as u64)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let label = u64::deserialize(d)?;
        Node::from_label(label as usize)
            .ok_or_else(|| serde::de::Error::custom("node labels start at 1"))
    }
}

/// Square lattice graph with self-edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    side: usize,
    spacing: f64,
    // Neighbours of each node including the node itself, ascending.
    neighbors: Vec<Vec<usize>>,
}

impl SpatialGrid {
    pub fn new(side: usize, spacing: f64) -> Result<Self> {
        if side == 0 {
            return Err(Error::config("grid_dim", "must be at least 1"));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::config(
                "spacing",
                format!("must be positive, got {spacing}"),
            ));
        }
        let count = side
            .checked_mul(side)
            .ok_or_else(|| Error::config("grid_dim", "node count overflows"))?;
        let neighbors = (0..count)
            .map(|i| {
                let (col, row) = (i % side, i / side);
                let mut adj = Vec::with_capacity(5);
                if row > 0 {
                    adj.push(i - side);
                }
                if col > 0 {
                    adj.push(i - 1);
                }
                adj.push(i);
                if col + 1 < side {
                    adj.push(i + 1);
                }
                if row + 1 < side {
                    adj.push(i + side);
                }
                adj
            })
            .collect();
        Ok(Self {
            side,
            spacing,
            neighbors,
        })
    }

    /// Nodes per side, `c`.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Distance between adjacent nodes.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total node count `S = c^2`.
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn contains(&self, node: Node) -> bool {
        node.index() < self.node_count()
    }

    pub fn check(&self, node: Node) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                node: node.label(),
                count: self.node_count(),
            })
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.node_count()).map(Node::from_index)
    }

    /// Lattice degree, not counting the self-edge.
    pub fn degree(&self, node: Node) -> usize {
        self.neighbors[node.index()].len() - 1
    }

    /// Neighbours of `node` including `node` itself, in ascending order.
    pub fn closed_neighborhood(&self, node: Node) -> impl Iterator<Item = Node> + '_ {
        self.neighbors[node.index()]
            .iter()
            .map(|&j| Node::from_index(j))
    }

    /// Whether `(i, j)` is an edge; self-edges included.
    pub fn has_edge(&self, i: Node, j: Node) -> bool {
        self.neighbors[i.index()].binary_search(&j.index()).is_ok()
    }

    /// All directed edge pairs `(i, j)`, self-edges included.
    pub fn edges(&self) -> impl Iterator<Item = (Node, Node)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, adj)| {
            adj.iter()
                .map(move |&j| (Node::from_index(i), Node::from_index(j)))
        })
    }

    /// Zero-based `(column, row)` on the lattice.
    pub fn lattice_position(&self, node: Node) -> (usize, usize) {
        (node.index() % self.side, node.index() / self.side)
    }

    /// Planar coordinate `((col-1) d, (row-1) d)` with 1-based row and column.
    pub fn coordinate(&self, node: Node) -> (f64, f64) {
        let (col, row) = self.lattice_position(node);
        (col as f64 * self.spacing, row as f64 * self.spacing)
    }

    /// Euclidean distance between two nodes.
    pub fn distance(&self, a: Node, b: Node) -> f64 {
        let (ca, ra) = self.lattice_position(a);
        let (cb, rb) = self.lattice_position(b);
        let dx = ca.abs_diff(cb) as f64;
        let dy = ra.abs_diff(rb) as f64;
        // Exact for axis-aligned pairs: hypot(k, 0) == k.
        dx.hypot(dy) * self.spacing
    }

    /// Length of the grid diagonal.
    pub fn diagonal(&self) -> f64 {
        (self.side - 1) as f64 * self.spacing * std::f64::consts::SQRT_2
    }
}

/// Constructs the lattice. Rejects `c = 0` and non-positive spacing.
pub fn build_grid(side: usize, spacing: f64) -> Result<SpatialGrid> {
    SpatialGrid::new(side, spacing)
}

/// Row-stochastic matrix over a finite state set.
///
/// Entries are held densely; the non-zero support of each row is cached for
/// sampling and sparse products.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    matrix: SquareMatrix,
    support: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    /// Validates entries in `[0, 1]` and rows summing to 1 within [`ROW_SUM_TOL`].
    pub fn new(matrix: SquareMatrix) -> Result<Self> {
        for i in 0..matrix.dim() {
            let row = matrix.row(i);
            if let Some(j) = row
                .iter()
                .position(|&p| !(p.is_finite() && (0.0..=1.0).contains(&p)))
            {
                return Err(Error::NotStochastic(format!(
                    "entry ({}, {}) = {} outside [0, 1]",
                    i + 1,
                    j + 1,
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic(format!("row {} sums to {sum}", i + 1)));
            }
        }
        Ok(Self::new_unchecked(matrix))
    }

    pub(crate) fn new_unchecked(matrix: SquareMatrix) -> Self {
        let support = (0..matrix.dim())
            .map(|i| {
                matrix
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        Self { matrix, support }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    /// `p_ij = 1 / (d_i + 1)` on every edge of the grid (self-edges included).
    pub fn from_grid(grid: &SpatialGrid) -> Self {
        let n = grid.node_count();
        let mut m = SquareMatrix::zeros(n);
        for i in grid.nodes() {
            let p = 1.0 / (grid.degree(i) + 1) as f64;
            for j in grid.closed_neighborhood(i) {
                m.set(i.index(), j.index(), p);
            }
        }
        Self::new_unchecked(m)
    }

    pub fn state_count(&self) -> usize {
        self.matrix.dim()
    }

    /// Zero-based entry access.
    #[inline]
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    /// Non-zero `(column, probability)` pairs of row `i`, ascending by column.
    #[inline]
    pub fn row_support(&self, i: usize) -> &[(usize, f64)] {
        &self.support[i]
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_sum_error(&self) -> f64 {
        self.matrix
            .row_sums()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.matrix.as_slice().iter().all(|&p| p >= 0.0) && self.max_row_sum_error() <= tol
    }

    /// Row-vector product `x P` using the sparse support.
    pub fn left_mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_count() {
            return Err(Error::DimensionMismatch {
                expected: self.state_count(),
                actual: x.len(),
            });
        }
        let mut out = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            for &(j, p) in &self.support[i] {
                out[j] += xi * p;
            }
        }
        Ok(out)
    }
}

/// Transition matrix of the uniform lazy walk on `grid`.
pub fn transition_matrix(grid: &SpatialGrid) -> TransitionMatrix {
    TransitionMatrix::from_grid(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(label: usize) -> Node {
        Node::from_label(label).unwrap()
    }

    // Independent count of 4-neighbours from lattice coordinates.
    fn brute_degree(c: usize, i: usize) -> usize {
        let (x, y) = ((i % c) as i64, (i / c) as i64);
        [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .filter(|(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && ny >= 0 && nx < c as i64 && ny < c as i64
            })
            .count()
    }

    #[test]
    fn three_by_three_degrees() {
        let g = build_grid(3, 1.0).unwrap();
        assert_eq!(g.node_count(), 9);
        for corner in [1, 3, 7, 9] {
            assert_eq!(g.degree(node(corner)), 2);
        }
        for edge in [2, 4, 6, 8] {
            assert_eq!(g.degree(node(edge)), 3);
        }
        assert_eq!(g.degree(node(5)), 4);
    }

    #[test]
    fn two_by_two_all_corners() {
        let g = build_grid(2, 1.0).unwrap();
        assert!(g.nodes().all(|n| g.degree(n) == 2));
    }

    #[test]
    fn single_node_grid() {
        let g = build_grid(1, 1.0).unwrap();
        assert_eq!(g.degree(node(1)), 0);
        let tm = transition_matrix(&g);
        assert_eq!(tm.prob(0, 0), 1.0);
    }

    #[test]
    fn five_by_five_degree_census() {
        let g = build_grid(5, 1.0).unwrap();
        let mut census = [0usize; 5];
        for n in g.nodes() {
            census[g.degree(n)] += 1;
        }
        assert_eq!(census, [0, 0, 4, 12, 9]);
        let non_self_edges = g.edges().filter(|(i, j)| i != j).count();
        let degree_sum: usize = g.nodes().map(|n| g.degree(n)).sum();
        assert_eq!(degree_sum, 80);
        // each undirected edge appears twice among directed pairs
        assert_eq!(non_self_edges, 80);
        assert_eq!(degree_sum, 2 * (non_self_edges / 2));
    }

    #[test]
    fn degrees_match_brute_force() {
        for c in 1..=20 {
            let g = build_grid(c, 1.0).unwrap();
            for n in g.nodes() {
                assert_eq!(g.degree(n), brute_degree(c, n.index()), "c={c} node={n}");
            }
        }
    }

    #[test]
    fn edges_symmetric_with_self_loops() {
        let g = build_grid(4, 1.0).unwrap();
        for n in g.nodes() {
            assert!(g.has_edge(n, n));
        }
        for (i, j) in g.edges() {
            assert!(g.has_edge(j, i));
        }
    }

    #[test]
    fn coordinates_are_row_major_from_bottom_left() {
        let g = build_grid(3, 2.0).unwrap();
        assert_eq!(g.coordinate(node(1)), (0.0, 0.0));
        assert_eq!(g.coordinate(node(3)), (4.0, 0.0));
        assert_eq!(g.coordinate(node(4)), (0.0, 2.0));
        assert_eq!(g.coordinate(node(9)), (4.0, 4.0));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(matches!(build_grid(0, 1.0), Err(Error::Config { .. })));
        assert!(build_grid(3, 0.0).is_err());
        assert!(build_grid(3, -1.0).is_err());
        assert!(build_grid(3, f64::NAN).is_err());
    }

    #[test]
    fn corner_and_center_rows() {
        let tm = transition_matrix(&build_grid(3, 1.0).unwrap());
        // corner 1: self, right (2), up (4)
        let corner: Vec<usize> = tm.row_support(0).iter().map(|&(j, _)| j + 1).collect();
        assert_eq!(corner, vec![1, 2, 4]);
        assert!(tm.row_support(0).iter().all(|&(_, p)| p == 1.0 / 3.0));
        let center = tm.row_support(4);
        assert_eq!(center.len(), 5);
        assert!(center.iter().all(|&(_, p)| p == 0.2));
    }

    #[test]
    fn rows_stochastic_with_symmetric_support() {
        for c in 1..=12 {
            let g = build_grid(c, 1.0).unwrap();
            let tm = transition_matrix(&g);
            assert!(tm.max_row_sum_error() < ROW_SUM_TOL);
            for i in g.nodes() {
                assert_eq!(tm.row_support(i.index()).len(), g.degree(i) + 1);
            }
            let s = g.node_count();
            for i in 0..s {
                for j in 0..s {
                    assert_eq!(tm.prob(i, j) > 0.0, tm.prob(j, i) > 0.0);
                    assert_eq!(tm.prob(i, j) > 0.0, g.has_edge(Node(i), Node(j)));
                }
            }
        }
    }

    #[test]
    fn validation_rejects_bad_rows() {
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.4], vec![0.0, 1.0]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.5, -0.5], vec![0.0, 1.0]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).is_ok());
    }

    #[test]
    fn node_labels_round_trip_through_json() {
        let n: Node = serde_json::from_str("7").unwrap();
        assert_eq!(n.index(), 6);
        assert_eq!(serde_json::to_string(&n).unwrap(), "7");
        assert!(serde_json::from_str::<Node>("0").is_err());
    }
}
