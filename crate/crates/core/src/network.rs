//! Time-varying communication graph between agents.

use serde::{Deserialize, Serialize};

use crate::grid::SpatialGrid;
use crate::mobility::AgentPositions;
use crate::{Error, Result, SquareMatrix};

/// Undirected simple graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    adjacency: Vec<bool>,
}

/// Unordered agent pair, 0-based, with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentPair(pub usize, pub usize);

impl CommGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adjacency: vec![false; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for a in 0..n {
            for b in a + 1..n {
                g.connect(a, b);
            }
        }
        g
    }

    /// Graph from an edge list; self-loops and out-of-range agents are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: a.max(b) + 1,
                });
            }
            if a == b {
                return Err(Error::Degenerate(format!("self-loop on agent {}", a + 1)));
            }
            g.connect(a, b);
        }
        Ok(g)
    }

    pub(crate) fn connect(&mut self, a: usize, b: usize) {
        self.adjacency[a * self.n + b] = true;
        self.adjacency[b * self.n + a] = true;
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.n + b]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.neighbors(a).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|a| self.degree(a)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[a * self.n..(a + 1) * self.n]
            .iter()
            .enumerate()
            .filter_map(|(b, &m)| m.then_some(b))
    }

    pub fn edges(&self) -> Vec<AgentPair> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                if self.adjacent(a, b) {
                    out.push(AgentPair(a, b));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&m| m).count() / 2
    }

    pub fn is_complete(&self) -> bool {
        self.edge_count() == self.n * self.n.saturating_sub(1) / 2
    }

    /// 0/1 adjacency as a matrix.
    pub fn adjacency_matrix(&self) -> SquareMatrix {
        let data = self
            .adjacency
            .iter()
            .map(|&m| f64::from(u8::from(m)))
            .collect();
        SquareMatrix::from_row_major(self.n, data).expect("n*n entries")
    }

    /// Relabels agents: agent `a` of `self` becomes agent `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut g = Self::empty(self.n);
        for AgentPair(a, b) in self.edges() {
            g.connect(perm[a], perm[b]);
        }
        g
    }
}

/// Agents are adjacent when their nodes lie within `r_comm` of each other.
/// With `r_comm = 0` only co-located agents communicate.
pub fn comm_graph(
    positions: &AgentPositions,
    grid: &SpatialGrid,
    r_comm: f64,
) -> Result<CommGraph> {
    if !(r_comm.is_finite() && r_comm >= 0.0) {
        return Err(Error::config(
            "comm_radius",
            format!("must be a non-negative length, got {r_comm}"),
        ));
    }
    positions.validate(grid)?;
    Ok(comm_graph_unchecked(positions, grid, r_comm))
}

pub(crate) fn comm_graph_unchecked(
    positions: &AgentPositions,
    grid: &SpatialGrid,
    r_comm: f64,
) -> CommGraph {
    let nodes = positions.as_slice();
    let mut g = CommGraph::empty(nodes.len());
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            let linked = if r_comm == 0.0 {
                nodes[a] == nodes[b]
            } else {
                grid.distance(nodes[a], nodes[b]) <= r_comm
            };
            if linked {
                g.connect(a, b);
            }
        }
    }
    g
}

/// Graph Laplacian: degrees on the diagonal, `-m_ab` off it.
pub fn laplacian(g: &CommGraph) -> SquareMatrix {
    let n = g.agent_count();
    let mut l = SquareMatrix::zeros(n);
    for a in 0..n {
        let mut deg = 0.0;
        for b in g.neighbors(a) {
            l.set(a, b, -1.0);
            deg += 1.0;
        }
        l.set(a, a, deg);
    }
    l
}

/// Edge-wise union of graphs on a common agent set.
pub fn union_graph<'a, I>(graphs: I) -> Result<CommGraph>
where
    I: IntoIterator<Item = &'a CommGraph>,
{
    let mut iter = graphs.into_iter();
    let mut acc = iter.next().ok_or(Error::Empty("graph sequence"))?.clone();
    for g in iter {
        acc.absorb(g)?;
    }
    Ok(acc)
}

impl CommGraph {
    /// In-place union with `other`.
    pub fn absorb(&mut self, other: &CommGraph) -> Result<()> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: other.n,
            });
        }
        for (m, &o) in self.adjacency.iter_mut().zip(&other.adjacency) {
            *m |= o;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, transition_matrix, Node};
    use crate::mobility::{sample_initial_positions, sample_step, seeded_rng};
    use proptest::prelude::*;

    fn at(labels: &[usize]) -> AgentPositions {
        AgentPositions(
            labels
                .iter()
                .map(|&l| Node::from_label(l).unwrap())
                .collect(),
        )
    }

    #[test]
    fn co_location_rule() {
        let g = build_grid(3, 1.0).unwrap();
        assert!(comm_graph(&at(&[5, 5]), &g, 0.0).unwrap().adjacent(0, 1));
        assert!(!comm_graph(&at(&[4, 5]), &g, 0.0).unwrap().adjacent(0, 1));
    }

    #[test]
    fn radius_rule() {
        let g = build_grid(3, 1.0).unwrap();
        assert!(comm_graph(&at(&[4, 5]), &g, 1.0).unwrap().adjacent(0, 1));
        // nodes 1 and 5 are diagonal neighbours, distance sqrt(2)
        assert!(!comm_graph(&at(&[1, 5]), &g, 1.0).unwrap().adjacent(0, 1));
        assert!(comm_graph(&at(&[1, 5]), &g, 1.5).unwrap().adjacent(0, 1));
    }

    #[test]
    fn bad_inputs_rejected() {
        let g = build_grid(3, 1.0).unwrap();
        assert!(comm_graph(&at(&[1, 2]), &g, -0.5).is_err());
        assert!(comm_graph(&at(&[1, 10]), &g, 0.0).is_err());
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(laplacian(&CommGraph::empty(3)), SquareMatrix::zeros(3));
        let pair = CommGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(
            laplacian(&pair),
            SquareMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
        );
        let k3 = laplacian(&CommGraph::complete(3));
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(k3.get(a, b), if a == b { 2.0 } else { -1.0 });
            }
        }
        assert!(k3.row_sums().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn union_examples() {
        let a = CommGraph::from_edges(3, &[(0, 1)]).unwrap();
        let b = CommGraph::from_edges(3, &[(1, 2)]).unwrap();
        assert_eq!(union_graph([&a, &a]).unwrap(), a);
        let u = union_graph([&a, &b]).unwrap();
        assert_eq!(u.edges(), vec![AgentPair(0, 1), AgentPair(1, 2)]);
        assert!(union_graph([&a, &CommGraph::empty(4)]).is_err());
        assert!(union_graph(std::iter::empty::<&CommGraph>()).is_err());
    }

    #[test]
    fn long_walk_union_is_complete() {
        let grid = build_grid(4, 1.0).unwrap();
        let tm = transition_matrix(&grid);
        let mut rng = seeded_rng(77);
        let mut pos = sample_initial_positions(&grid, 4, &mut rng).unwrap();
        let mut union = CommGraph::empty(4);
        for _ in 0..10_000 {
            union
                .absorb(&comm_graph(&pos, &grid, 0.0).unwrap())
                .unwrap();
            for p in pos.0.iter_mut() {
                *p = sample_step(&tm, *p, &mut rng).unwrap();
            }
        }
        assert!(union.is_complete());
    }

    proptest! {
        #[test]
        fn laplacian_is_symmetric_psd(
            edges in proptest::collection::vec((0usize..6, 0usize..6), 0..15),
            x in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let edges: Vec<_> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let g = CommGraph::from_edges(6, &edges).unwrap();
            let l = laplacian(&g);
            prop_assert!(l.is_symmetric());
            for s in l.row_sums() {
                prop_assert_eq!(s, 0.0);
            }
            for a in 0..6 {
                prop_assert_eq!(l.get(a, a) as usize, g.degree(a));
            }
            let lx = l.mul_vec(&x).unwrap();
            let quad: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
            prop_assert!(quad >= -1e-9);
        }

        #[test]
        fn relabeling_commutes_with_comm_graph(
            labels in proptest::collection::vec(1usize..=16, 5),
            perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
            radius in prop_oneof![Just(0.0), Just(1.0), Just(2.5)],
        ) {
            let grid = build_grid(4, 1.0).unwrap();
            let pos = at(&labels);
            let mut moved = vec![Node::from_index(0); 5];
            for (a, &p) in perm.iter().enumerate() {
                moved[p] = pos.0[a];
            }
            let g = comm_graph(&pos, &grid, radius).unwrap();
            let h = comm_graph(&AgentPositions(moved), &grid, radius).unwrap();
            prop_assert_eq!(g.permuted(&perm), h);
        }
    }
}
