//! Sampling of agent random walks and evolution of occupancy distributions.
//!
//! All randomness flows through an explicit generator handle. The simulator
//! uses [`SimRng`] (ChaCha with 8 rounds, seeded from a `u64`), which gives
//! bit-identical streams across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Node, SpatialGrid, TransitionMatrix, ROW_SUM_TOL};
use crate::{Error, Result};

/// Pseudorandom generator used by episodes and ensembles.
pub type SimRng = ChaCha8Rng;

/// Generator for a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Positions of the agents, indexed by agent (0-based) and holding grid nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentPositions(pub Vec<Node>);

impl AgentPositions {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Node] {
        &self.0
    }

    pub fn validate(&self, grid: &SpatialGrid) -> Result<()> {
        self.0.iter().try_for_each(|&n| grid.check(n))
    }
}

/// Probability mass function over grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OccupancyPmf(Vec<f64>);

impl OccupancyPmf {
    /// Checks non-negativity and unit mass within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("pmf"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::NotStochastic(
                "pmf has a negative or non-finite entry".into(),
            ));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NotStochastic(format!("pmf sums to {mass}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn point_mass(states: usize, at: Node) -> Result<Self> {
        if at.index() >= states {
            return Err(Error::NodeOutOfRange {
                node: at.label(),
                count: states,
            });
        }
        let mut p = vec![0.0; states];
        p[at.index()] = 1.0;
        Ok(Self(p))
    }

    pub fn uniform(states: usize) -> Result<Self> {
        if states == 0 {
            return Err(Error::Empty("pmf"));
        }
        Ok(Self(vec![1.0 / states as f64; states]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total-variation distance to another pmf of the same length.
    pub fn total_variation(&self, other: &OccupancyPmf) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Draws `agents` i.i.d. uniform starting nodes.
pub fn sample_initial_positions<R: Rng + ?Sized>(
    grid: &SpatialGrid,
    agents: usize,
    rng: &mut R,
) -> Result<AgentPositions> {
    if agents == 0 {
        return Err(Error::config("agents", "must be at least 1"));
    }
    let s = grid.node_count();
    Ok(AgentPositions(
        (0..agents)
            .map(|_| Node::from_index(rng.random_range(0..s)))
            .collect(),
    ))
}

/// Draws the successor of `current` by inverse CDF over its row, in column order.
pub fn sample_step<R: Rng + ?Sized>(
    tm: &TransitionMatrix,
    current: Node,
    rng: &mut R,
) -> Result<Node> {
    if current.index() >= tm.state_count() {
        return Err(Error::NodeOutOfRange {
            node: current.label(),
            count: tm.state_count(),
        });
    }
    Ok(step_unchecked(tm, current, rng))
}

#[inline]
pub(crate) fn step_unchecked<R: Rng + ?Sized>(
    tm: &TransitionMatrix,
    current: Node,
    rng: &mut R,
) -> Node {
    let support = tm.row_support(current.index());
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for &(j, p) in support {
        cumulative += p;
        if u < cumulative {
            return Node::from_index(j);
        }
    }
    // Row mass fell short of 1 by rounding; the remainder belongs to the last column.
    Node::from_index(support.last().expect("stochastic rows are non-empty").0)
}

/// One step of the occupancy recursion, `pi P`.
pub fn evolve_distribution(tm: &TransitionMatrix, pmf: &OccupancyPmf) -> Result<OccupancyPmf> {
    tm.left_mul(pmf.probs()).map(OccupancyPmf)
}
