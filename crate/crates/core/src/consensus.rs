//! Gated consensus on the agents' information states.
//!
//! Each step every agent moves toward its current neighbours with gain `alpha`
//! and, if it stands on a feature node, is additionally reset toward the
//! reference value:
//!
//! ```text
//! xi_a' = xi_a - alpha * sum_{b ~ a} (xi_a - xi_b) - g_a * (xi_a - xi_ref)
//! ```
//!
//! Stacking the reference as an extra state gives the augmented form
//! `[xi'; ref] = H [xi; ref]` with `H = [[I - alpha L - diag(g), g], [0, 1]]`.

use crate::grid::{Node, SpatialGrid};
use crate::mobility::AgentPositions;
use crate::network::{laplacian, CommGraph};
use crate::{Error, Result, SquareMatrix};

/// Largest admissible gain for `agents` agents: `1 / (agents - 1)`.
pub fn alpha_limit(agents: usize) -> f64 {
    if agents <= 1 {
        f64::INFINITY
    } else {
        1.0 / (agents - 1) as f64
    }
}

/// Accepts `0 < alpha <= 1 / (agents - 1)`.
///
/// The limit itself is admitted: with at most `agents - 1` neighbours the
/// diagonal of `I - alpha L` stays non-negative there.
pub fn check_alpha(alpha: f64, agents: usize) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config(
            "alpha",
            format!("must be positive, got {alpha}"),
        ));
    }
    if alpha > alpha_limit(agents) {
        return Err(Error::config(
            "alpha",
            format!(
                "{alpha} exceeds 1/(N-1) = {} for N = {agents}",
                alpha_limit(agents)
            ),
        ));
    }
    Ok(())
}

/// Set of feature-detection nodes, validated against a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    nodes: Vec<Node>,
    mask: Vec<bool>,
}

impl FeatureSet {
    pub fn new(grid: &SpatialGrid, nodes: &[Node]) -> Result<Self> {
        let mut mask = vec![false; grid.node_count()];
        for &n in nodes {
            grid.check(n).map_err(|_| {
                Error::config(
                    "feature_nodes",
                    format!("node {n} outside 1..={}", grid.node_count()),
                )
            })?;
            mask[n.index()] = true;
        }
        let mut nodes = nodes.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        Ok(Self { nodes, mask })
    }

    #[inline]
    pub fn contains(&self, node: Node) -> bool {
        self.mask.get(node.index()).copied().unwrap_or(false)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gate per agent: set when the agent occupies a feature node.
pub fn gates(positions: &AgentPositions, features: &FeatureSet) -> Vec<bool> {
    positions
        .as_slice()
        .iter()
        .map(|&n| features.contains(n))
        .collect()
}

/// Information states plus the parameters of the update.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoState {
    pub xi: Vec<f64>,
    pub reference: f64,
    pub alpha: f64,
    pub gates: Vec<bool>,
}

impl InfoState {
    pub fn new(xi: Vec<f64>, reference: f64, alpha: f64, gates: Vec<bool>) -> Result<Self> {
        if gates.len() != xi.len() {
            return Err(Error::DimensionMismatch {
                expected: xi.len(),
                actual: gates.len(),
            });
        }
        check_alpha(alpha, xi.len())?;
        Ok(Self {
            xi,
            reference,
            alpha,
            gates,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.xi.len()
    }
}

/// Synchronous gated update with one reference sample shared by all gated agents.
pub fn consensus_step(
    state: &InfoState,
    graph: &CommGraph,
    reference_sample: f64,
) -> Result<Vec<f64>> {
    check_graph(state, graph)?;
    let mut out = vec![0.0; state.agent_count()];
    step_into(
        &state.xi,
        &state.gates,
        graph,
        state.alpha,
        |_| reference_sample,
        &mut out,
    );
    Ok(out)
}

/// As [`consensus_step`] but with a separate reference sample for each agent.
pub fn consensus_step_per_agent(
    state: &InfoState,
    graph: &CommGraph,
    reference_samples: &[f64],
) -> Result<Vec<f64>> {
    check_graph(state, graph)?;
    if reference_samples.len() != state.agent_count() {
        return Err(Error::DimensionMismatch {
            expected: state.agent_count(),
            actual: reference_samples.len(),
        });
    }
    let mut out = vec![0.0; state.agent_count()];
    step_into(
        &state.xi,
        &state.gates,
        graph,
        state.alpha,
        |a| reference_samples[a],
        &mut out,
    );
    Ok(out)
}

fn check_graph(state: &InfoState, graph: &CommGraph) -> Result<()> {
    if graph.agent_count() != state.agent_count() {
        return Err(Error::DimensionMismatch {
            expected: state.agent_count(),
            actual: graph.agent_count(),
        });
    }
    Ok(())
}

/// Reads only `xi`, writes only `out`.
#[inline]
pub(crate) fn step_into(
    xi: &[f64],
    gates: &[bool],
    graph: &CommGraph,
    alpha: f64,
    reference: impl Fn(usize) -> f64,
    out: &mut [f64],
) {
    for a in 0..xi.len() {
        let coupling: f64 = graph.neighbors(a).map(|b| xi[a] - xi[b]).sum();
        let mut next = xi[a] - alpha * coupling;
        if gates[a] {
            next -= xi[a] - reference(a);
        }
        out[a] = next;
    }
}

/// The `(N+1) x (N+1)` augmented update matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedUpdateMatrix(SquareMatrix);

impl AugmentedUpdateMatrix {
    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn agent_count(&self) -> usize {
        self.0.dim() - 1
    }

    /// Applies `H` to `[xi; reference]` and returns the agent part.
    pub fn apply(&self, xi: &[f64], reference: f64) -> Result<Vec<f64>> {
        if xi.len() != self.agent_count() {
            return Err(Error::DimensionMismatch {
                expected: self.agent_count(),
                actual: xi.len(),
            });
        }
        let mut augmented = xi.to_vec();
        augmented.push(reference);
        let mut out = self.0.mul_vec(&augmented)?;
        out.pop();
        Ok(out)
    }
}

/// `H = [[I - alpha L - diag(g), g], [0, 1]]`.
pub fn update_matrix(
    graph: &CommGraph,
    gates: &[bool],
    alpha: f64,
) -> Result<AugmentedUpdateMatrix> {
    let n = graph.agent_count();
    if gates.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gates.len(),
        });
    }
    check_alpha(alpha, n)?;
    let l = laplacian(graph);
    let mut h = SquareMatrix::zeros(n + 1);
    for (a, &gated) in gates.iter().enumerate() {
        let g = f64::from(u8::from(gated));
        for b in 0..n {
            let identity = if a == b { 1.0 } else { 0.0 };
            h.set(a, b, identity - alpha * l.get(a, b));
        }
        h.set(a, a, h.get(a, a) - g);
        h.set(a, n, g);
    }
    h.set(n, n, 1.0);
    Ok(AugmentedUpdateMatrix(h))
}

/// True when every state is strictly within `epsilon` of `reference`.
pub fn consensus_reached(xi: &[f64], reference: f64, epsilon: f64) -> bool {
    xi.iter().all(|x| (x - reference).abs() < epsilon)
}
