//! Numerical checks on the mobility chain: stationary distribution,
//! irreducibility, the composite chain of all agents, and a bundled report.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::consensus::FeatureSet;
use crate::grid::{build_grid, transition_matrix, Node, TransitionMatrix, ROW_SUM_TOL};
use crate::mobility::{sample_initial_positions, seeded_rng, step_unchecked, OccupancyPmf};
use crate::network::{comm_graph_unchecked, CommGraph};
use crate::{Error, Result, SquareMatrix};

/// Stopping tolerance for power iteration.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Iteration cap for power iteration.
pub const MAX_POWER_ITERATIONS: usize = 1_000_000;
/// Largest composite state count built by default.
pub const DEFAULT_COMPOSITE_CAP: usize = 10_000;

/// Stationary pmf by power iteration `pi <- pi P` from the uniform pmf.
///
/// Returns the first iterate whose residual `max |pi P - pi|` is below `tol`.
pub fn stationary_distribution(tm: &TransitionMatrix, tol: f64) -> Result<OccupancyPmf> {
    let n = tm.state_count();
    if n == 0 {
        return Err(Error::Empty("transition matrix"));
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_POWER_ITERATIONS {
        let mut next = tm.left_mul(&pi)?;
        residual = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok(OccupancyPmf::new_unchecked(pi));
        }
        let mass: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= mass);
        pi = next;
    }
    Err(Error::NotConverged {
        iterations: MAX_POWER_ITERATIONS,
        residual,
    })
}

/// `max_i |(pi P)_i - pi_i|`.
pub fn stationary_residual(tm: &TransitionMatrix, pi: &OccupancyPmf) -> Result<f64> {
    let next = tm.left_mul(pi.probs())?;
    Ok(next
        .iter()
        .zip(pi.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `max_{i,j} |pi_i p_ij - pi_j p_ji|`.
pub fn detailed_balance_error(tm: &TransitionMatrix, pi: &OccupancyPmf) -> f64 {
    let p = pi.probs();
    let mut worst = 0.0f64;
    for i in 0..tm.state_count() {
        for &(j, pij) in tm.row_support(i) {
            worst = worst.max((p[i] * pij - p[j] * tm.prob(j, i)).abs());
        }
    }
    worst
}

/// Strong connectivity of the support graph: every state is reached from
/// state 0 along edges and along reversed edges.
pub fn is_irreducible(tm: &TransitionMatrix) -> bool {
    let n = tm.state_count();
    if n == 0 {
        return false;
    }
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for &(j, _) in tm.row_support(i) {
            reverse[j].push(i);
        }
    }
    let forward = |i: usize| {
        tm.row_support(i)
            .iter()
            .map(|&(j, _)| j)
            .collect::<Vec<_>>()
    };
    reaches_all(n, forward) && reaches_all(n, |i| reverse[i].clone())
}

fn reaches_all(n: usize, next: impl Fn(usize) -> Vec<usize>) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in next(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// Flattening of joint agent positions.
///
/// Agent 1 varies fastest: `flat = sum_a index(a) * S^(a-1)` with zero-based
/// node indices, so for two agents the composite matrix is `P (x) P` in the
/// usual Kronecker layout. The 1-based flat label is `flat + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeSpace {
    states: usize,
    agents: usize,
    size: usize,
}

impl CompositeSpace {
    pub fn new(states: usize, agents: usize, cap: usize) -> Result<Self> {
        if agents == 0 {
            return Err(Error::config("agents", "must be at least 1"));
        }
        let size = composite_size(states, agents);
        if size > cap as u128 {
            return Err(Error::CapExceeded { states: size, cap });
        }
        Ok(Self {
            states,
            agents,
            size: size as usize,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn encode(&self, nodes: &[Node]) -> Result<usize> {
        if nodes.len() != self.agents {
            return Err(Error::DimensionMismatch {
                expected: self.agents,
                actual: nodes.len(),
            });
        }
        let mut flat = 0;
        for &n in nodes.iter().rev() {
            if n.index() >= self.states {
                return Err(Error::NodeOutOfRange {
                    node: n.label(),
                    count: self.states,
                });
            }
            flat = flat * self.states + n.index();
        }
        Ok(flat)
    }

    pub fn decode(&self, mut flat: usize) -> Vec<Node> {
        let mut out = Vec::with_capacity(self.agents);
        for _ in 0..self.agents {
            out.push(Node::from_index(flat % self.states));
            flat /= self.states;
        }
        out
    }
}

/// `S^N`, saturating.
pub fn composite_size(states: usize, agents: usize) -> u128 {
    (states as u128)
        .checked_pow(agents as u32)
        .unwrap_or(u128::MAX)
}

/// Transition matrix of the joint walk: `q_ij = prod_a p_{i(a) j(a)}`.
pub fn composite_chain(
    tm: &TransitionMatrix,
    agents: usize,
    cap: usize,
) -> Result<TransitionMatrix> {
    let s = tm.state_count();
    let space = CompositeSpace::new(s, agents, cap)?;
    if agents == 1 {
        return Ok(tm.clone());
    }
    let m = space.size();
    let mut q = SquareMatrix::zeros(m);
    // Enumerate the joint successors of each row as a mixed-radix counter over
    // the per-agent supports.
    let mut cursor = vec![0usize; agents];
    for row in 0..m {
        let from = space.decode(row);
        let supports: Vec<&[(usize, f64)]> =
            from.iter().map(|n| tm.row_support(n.index())).collect();
        cursor.iter_mut().for_each(|c| *c = 0);
        'outer: loop {
            let mut col = 0;
            let mut prob = 1.0;
            for a in (0..agents).rev() {
                let (j, p) = supports[a][cursor[a]];
                col = col * s + j;
                prob *= p;
            }
            q.set(row, col, prob);
            for a in 0..agents {
                cursor[a] += 1;
                if cursor[a] < supports[a].len() {
                    continue 'outer;
                }
                cursor[a] = 0;
            }
            break;
        }
    }
    Ok(TransitionMatrix::new_unchecked(q))
}

/// Options for [`verify_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub composite_cap: usize,
    pub seed: u64,
    /// Step budget of the sample walk used for the communication-union check.
    pub walk_steps: u64,
    pub tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            composite_cap: DEFAULT_COMPOSITE_CAP,
            seed: 0,
            walk_steps: 1_000_000,
            tol: STATIONARY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CompositeCheck {
    Checked {
        states: usize,
        row_stochastic: bool,
        max_row_sum_error: f64,
        irreducible: bool,
    },
    Skipped {
        states: String,
        cap: usize,
        note: String,
    },
}

impl CompositeCheck {
    fn passed(&self) -> bool {
        match self {
            CompositeCheck::Checked {
                row_stochastic,
                irreducible,
                ..
            } => *row_stochastic && *irreducible,
            CompositeCheck::Skipped { .. } => true,
        }
    }
}

/// Outcome of walking `N` agents until their communication union is complete
/// and the feature reaches every agent through it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnionCheck {
    pub steps: u64,
    pub feature_nodes: Vec<Node>,
    pub pairs_met: usize,
    pub pairs_total: usize,
    pub complete: bool,
    pub agents_gated: usize,
    /// Parent of each agent (1-based) in a tree rooted at the feature; 0 is the
    /// feature itself. `None` if some agent is unreachable.
    pub spanning_tree: Option<Vec<usize>>,
}

/// Bundled numerical checks for a `c x c` grid and `N` agents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub grid_dim: usize,
    pub agents: usize,
    pub states: usize,
    pub p_row_stochastic: bool,
    pub p_max_row_sum_error: f64,
    pub p_irreducible: bool,
    pub stationary_residual: Option<f64>,
    pub detailed_balance_error: Option<f64>,
    pub composite: CompositeCheck,
    pub union: UnionCheck,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn verify_report(grid_dim: usize, agents: usize, opts: &VerifyOptions) -> Result<VerifyReport> {
    if agents == 0 {
        return Err(Error::config("agents", "must be at least 1"));
    }
    let grid = build_grid(grid_dim, 1.0)?;
    let tm = transition_matrix(&grid);
    let s = grid.node_count();

    let p_max_row_sum_error = tm.max_row_sum_error();
    let p_row_stochastic = tm.is_row_stochastic(ROW_SUM_TOL);
    let p_irreducible = is_irreducible(&tm);
    let (stationary_residual, detailed_balance) = match stationary_distribution(&tm, opts.tol) {
        Ok(pi) => (
            Some(stationary_residual(&tm, &pi)?),
            Some(detailed_balance_error(&tm, &pi)),
        ),
        Err(_) => (None, None),
    };

    let composite = match composite_chain(&tm, agents, opts.composite_cap) {
        Ok(q) => CompositeCheck::Checked {
            states: q.state_count(),
            row_stochastic: q.is_row_stochastic(ROW_SUM_TOL),
            max_row_sum_error: q.max_row_sum_error(),
            irreducible: is_irreducible(&q),
        },
        Err(Error::CapExceeded { states, cap }) => CompositeCheck::Skipped {
            states: if states == u128::MAX {
                "overflow".into()
            } else {
                states.to_string()
            },
            cap,
            note: format!("cap exceeded: {s}^{agents} states > {cap}"),
        },
        Err(e) => return Err(e),
    };

    let feature_labels: &[usize] = if s >= 6 { &[4, 5, 6] } else { &[1] };
    let feature_nodes: Vec<Node> = feature_labels
        .iter()
        .map(|&l| Node::from_label(l).expect("labels start at 1"))
        .collect();
    let union = union_check(&grid, &tm, agents, &feature_nodes, opts)?;

    let passed = p_row_stochastic
        && p_irreducible
        && stationary_residual.is_some_and(|r| r < opts.tol)
        && detailed_balance.is_some_and(|e| e < 1e-10)
        && composite.passed()
        && union.complete
        && union.spanning_tree.is_some();

    Ok(VerifyReport {
        grid_dim,
        agents,
        states: s,
        p_row_stochastic,
        p_max_row_sum_error,
        p_irreducible,
        stationary_residual,
        detailed_balance_error: detailed_balance,
        composite,
        union,
        passed,
    })
}

fn union_check(
    grid: &crate::SpatialGrid,
    tm: &TransitionMatrix,
    agents: usize,
    feature_nodes: &[Node],
    opts: &VerifyOptions,
) -> Result<UnionCheck> {
    let features = FeatureSet::new(grid, feature_nodes)?;
    let mut rng = seeded_rng(opts.seed);
    let mut positions = sample_initial_positions(grid, agents, &mut rng)?;
    let mut union = CommGraph::empty(agents);
    let mut gated = vec![false; agents];
    let mut steps = 0;
    let mut tree = None;
    loop {
        union.absorb(&comm_graph_unchecked(&positions, grid, 0.0))?;
        for (g, &p) in gated.iter_mut().zip(positions.as_slice()) {
            *g |= features.contains(p);
        }
        if union.is_complete() {
            tree = spanning_tree(&union, &gated);
            if tree.is_some() {
                break;
            }
        }
        if steps >= opts.walk_steps {
            break;
        }
        for p in positions.0.iter_mut() {
            *p = step_unchecked(tm, *p, &mut rng);
        }
        steps += 1;
    }
    Ok(UnionCheck {
        steps,
        feature_nodes: feature_nodes.to_vec(),
        pairs_met: union.edge_count(),
        pairs_total: agents * (agents - 1) / 2,
        complete: union.is_complete(),
        agents_gated: gated.iter().filter(|&&g| g).count(),
        spanning_tree: tree,
    })
}

/// Breadth-first tree from the feature (edges to gated agents) through the
/// agent graph. Parent 0 is the feature, otherwise a 1-based agent label.
pub fn spanning_tree(union: &CommGraph, gated: &[bool]) -> Option<Vec<usize>> {
    let n = union.agent_count();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut queue = VecDeque::new();
    for a in (0..n).filter(|&a| gated[a]) {
        parent[a] = Some(0);
        queue.push_back(a);
    }
    while let Some(a) = queue.pop_front() {
        for b in union.neighbors(a) {
            if parent[b].is_none() {
                parent[b] = Some(a + 1);
                queue.push_back(b);
            }
        }
    }
    parent.into_iter().collect()
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        writeln!(
            f,
            "verification: grid {0}x{0} ({1} states), {2} agent(s)",
            self.grid_dim, self.states, self.agents
        )?;
        writeln!(
            f,
            "  P row-stochastic        {:<4} (max |row sum - 1| = {:.3e})",
            mark(self.p_row_stochastic),
            self.p_max_row_sum_error
        )?;
        writeln!(f, "  P irreducible           {}", mark(self.p_irreducible))?;
        match (self.stationary_residual, self.detailed_balance_error) {
            (Some(r), Some(db)) => {
                writeln!(f, "  stationary residual     {r:.3e}")?;
                writeln!(f, "  detailed balance error  {db:.3e}")?;
            }
            _ => writeln!(
                f,
                "  stationary distribution FAIL (power iteration did not converge)"
            )?,
        }
        match &self.composite {
            CompositeCheck::Checked {
                states,
                row_stochastic,
                max_row_sum_error,
                irreducible,
            } => {
                writeln!(
                    f,
                    "  Q row-stochastic        {:<4} ({states} states, max |row sum - 1| = {max_row_sum_error:.3e})",
                    mark(*row_stochastic)
                )?;
                writeln!(f, "  Q irreducible           {}", mark(*irreducible))?;
            }
            CompositeCheck::Skipped { note, .. } => {
                writeln!(f, "  composite chain         skipped ({note})")?;
            }
        }
        let u = &self.union;
        writeln!(
            f,
            "  communication union     {:<4} ({}/{} pairs met after {} steps)",
            mark(u.complete),
            u.pairs_met,
            u.pairs_total,
            u.steps
        )?;
        match &u.spanning_tree {
            Some(parents) => writeln!(
                f,
                "  feature spanning tree   ok   (parents: {})",
                parents
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            )?,
            None => writeln!(
                f,
                "  feature spanning tree   FAIL ({} agents gated)",
                u.agents_gated
            )?,
        }
        write!(f, "overall: {}", if self.passed { "PASS" } else { "FAIL" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::{evolve_distribution, sample_step};

    fn grid_tm(c: usize) -> TransitionMatrix {
        transition_matrix(&build_grid(c, 1.0).unwrap())
    }

    #[test]
    fn two_by_two_stationary_is_uniform() {
        let pi = stationary_distribution(&grid_tm(2), STATIONARY_TOL).unwrap();
        for p in pi.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn three_by_three_stationary_follows_degree() {
        let pi = stationary_distribution(&grid_tm(3), STATIONARY_TOL).unwrap();
        let expected = [3., 4., 3., 4., 5., 4., 3., 4., 3.].map(|w| w / 33.0);
        for (p, e) in pi.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-10);
        }
        let next = evolve_distribution(&grid_tm(3), &pi).unwrap();
        for (a, b) in next.probs().iter().zip(pi.probs()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_state_chain() {
        let pi = stationary_distribution(&grid_tm(1), STATIONARY_TOL).unwrap();
        assert_eq!(pi.probs(), &[1.0]);
    }

    #[test]
    fn periodic_chain_reports_non_convergence() {
        // star 1 <-> {2, 3}: period 2, so the uniform start oscillates forever
        let star = TransitionMatrix::from_rows(&[
            vec![0.0, 0.5, 0.5],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!(is_irreducible(&star));
        assert!(matches!(
            stationary_distribution(&star, 1e-12),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn irreducibility_examples() {
        for c in 1..=10 {
            assert!(is_irreducible(&grid_tm(c)));
        }
        let split = TransitionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(!is_irreducible(&split));
        let ok = TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert!(is_irreducible(&ok));
        let one_way = TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(!is_irreducible(&one_way));
    }

    #[test]
    fn detailed_balance_on_grids() {
        for c in [2, 4, 7] {
            let tm = grid_tm(c);
            let pi = stationary_distribution(&tm, STATIONARY_TOL).unwrap();
            assert!(detailed_balance_error(&tm, &pi) < 1e-10);
        }
    }

    #[test]
    fn composite_index_round_trips() {
        let space = CompositeSpace::new(5, 3, 1000).unwrap();
        for flat in 0..space.size() {
            assert_eq!(space.encode(&space.decode(flat)).unwrap(), flat);
        }
        let nodes = [2, 1, 3].map(|l| Node::from_label(l).unwrap());
        // (2-1) + (1-1)*5 + (3-1)*25 = 51
        assert_eq!(space.encode(&nodes).unwrap(), 51);
        assert!(CompositeSpace::new(5, 3, 124).is_err());
    }

    #[test]
    fn path_graph_composite_entry() {
        // i - j - l path with self-loops: p_ii = 1/2, p_jl = 1/3.
        let path = TransitionMatrix::from_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        let q = composite_chain(&path, 2, DEFAULT_COMPOSITE_CAP).unwrap();
        let space = CompositeSpace::new(3, 2, DEFAULT_COMPOSITE_CAP).unwrap();
        let label = |a: usize, b: usize| {
            space
                .encode(&[Node::from_index(a), Node::from_index(b)])
                .unwrap()
        };
        assert!((q.prob(label(0, 1), label(0, 2)) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(q.prob(label(0, 1), label(2, 2)), 0.0);
        assert!(q.max_row_sum_error() < 1e-12);
    }

    #[test]
    fn composite_of_one_agent_is_identity_map() {
        let tm = grid_tm(3);
        assert_eq!(composite_chain(&tm, 1, DEFAULT_COMPOSITE_CAP).unwrap(), tm);
    }

    #[test]
    fn composite_cap_refuses_large_spaces() {
        let tm = grid_tm(20);
        assert!(matches!(
            composite_chain(&tm, 14, DEFAULT_COMPOSITE_CAP),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn three_agent_composite_rows() {
        let tm = grid_tm(2);
        let q = composite_chain(&tm, 3, DEFAULT_COMPOSITE_CAP).unwrap();
        assert_eq!(q.state_count(), 64);
        assert!(q.max_row_sum_error() < 1e-12);
        assert!(is_irreducible(&q));
    }

    #[test]
    fn composite_stationary_is_product() {
        let tm = grid_tm(3);
        let pi = stationary_distribution(&tm, STATIONARY_TOL).unwrap();
        let q = composite_chain(&tm, 2, DEFAULT_COMPOSITE_CAP).unwrap();
        let joint = stationary_distribution(&q, STATIONARY_TOL).unwrap();
        let p = pi.probs();
        for i in 0..9 {
            for j in 0..9 {
                assert!((joint.probs()[i + 9 * j] - p[i] * p[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mean_return_time_matches_inverse_stationary_mass() {
        let tm = grid_tm(4);
        let pi = stationary_distribution(&tm, STATIONARY_TOL).unwrap();
        let mut rng = seeded_rng(31);
        for target in [0usize, 5] {
            let target = Node::from_index(target);
            let mut at = target;
            let (mut returns, mut elapsed, mut since) = (0u64, 0u64, 0u64);
            for _ in 0..1_000_000 {
                at = sample_step(&tm, at, &mut rng).unwrap();
                since += 1;
                if at == target {
                    returns += 1;
                    elapsed += since;
                    since = 0;
                }
            }
            let mean = elapsed as f64 / returns as f64;
            let expected = 1.0 / pi.probs()[target.index()];
            assert!((mean - expected).abs() / expected < 0.1);
        }
    }

    #[test]
    fn spanning_tree_needs_a_gated_root() {
        let g = CommGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(spanning_tree(&g, &[false, false, false]), None);
        assert_eq!(
            spanning_tree(&g, &[false, true, false]),
            Some(vec![2, 0, 2])
        );
        assert_eq!(spanning_tree(&CommGraph::empty(2), &[true, false]), None);
    }

    #[test]
    fn verify_examples() {
        let opts = VerifyOptions::default();
        let r = verify_report(3, 2, &opts).unwrap();
        assert!(r.passed, "{r}");
        assert!(matches!(
            r.composite,
            CompositeCheck::Checked { states: 81, .. }
        ));

        let r = verify_report(1, 2, &opts).unwrap();
        assert!(r.passed, "{r}");
        assert!(matches!(
            r.composite,
            CompositeCheck::Checked {
                states: 1,
                irreducible: true,
                ..
            }
        ));

        let r = verify_report(8, 3, &opts).unwrap();
        assert!(matches!(r.composite, CompositeCheck::Skipped { .. }));
        assert!(r.passed, "{r}");
        assert!(r.to_string().contains("cap exceeded"));
    }

    #[test]
    fn verify_report_json_has_all_sections() {
        let r = verify_report(3, 2, &VerifyOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in [
            "p_row_stochastic",
            "p_irreducible",
            "stationary_residual",
            "composite",
            "union",
            "passed",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["composite"]["status"], "checked");
    }
}
