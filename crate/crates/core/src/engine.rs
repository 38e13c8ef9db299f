//! One search episode: agents walk, talk to co-located (or nearby) agents,
//! sense the feature, and stop once every information state is within
//! `epsilon` of the reference.
//!
//! Each step `k` runs, in order:
//!
//! 1. communication graph from the positions at `k`,
//! 2. gates from the positions at `k`,
//! 3. reference sample (only drawn when some gate is active),
//! 4. synchronous consensus update,
//! 5. one random-walk move for every agent, in agent order,
//! 6. consensus test against the nominal reference; on success `T_c = k + 1`.
//!
//! Randomness comes from a single [`SimRng`] stream seeded by the config seed
//! and consumed in this fixed order: initial states (unless given), initial
//! positions (unless given), then per step the reference draw(s) followed by
//! the moves.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::consensus::{check_alpha, consensus_reached, step_into, FeatureSet};
use crate::grid::{build_grid, transition_matrix, Node, SpatialGrid, TransitionMatrix};
use crate::mobility::{
    sample_initial_positions, seeded_rng, step_unchecked, AgentPositions, SimRng,
};
use crate::network::{comm_graph_unchecked, AgentPair, CommGraph};
use crate::{Error, Result};

/// How the configured noise level is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    #[default]
    Variance,
    StdDev,
}

/// Whether gated agents share one reference draw per step or draw their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSharing {
    #[default]
    Shared,
    PerAgent,
}

/// Full description of an episode. Every field has a default, so a JSON
/// object only needs the fields that differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Nodes per grid side, `c`.
    pub grid_dim: usize,
    /// Node spacing in metres.
    pub spacing: f64,
    pub agents: usize,
    /// Consensus gain; must satisfy `0 < alpha <= 1/(agents-1)`.
    pub alpha: f64,
    pub epsilon: f64,
    pub feature_nodes: Vec<Node>,
    /// Nominal reference information state.
    pub reference: f64,
    /// Noise level of the reference measurement, read per `noise_scale`.
    pub reference_noise: f64,
    pub noise_scale: NoiseScale,
    pub noise_sharing: NoiseSharing,
    /// Communication radius; 0 means only co-located agents talk.
    pub comm_radius: f64,
    /// Upper bound on `comm_radius`; defaults to the grid diagonal.
    pub max_comm_radius: Option<f64>,
    pub seed: u64,
    pub max_steps: u64,
    pub record_history: bool,
    /// Wall-clock seconds represented by one step.
    pub step_seconds: f64,
    /// Fixed initial information states instead of uniform draws.
    pub initial_xi: Option<Vec<f64>>,
    /// Fixed initial positions instead of uniform draws.
    pub initial_positions: Option<Vec<Node>>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            grid_dim: 5,
            spacing: 1.0,
            agents: 5,
            alpha: 1.0 / 13.0,
            epsilon: 0.01,
            feature_nodes: [3, 4, 5].map(Node::from_index).to_vec(),
            reference: 1.0,
            reference_noise: 0.0,
            noise_scale: NoiseScale::Variance,
            noise_sharing: NoiseSharing::Shared,
            comm_radius: 0.0,
            max_comm_radius: None,
            seed: 0,
            max_steps: 100_000,
            record_history: false,
            step_seconds: 1.0,
            initial_xi: None,
            initial_positions: None,
        }
    }
}

impl EpisodeConfig {
    /// Checks every bound and builds the grid, transition matrix and feature set.
    pub fn prepare(&self) -> Result<Scenario> {
        let grid = build_grid(self.grid_dim, self.spacing)?;
        if self.agents == 0 {
            return Err(Error::config("agents", "must be at least 1"));
        }
        check_alpha(self.alpha, self.agents)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(
                "epsilon",
                format!("must lie in (0, 1), got {}", self.epsilon),
            ));
        }
        let features = FeatureSet::new(&grid, &self.feature_nodes)?;
        if !self.reference.is_finite() {
            return Err(Error::config("reference", "must be finite"));
        }
        let noise =
            ReferenceNoise::new(self.reference_noise, self.noise_scale, self.noise_sharing)?;
        let max_radius = self.max_comm_radius.unwrap_or_else(|| grid.diagonal());
        if !(self.comm_radius.is_finite() && self.comm_radius >= 0.0) {
            return Err(Error::config(
                "comm_radius",
                "must be a non-negative length",
            ));
        }
        if self.comm_radius > max_radius {
            return Err(Error::config(
                "comm_radius",
                format!(
                    "{} exceeds the maximum radius {max_radius}",
                    self.comm_radius
                ),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be at least 1"));
        }
        if !(self.step_seconds.is_finite() && self.step_seconds > 0.0) {
            return Err(Error::config("step_seconds", "must be positive"));
        }
        if let Some(xi) = &self.initial_xi {
            if xi.len() != self.agents {
                return Err(Error::config(
                    "initial_xi",
                    format!("expected {} values, got {}", self.agents, xi.len()),
                ));
            }
            if xi.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("initial_xi", "values must be finite"));
            }
        }
        if let Some(pos) = &self.initial_positions {
            if pos.len() != self.agents {
                return Err(Error::config(
                    "initial_positions",
                    format!("expected {} nodes, got {}", self.agents, pos.len()),
                ));
            }
            AgentPositions(pos.clone())
                .validate(&grid)
                .map_err(|e| Error::config("initial_positions", e.to_string()))?;
        }
        let transitions = transition_matrix(&grid);
        Ok(Scenario {
            config: self.clone(),
            grid,
            transitions,
            features,
            noise,
        })
    }
}

/// Reference measurement model: a fixed nominal value or a Gaussian around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceNoise {
    std_dev: f64,
    sharing: NoiseSharing,
}

impl ReferenceNoise {
    pub fn new(level: f64, scale: NoiseScale, sharing: NoiseSharing) -> Result<Self> {
        if !(level.is_finite() && level >= 0.0) {
            return Err(Error::config(
                "reference_noise",
                format!("must be non-negative, got {level}"),
            ));
        }
        let std_dev = match scale {
            NoiseScale::Variance => level.sqrt(),
            NoiseScale::StdDev => level,
        };
        Ok(Self { std_dev, sharing })
    }

    pub fn is_exact(&self) -> bool {
        self.std_dev == 0.0
    }

    /// One draw; the nominal value itself when noise-free (no randomness consumed).
    pub fn sample<R: Rng + ?Sized>(&self, nominal: f64, rng: &mut R) -> f64 {
        if self.is_exact() {
            return nominal;
        }
        Normal::new(nominal, self.std_dev)
            .expect("finite non-negative std dev")
            .sample(rng)
    }
}

/// Reference draw with mean `nominal` and the given variance.
pub fn sample_reference<R: Rng + ?Sized>(nominal: f64, variance: f64, rng: &mut R) -> Result<f64> {
    let noise = ReferenceNoise::new(variance, NoiseScale::Variance, NoiseSharing::Shared)?;
    Ok(noise.sample(nominal, rng))
}

/// Whether an episode hit the consensus test before the step cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    NotReached,
}

/// Snapshot of the system at time `step`: positions, the gates and links they
/// induce, and the information states entering that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub positions: Vec<Node>,
    pub gates: Vec<bool>,
    pub edges: Vec<AgentPair>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub outcome: Outcome,
    pub consensus_time_steps: Option<u64>,
    pub consensus_time_s: Option<f64>,
    pub steps_executed: u64,
    pub final_xi: Vec<f64>,
    /// Number of (agent, step) pairs with an active gate.
    pub detection_events: u64,
    /// Records for `k = 0..=steps_executed`; only populated when requested.
    #[serde(skip)]
    pub history: Option<Vec<StepRecord>>,
}

impl EpisodeResult {
    pub fn reached(&self) -> bool {
        self.outcome == Outcome::Reached
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// A validated configuration with its grid, transition matrix and feature set.
#[derive(Debug, Clone)]
pub struct Scenario {
    config: EpisodeConfig,
    grid: SpatialGrid,
    transitions: TransitionMatrix,
    features: FeatureSet,
    noise: ReferenceNoise,
}

impl Scenario {
    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn transitions(&self) -> &TransitionMatrix {
        &self.transitions
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    /// Runs the episode with the configured seed.
    pub fn run(&self) -> EpisodeResult {
        self.run_with_seed(self.config.seed)
    }

    pub fn run_with_seed(&self, seed: u64) -> EpisodeResult {
        let cfg = &self.config;
        let n = cfg.agents;
        let mut rng: SimRng = seeded_rng(seed);

        let mut xi: Vec<f64> = match &cfg.initial_xi {
            Some(v) => v.clone(),
            None => (0..n).map(|_| rng.random::<f64>()).collect(),
        };
        let mut positions = match &cfg.initial_positions {
            Some(p) => AgentPositions(p.clone()),
            None => sample_initial_positions(&self.grid, n, &mut rng).expect("agents >= 1"),
        };

        let mut next = vec![0.0; n];
        let mut gates = vec![false; n];
        let mut samples = vec![cfg.reference; n];
        let mut history = cfg.record_history.then(Vec::new);
        let mut detection_events = 0u64;
        let mut reached_at = None;

        let mut k = 0u64;
        while k < cfg.max_steps {
            let graph = comm_graph_unchecked(&positions, &self.grid, cfg.comm_radius);
            for (g, &p) in gates.iter_mut().zip(positions.as_slice()) {
                *g = self.features.contains(p);
            }
            if let Some(h) = history.as_mut() {
                h.push(self.record(k, &positions, &gates, &graph, &xi));
            }

            let gated = gates.iter().filter(|&&g| g).count();
            detection_events += gated as u64;
            if gated > 0 && !self.noise.is_exact() {
                match self.noise.sharing {
                    NoiseSharing::Shared => {
                        let s = self.noise.sample(cfg.reference, &mut rng);
                        samples.iter_mut().for_each(|x| *x = s);
                    }
                    NoiseSharing::PerAgent => {
                        for a in (0..n).filter(|&a| gates[a]) {
                            samples[a] = self.noise.sample(cfg.reference, &mut rng);
                        }
                    }
                }
            }
            step_into(&xi, &gates, &graph, cfg.alpha, |a| samples[a], &mut next);
            std::mem::swap(&mut xi, &mut next);

            for p in positions.0.iter_mut() {
                *p = step_unchecked(&self.transitions, *p, &mut rng);
            }
            k += 1;

            if consensus_reached(&xi, cfg.reference, cfg.epsilon) {
                reached_at = Some(k);
                break;
            }
        }

        if let Some(h) = history.as_mut() {
            let graph = comm_graph_unchecked(&positions, &self.grid, cfg.comm_radius);
            for (g, &p) in gates.iter_mut().zip(positions.as_slice()) {
                *g = self.features.contains(p);
            }
            h.push(self.record(k, &positions, &gates, &graph, &xi));
        }

        EpisodeResult {
            seed,
            outcome: if reached_at.is_some() {
                Outcome::Reached
            } else {
                Outcome::NotReached
            },
            consensus_time_steps: reached_at,
            consensus_time_s: reached_at.map(|s| s as f64 * cfg.step_seconds),
            steps_executed: k,
            final_xi: xi,
            detection_events,
            history,
        }
    }

    fn record(
        &self,
        step: u64,
        positions: &AgentPositions,
        gates: &[bool],
        graph: &CommGraph,
        xi: &[f64],
    ) -> StepRecord {
        StepRecord {
            step,
            positions: positions.0.clone(),
            gates: gates.to_vec(),
            edges: graph.edges(),
            xi: xi.to_vec(),
        }
    }
}

/// Validates `config` and runs it with its own seed.
pub fn run_episode(config: &EpisodeConfig) -> Result<EpisodeResult> {
    Ok(config.prepare()?.run())
}

/// Writes history as CSV: `step,agent_id,node,xi,gate`, one row per agent per step.
/// `xi` is the state entering the step; agent ids and nodes are 1-based.
pub fn write_history_csv<W: Write>(history: &[StepRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "agent_id", "node", "xi", "gate"])?;
    for rec in history {
        for (a, ((node, xi), gate)) in rec
            .positions
            .iter()
            .zip(&rec.xi)
            .zip(&rec.gates)
            .enumerate()
        {
            w.serialize((rec.step, a + 1, node.label(), xi, u8::from(*gate)))?;
        }
    }
    w.flush()?;
    Ok(())
}
