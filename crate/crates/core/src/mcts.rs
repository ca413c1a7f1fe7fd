//! PUCT Monte-Carlo tree search.
//!
//! Visit accounting: the root is expanded before the first simulation and
//! that evaluation is not a simulation, so the root's edge visits sum to
//! `num_simulations`. Every other node is expanded by the simulation that
//! first reaches it; that simulation's backup increments the edge into the
//! node but none of the node's own edges. For an expanded non-root node,
//! `sum_b N(s, b) == N(parent, a) - 1`. Terminal nodes have no edges.
//!
//! Values are from the perspective of the player to move at the node that
//! owns the edge; backup negates once per ply.

use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::game::{ActionIndex, GameKind, GameState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletNoise {
    pub alpha: f64,
    pub fraction: f64,
}

impl DirichletNoise {
    pub fn for_game(game: GameKind) -> Self {
        DirichletNoise { alpha: 10.0 / game.spec().action_count as f64, fraction: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub num_simulations: usize,
    pub c_puct: f32,
    /// Sampling temperature before `temperature_drop_ply`; greedy afterwards.
    pub temperature: f64,
    pub temperature_drop_ply: usize,
    pub root_noise: Option<DirichletNoise>,
}

impl SearchConfig {
    pub fn for_game(game: GameKind) -> Self {
        let (num_simulations, temperature_drop_ply) = match game {
            GameKind::Ttt3 => (25, 5),
            GameKind::Ttt4 => (25, 9),
            GameKind::Connect4 => (50, 21),
        };
        SearchConfig { num_simulations, c_puct: 2.0, temperature: 1.0, temperature_drop_ply, root_noise: None }
    }

    pub fn temperature_at(&self, ply: usize) -> Temperature {
        if ply < self.temperature_drop_ply && self.temperature > 0.0 {
            Temperature::Soft(self.temperature)
        } else {
            Temperature::Greedy
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_simulations == 0 {
            return Err(Error::Config("num_simulations must be at least 1".into()));
        }
        if !(self.c_puct >= 0.0) || !(self.temperature >= 0.0) {
            return Err(Error::Config("c_puct and temperature must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    /// One-hot on the most visited action, lowest index on ties.
    Greedy,
    Soft(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub action: ActionIndex,
    pub visits: u32,
    pub total_value: f32,
    pub prior: f32,
    child: Option<usize>,
}

impl EdgeStats {
    pub fn mean_value(&self) -> f32 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_value / self.visits as f32
        }
    }

    pub fn child(&self) -> Option<usize> {
        self.child
    }
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: GameState,
    /// Exact value for the side to move when the node is terminal.
    pub terminal: Option<f32>,
    pub edges: Vec<EdgeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub action: ActionIndex,
    #[serde(rename = "N")]
    pub visits: u32,
    #[serde(rename = "W")]
    pub total_value: f32,
    #[serde(rename = "Q")]
    pub mean_value: f32,
    #[serde(rename = "P")]
    pub prior: f32,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    action_count: usize,
    simulations: usize,
}

impl SearchTree {
    pub const ROOT: usize = 0;

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn simulations(&self) -> usize {
        self.simulations
    }

    /// Root visit counts indexed by action.
    pub fn visit_counts(&self) -> Vec<u32> {
        let mut counts = vec![0; self.action_count];
        for e in &self.root().edges {
            counts[e.action] = e.visits;
        }
        counts
    }

    pub fn search_policy(&self, temperature: Temperature) -> Result<Vec<f32>> {
        search_policy(&self.visit_counts(), temperature)
    }

    /// Visit-weighted mean of the root's edge values, for the root mover.
    pub fn root_value(&self) -> f32 {
        let (w, n) = self.root().edges.iter().fold((0.0, 0u32), |(w, n), e| (w + e.total_value, n + e.visits));
        if n == 0 {
            0.0
        } else {
            w / n as f32
        }
    }

    pub fn root_edges(&self) -> Vec<EdgeRecord> {
        self.root()
            .edges
            .iter()
            .map(|e| EdgeRecord {
                action: e.action,
                visits: e.visits,
                total_value: e.total_value,
                mean_value: e.mean_value(),
                prior: e.prior,
            })
            .collect()
    }

    pub fn root_edges_json(&self) -> String {
        serde_json::to_string_pretty(&self.root_edges()).expect("edge records serialize")
    }
}

/// `pi(a) = N(a)^(1/tau) / sum_b N(b)^(1/tau)`, or one-hot on the argmax when greedy.
pub fn search_policy(counts: &[u32], temperature: Temperature) -> Result<Vec<f32>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::Search("no visits at the root".into()));
    }
    let mut pi = vec![0.0; counts.len()];
    match temperature {
        Temperature::Greedy => {
            let best = counts.iter().position(|&n| n == max).expect("max exists");
            pi[best] = 1.0;
        }
        Temperature::Soft(tau) => {
            let exponent = 1.0 / tau;
            let weights: Vec<f64> = counts.iter().map(|&n| (n as f64 / max as f64).powf(exponent)).collect();
            let total: f64 = weights.iter().sum();
            for (p, w) in pi.iter_mut().zip(weights) {
                *p = (w / total) as f32;
            }
        }
    }
    Ok(pi)
}

fn expand(state: &GameState, priors: &[f32]) -> Vec<EdgeStats> {
    let mask = state.legal_actions().expect("expanded node is non-terminal");
    mask.iter()
        .map(|a| EdgeStats { action: a, visits: 0, total_value: 0.0, prior: priors[a], child: None })
        .collect()
}

fn select_edge(node: &SearchNode, c_puct: f32) -> usize {
    let total: u32 = node.edges.iter().map(|e| e.visits).sum();
    let sqrt_total = (total as f32).sqrt();
    let mut best = 0;
    let mut best_score = f32::NEG_INFINITY;
    let mut best_prior = f32::NEG_INFINITY;
    for (i, e) in node.edges.iter().enumerate() {
        let score = e.mean_value() + c_puct * e.prior * sqrt_total / (1.0 + e.visits as f32);
        // ties (e.g. at a fresh node where every bonus is zero) go to the larger prior
        if score > best_score || (score == best_score && e.prior > best_prior) {
            best = i;
            best_score = score;
            best_prior = e.prior;
        }
    }
    best
}

/// Runs `cfg.num_simulations` PUCT simulations from `root`.
pub fn run_search<E: Evaluator + ?Sized>(
    root: &GameState,
    evaluator: &E,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> Result<SearchTree> {
    cfg.validate()?;
    let mask = root.legal_actions()?;
    let (mut priors, _) = evaluator.evaluate(root, mask)?;
    if let Some(noise) = cfg.root_noise {
        if mask.count() > 1 {
            let dirichlet = Dirichlet::new_with_size(noise.alpha, mask.count())
                .map_err(|e| Error::Search(format!("dirichlet noise: {e}")))?;
            let eta = dirichlet.sample(rng);
            for (a, n) in mask.iter().zip(eta) {
                priors[a] = ((1.0 - noise.fraction) * priors[a] as f64 + noise.fraction * n) as f32;
            }
        }
    }
    let action_count = root.spec().action_count;
    let mut tree = SearchTree {
        nodes: vec![SearchNode { state: *root, terminal: None, edges: expand(root, &priors) }],
        action_count,
        simulations: 0,
    };
    let mut path: Vec<(usize, usize)> = Vec::with_capacity(root.spec().cells() + 1);
    for _ in 0..cfg.num_simulations {
        path.clear();
        let mut node = SearchTree::ROOT;
        let leaf_value = loop {
            let edge = select_edge(&tree.nodes[node], cfg.c_puct);
            path.push((node, edge));
            match tree.nodes[node].edges[edge].child {
                Some(child) => {
                    if let Some(v) = tree.nodes[child].terminal {
                        break v;
                    }
                    node = child;
                }
                None => {
                    let action = tree.nodes[node].edges[edge].action;
                    let state = tree.nodes[node].state.apply(action)?;
                    let id = tree.nodes.len();
                    tree.nodes[node].edges[edge].child = Some(id);
                    if let Some(z) = state.terminal_value() {
                        let v = z.as_f32();
                        tree.nodes.push(SearchNode { state, terminal: Some(v), edges: Vec::new() });
                        break v;
                    }
                    let mask = state.legal_actions()?;
                    let (priors, value) = evaluator.evaluate(&state, mask)?;
                    let edges = expand(&state, &priors);
                    tree.nodes.push(SearchNode { state, terminal: None, edges });
                    break value;
                }
            }
        };
        // leaf_value is for the leaf's mover; each edge stores its owner's view
        let mut v = leaf_value;
        for &(node, edge) in path.iter().rev() {
            v = -v;
            let e = &mut tree.nodes[node].edges[edge];
            e.visits += 1;
            e.total_value += v;
        }
        tree.simulations += 1;
    }
    Ok(tree)
}
