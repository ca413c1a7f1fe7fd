//! Measurements against the oracle: match play, value error, generalization
//! by training visitation, policy-value misalignment and adversarial endgames.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::game::{ActionIndex, ActionMask, GameKind, GameState, Player, StateKey};
use crate::mcts::{run_search, SearchConfig, Temperature};
use crate::oracle::{endgame_solve, enumerate_states, oracle_opponent, EndgameBudget, EndgameOracle, StateTable};
use crate::par::par_map;
use crate::training::{sample_action, value_policy};

/// Error thresholds reported for value predictions (strict `>`).
pub const ERROR_THRESHOLDS: [f64; 3] = [1.0, 3.0, 3.5];
pub const KL_SMOOTHING: f64 = 1e-6;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub trait Agent: Sync {
    fn choose(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<ActionIndex>;
}

/// Plays the most visited root action of a fresh search, without root noise.
pub struct SearchAgent<'a, E: ?Sized> {
    pub evaluator: &'a E,
    pub search: SearchConfig,
}

impl<'a, E: Evaluator + ?Sized> SearchAgent<'a, E> {
    pub fn new(evaluator: &'a E, search: &SearchConfig) -> Self {
        SearchAgent { evaluator, search: SearchConfig { root_noise: None, ..search.clone() } }
    }
}

impl<E: Evaluator + ?Sized> Agent for SearchAgent<'_, E> {
    fn choose(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<ActionIndex> {
        let tree = run_search(state, self.evaluator, &self.search, rng)?;
        let pi = tree.search_policy(Temperature::Greedy)?;
        Ok(pi.iter().position(|&p| p == 1.0).expect("greedy policy is one-hot"))
    }
}

/// Acts from the network's policy head alone: samples from `p`, or takes its
/// argmax when `greedy`.
pub struct PolicyAgent<'a, E: ?Sized> {
    pub evaluator: &'a E,
    pub greedy: bool,
}

impl<E: Evaluator + ?Sized> Agent for PolicyAgent<'_, E> {
    fn choose(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<ActionIndex> {
        let (p, _) = self.evaluator.evaluate(state, state.legal_actions()?)?;
        if self.greedy {
            let mut best = 0;
            for (a, &x) in p.iter().enumerate() {
                if x > p[best] {
                    best = a;
                }
            }
            Ok(best)
        } else {
            sample_action(&p, rng)
        }
    }
}

pub struct OracleAgent<'a> {
    pub table: &'a StateTable,
}

impl Agent for OracleAgent<'_> {
    fn choose(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<ActionIndex> {
        Ok(oracle_opponent(state, self.table, rng)?)
    }
}

pub struct RandomAgent;

impl Agent for RandomAgent {
    fn choose(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<ActionIndex> {
        let actions: Vec<_> = state.legal_actions()?.iter().collect();
        Ok(*actions.choose(rng).expect("non-terminal state has a legal action"))
    }
}

/// Game results from the evaluated agent's point of view.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchScore {
    pub wins: u64,
    pub draws: u64,
    pub losses: u64,
}

impl MatchScore {
    pub fn games(&self) -> u64 {
        self.wins + self.draws + self.losses
    }

    pub fn non_loss_rate(&self) -> f64 {
        (self.wins + self.draws) as f64 / self.games().max(1) as f64
    }

    pub fn loss_rate(&self) -> f64 {
        self.losses as f64 / self.games().max(1) as f64
    }

    pub fn add(&mut self, other: MatchScore) {
        self.wins += other.wins;
        self.draws += other.draws;
        self.losses += other.losses;
    }
}

/// Plays `n_games` from the empty board. The agent moves first in even games
/// and second in odd ones; game `i` uses RNG stream `i` of `seed`.
pub fn play_matches(
    game: GameKind,
    agent: &dyn Agent,
    opponent: &dyn Agent,
    n_games: usize,
    seed: u64,
    workers: usize,
) -> Result<MatchScore> {
    let results = par_map(n_games, workers, |i| -> Result<i8> {
        let mut rng = stream_rng(seed, i as u64);
        let agent_player = if i % 2 == 0 { Player::P1 } else { Player::P2 };
        let mut state = GameState::initial(game);
        loop {
            if let Some(z) = state.terminal_value() {
                return Ok(z.relative_to(state.to_move(), agent_player).value());
            }
            let mover = if state.to_move() == agent_player { agent } else { opponent };
            state = state.apply(mover.choose(&state, &mut rng)?)?;
        }
    });
    let mut score = MatchScore::default();
    for r in results {
        match r? {
            1 => score.wins += 1,
            0 => score.draws += 1,
            _ => score.losses += 1,
        }
    }
    Ok(score)
}

/// Matches against the oracle over several seeds, summed.
pub fn evaluate_matches<E: Evaluator + ?Sized>(
    evaluator: &E,
    table: &StateTable,
    search: Option<&SearchConfig>,
    policy_greedy: bool,
    n_games: usize,
    seeds: &[u64],
    workers: usize,
) -> Result<MatchScore> {
    let oracle = OracleAgent { table };
    let mut total = MatchScore::default();
    for &seed in seeds {
        let score = match search {
            Some(cfg) => play_matches(table.game(), &SearchAgent::new(evaluator, cfg), &oracle, n_games, seed, workers)?,
            None => {
                let agent = PolicyAgent { evaluator, greedy: policy_greedy };
                play_matches(table.game(), &agent, &oracle, n_games, seed, workers)?
            }
        };
        total.add(score);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram { lo, hi, counts: vec![0; bins] }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Values outside `[lo, hi]` are clamped into the end bins.
    pub fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let i = ((x - self.lo) / self.bin_width()).floor();
        let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(bins - 1) };
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(lower edge, upper edge, count)` per bin.
    pub fn bins(&self) -> Vec<(f64, f64, u64)> {
        let w = self.bin_width();
        self.counts.iter().enumerate().map(|(i, &c)| (self.lo + w * i as f64, self.lo + w * (i + 1) as f64, c)).collect()
    }
}

pub fn value_error(value: f64, oracle: f64) -> f64 {
    (value - oracle).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateError {
    pub key: StateKey,
    pub value: f32,
    pub oracle: i8,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueErrorSummary {
    pub states: usize,
    pub mean_error: f64,
    /// `(threshold, fraction of states with error > threshold)`.
    pub above_threshold: Vec<(f64, f64)>,
    /// Squared errors over `[0, 4]`.
    pub histogram: Histogram,
    /// Signed errors `v - z` over `[-2, 2]`.
    pub signed_histogram: Histogram,
}

impl ValueErrorSummary {
    pub fn from_errors(errors: &[StateError]) -> Self {
        let mut histogram = Histogram::new(0.0, 4.0, 16);
        let mut signed_histogram = Histogram::new(-2.0, 2.0, 16);
        for e in errors {
            histogram.add(e.error);
            signed_histogram.add(e.value as f64 - e.oracle as f64);
        }
        let n = errors.len().max(1) as f64;
        ValueErrorSummary {
            states: errors.len(),
            mean_error: errors.iter().map(|e| e.error).sum::<f64>() / n,
            above_threshold: ERROR_THRESHOLDS
                .iter()
                .map(|&t| (t, errors.iter().filter(|e| e.error > t).count() as f64 / n))
                .collect(),
            histogram,
            signed_histogram,
        }
    }

    pub fn fraction_above(&self, threshold: f64) -> Option<f64> {
        self.above_threshold.iter().find(|(t, _)| *t == threshold).map(|&(_, f)| f)
    }
}

/// Squared value error of the evaluator on each state against the oracle table.
pub fn value_error_scan<E: Evaluator + ?Sized>(
    evaluator: &E,
    states: &[GameState],
    table: &StateTable,
    workers: usize,
) -> Result<(ValueErrorSummary, Vec<StateError>)> {
    let errors = par_map(states.len(), workers, |i| -> Result<StateError> {
        let s = &states[i];
        let oracle = table.value(s)?;
        let value = evaluator.value(s)?;
        Ok(StateError { key: s.key(), value, oracle, error: value_error(value as f64, oracle as f64) })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((ValueErrorSummary::from_errors(&errors), errors))
}

/// Every reachable non-terminal position of `game`.
pub fn nonterminal_states(game: GameKind, max_states: usize) -> Result<Vec<GameState>> {
    Ok(enumerate_states(game, max_states)?.into_iter().filter(|s| !s.is_terminal()).collect())
}

/// `KL(p || q)` over the legal actions after adding `delta` to both and renormalizing.
pub fn kl_divergence(p: &[f32], q: &[f32], mask: ActionMask, delta: f64) -> f64 {
    let smooth = |d: &[f32]| {
        let total: f64 = mask.iter().map(|a| d[a] as f64 + delta).sum();
        mask.iter().map(|a| (d[a] as f64 + delta) / total).collect::<Vec<_>>()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    ps.iter().zip(&qs).map(|(&pa, &qa)| pa * (pa / qa).ln()).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    /// Root visit distribution at temperature 1.
    SearchVisits,
    /// One-hot on the most visited action.
    SearchGreedy,
    /// The raw policy head.
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentConfig {
    pub search: SearchConfig,
    pub policy: PolicySource,
    pub value_temp: f64,
    pub delta: f64,
}

impl MisalignmentConfig {
    pub fn for_game(game: GameKind) -> Self {
        MisalignmentConfig {
            search: SearchConfig::for_game(game),
            policy: PolicySource::SearchVisits,
            value_temp: 1.0,
            delta: KL_SMOOTHING,
        }
    }
}

pub fn policy_for<E: Evaluator + ?Sized>(
    state: &GameState,
    evaluator: &E,
    cfg: &MisalignmentConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    let search = SearchConfig { root_noise: None, ..cfg.search.clone() };
    match cfg.policy {
        PolicySource::SearchVisits => run_search(state, evaluator, &search, rng)?.search_policy(Temperature::Soft(1.0)),
        PolicySource::SearchGreedy => run_search(state, evaluator, &search, rng)?.search_policy(Temperature::Greedy),
        PolicySource::Network => Ok(evaluator.evaluate(state, state.legal_actions()?)?.0),
    }
}

/// `KL(pi_p || pi_v)` at one non-terminal state.
pub fn misalignment<E: Evaluator + ?Sized>(
    state: &GameState,
    evaluator: &E,
    cfg: &MisalignmentConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let pi_p = policy_for(state, evaluator, cfg, rng)?;
    let pi_v = value_policy(state, evaluator, cfg.value_temp)?;
    Ok(kl_divergence(&pi_p, &pi_v, state.legal_actions()?, cfg.delta))
}

/// Per-state misalignment; state `i` searches with RNG stream `i` of `seed`.
pub fn misalignment_scan<E: Evaluator + ?Sized>(
    evaluator: &E,
    states: &[GameState],
    cfg: &MisalignmentConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>> {
    par_map(states.len(), workers, |i| misalignment(&states[i], evaluator, cfg, &mut stream_rng(seed, i as u64)))
        .into_iter()
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Training-visitation buckets: `(label, min, max)` inclusive.
pub const VISIT_BUCKETS: [(&str, u64, u64); 5] =
    [("0", 0, 0), ("1-10", 1, 10), ("11-100", 11, 100), ("101-1k", 101, 1000), (">1k", 1001, u64::MAX)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub label: String,
    pub min_visits: u64,
    pub max_visits: u64,
    pub states: usize,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCurve {
    /// Non-empty buckets only, in visitation order.
    pub buckets: Vec<BucketStat>,
    pub zero_visit_bucket_empty: bool,
    /// Mean error over never-visited states.
    pub generalization_error: Option<f64>,
}

pub fn generalization_curve(errors: &[StateError], visits: &FxHashMap<StateKey, u64>) -> GeneralizationCurve {
    let mut sums = [(0usize, 0.0f64); VISIT_BUCKETS.len()];
    for e in errors {
        let n = visits.get(&e.key).copied().unwrap_or(0);
        let b = VISIT_BUCKETS.iter().position(|&(_, lo, hi)| (lo..=hi).contains(&n)).expect("buckets cover u64");
        sums[b].0 += 1;
        sums[b].1 += e.error;
    }
    let buckets: Vec<BucketStat> = VISIT_BUCKETS
        .iter()
        .zip(sums)
        .filter(|(_, (count, _))| *count > 0)
        .map(|(&(label, lo, hi), (count, sum))| BucketStat {
            label: label.to_string(),
            min_visits: lo,
            max_visits: hi,
            states: count,
            mean_error: sum / count as f64,
        })
        .collect();
    let generalization_error = buckets.iter().find(|b| b.min_visits == 0).map(|b| b.mean_error);
    GeneralizationCurve { zero_visit_bucket_empty: generalization_error.is_none(), buckets, generalization_error }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub game: GameKind,
    pub search: SearchConfig,
    pub n_games: usize,
    pub threshold: f64,
    pub budget: EndgameBudget,
    pub value_temp: f64,
    pub seed: u64,
    pub workers: usize,
}

impl AdversarialConfig {
    pub fn for_game(game: GameKind, n_games: usize) -> Self {
        AdversarialConfig {
            game,
            search: SearchConfig::for_game(game),
            n_games,
            threshold: 1.0,
            budget: EndgameBudget::for_game(game),
            value_temp: 1.0,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialState {
    pub key: StateKey,
    pub board: String,
    pub network_value: f32,
    pub oracle_value: i8,
    pub error: f64,
    pub search_policy: Vec<f32>,
    pub value_policy: Vec<f32>,
    pub misalignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialStateSet {
    pub game: GameKind,
    pub threshold: f64,
    pub games: usize,
    /// Distinct non-terminal endgame positions reached.
    pub endgame_states_seen: usize,
    /// Positions the solver could not finish within budget.
    pub skipped: usize,
    pub states: Vec<AdversarialState>,
}

impl AdversarialStateSet {
    pub fn mean_error(&self) -> f64 {
        mean(&self.states.iter().map(|s| s.error).collect::<Vec<_>>())
    }

    /// Re-solves every stored state and checks its error still exceeds the threshold.
    pub fn verify(&self) -> Result<bool> {
        let mut seen = FxHashSet::default();
        for s in &self.states {
            let state = GameState::from_key(s.key)?;
            let entry = endgame_solve(&state, EndgameBudget { max_empty_cells: state.empty_cells(), ..EndgameBudget::for_game(self.game) })?;
            let e = value_error(s.network_value as f64, entry.value as f64);
            if entry.value != s.oracle_value || !(e > self.threshold) || !seen.insert(s.key) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Self-play in which every move is the least likely action under the search
/// policy (random among ties). Endgame positions met on the way are solved
/// exactly; those whose value error exceeds the threshold are kept.
pub fn adversarial_detect<E: Evaluator + ?Sized>(evaluator: &E, cfg: &AdversarialConfig) -> Result<AdversarialStateSet> {
    let game = cfg.game;
    let search = SearchConfig { root_noise: None, ..cfg.search.clone() };
    let games = par_map(cfg.n_games, cfg.workers, |i| -> Result<Vec<GameState>> {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let mut state = GameState::initial(game);
        let mut endgames = Vec::new();
        while !state.is_terminal() {
            if state.empty_cells() <= cfg.budget.max_empty_cells {
                endgames.push(state);
            }
            let pi = run_search(&state, evaluator, &search, &mut rng)?.search_policy(Temperature::Soft(1.0))?;
            let mask = state.legal_actions()?;
            let min = mask.iter().map(|a| pi[a]).fold(f32::INFINITY, f32::min);
            let candidates: Vec<_> = mask.iter().filter(|&a| pi[a] == min).collect();
            state = state.apply(*candidates.choose(&mut rng).expect("at least one minimum"))?;
        }
        Ok(endgames)
    });
    let mut seen = FxHashSet::default();
    let mut unique = Vec::new();
    for endgames in games {
        for s in endgames? {
            if seen.insert(s.key()) {
                unique.push(s);
            }
        }
    }
    let mut oracle = EndgameOracle::new(cfg.budget);
    let mut skipped = 0;
    let mut flagged = Vec::new();
    for s in &unique {
        let entry = match oracle.solve(s) {
            Ok(e) => e,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let v = evaluator.value(s)?;
        let e = value_error(v as f64, entry.value as f64);
        if e > cfg.threshold {
            flagged.push((*s, v, entry.value, e));
        }
    }
    let mis_cfg = MisalignmentConfig {
        search: search.clone(),
        policy: PolicySource::SearchVisits,
        value_temp: cfg.value_temp,
        delta: KL_SMOOTHING,
    };
    let states = par_map(flagged.len(), cfg.workers, |i| -> Result<AdversarialState> {
        let (s, v, z, e) = flagged[i];
        let mut rng = stream_rng(cfg.seed ^ 0xadde_0000, i as u64);
        let pi_p = policy_for(&s, evaluator, &mis_cfg, &mut rng)?;
        let pi_v = value_policy(&s, evaluator, cfg.value_temp)?;
        Ok(AdversarialState {
            key: s.key(),
            board: s.render(),
            network_value: v,
            oracle_value: z,
            error: e,
            misalignment: kl_divergence(&pi_p, &pi_v, s.legal_actions()?, KL_SMOOTHING),
            search_policy: pi_p,
            value_policy: pi_v,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(AdversarialStateSet {
        game,
        threshold: cfg.threshold,
        games: cfg.n_games,
        endgame_states_seen: unique.len(),
        skipped,
        states,
    })
}

/// Squared errors of another evaluator on a detected state set, against the
/// stored oracle values.
pub fn errors_on_states<E: Evaluator + ?Sized>(evaluator: &E, set: &AdversarialStateSet) -> Result<Vec<f64>> {
    set.states
        .iter()
        .map(|s| {
            let state = GameState::from_key(s.key)?;
            Ok(value_error(evaluator.value(&state)? as f64, s.oracle_value as f64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSummary {
    pub games: usize,
    pub threshold: f64,
    pub states: usize,
    pub mean_error: f64,
    pub mean_misalignment: f64,
}

impl From<&AdversarialStateSet> for AdversarialSummary {
    fn from(set: &AdversarialStateSet) -> Self {
        AdversarialSummary {
            games: set.games,
            threshold: set.threshold,
            states: set.states.len(),
            mean_error: set.mean_error(),
            mean_misalignment: mean(&set.states.iter().map(|s| s.misalignment).collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub game: GameKind,
    pub label: String,
    pub vs_oracle_with_search: Option<MatchScore>,
    pub vs_oracle_policy_only: Option<MatchScore>,
    pub value_error: Option<ValueErrorSummary>,
    pub misalignment_mean: Option<f64>,
    pub generalization_curve: Option<GeneralizationCurve>,
    pub adversarial: Option<AdversarialSummary>,
    pub seeds_aggregated: usize,
}

impl EvalReport {
    pub fn new(game: GameKind, label: impl Into<String>) -> Self {
        EvalReport {
            game,
            label: label.into(),
            vs_oracle_with_search: None,
            vs_oracle_policy_only: None,
            value_error: None,
            misalignment_mean: None,
            generalization_curve: None,
            adversarial: None,
            seeds_aggregated: 1,
        }
    }

    /// `(metric, value, lower is better)` for every metric present.
    pub fn metrics(&self) -> Vec<(&'static str, f64, bool)> {
        let mut out = Vec::new();
        if let Some(m) = &self.vs_oracle_with_search {
            out.push(("non_loss_rate_with_search", m.non_loss_rate(), false));
        }
        if let Some(m) = &self.vs_oracle_policy_only {
            out.push(("non_loss_rate_policy_only", m.non_loss_rate(), false));
        }
        if let Some(v) = &self.value_error {
            out.push(("mean_value_error", v.mean_error, true));
            for &(t, f) in &v.above_threshold {
                out.push((threshold_metric(t), f, true));
            }
        }
        if let Some(m) = self.misalignment_mean {
            out.push(("misalignment_mean", m, true));
        }
        if let Some(g) = self.generalization_curve.as_ref().and_then(|g| g.generalization_error) {
            out.push(("generalization_error", g, true));
        }
        if let Some(a) = &self.adversarial {
            out.push(("adversarial_states", a.states as f64, true));
            out.push(("adversarial_mean_error", a.mean_error, true));
        }
        out
    }

    /// Combines per-seed reports of one configuration: match counts and
    /// histograms are summed, means are averaged.
    pub fn aggregate(label: impl Into<String>, reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::Report("no reports to aggregate".into()))?;
        if reports.iter().any(|r| r.game != first.game) {
            return Err(Error::Report("reports are for different games".into()));
        }
        let mut out = EvalReport::new(first.game, label);
        out.seeds_aggregated = reports.iter().map(|r| r.seeds_aggregated).sum();
        let sum_scores = |f: fn(&EvalReport) -> Option<MatchScore>| {
            reports.iter().filter_map(f).reduce(|mut a, b| {
                a.add(b);
                a
            })
        };
        out.vs_oracle_with_search = sum_scores(|r| r.vs_oracle_with_search);
        out.vs_oracle_policy_only = sum_scores(|r| r.vs_oracle_policy_only);
        let avg = |xs: Vec<f64>| if xs.is_empty() { None } else { Some(mean(&xs)) };
        out.misalignment_mean = avg(reports.iter().filter_map(|r| r.misalignment_mean).collect());
        let summaries: Vec<&ValueErrorSummary> = reports.iter().filter_map(|r| r.value_error.as_ref()).collect();
        if let Some(s0) = summaries.first() {
            let mut merged = (*s0).clone();
            for s in &summaries[1..] {
                for (c, d) in merged.histogram.counts.iter_mut().zip(&s.histogram.counts) {
                    *c += d;
                }
                for (c, d) in merged.signed_histogram.counts.iter_mut().zip(&s.signed_histogram.counts) {
                    *c += d;
                }
                merged.states += s.states;
            }
            merged.mean_error = mean(&summaries.iter().map(|s| s.mean_error).collect::<Vec<_>>());
            for (i, (_, f)) in merged.above_threshold.iter_mut().enumerate() {
                *f = mean(&summaries.iter().map(|s| s.above_threshold[i].1).collect::<Vec<_>>());
            }
            out.value_error = Some(merged);
        }
        let curves: Vec<&GeneralizationCurve> = reports.iter().filter_map(|r| r.generalization_curve.as_ref()).collect();
        if !curves.is_empty() {
            let mut buckets = Vec::new();
            for &(label, lo, hi) in &VISIT_BUCKETS {
                let stats: Vec<&BucketStat> = curves.iter().filter_map(|c| c.buckets.iter().find(|b| b.label == label)).collect();
                if !stats.is_empty() {
                    buckets.push(BucketStat {
                        label: label.to_string(),
                        min_visits: lo,
                        max_visits: hi,
                        states: stats.iter().map(|b| b.states).sum(),
                        mean_error: mean(&stats.iter().map(|b| b.mean_error).collect::<Vec<_>>()),
                    });
                }
            }
            let generalization_error = buckets.iter().find(|b| b.min_visits == 0).map(|b| b.mean_error);
            out.generalization_curve =
                Some(GeneralizationCurve { zero_visit_bucket_empty: generalization_error.is_none(), buckets, generalization_error });
        }
        let adv: Vec<&AdversarialSummary> = reports.iter().filter_map(|r| r.adversarial.as_ref()).collect();
        if let Some(a0) = adv.first() {
            out.adversarial = Some(AdversarialSummary {
                games: adv.iter().map(|a| a.games).sum(),
                threshold: a0.threshold,
                states: adv.iter().map(|a| a.states).sum::<usize>() / adv.len(),
                mean_error: mean(&adv.iter().map(|a| a.mean_error).collect::<Vec<_>>()),
                mean_misalignment: mean(&adv.iter().map(|a| a.mean_misalignment).collect::<Vec<_>>()),
            });
        }
        Ok(out)
    }
}

fn threshold_metric(t: f64) -> &'static str {
    match t {
        t if t == 1.0 => "fraction_error_above_1.0",
        t if t == 3.0 => "fraction_error_above_3.0",
        _ => "fraction_error_above_3.5",
    }
}

/// Settings for a full evaluation of one trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub search: SearchConfig,
    pub n_games: usize,
    pub seeds: Vec<u64>,
    /// Policy-only play takes the argmax of the policy head instead of sampling.
    pub policy_greedy: bool,
    pub misalignment: MisalignmentConfig,
    /// Cap on enumerated positions for value-error and misalignment scans.
    pub max_states: usize,
    pub workers: usize,
}

impl EvalConfig {
    pub fn for_game(game: GameKind) -> Self {
        EvalConfig {
            search: SearchConfig::for_game(game),
            n_games: 1000,
            seeds: vec![0],
            policy_greedy: false,
            misalignment: MisalignmentConfig::for_game(game),
            max_states: 20_000_000,
            workers: 1,
        }
    }
}

/// Match play, value error, misalignment and (with `visits`) the
/// generalization curve over every reachable non-terminal position.
pub fn evaluate_model<E: Evaluator + ?Sized>(
    evaluator: &E,
    table: &StateTable,
    visits: Option<&FxHashMap<StateKey, u64>>,
    label: &str,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<StateError>)> {
    let game = table.game();
    let mut report = EvalReport::new(game, label);
    if cfg.n_games > 0 {
        report.vs_oracle_with_search =
            Some(evaluate_matches(evaluator, table, Some(&cfg.search), false, cfg.n_games, &cfg.seeds, cfg.workers)?);
        report.vs_oracle_policy_only =
            Some(evaluate_matches(evaluator, table, None, cfg.policy_greedy, cfg.n_games, &cfg.seeds, cfg.workers)?);
    }
    let states = nonterminal_states(game, cfg.max_states)?;
    let (summary, errors) = value_error_scan(evaluator, &states, table, cfg.workers)?;
    report.value_error = Some(summary);
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    report.misalignment_mean = Some(mean(&misalignment_scan(evaluator, &states, &cfg.misalignment, seed, cfg.workers)?));
    if let Some(v) = visits {
        report.generalization_curve = Some(generalization_curve(&errors, v));
    }
    Ok((report, errors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub baseline: f64,
    pub candidate: String,
    pub value: f64,
    pub delta: f64,
    /// `(value - baseline) / |baseline|` in percent; absent when the baseline is 0.
    pub relative_change_pct: Option<f64>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub game: GameKind,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// Compares every report against the first one, metric by metric.
pub fn compare_reports(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Report("need at least two reports to compare".into()));
    }
    let base = &reports[0];
    if reports.iter().any(|r| r.game != base.game) {
        return Err(Error::Report("reports are for different games".into()));
    }
    let base_metrics = base.metrics();
    let mut rows = Vec::new();
    for other in &reports[1..] {
        for (name, value, lower_better) in other.metrics() {
            let Some(&(_, b, _)) = base_metrics.iter().find(|m| m.0 == name) else { continue };
            let delta = value - b;
            let pct = if b != 0.0 { Some(100.0 * delta / b.abs()) } else { None };
            rows.push(ComparisonRow {
                metric: name.to_string(),
                baseline: b,
                candidate: other.label.clone(),
                value,
                delta,
                relative_change_pct: pct,
                summary: describe_change(delta, pct, lower_better),
            });
        }
    }
    Ok(Comparison { game: base.game, baseline: base.label.clone(), rows })
}

fn describe_change(delta: f64, pct: Option<f64>, lower_better: bool) -> String {
    if delta == 0.0 {
        return "no change".to_string();
    }
    let direction = if delta < 0.0 { "reduction" } else { "increase" };
    let verdict = if (delta < 0.0) == lower_better { "better" } else { "worse" };
    match pct {
        Some(p) => format!("{:.0}% {direction} ({verdict})", p.abs()),
        None => format!("{delta:+.4} ({verdict})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{OracleEvaluator, UniformEvaluator};
    use crate::oracle::solve_game;
    use std::sync::OnceLock;

    fn table() -> &'static StateTable {
        static TABLE: OnceLock<StateTable> = OnceLock::new();
        TABLE.get_or_init(|| solve_game(GameKind::Ttt3, 100_000).unwrap())
    }

    fn state_error(value: f32, oracle: i8) -> StateError {
        StateError { key: StateKey(0), value, oracle, error: value_error(value as f64, oracle as f64) }
    }

    #[test]
    fn oracle_against_oracle_always_draws() {
        let t = table();
        let s = play_matches(GameKind::Ttt3, &OracleAgent { table: t }, &OracleAgent { table: t }, 200, 1, 1).unwrap();
        assert_eq!(s, MatchScore { wins: 0, draws: 200, losses: 0 });
    }

    #[test]
    fn random_policy_loses_to_the_oracle() {
        let s = evaluate_matches(&UniformEvaluator { value: 0.0 }, table(), None, false, 500, &[3], 1).unwrap();
        assert_eq!(s.games(), 500);
        assert!(s.loss_rate() > 0.8, "{s:?}");
    }

    #[test]
    fn match_play_is_deterministic_across_workers() {
        let eval = UniformEvaluator { value: 0.0 };
        let a = evaluate_matches(&eval, table(), None, false, 60, &[7, 8], 1).unwrap();
        let b = evaluate_matches(&eval, table(), None, false, 60, &[7, 8], 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn value_error_boundaries() {
        let exact = ValueErrorSummary::from_errors(&[state_error(1.0, 1), state_error(0.0, 0)]);
        assert_eq!(exact.mean_error, 0.0);
        let boundary = ValueErrorSummary::from_errors(&[state_error(0.0, 1)]);
        assert_eq!(boundary.mean_error, 1.0);
        assert_eq!(boundary.fraction_above(1.0), Some(0.0));
        let flipped = ValueErrorSummary::from_errors(&[state_error(-1.0, 1)]);
        assert_eq!(flipped.mean_error, 4.0);
        for t in ERROR_THRESHOLDS {
            assert_eq!(flipped.fraction_above(t), Some(1.0));
        }
        assert_eq!(flipped.histogram.counts[15], 1);
    }

    #[test]
    fn oracle_scan_has_zero_error_and_conserves_counts() {
        let states = nonterminal_states(GameKind::Ttt3, 10_000).unwrap();
        let (summary, errors) = value_error_scan(&OracleEvaluator { table: table() }, &states, table(), 2).unwrap();
        assert_eq!(summary.mean_error, 0.0);
        assert_eq!(errors.len(), states.len());
        assert_eq!(summary.histogram.total() as usize, states.len());
        let (summary, _) = value_error_scan(&UniformEvaluator { value: 0.0 }, &states, table(), 1).unwrap();
        assert_eq!(summary.histogram.total() as usize, states.len());
        assert!(summary.mean_error > 0.0 && summary.fraction_above(1.0) == Some(0.0));
    }

    #[test]
    fn oracle_model_evaluates_cleanly() {
        let t = table();
        let cfg = EvalConfig { n_games: 20, ..EvalConfig::for_game(GameKind::Ttt3) };
        let visits: FxHashMap<StateKey, u64> = FxHashMap::default();
        let (report, errors) = evaluate_model(&OracleEvaluator { table: t }, t, Some(&visits), "oracle", &cfg).unwrap();
        assert_eq!(report.vs_oracle_with_search.unwrap().losses, 0);
        assert_eq!(report.vs_oracle_with_search.unwrap().games(), 20);
        assert_eq!(report.value_error.as_ref().unwrap().mean_error, 0.0);
        assert_eq!(errors.len(), 4520);
        let m = report.misalignment_mean.unwrap();
        assert!(m.is_finite() && m >= 0.0);
        let curve = report.generalization_curve.unwrap();
        assert_eq!(curve.buckets.len(), 1);
        assert_eq!(curve.generalization_error, Some(0.0));
    }

    #[test]
    fn kl_examples() {
        let mask = ActionMask::full(2);
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7], mask, KL_SMOOTHING), 0.0);
        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5], mask, KL_SMOOTHING);
        assert!((kl - 2f64.ln()).abs() < 1e-4, "{kl}");
        assert!(kl_divergence(&[0.0, 1.0], &[1.0, 0.0], mask, KL_SMOOTHING).is_finite());
        // illegal actions are ignored
        let mask = ActionMask::from_actions([0, 2], 3);
        assert_eq!(kl_divergence(&[0.5, 0.0, 0.5], &[0.5, 0.9, 0.5], mask, KL_SMOOTHING), 0.0);
    }

    #[test]
    fn generalization_curve_buckets() {
        let mut errors = Vec::new();
        let mut visits = FxHashMap::default();
        for (i, (n, e)) in [(0, 2.0), (0, 1.0), (5, 0.5), (50, 0.2), (5000, 0.0)].into_iter().enumerate() {
            errors.push(StateError { key: StateKey(i as u128), value: 0.0, oracle: 0, error: e });
            if n > 0 {
                visits.insert(StateKey(i as u128), n);
            }
        }
        let curve = generalization_curve(&errors, &visits);
        assert_eq!(curve.generalization_error, Some(1.5));
        assert_eq!(curve.buckets.iter().map(|b| b.label.as_str()).collect::<Vec<_>>(), ["0", "1-10", "11-100", ">1k"]);

        let flat: FxHashMap<_, _> = errors.iter().map(|e| (e.key, 7u64)).collect();
        let same: Vec<_> = errors.iter().map(|e| StateError { error: 0.3, ..e.clone() }).collect();
        let curve = generalization_curve(&same, &flat);
        assert!(curve.zero_visit_bucket_empty);
        assert_eq!(curve.buckets.len(), 1);
        assert!((curve.buckets[0].mean_error - 0.3).abs() < 1e-12);
    }

    #[test]
    fn detector_with_oracle_values_finds_nothing() {
        let mut cfg = AdversarialConfig::for_game(GameKind::Ttt3, 50);
        cfg.budget.max_empty_cells = 6;
        let set = adversarial_detect(&OracleEvaluator { table: table() }, &cfg).unwrap();
        assert!(set.states.is_empty());
        assert!(set.endgame_states_seen > 0);
    }

    #[test]
    fn detector_threshold_is_strict() {
        // v = 0 on decisive states gives error exactly 1.0, which is not > 1.0
        let mut cfg = AdversarialConfig::for_game(GameKind::Ttt3, 50);
        cfg.budget.max_empty_cells = 6;
        let set = adversarial_detect(&UniformEvaluator { value: 0.0 }, &cfg).unwrap();
        assert!(set.states.is_empty());
        cfg.threshold = 0.99;
        let set = adversarial_detect(&UniformEvaluator { value: 0.0 }, &cfg).unwrap();
        assert!(!set.states.is_empty());
        assert!(set.states.iter().all(|s| s.oracle_value != 0 && s.error == 1.0));
        assert!(set.verify().unwrap());
        let again = errors_on_states(&UniformEvaluator { value: 0.0 }, &set).unwrap();
        assert!(again.iter().all(|&e| e == 1.0));
    }

    #[test]
    fn comparison_reports_percent_reduction() {
        let mut a = EvalReport::new(GameKind::Ttt3, "alphazero");
        a.misalignment_mean = Some(1.0);
        let mut b = EvalReport::new(GameKind::Ttt3, "visa_vis");
        b.misalignment_mean = Some(0.5);
        let c = compare_reports(&[a.clone(), b]).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].summary, "50% reduction (better)");
        let same = compare_reports(&[a.clone(), a.clone()]).unwrap();
        assert!(same.rows.iter().all(|r| r.delta == 0.0));
        assert!(compare_reports(&[a]).is_err());
    }

    #[test]
    fn aggregate_sums_counts_and_averages_means() {
        let mut a = EvalReport::new(GameKind::Ttt3, "s0");
        a.vs_oracle_with_search = Some(MatchScore { wins: 1, draws: 9, losses: 0 });
        a.misalignment_mean = Some(0.2);
        let mut b = a.clone();
        b.misalignment_mean = Some(0.4);
        let agg = EvalReport::aggregate("az", &[a, b]).unwrap();
        assert_eq!(agg.seeds_aggregated, 2);
        assert_eq!(agg.vs_oracle_with_search.unwrap().games(), 20);
        assert!((agg.misalignment_mean.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn report_json_round_trip() {
        let states = nonterminal_states(GameKind::Ttt3, 10_000).unwrap();
        let (summary, errors) = value_error_scan(&UniformEvaluator { value: 0.1 }, &states, table(), 1).unwrap();
        let mut r = EvalReport::new(GameKind::Ttt3, "x");
        r.value_error = Some(summary);
        r.generalization_curve = Some(generalization_curve(&errors, &FxHashMap::default()));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }
}
