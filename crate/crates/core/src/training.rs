//! Self-play training for AlphaZero and its value-informed variants.
//!
//! Games are generated in rounds: every game in a round is played with the
//! same read-only parameter snapshot and its own RNG streams derived from
//! `(seed, game_index)`. The trainer then consumes the episodes in game
//! order, so the result does not depend on the number of workers.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::game::{ActionIndex, ActionMask, GameKind, GameState, Outcome, Player, StateKey, SymmetryOp};
use crate::mcts::{run_search, SearchConfig, Temperature};
use crate::neural::{save_checkpoint, NetConfig, NetParams, ReplayBuffer, ReplayEntry, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Alphazero,
    VisOnly,
    VisaOnly,
    VisaVis,
    AlphazeroRandomStarts,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Alphazero, Mode::VisOnly, Mode::VisaOnly, Mode::VisaVis, Mode::AlphazeroRandomStarts];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Alphazero => "alphazero",
            Mode::VisOnly => "vis_only",
            Mode::VisaOnly => "visa_only",
            Mode::VisaVis => "visa_vis",
            Mode::AlphazeroRandomStarts => "alphazero_random_starts",
        }
    }

    pub fn uses_vis(self) -> bool {
        matches!(self, Mode::VisOnly | Mode::VisaVis)
    }

    pub fn uses_visa(self) -> bool {
        matches!(self, Mode::VisaOnly | Mode::VisaVis)
    }

    pub fn random_starts(self) -> bool {
        self == Mode::AlphazeroRandomStarts
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Named budget presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Smoke,
    Desk,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "smoke" => Ok(Profile::Smoke),
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub game: GameKind,
    pub net: NetConfig,
    pub search: SearchConfig,
    pub mode: Mode,
    pub vis_epsilon: f64,
    pub vis_softmax_temp: f64,
    pub total_games: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub train_steps_per_game: usize,
    pub checkpoint_every: usize,
    /// Games played between parameter snapshot refreshes.
    pub snapshot_every: usize,
    pub workers: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(game: GameKind, mode: Mode, profile: Profile) -> Self {
        let (total_games, checkpoint_every) = match (profile, game) {
            (Profile::Smoke, _) => (500, 100),
            (Profile::Desk, GameKind::Ttt3) => (20_000, 1_000),
            (Profile::Desk, GameKind::Ttt4) => (60_000, 5_000),
            (Profile::Desk, GameKind::Connect4) => (100_000, 10_000),
            (Profile::Full, GameKind::Ttt3) => (500_000, 10_000),
            (Profile::Full, GameKind::Ttt4) => (1_750_000, 50_000),
            (Profile::Full, GameKind::Connect4) => (7_500_000, 100_000),
        };
        let batch_size = match game {
            GameKind::Ttt3 => 64,
            GameKind::Ttt4 => 128,
            GameKind::Connect4 => 256,
        };
        TrainConfig {
            game,
            net: NetConfig::for_game(game),
            search: SearchConfig::for_game(game),
            mode,
            vis_epsilon: 0.5,
            vis_softmax_temp: 1.0,
            total_games,
            batch_size,
            buffer_capacity: 1 << 16,
            train_steps_per_game: 1,
            checkpoint_every,
            snapshot_every: 16,
            workers: 1,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.net.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.search.validate()?;
        let spec = self.game.spec();
        if self.net.input_dim != spec.feature_len() || self.net.action_count != spec.action_count {
            return Err(Error::Config(format!("network dimensions do not match {}", self.game)));
        }
        if !(0.0..=1.0).contains(&self.vis_epsilon) {
            return Err(Error::Config("vis_epsilon must be in [0, 1]".into()));
        }
        if !(self.vis_softmax_temp > 0.0) {
            return Err(Error::Config("vis_softmax_temp must be positive".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("batch_size must be positive and at most buffer_capacity".into()));
        }
        if self.checkpoint_every == 0 || self.snapshot_every == 0 || self.workers == 0 {
            return Err(Error::Config("checkpoint_every, snapshot_every and workers must be positive".into()));
        }
        Ok(())
    }

    /// Epsilon actually used for selection: 1 (always the search policy) without VIS.
    pub fn effective_epsilon(&self) -> f64 {
        if self.mode.uses_vis() {
            self.vis_epsilon
        } else {
            1.0
        }
    }
}

/// One-step lookahead policy: softmax of successor values (mover's view) / temp.
pub fn value_policy<E: Evaluator + ?Sized>(state: &GameState, evaluator: &E, temp: f64) -> Result<Vec<f32>> {
    let mask = state.legal_actions()?;
    let mut scores = vec![f64::NEG_INFINITY; mask.len()];
    for a in mask.iter() {
        let next = state.apply(a)?;
        let v = match next.terminal_value() {
            Some(z) => z.as_f32(),
            None => evaluator.value(&next)?,
        };
        scores[a] = -v as f64 / temp;
    }
    Ok(softmax_masked(&scores, mask))
}

fn softmax_masked(scores: &[f64], mask: ActionMask) -> Vec<f32> {
    let max = mask.iter().map(|a| scores[a]).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = mask.iter().map(|a| (scores[a] - max).exp()).sum();
    let mut out = vec![0.0; scores.len()];
    for a in mask.iter() {
        out[a] = ((scores[a] - max).exp() / total) as f32;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Policy,
    Value,
}

pub fn sample_action(pi: &[f32], rng: &mut impl Rng) -> Result<ActionIndex> {
    let dist = WeightedIndex::new(pi).map_err(|e| Error::Search(format!("cannot sample from policy: {e}")))?;
    Ok(dist.sample(rng))
}

/// Draws `eta` from `eta_rng`; below `epsilon` samples from `pi_p`, otherwise from
/// the value policy. The action sample always uses `rng`, so with `epsilon = 1`
/// the action stream matches plain sampling from `pi_p`.
pub fn vis_select<E: Evaluator + ?Sized>(
    state: &GameState,
    pi_p: &[f32],
    evaluator: &E,
    epsilon: f64,
    softmax_temp: f64,
    eta_rng: &mut impl Rng,
    rng: &mut impl Rng,
) -> Result<(ActionIndex, Branch)> {
    let eta: f64 = eta_rng.gen();
    if eta < epsilon {
        Ok((sample_action(pi_p, rng)?, Branch::Policy))
    } else {
        let pi_v = value_policy(state, evaluator, softmax_temp)?;
        Ok((sample_action(&pi_v, rng)?, Branch::Value))
    }
}

fn entry(state: &GameState, target_policy: Vec<f32>, target_z: Outcome) -> Result<ReplayEntry> {
    Ok(ReplayEntry { features: state.encode(), target_policy, target_z: target_z.as_f32(), legal_mask: state.legal_actions()? })
}

/// Replay entries for one position: the original plus the symmetric variant on
/// which the network's value disagrees most with its value for `state`.
///
/// `z` is the game outcome for P1. Inverting a position swaps the players, so
/// the outcome of the inverted game for P1 is `-z`; targets are stored from
/// each entry's mover perspective.
pub fn visa_augment<E: Evaluator + ?Sized>(
    state: &GameState,
    pi_p: &[f32],
    z: Outcome,
    evaluator: &E,
) -> Result<(Vec<ReplayEntry>, SymmetryOp)> {
    let kind = state.kind();
    let v = evaluator.value(state)? as f64;
    let mut best: Option<(SymmetryOp, GameState, f64)> = None;
    for &op in kind.augmentation_ops() {
        let t = state.transform(op)?;
        let d = (v - evaluator.value(&t)? as f64).powi(2);
        if best.as_ref().map_or(true, |b| d > b.2) {
            best = Some((op, t, d));
        }
    }
    let (op, t, _) = best.expect("every game has a non-identity symmetry");
    let original = entry(state, pi_p.to_vec(), z.relative_to(Player::P1, state.to_move()))?;
    let z_ref = if op.is_inversion() { z.flip() } else { z };
    let policy = crate::game::transform_policy(pi_p, op, kind)?;
    let augmented = entry(&t, policy, z_ref.relative_to(Player::P1, t.to_move()))?;
    Ok((vec![original, augmented], op))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub state: GameState,
    /// Visit distribution at temperature 1; the replay policy target.
    pub search_policy: Vec<f32>,
    pub action: ActionIndex,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub start: GameState,
    pub steps: Vec<EpisodeStep>,
    pub final_state: GameState,
    /// Outcome for P1.
    pub outcome: Outcome,
}

impl EpisodeRecord {
    pub fn policy_branch_count(&self) -> usize {
        self.steps.iter().filter(|s| s.branch == Branch::Policy).count()
    }
}

/// Per-game RNG streams: (action and search randomness, VIS coin flips).
pub fn game_rngs(seed: u64, game_index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut main = ChaCha8Rng::seed_from_u64(seed);
    main.set_stream(2 * game_index);
    let mut eta = ChaCha8Rng::seed_from_u64(seed);
    eta.set_stream(2 * game_index + 1);
    (main, eta)
}

/// A uniformly random reachable non-terminal position.
pub fn random_start(game: GameKind, rng: &mut impl Rng) -> Result<GameState> {
    let cells = game.spec().cells();
    loop {
        let plies = rng.gen_range(0..cells);
        let mut s = GameState::initial(game);
        for _ in 0..plies {
            if s.is_terminal() {
                break;
            }
            let actions: Vec<_> = s.legal_actions()?.iter().collect();
            s = s.apply(actions[rng.gen_range(0..actions.len())])?;
        }
        if !s.is_terminal() {
            return Ok(s);
        }
    }
}

pub fn play_episode<E: Evaluator + ?Sized>(
    evaluator: &E,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    eta_rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord> {
    let start = if cfg.mode.random_starts() { random_start(cfg.game, rng)? } else { GameState::initial(cfg.game) };
    let epsilon = cfg.effective_epsilon();
    let mut state = start;
    let mut steps = Vec::new();
    let mut ply = 0;
    let outcome = loop {
        if let Some(z) = state.terminal_value() {
            break z.relative_to(state.to_move(), Player::P1);
        }
        let tree = run_search(&state, evaluator, &cfg.search, rng)?;
        let target = tree.search_policy(Temperature::Soft(1.0))?;
        let pi_p = match cfg.search.temperature_at(ply) {
            Temperature::Soft(t) if t == 1.0 => target.clone(),
            t => tree.search_policy(t)?,
        };
        let (action, branch) = if cfg.mode.uses_vis() {
            vis_select(&state, &pi_p, evaluator, epsilon, cfg.vis_softmax_temp, eta_rng, rng)?
        } else {
            (sample_action(&pi_p, rng)?, Branch::Policy)
        };
        steps.push(EpisodeStep { state, search_policy: target, action, branch });
        state = state.apply(action)?;
        ply += 1;
    };
    Ok(EpisodeRecord { start, steps, final_state: state, outcome })
}

/// Replay entries for a finished episode: one per position, two with VISA.
pub fn episode_entries<E: Evaluator + ?Sized>(
    episode: &EpisodeRecord,
    evaluator: &E,
    visa: bool,
) -> Result<Vec<ReplayEntry>> {
    let mut out = Vec::with_capacity(episode.steps.len() * if visa { 2 } else { 1 });
    for step in &episode.steps {
        if visa {
            out.extend(visa_augment(&step.state, &step.search_policy, episode.outcome, evaluator)?.0);
        } else {
            let z = episode.outcome.relative_to(Player::P1, step.state.to_move());
            out.push(entry(&step.state, step.search_policy.clone(), z)?);
        }
    }
    Ok(out)
}

/// Plays games `first..first + count` with one shared snapshot.
pub fn play_round<E: Evaluator + ?Sized>(
    evaluator: &E,
    cfg: &TrainConfig,
    first: u64,
    count: usize,
) -> Result<Vec<EpisodeRecord>> {
    let play = |i: u64| {
        let (mut rng, mut eta) = game_rngs(cfg.seed, i);
        play_episode(evaluator, cfg, &mut rng, &mut eta)
    };
    crate::par::par_map(count, cfg.workers, |i| play(first + i as u64)).into_iter().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub games: usize,
    pub train_steps: usize,
    pub loss_total: f64,
    pub loss_value: f64,
    pub loss_policy: f64,
    pub loss_l2: f64,
    pub buffer_size: usize,
    pub distinct_states_visited: usize,
    pub policy_branch_fraction: f64,
    pub p1_wins: usize,
    pub draws: usize,
    pub p2_wins: usize,
    pub elapsed_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: NetParams<f32>,
    pub log: Vec<CheckpointRecord>,
    /// How often each non-terminal position was played in self-play.
    pub visits: FxHashMap<StateKey, u64>,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub key: String,
    pub count: u64,
}

pub fn save_visits(visits: &FxHashMap<StateKey, u64>, path: &Path) -> Result<()> {
    let mut records: Vec<VisitRecord> =
        visits.iter().map(|(k, &count)| VisitRecord { key: format!("{:032x}", k.0), count }).collect();
    records.sort_by(|a, b| a.key.cmp(&b.key));
    crate::report::write_atomic(path, serde_json::to_string(&records)?.as_bytes())
}

pub fn load_visits(path: &Path) -> Result<FxHashMap<StateKey, u64>> {
    let records: Vec<VisitRecord> = serde_json::from_slice(&fs::read(path)?)?;
    records
        .into_iter()
        .map(|r| {
            u128::from_str_radix(&r.key, 16)
                .map(|k| (StateKey(k), r.count))
                .map_err(|_| Error::Config(format!("bad state key `{}` in {}", r.key, path.display())))
        })
        .collect()
}

struct Accum {
    steps: usize,
    loss: [f64; 4],
    plies: usize,
    policy_plies: usize,
    results: [usize; 3],
}

impl Accum {
    fn new() -> Self {
        Accum { steps: 0, loss: [0.0; 4], plies: 0, policy_plies: 0, results: [0; 3] }
    }
}

/// Runs self-play training. With `out_dir`, writes checkpoints, the JSON-lines
/// log `train_log.jsonl` and the visit counts `visits.json` there.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    train_with_progress(cfg, out_dir, |_| {})
}

pub fn train_with_progress(
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&CheckpointRecord),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let mut params = NetParams::<f32>::init(cfg.net.clone())?;
    let mut opt = Sgd::new(&params);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.seed ^ 0x5eed_b0ff);
    let mut visits: FxHashMap<StateKey, u64> = FxHashMap::default();
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("train_log.jsonl");
            Some(BufWriter::new(OpenOptions::new().create(true).write(true).truncate(true).open(path)?))
        }
        None => None,
    };
    let mut acc = Accum::new();
    let mut total_steps = 0;
    let mut games = 0;
    while games < cfg.total_games {
        let next_ckpt = (games / cfg.checkpoint_every + 1) * cfg.checkpoint_every;
        let count = cfg.snapshot_every.min(next_ckpt - games).min(cfg.total_games - games);
        let snapshot = params.clone();
        let episodes = play_round(&snapshot, cfg, games as u64, count)?;
        for episode in &episodes {
            for step in &episode.steps {
                *visits.entry(step.state.key()).or_default() += 1;
            }
            acc.plies += episode.steps.len();
            acc.policy_plies += episode.policy_branch_count();
            acc.results[(1 - episode.outcome.value()) as usize] += 1;
            for e in episode_entries(episode, &snapshot, cfg.mode.uses_visa())? {
                buffer.push(e);
            }
            if buffer.len() >= cfg.batch_size {
                for _ in 0..cfg.train_steps_per_game {
                    let batch = buffer.sample(cfg.batch_size);
                    let (loss, grads) = params.loss(&batch)?;
                    opt.step(&mut params, &grads).map_err(|e| {
                        Error::Search(format!("training diverged after {games} games, step {total_steps}: {e}"))
                    })?;
                    acc.steps += 1;
                    total_steps += 1;
                    for (a, l) in acc.loss.iter_mut().zip([loss.total, loss.value, loss.policy, loss.l2]) {
                        *a += l;
                    }
                }
            }
        }
        games += count;
        if games % cfg.checkpoint_every == 0 || games == cfg.total_games {
            let steps = acc.steps.max(1) as f64;
            let mut record = CheckpointRecord {
                games,
                train_steps: total_steps,
                loss_total: acc.loss[0] / steps,
                loss_value: acc.loss[1] / steps,
                loss_policy: acc.loss[2] / steps,
                loss_l2: acc.loss[3] / steps,
                buffer_size: buffer.len(),
                distinct_states_visited: visits.len(),
                policy_branch_fraction: acc.policy_plies as f64 / acc.plies.max(1) as f64,
                p1_wins: acc.results[0],
                draws: acc.results[1],
                p2_wins: acc.results[2],
                elapsed_secs: started.elapsed().as_secs_f64(),
                checkpoint: None,
            };
            if let Some(dir) = out_dir {
                let path = dir.join(format!("ckpt-{games:08}.azck"));
                save_checkpoint(&params, &path)?;
                checkpoints.push(path.clone());
                record.checkpoint = Some(path);
            }
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &record)?;
                f.write_all(b"\n")?;
                f.flush()?;
            }
            log::info!(
                "{} {}: {games}/{} games, loss {:.4} (v {:.4}, p {:.4})",
                cfg.game,
                cfg.mode,
                cfg.total_games,
                record.loss_total,
                record.loss_value,
                record.loss_policy
            );
            progress(&record);
            log.push(record);
            acc = Accum::new();
        }
    }
    if let Some(dir) = out_dir {
        save_visits(&visits, &dir.join("visits.json"))?;
    }
    Ok(TrainOutput { params, log, visits, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{OracleEvaluator, UniformEvaluator};
    use crate::game::transform_action;
    use crate::oracle::{solve_game, StateTable};
    use std::sync::OnceLock;

    fn table() -> &'static StateTable {
        static TABLE: OnceLock<StateTable> = OnceLock::new();
        TABLE.get_or_init(|| solve_game(GameKind::Ttt3, 100_000).unwrap())
    }

    /// Value is a fixed function of the encoded board: sum of weights over P1 pieces.
    struct BoardWeights {
        weights: Vec<f32>,
    }

    impl Evaluator for BoardWeights {
        fn evaluate(&self, state: &GameState, mask: ActionMask) -> Result<(Vec<f32>, f32)> {
            Ok((crate::evaluator::uniform_priors(mask), self.value(state)?))
        }

        fn value(&self, state: &GameState) -> Result<f32> {
            let f = state.encode();
            Ok(self.weights.iter().zip(&f).map(|(w, x)| w * x).sum::<f32>().tanh())
        }
    }

    fn ttt3(diagram: &str, to_move: Player) -> GameState {
        GameState::from_diagram(GameKind::Ttt3, diagram, to_move).unwrap()
    }

    #[test]
    fn value_policy_single_action_and_equal_values() {
        let s = ttt3("XOX XOO OX.", Player::P1);
        let pi = value_policy(&s, &UniformEvaluator { value: 0.3 }, 1.0).unwrap();
        assert_eq!(pi[8], 1.0);
        let s = GameState::initial(GameKind::Ttt3);
        let pi = value_policy(&s, &UniformEvaluator { value: 0.3 }, 1.0).unwrap();
        assert!(pi.iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-6));
    }

    #[test]
    fn value_policy_softmax_example() {
        // X to move with three empty cells: 2 wins at once, 5 blocks and
        // draws, 8 hands O the win; the oracle supplies the non-terminal values.
        let s = ttt3("XX. OO. XO.", Player::P1);
        let eval = OracleEvaluator { table: table() };
        let scores: Vec<f32> = s
            .legal_actions()
            .unwrap()
            .iter()
            .map(|a| {
                let n = s.apply(a).unwrap();
                -n.terminal_value().map(|z| z.as_f32()).unwrap_or_else(|| eval.value(&n).unwrap())
            })
            .collect();
        let pi = value_policy(&s, &eval, 1.0).unwrap();
        let legal: Vec<f32> = s.legal_actions().unwrap().iter().map(|a| pi[a]).collect();
        let mut pairs: Vec<(f32, f32)> = scores.into_iter().zip(legal).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let expected = [0.665, 0.245, 0.090];
        assert_eq!(pairs.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1.0, 0.0, -1.0]);
        for ((_, p), e) in pairs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-3, "{pairs:?}");
        }
    }

    #[test]
    fn softmax_of_one_zero_minus_one() {
        let mask = ActionMask::full(3);
        let pi = softmax_masked(&[1.0, 0.0, -1.0], mask);
        let e: f64 = 1f64.exp() + 1.0 + (-1f64).exp();
        for (p, s) in pi.iter().zip([1.0f64, 0.0, -1.0]) {
            assert!((*p as f64 - s.exp() / e).abs() < 1e-6);
        }
    }

    #[test]
    fn vis_branch_frequencies() {
        let s = GameState::initial(GameKind::Ttt3);
        let pi = crate::evaluator::uniform_priors(s.legal_actions().unwrap());
        let eval = UniformEvaluator { value: 0.0 };
        let mut eta = ChaCha8Rng::seed_from_u64(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut count = |eps: f64, n: usize| {
            (0..n)
                .filter(|_| vis_select(&s, &pi, &eval, eps, 1.0, &mut eta, &mut rng).unwrap().1 == Branch::Policy)
                .count()
        };
        assert_eq!(count(1.0, 500), 500);
        assert_eq!(count(0.0, 500), 0);
        let frac = count(0.5, 10_000) as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn vis_with_epsilon_one_matches_vanilla_step_for_step() {
        let eval = UniformEvaluator { value: 0.1 };
        let vanilla = TrainConfig::new(GameKind::Ttt3, Mode::Alphazero, Profile::Smoke);
        let mut vis = TrainConfig::new(GameKind::Ttt3, Mode::VisOnly, Profile::Smoke);
        vis.vis_epsilon = 1.0;
        for game in 0..20 {
            let (mut r1, mut e1) = game_rngs(5, game);
            let (mut r2, mut e2) = game_rngs(5, game);
            let a = play_episode(&eval, &vanilla, &mut r1, &mut e1).unwrap();
            let b = play_episode(&eval, &vis, &mut r2, &mut e2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn visa_picks_first_op_on_ties() {
        let net = NetParams::<f32>::zeros(NetConfig::for_game(GameKind::Ttt3)).unwrap();
        let s = ttt3("X.. .O. ...", Player::P1);
        let pi = crate::evaluator::uniform_priors(s.legal_actions().unwrap());
        let (entries, op) = visa_augment(&s, &pi, Outcome::DRAW, &net).unwrap();
        assert_eq!(op, GameKind::Ttt3.augmentation_ops()[0]);
        assert_eq!(entries.len(), 2);
    }

    #[test]
    fn visa_picks_the_most_disagreeing_reflection() {
        // X at 0, O at 1. Only the left-right mirror puts X on 2 while O stays
        // on 1; the anti-diagonal puts O on 5 with X elsewhere.
        let mut weights = vec![0.0; 27];
        weights[2] = -3.0;
        weights[9 + 5] = 2.0;
        let eval = BoardWeights { weights };
        let s = ttt3("XO. ... ...", Player::P1);
        let pi = crate::evaluator::uniform_priors(s.legal_actions().unwrap());
        let (entries, op) = visa_augment(&s, &pi, Outcome::DRAW, &eval).unwrap();
        assert_eq!(op, SymmetryOp::Reflect(crate::game::Axis::LeftRight));
        assert_eq!(entries[1].features, s.transform(op).unwrap().encode());
    }

    #[test]
    fn visa_inversion_bookkeeping() {
        // A value function that is odd under inversion (P1-frame) makes inversion
        // the maximal disagreement.
        let mut weights = vec![0.0; 27];
        weights[4] = 1.5;
        weights[9 + 4] = -1.5;
        let eval = BoardWeights { weights };
        let s = ttt3("... .X. ...", Player::P2);
        let pi = crate::evaluator::uniform_priors(s.legal_actions().unwrap());
        let (entries, op) = visa_augment(&s, &pi, Outcome::WIN, &eval).unwrap();
        assert_eq!(op, SymmetryOp::Invert);
        // P1 won, O is to move in the original: target -1 for O.
        assert_eq!(entries[0].target_z, -1.0);
        // Inverted game: O's pieces are now P1's and P1 is to move, and the
        // winner's stones belong to P2; the mover still loses.
        assert_eq!(entries[1].target_z, -1.0);
        assert_eq!(entries[1].target_policy, entries[0].target_policy);
        let inverted = s.transform(SymmetryOp::Invert).unwrap();
        assert_eq!(inverted.to_move(), Player::P1);
        // For P1 the reference outcome is negated: +1 becomes -1.
        assert_eq!(Outcome::WIN.flip().relative_to(Player::P1, inverted.to_move()).as_f32(), entries[1].target_z);
    }

    #[test]
    fn visa_policy_targets_unpermute() {
        let eval = BoardWeights { weights: (0..27).map(|i| (i as f32 * 0.37).sin()).collect() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = random_start(GameKind::Ttt3, &mut rng).unwrap();
            let mask = s.legal_actions().unwrap();
            let raw: Vec<f32> = (0..9).map(|a| if mask.contains(a) { rng.gen::<f32>() + 0.01 } else { 0.0 }).collect();
            let total: f32 = raw.iter().sum();
            let pi: Vec<f32> = raw.iter().map(|p| p / total).collect();
            let (entries, op) = visa_augment(&s, &pi, Outcome::DRAW, &eval).unwrap();
            for a in 0..9 {
                assert_eq!(entries[1].target_policy[transform_action(a, op, GameKind::Ttt3).unwrap()], pi[a]);
            }
            assert!(entries[1].is_valid());
        }
    }

    #[test]
    fn episodes_and_entry_accounting() {
        let eval = UniformEvaluator { value: 0.0 };
        let cfg = TrainConfig::new(GameKind::Ttt3, Mode::VisaVis, Profile::Smoke);
        for game in 0..20 {
            let (mut rng, mut eta) = game_rngs(1, game);
            let ep = play_episode(&eval, &cfg, &mut rng, &mut eta).unwrap();
            assert!(ep.steps.len() <= 9);
            let z = ep.final_state.terminal_value().unwrap();
            assert_eq!(ep.outcome, z.relative_to(ep.final_state.to_move(), Player::P1));
            assert_eq!(episode_entries(&ep, &eval, true).unwrap().len(), 2 * ep.steps.len());
            let plain = episode_entries(&ep, &eval, false).unwrap();
            assert_eq!(plain.len(), ep.steps.len());
            for (e, step) in plain.iter().zip(&ep.steps) {
                let expected = ep.outcome.relative_to(Player::P1, step.state.to_move());
                assert_eq!(e.target_z, expected.as_f32());
            }
        }
    }

    #[test]
    fn oracle_self_play_draws() {
        // Greedy from the first ply: with the temperature-1 opening the stub
        // samples exploratory moves by design and draws far less often.
        let eval = OracleEvaluator { table: table() };
        let mut cfg = TrainConfig::new(GameKind::Ttt3, Mode::Alphazero, Profile::Smoke);
        cfg.search.temperature_drop_ply = 0;
        let draws = (0..200)
            .filter(|&g| {
                let (mut rng, mut eta) = game_rngs(9, g);
                play_episode(&eval, &cfg, &mut rng, &mut eta).unwrap().outcome == Outcome::DRAW
            })
            .count();
        assert!(draws >= 190, "{draws}");
    }

    #[test]
    fn random_starts_are_non_terminal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            assert!(!random_start(GameKind::Ttt3, &mut rng).unwrap().is_terminal());
        }
    }

    #[test]
    fn config_validation_and_modes() {
        let cfg = TrainConfig::new(GameKind::Ttt3, Mode::Alphazero, Profile::Desk);
        assert_eq!(cfg.total_games, 20_000);
        assert_eq!(cfg.effective_epsilon(), 1.0);
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.vis_epsilon = 1.5;
        assert!(bad.validate().is_err());
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("azero".parse::<Mode>().is_err());
    }

    #[test]
    fn smoke_training_is_deterministic_across_workers() {
        let mut cfg = TrainConfig::new(GameKind::Ttt3, Mode::VisaVis, Profile::Smoke).with_seed(3);
        cfg.total_games = 60;
        cfg.checkpoint_every = 20;
        cfg.batch_size = 16;
        let a = train(&cfg, None).unwrap();
        cfg.workers = 3;
        let b = train(&cfg, None).unwrap();
        assert_eq!(a.params.layers, b.params.layers);
        assert_eq!(a.log.len(), 3);
        let played: u64 = a.visits.values().sum();
        assert!(played > 0);
    }
}
