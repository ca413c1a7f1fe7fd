//! Exact game-tree values by memoized negamax.
//!
//! Every entry is from the perspective of the player to move. The table is
//! keyed by [`StateKey`] with no symmetry folding, so each reachable
//! position has its own entry.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ActionIndex, ActionMask, GameError, GameKind, GameState, StateKey};

const TABLE_MAGIC: &[u8; 8] = b"AZORACLE";
const TABLE_VERSION: u32 = 1;
const RECORD_BYTES: usize = 16 + 1 + 1 + 8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle budget of {limit} exceeded")]
    BudgetExceeded { limit: usize },
    #[error("position has {empty} empty cells; endgame budget allows {limit}")]
    NotAnEndgame { empty: usize, limit: usize },
    #[error("state {0:?} is not covered by the oracle table")]
    MissingState(StateKey),
    #[error("table is for {found}, expected {expected}")]
    WrongGame { expected: GameKind, found: GameKind },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("table file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolvedEntry {
    /// Minimax value for the side to move.
    pub value: i8,
    /// Every action achieving `value`; empty for terminal positions.
    pub optimal_actions: ActionMask,
    /// Plies to the end of the game under the fastest-win / slowest-loss line.
    pub depth_to_outcome: u8,
}

#[derive(Debug, Clone)]
pub struct StateTable {
    game: GameKind,
    entries: FxHashMap<StateKey, SolvedEntry>,
    visits: FxHashMap<StateKey, u64>,
}

impl StateTable {
    pub fn new(game: GameKind) -> Self {
        StateTable { game, entries: FxHashMap::default(), visits: FxHashMap::default() }
    }

    pub fn game(&self) -> GameKind {
        self.game
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, state: &GameState) -> Option<&SolvedEntry> {
        self.entries.get(&state.key())
    }

    pub fn lookup(&self, state: &GameState) -> Result<&SolvedEntry> {
        self.get(state).ok_or(OracleError::MissingState(state.key()))
    }

    pub fn value(&self, state: &GameState) -> Result<i8> {
        self.lookup(state).map(|e| e.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &SolvedEntry)> {
        self.entries.iter()
    }

    pub fn record_visit(&mut self, key: StateKey) {
        *self.visits.entry(key).or_default() += 1;
    }

    pub fn set_visits(&mut self, visits: FxHashMap<StateKey, u64>) {
        self.visits = visits;
    }

    pub fn visits(&self) -> &FxHashMap<StateKey, u64> {
        &self.visits
    }

    /// Recomputes an entry from its children's stored entries.
    pub fn check_consistency(&self, state: &GameState) -> Result<bool> {
        let entry = *self.lookup(state)?;
        let expected = match state.terminal_value() {
            Some(z) => SolvedEntry { value: z.value(), optimal_actions: ActionMask::empty(state.spec().action_count), depth_to_outcome: 0 },
            None => {
                let children = state
                    .legal_actions()?
                    .iter()
                    .map(|a| Ok((a, *self.lookup(&state.apply(a)?)?)))
                    .collect::<Result<Vec<_>>>()?;
                combine(state, &children)
            }
        };
        Ok(entry == expected)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let mut keys: Vec<&StateKey> = self.entries.keys().collect();
        keys.sort_unstable();
        let name = self.game.name().as_bytes();
        out.write_all(TABLE_MAGIC)?;
        out.write_all(&TABLE_VERSION.to_le_bytes())?;
        out.write_all(&[name.len() as u8])?;
        out.write_all(name)?;
        out.write_all(&(keys.len() as u64).to_le_bytes())?;
        let mut crc = crc32fast::Hasher::new();
        let mut record = [0u8; RECORD_BYTES];
        for key in keys {
            let entry = &self.entries[key];
            record[..16].copy_from_slice(&key.0.to_le_bytes());
            record[16] = entry.value as u8;
            record[17] = entry.depth_to_outcome;
            record[18..].copy_from_slice(&entry.optimal_actions.bits().to_le_bytes());
            crc.update(&record);
            out.write_all(&record)?;
        }
        out.write_all(&crc.finalize().to_le_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<StateTable> {
        let mut input = BufReader::new(File::open(path)?);
        Self::read_from(&mut input)
    }

    pub fn read_from(input: &mut impl Read) -> Result<StateTable> {
        let bad = |msg: &str| OracleError::Format(msg.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != TABLE_MAGIC {
            return Err(bad("not an oracle table (bad magic)"));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != TABLE_VERSION {
            return Err(OracleError::Format(format!("unsupported table version {version}")));
        }
        let mut len = [0u8; 1];
        input.read_exact(&mut len)?;
        let mut name = vec![0u8; len[0] as usize];
        input.read_exact(&mut name)?;
        let game: GameKind = std::str::from_utf8(&name).map_err(|_| bad("game name is not utf-8"))?.parse()?;
        let mut count = [0u8; 8];
        input.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let action_count = game.spec().action_count;
        let mut entries = FxHashMap::with_capacity_and_hasher(count, Default::default());
        let mut crc = crc32fast::Hasher::new();
        let mut record = [0u8; RECORD_BYTES];
        for _ in 0..count {
            input.read_exact(&mut record).map_err(|_| bad("truncated records"))?;
            crc.update(&record);
            let key = StateKey(u128::from_le_bytes(record[..16].try_into().unwrap()));
            let bits = u64::from_le_bytes(record[18..].try_into().unwrap());
            entries.insert(
                key,
                SolvedEntry {
                    value: record[16] as i8,
                    depth_to_outcome: record[17],
                    optimal_actions: ActionMask::from_bits(bits, action_count),
                },
            );
        }
        input.read_exact(&mut word).map_err(|_| bad("missing checksum"))?;
        if u32::from_le_bytes(word) != crc.finalize() {
            return Err(bad("checksum mismatch"));
        }
        Ok(StateTable { game, entries, visits: FxHashMap::default() })
    }
}

fn combine(state: &GameState, children: &[(ActionIndex, SolvedEntry)]) -> SolvedEntry {
    let best = children.iter().map(|(_, c)| -c.value).max().expect("non-terminal state has children");
    let mut optimal = ActionMask::empty(state.spec().action_count);
    let mut depth: Option<u8> = None;
    for &(a, child) in children {
        if -child.value != best {
            continue;
        }
        optimal.insert(a);
        let d = child.depth_to_outcome + 1;
        depth = Some(match depth {
            None => d,
            Some(cur) if best > 0 => cur.min(d),
            Some(cur) => cur.max(d),
        });
    }
    SolvedEntry { value: best, optimal_actions: optimal, depth_to_outcome: depth.unwrap() }
}

struct Solver {
    entries: FxHashMap<StateKey, SolvedEntry>,
    limit: usize,
}

impl Solver {
    fn solve(&mut self, state: &GameState) -> Result<SolvedEntry> {
        let key = state.key();
        if let Some(&entry) = self.entries.get(&key) {
            return Ok(entry);
        }
        let entry = match state.terminal_value() {
            Some(z) => SolvedEntry {
                value: z.value(),
                optimal_actions: ActionMask::empty(state.spec().action_count),
                depth_to_outcome: 0,
            },
            None => {
                let mut children = Vec::with_capacity(state.spec().action_count);
                for a in state.legal_actions()?.iter() {
                    children.push((a, self.solve(&state.apply(a)?)?));
                }
                combine(state, &children)
            }
        };
        if self.entries.len() >= self.limit {
            return Err(OracleError::BudgetExceeded { limit: self.limit });
        }
        self.entries.insert(key, entry);
        Ok(entry)
    }
}

/// Solves every position reachable from `root`, refusing to store more than
/// `max_entries` positions.
pub fn solve(root: &GameState, max_entries: usize) -> Result<StateTable> {
    let mut solver = Solver { entries: FxHashMap::default(), limit: max_entries };
    solver.solve(root)?;
    Ok(StateTable { game: root.kind(), entries: solver.entries, visits: FxHashMap::default() })
}

/// Solves the full game from the empty board.
pub fn solve_game(game: GameKind, max_entries: usize) -> Result<StateTable> {
    solve(&GameState::initial(game), max_entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndgameBudget {
    pub max_empty_cells: usize,
    pub max_entries: usize,
}

impl EndgameBudget {
    pub fn for_game(game: GameKind) -> Self {
        let max_empty_cells = match game {
            GameKind::Ttt3 => 9,
            GameKind::Ttt4 => 8,
            GameKind::Connect4 => 12,
        };
        EndgameBudget { max_empty_cells, max_entries: 4_000_000 }
    }
}

/// Exact entry for a single late-game position, solved with a private table.
pub fn endgame_solve(state: &GameState, budget: EndgameBudget) -> Result<SolvedEntry> {
    let empty = state.empty_cells();
    if empty > budget.max_empty_cells {
        return Err(OracleError::NotAnEndgame { empty, limit: budget.max_empty_cells });
    }
    let mut solver = Solver { entries: FxHashMap::default(), limit: budget.max_entries };
    solver.solve(state)
}

/// Reusable endgame solver that keeps its memo between queries, so repeated
/// queries from one game share work.
pub struct EndgameOracle {
    budget: EndgameBudget,
    solver: Solver,
}

impl EndgameOracle {
    pub fn new(budget: EndgameBudget) -> Self {
        EndgameOracle { budget, solver: Solver { entries: FxHashMap::default(), limit: budget.max_entries } }
    }

    pub fn budget(&self) -> EndgameBudget {
        self.budget
    }

    pub fn solve(&mut self, state: &GameState) -> Result<SolvedEntry> {
        let empty = state.empty_cells();
        if empty > self.budget.max_empty_cells {
            return Err(OracleError::NotAnEndgame { empty, limit: self.budget.max_empty_cells });
        }
        if self.solver.entries.len() >= self.budget.max_entries / 2 {
            self.solver.entries.clear();
        }
        self.solver.solve(state)
    }
}

/// Picks uniformly among the table's optimal actions.
pub fn oracle_opponent(state: &GameState, table: &StateTable, rng: &mut impl Rng) -> Result<ActionIndex> {
    let entry = table.lookup(state)?;
    if entry.optimal_actions.is_empty() {
        return Err(GameError::TerminalState.into());
    }
    let pick = rng.gen_range(0..entry.optimal_actions.count());
    Ok(entry.optimal_actions.iter().nth(pick).expect("pick within count"))
}

/// All positions reachable from the empty board, breadth-first, each once.
pub fn enumerate_states(game: GameKind, max_states: usize) -> Result<Vec<GameState>> {
    let root = GameState::initial(game);
    let mut seen = FxHashSet::default();
    let mut order = Vec::new();
    let mut queue = VecDeque::from([root]);
    seen.insert(root.key());
    while let Some(state) = queue.pop_front() {
        order.push(state);
        if order.len() > max_states {
            return Err(OracleError::BudgetExceeded { limit: max_states });
        }
        let Ok(mask) = state.legal_actions() else { continue };
        for a in mask.iter() {
            let child = state.apply(a)?;
            if seen.insert(child.key()) {
                queue.push_back(child);
            }
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Player, SymmetryOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain full-width alpha-beta, no memo; an independent check on the solver.
    fn alphabeta(state: &GameState, mut alpha: i8, beta: i8) -> i8 {
        if let Some(z) = state.terminal_value() {
            return z.value();
        }
        let mut best = -2;
        for a in state.legal_actions().unwrap().iter() {
            let v = -alphabeta(&state.apply(a).unwrap(), -beta, -alpha);
            best = best.max(v);
            alpha = alpha.max(v);
            if alpha >= beta {
                break;
            }
        }
        best
    }

    fn ttt3_table() -> StateTable {
        solve_game(GameKind::Ttt3, 100_000).unwrap()
    }

    fn random_state(kind: GameKind, plies: usize, rng: &mut impl Rng) -> GameState {
        let mut s = GameState::initial(kind);
        for _ in 0..plies {
            let Ok(mask) = s.legal_actions() else { break };
            let actions: Vec<_> = mask.iter().collect();
            s = s.apply(actions[rng.gen_range(0..actions.len())]).unwrap();
        }
        s
    }

    #[test]
    fn ttt3_root_is_draw() {
        let table = ttt3_table();
        let root = GameState::initial(GameKind::Ttt3);
        assert_eq!(table.value(&root).unwrap(), 0);
        assert_eq!(alphabeta(&root, -2, 2), 0);
        assert_eq!(table.len(), 5478);
    }

    #[test]
    fn immediate_win_has_depth_one() {
        let table = ttt3_table();
        let s = GameState::from_diagram(GameKind::Ttt3, "XX. OO. ...", Player::P1).unwrap();
        let e = table.lookup(&s).unwrap();
        assert_eq!(e.value, 1);
        assert_eq!(e.depth_to_outcome, 1);
        assert_eq!(e.optimal_actions.iter().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn terminal_entry() {
        let s = GameState::from_diagram(GameKind::Ttt3, "XXX OO. ...", Player::P2).unwrap();
        let e = endgame_solve(&s, EndgameBudget::for_game(GameKind::Ttt3)).unwrap();
        assert_eq!(e.value, -1);
        assert_eq!(e.depth_to_outcome, 0);
        assert!(e.optimal_actions.is_empty());
    }

    #[test]
    fn every_entry_is_minimax_consistent() {
        let table = ttt3_table();
        for (key, _) in table.iter() {
            let s = GameState::from_key(*key).unwrap();
            assert!(table.check_consistency(&s).unwrap(), "{s:?}");
        }
    }

    #[test]
    fn inverted_positions_keep_mover_value() {
        // inversion swaps pieces and the side to move, so the mover faces the
        // same position: mover-relative value is unchanged, first-player value flips
        let table = ttt3_table();
        let inv_root = GameState::initial(GameKind::Ttt3).transform(SymmetryOp::Invert).unwrap();
        let inv_table = solve(&inv_root, 100_000).unwrap();
        assert_eq!(inv_table.len(), table.len());
        let p1_value = |st: &GameState, v: i8| v * st.to_move().sign();
        for (key, entry) in table.iter() {
            let s = GameState::from_key(*key).unwrap();
            let inv = s.transform(SymmetryOp::Invert).unwrap();
            let inv_value = inv_table.value(&inv).unwrap();
            assert_eq!(inv_value, entry.value);
            assert_eq!(p1_value(&inv, inv_value), -p1_value(&s, entry.value));
        }
    }

    #[test]
    fn dihedral_symmetry_preserves_value() {
        let table = ttt3_table();
        for (key, entry) in table.iter() {
            let s = GameState::from_key(*key).unwrap();
            for op in GameKind::Ttt3.dihedral_ops() {
                assert_eq!(table.value(&s.transform(op).unwrap()).unwrap(), entry.value);
            }
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        ttt3_table().write_to(&mut a).unwrap();
        ttt3_table().write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_round_trip_and_corruption() {
        let table = ttt3_table();
        let mut bytes = Vec::new();
        table.write_to(&mut bytes).unwrap();
        let back = StateTable::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.len(), table.len());
        for (k, e) in table.iter() {
            assert_eq!(back.entries[k], *e);
        }
        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 0x55;
        assert!(matches!(StateTable::read_from(&mut corrupt.as_slice()), Err(OracleError::Format(_))));
        assert!(StateTable::read_from(&mut &bytes[..10]).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(solve_game(GameKind::Ttt3, 100), Err(OracleError::BudgetExceeded { limit: 100 })));
        assert!(matches!(enumerate_states(GameKind::Ttt4, 1000), Err(OracleError::BudgetExceeded { .. })));
        let early = GameState::initial(GameKind::Connect4);
        assert!(matches!(
            endgame_solve(&early, EndgameBudget::for_game(GameKind::Connect4)),
            Err(OracleError::NotAnEndgame { .. })
        ));
    }

    #[test]
    fn enumeration_matches_independent_bfs_count() {
        // independent count: depth-first walk collecting distinct boards by diagram text
        fn walk(s: &GameState, seen: &mut std::collections::HashSet<String>) {
            let text = format!("{}{:?}", s.render(), s.to_move());
            if !seen.insert(text) {
                return;
            }
            if let Ok(mask) = s.legal_actions() {
                for a in mask.iter() {
                    walk(&s.apply(a).unwrap(), seen);
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        walk(&GameState::initial(GameKind::Ttt3), &mut seen);
        let states = enumerate_states(GameKind::Ttt3, 10_000).unwrap();
        assert_eq!(states.len(), seen.len());
        assert_eq!(states.len(), 5478);
        let empty = GameState::initial(GameKind::Ttt3);
        assert_eq!(states.iter().filter(|s| **s == empty).count(), 1);
        for s in &states {
            if !s.is_terminal() {
                assert!(s.legal_actions().unwrap().count() >= 1);
            }
        }
    }

    #[test]
    fn oracle_opponent_choices() {
        let table = ttt3_table();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = GameState::from_diagram(GameKind::Ttt3, "XX. OO. ...", Player::P1).unwrap();
        for _ in 0..20 {
            assert_eq!(oracle_opponent(&s, &table, &mut rng).unwrap(), 2);
        }
        let root = GameState::initial(GameKind::Ttt3);
        let optimal = table.lookup(&root).unwrap().optimal_actions;
        for _ in 0..50 {
            assert!(optimal.contains(oracle_opponent(&root, &table, &mut rng).unwrap()));
        }
        // drawn positions never get a losing reply
        let states = enumerate_states(GameKind::Ttt3, 10_000).unwrap();
        let drawn: Vec<_> = states.iter().filter(|s| !s.is_terminal() && table.value(s).unwrap() == 0).collect();
        for i in 0..100 {
            let s = drawn[(i * 37) % drawn.len()];
            let a = oracle_opponent(s, &table, &mut rng).unwrap();
            assert_eq!(table.value(&s.apply(a).unwrap()).unwrap(), 0);
        }
        let missing = GameState::initial(GameKind::Ttt4);
        assert!(matches!(oracle_opponent(&missing, &table, &mut rng), Err(OracleError::MissingState(_))));
    }

    #[test]
    fn oracle_self_play_draws() {
        let table = ttt3_table();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut s = GameState::initial(GameKind::Ttt3);
            while !s.is_terminal() {
                s = s.apply(oracle_opponent(&s, &table, &mut rng).unwrap()).unwrap();
            }
            assert_eq!(s.terminal_value().unwrap().value(), 0);
        }
    }

    #[test]
    fn connect4_endgames_match_alphabeta() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let budget = EndgameBudget::for_game(GameKind::Connect4);
        let mut checked = 0;
        while checked < 12 {
            let s = random_state(GameKind::Connect4, 34, &mut rng);
            if s.is_terminal() {
                continue;
            }
            let start = std::time::Instant::now();
            let e = endgame_solve(&s, budget).unwrap();
            assert!(start.elapsed().as_secs_f64() < 1.0);
            assert_eq!(e.value, alphabeta(&s, -2, 2), "{s:?}");
            checked += 1;
        }
    }

    #[test]
    fn ttt4_endgames_match_alphabeta() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let budget = EndgameBudget::for_game(GameKind::Ttt4);
        let mut checked = 0;
        while checked < 20 {
            let s = random_state(GameKind::Ttt4, 10, &mut rng);
            if s.is_terminal() {
                continue;
            }
            let e = endgame_solve(&s, budget).unwrap();
            assert_eq!(e.value, alphabeta(&s, -2, 2));
            checked += 1;
        }
    }
}
