//! Rules, state representation and symmetries for the three solved games:
//! 3×3 Tic-Tac-Toe, 4×4 Tic-Tac-Toe and Connect Four.
//!
//! A [`GameState`] is a pair of bitboards plus the side to move. Cells are
//! indexed row-major (`row * width + col`). For Tic-Tac-Toe row 0 is the top
//! row; for Connect Four row 0 is the bottom row so that gravity fills rows
//! upward.
//!
//! All values produced here are from the perspective of the player to move.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ActionIndex = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("state is terminal; it has no legal actions")]
    TerminalState,
    #[error("action {action} is not legal in this state")]
    IllegalAction { action: ActionIndex },
    #[error("symmetry {op} is not supported on {game}")]
    UnsupportedSymmetry { op: SymmetryOp, game: GameKind },
    #[error("unknown game `{0}` (expected ttt3, ttt4 or connect4)")]
    UnknownGame(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameKind {
    Ttt3,
    Ttt4,
    Connect4,
}

impl GameKind {
    pub const ALL: [GameKind; 3] = [GameKind::Ttt3, GameKind::Ttt4, GameKind::Connect4];

    pub fn name(self) -> &'static str {
        match self {
            GameKind::Ttt3 => "ttt3",
            GameKind::Ttt4 => "ttt4",
            GameKind::Connect4 => "connect4",
        }
    }

    pub fn spec(self) -> GameSpec {
        match self {
            GameKind::Ttt3 => GameSpec { kind: self, rows: 3, cols: 3, action_count: 9, win_length: 3 },
            GameKind::Ttt4 => GameSpec { kind: self, rows: 4, cols: 4, action_count: 16, win_length: 4 },
            GameKind::Connect4 => GameSpec { kind: self, rows: 6, cols: 7, action_count: 7, win_length: 4 },
        }
    }

    pub fn is_drop_game(self) -> bool {
        matches!(self, GameKind::Connect4)
    }

    /// Every symmetry valid on this board, identity first, in the fixed
    /// enumeration order: rotations, reflections, inversion.
    pub fn symmetry_ops(self) -> &'static [SymmetryOp] {
        const SQUARE: [SymmetryOp; 9] = [
            SymmetryOp::Rotate(0),
            SymmetryOp::Rotate(1),
            SymmetryOp::Rotate(2),
            SymmetryOp::Rotate(3),
            SymmetryOp::Reflect(Axis::LeftRight),
            SymmetryOp::Reflect(Axis::TopBottom),
            SymmetryOp::Reflect(Axis::MainDiagonal),
            SymmetryOp::Reflect(Axis::AntiDiagonal),
            SymmetryOp::Invert,
        ];
        const COLUMNS: [SymmetryOp; 3] =
            [SymmetryOp::Rotate(0), SymmetryOp::Reflect(Axis::LeftRight), SymmetryOp::Invert];
        match self {
            GameKind::Ttt3 | GameKind::Ttt4 => &SQUARE,
            GameKind::Connect4 => &COLUMNS,
        }
    }

    /// The non-identity symmetries, in enumeration order.
    pub fn augmentation_ops(self) -> &'static [SymmetryOp] {
        &self.symmetry_ops()[1..]
    }

    /// Board-only (dihedral) symmetries including the identity.
    pub fn dihedral_ops(self) -> impl Iterator<Item = SymmetryOp> {
        self.symmetry_ops().iter().copied().filter(|op| !op.is_inversion())
    }

    fn geometry(self) -> &'static Geometry {
        static GEOMETRY: [OnceLock<Geometry>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        GEOMETRY[self as usize].get_or_init(|| Geometry::build(self))
    }
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GameKind {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ttt3" | "tictactoe" | "tic_tac_toe" => Ok(GameKind::Ttt3),
            "ttt4" => Ok(GameKind::Ttt4),
            "connect4" | "connect_four" => Ok(GameKind::Connect4),
            other => Err(GameError::UnknownGame(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSpec {
    pub kind: GameKind,
    pub rows: usize,
    pub cols: usize,
    pub action_count: usize,
    pub win_length: usize,
}

impl GameSpec {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Length of the flat feature vector produced by [`GameState::encode`].
    pub fn feature_len(&self) -> usize {
        3 * self.cells()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    P1,
    P2,
}

impl Player {
    pub fn other(self) -> Player {
        match self {
            Player::P1 => Player::P2,
            Player::P2 => Player::P1,
        }
    }

    /// +1 for the first player, -1 for the second.
    pub fn sign(self) -> i8 {
        match self {
            Player::P1 => 1,
            Player::P2 => -1,
        }
    }
}

/// Game result in {-1, 0, +1}. Which player it refers to depends on context;
/// [`GameState::terminal_value`] always reports it for the player to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outcome(i8);

impl Outcome {
    pub const WIN: Outcome = Outcome(1);
    pub const DRAW: Outcome = Outcome(0);
    pub const LOSS: Outcome = Outcome(-1);

    pub fn new(z: i8) -> Option<Outcome> {
        (-1..=1).contains(&z).then_some(Outcome(z))
    }

    pub fn value(self) -> i8 {
        self.0
    }

    pub fn as_f32(self) -> f32 {
        self.0 as f32
    }

    /// The same result seen by the other player.
    pub fn flip(self) -> Outcome {
        Outcome(-self.0)
    }

    /// Converts a result seen by `from` into the one seen by `to`.
    pub fn relative_to(self, from: Player, to: Player) -> Outcome {
        if from == to {
            self
        } else {
            self.flip()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    /// Mirror columns: `col -> width - 1 - col`.
    LeftRight,
    /// Mirror rows: `row -> height - 1 - row`.
    TopBottom,
    /// Transpose: `(row, col) -> (col, row)`.
    MainDiagonal,
    /// `(row, col) -> (n - 1 - col, n - 1 - row)`.
    AntiDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymmetryOp {
    /// Clockwise rotation by this many quarter turns (mod 4); `Rotate(0)` is the identity.
    Rotate(u8),
    Reflect(Axis),
    /// Swap the two players' pieces and the side to move.
    Invert,
}

impl SymmetryOp {
    pub const IDENTITY: SymmetryOp = SymmetryOp::Rotate(0);

    pub fn is_inversion(self) -> bool {
        matches!(self, SymmetryOp::Invert)
    }

    pub fn is_identity(self) -> bool {
        matches!(self, SymmetryOp::Rotate(k) if k % 4 == 0)
    }
}

impl fmt::Display for SymmetryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymmetryOp::Rotate(k) => write!(f, "rotate{}", (*k as u32 % 4) * 90),
            SymmetryOp::Reflect(Axis::LeftRight) => f.write_str("reflect-lr"),
            SymmetryOp::Reflect(Axis::TopBottom) => f.write_str("reflect-tb"),
            SymmetryOp::Reflect(Axis::MainDiagonal) => f.write_str("reflect-diag"),
            SymmetryOp::Reflect(Axis::AntiDiagonal) => f.write_str("reflect-anti"),
            SymmetryOp::Invert => f.write_str("invert"),
        }
    }
}

/// Legal-action set as a bitmask over `action_count` actions.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ActionMask {
    bits: u64,
    len: u8,
}

impl ActionMask {
    pub fn empty(len: usize) -> Self {
        assert!(len <= 64);
        ActionMask { bits: 0, len: len as u8 }
    }

    pub fn full(len: usize) -> Self {
        assert!(len <= 64);
        let bits = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        ActionMask { bits, len: len as u8 }
    }

    pub fn from_bits(bits: u64, len: usize) -> Self {
        let mut mask = Self::full(len);
        mask.bits &= bits;
        mask
    }

    pub fn from_actions(actions: impl IntoIterator<Item = ActionIndex>, len: usize) -> Self {
        let mut mask = Self::empty(len);
        for a in actions {
            mask.insert(a);
        }
        mask
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn contains(&self, action: ActionIndex) -> bool {
        action < self.len() && self.bits & (1 << action) != 0
    }

    pub fn insert(&mut self, action: ActionIndex) {
        assert!(action < self.len(), "action {action} out of range {}", self.len);
        self.bits |= 1 << action;
    }

    /// Legal actions in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = ActionIndex> {
        let mut bits = self.bits;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let a = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(a)
        })
    }

    pub fn to_vec(&self) -> Vec<bool> {
        (0..self.len()).map(|a| self.contains(a)).collect()
    }
}

impl fmt::Debug for ActionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Collision-free key over piece placement and side to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey(pub u128);

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GameState {
    kind: GameKind,
    p1: u64,
    p2: u64,
    to_move: Player,
    move_count: u8,
}

struct Geometry {
    spec: GameSpec,
    full: u64,
    lines: Vec<u64>,
    /// For each entry of `kind.symmetry_ops()`, the destination cell of every source cell.
    perms: Vec<Vec<u8>>,
}

impl Geometry {
    fn build(kind: GameKind) -> Geometry {
        let spec = kind.spec();
        let (rows, cols, k) = (spec.rows as isize, spec.cols as isize, spec.win_length as isize);
        let mut lines = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                for (dr, dc) in [(0, 1), (1, 0), (1, 1), (1, -1)] {
                    let (er, ec) = (r + dr * (k - 1), c + dc * (k - 1));
                    if er < 0 || er >= rows || ec < 0 || ec >= cols {
                        continue;
                    }
                    let mut line = 0u64;
                    for i in 0..k {
                        line |= 1 << ((r + dr * i) * cols + c + dc * i);
                    }
                    lines.push(line);
                }
            }
        }
        let perms = kind
            .symmetry_ops()
            .iter()
            .map(|&op| {
                (0..spec.cells())
                    .map(|cell| {
                        let (r, c) = (cell / spec.cols, cell % spec.cols);
                        let (nr, nc) = map_cell(op, r, c, spec.rows, spec.cols);
                        (nr * spec.cols + nc) as u8
                    })
                    .collect()
            })
            .collect();
        Geometry { spec, full: (1u64 << spec.cells()) - 1, lines, perms }
    }

    fn perm(&self, op: SymmetryOp) -> Option<&[u8]> {
        let ops = self.spec.kind.symmetry_ops();
        let op = match op {
            SymmetryOp::Rotate(k) => SymmetryOp::Rotate(k % 4),
            other => other,
        };
        ops.iter().position(|&o| o == op).map(|i| self.perms[i].as_slice())
    }
}

fn map_cell(op: SymmetryOp, r: usize, c: usize, rows: usize, cols: usize) -> (usize, usize) {
    match op {
        SymmetryOp::Invert => (r, c),
        SymmetryOp::Rotate(k) => {
            let (mut r, mut c) = (r, c);
            for _ in 0..k % 4 {
                // clockwise on a square board
                (r, c) = (c, rows - 1 - r);
            }
            (r, c)
        }
        SymmetryOp::Reflect(Axis::LeftRight) => (r, cols - 1 - c),
        SymmetryOp::Reflect(Axis::TopBottom) => (rows - 1 - r, c),
        SymmetryOp::Reflect(Axis::MainDiagonal) => (c, r),
        SymmetryOp::Reflect(Axis::AntiDiagonal) => (cols - 1 - c, rows - 1 - r),
    }
}

fn permute_bits(bits: u64, perm: &[u8]) -> u64 {
    let mut out = 0u64;
    let mut rest = bits;
    while rest != 0 {
        let cell = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        out |= 1 << perm[cell];
    }
    out
}

impl GameState {
    /// The empty board with the first player to move.
    pub fn initial(kind: GameKind) -> Self {
        GameState { kind, p1: 0, p2: 0, to_move: Player::P1, move_count: 0 }
    }

    /// Builds a state from explicit bitboards, checking structural invariants:
    /// disjoint piece sets, board bounds and, for Connect Four, gravity.
    pub fn from_bitboards(kind: GameKind, p1: u64, p2: u64, to_move: Player) -> Result<Self, GameError> {
        let geo = kind.geometry();
        if p1 & p2 != 0 {
            return Err(GameError::InvalidState("a cell is occupied by both players".into()));
        }
        if (p1 | p2) & !geo.full != 0 {
            return Err(GameError::InvalidState("piece outside the board".into()));
        }
        let state = GameState { kind, p1, p2, to_move, move_count: (p1 | p2).count_ones() as u8 };
        if kind.is_drop_game() && !state.has_support() {
            return Err(GameError::InvalidState("floating piece".into()));
        }
        Ok(state)
    }

    /// Parses a board diagram: `X`/`x` first player, `O`/`o` second, `.`/`-`/`_` empty.
    /// Whitespace is ignored. Rows are listed top to bottom for every game.
    pub fn from_diagram(kind: GameKind, diagram: &str, to_move: Player) -> Result<Self, GameError> {
        let spec = kind.spec();
        let cells: Vec<char> = diagram.chars().filter(|c| !c.is_whitespace()).collect();
        if cells.len() != spec.cells() {
            return Err(GameError::InvalidState(format!(
                "diagram has {} cells, {} expects {}",
                cells.len(),
                kind,
                spec.cells()
            )));
        }
        let (mut p1, mut p2) = (0u64, 0u64);
        for (i, ch) in cells.into_iter().enumerate() {
            let (display_row, col) = (i / spec.cols, i % spec.cols);
            let row = if kind.is_drop_game() { spec.rows - 1 - display_row } else { display_row };
            let bit = 1u64 << (row * spec.cols + col);
            match ch {
                'X' | 'x' => p1 |= bit,
                'O' | 'o' => p2 |= bit,
                '.' | '-' | '_' => {}
                other => return Err(GameError::InvalidState(format!("unexpected cell `{other}`"))),
            }
        }
        Self::from_bitboards(kind, p1, p2, to_move)
    }

    pub fn kind(&self) -> GameKind {
        self.kind
    }

    pub fn spec(&self) -> GameSpec {
        self.kind.spec()
    }

    pub fn to_move(&self) -> Player {
        self.to_move
    }

    pub fn move_count(&self) -> usize {
        self.move_count as usize
    }

    pub fn pieces(&self, player: Player) -> u64 {
        match player {
            Player::P1 => self.p1,
            Player::P2 => self.p2,
        }
    }

    pub fn occupied(&self) -> u64 {
        self.p1 | self.p2
    }

    pub fn empty_cells(&self) -> usize {
        self.spec().cells() - self.occupied().count_ones() as usize
    }

    /// True when piece counts match alternating play from the empty board.
    pub fn has_turn_parity(&self) -> bool {
        let (n1, n2) = (self.p1.count_ones(), self.p2.count_ones());
        match self.to_move {
            Player::P1 => n1 == n2,
            Player::P2 => n1 == n2 + 1,
        }
    }

    fn has_support(&self) -> bool {
        let cols = self.spec().cols;
        let occ = self.occupied();
        // every occupied cell above row 0 sits on an occupied cell
        let above_bottom = occ >> cols;
        above_bottom & !occ == 0
    }

    fn has_line(&self, bits: u64) -> bool {
        self.kind.geometry().lines.iter().any(|&l| bits & l == l)
    }

    /// Legal moves as a mask. Errors on terminal states.
    pub fn legal_actions(&self) -> Result<ActionMask, GameError> {
        if self.terminal_value().is_some() {
            return Err(GameError::TerminalState);
        }
        Ok(self.playable_actions())
    }

    /// Actions permitted by placement rules alone, ignoring whether the game has ended.
    fn playable_actions(&self) -> ActionMask {
        let spec = self.spec();
        let occ = self.occupied();
        if self.kind.is_drop_game() {
            let top_row = (occ >> ((spec.rows - 1) * spec.cols)) & ((1 << spec.cols) - 1);
            ActionMask::from_bits(!top_row, spec.action_count)
        } else {
            ActionMask::from_bits(!occ, spec.action_count)
        }
    }

    /// Plays `action` for the side to move and returns the successor.
    pub fn apply(&self, action: ActionIndex) -> Result<GameState, GameError> {
        let legal = self.legal_actions()?;
        if !legal.contains(action) {
            return Err(GameError::IllegalAction { action });
        }
        let spec = self.spec();
        let cell = if self.kind.is_drop_game() {
            let occ = self.occupied();
            (0..spec.rows)
                .map(|r| r * spec.cols + action)
                .find(|&cell| occ & (1 << cell) == 0)
                .expect("legal column has an empty cell")
        } else {
            action
        };
        let mut next = *self;
        match self.to_move {
            Player::P1 => next.p1 |= 1 << cell,
            Player::P2 => next.p2 |= 1 << cell,
        }
        next.to_move = self.to_move.other();
        next.move_count += 1;
        Ok(next)
    }

    /// `Some(z)` from the mover's perspective if the game is over.
    pub fn terminal_value(&self) -> Option<Outcome> {
        let (mine, theirs) = match self.to_move {
            Player::P1 => (self.p1, self.p2),
            Player::P2 => (self.p2, self.p1),
        };
        if self.has_line(theirs) {
            return Some(Outcome::LOSS);
        }
        if self.has_line(mine) {
            return Some(Outcome::WIN);
        }
        if self.playable_actions().is_empty() {
            return Some(Outcome::DRAW);
        }
        None
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal_value().is_some()
    }

    /// Terminal result seen by `player` rather than the side to move.
    pub fn outcome_for(&self, player: Player) -> Option<Outcome> {
        self.terminal_value().map(|z| z.relative_to(self.to_move, player))
    }

    pub fn supports(&self, op: SymmetryOp) -> bool {
        self.kind.geometry().perm(op).is_some()
    }

    pub fn transform(&self, op: SymmetryOp) -> Result<GameState, GameError> {
        let perm = self
            .kind
            .geometry()
            .perm(op)
            .ok_or(GameError::UnsupportedSymmetry { op, game: self.kind })?;
        if op.is_inversion() {
            return Ok(GameState { p1: self.p2, p2: self.p1, to_move: self.to_move.other(), ..*self });
        }
        Ok(GameState { p1: permute_bits(self.p1, perm), p2: permute_bits(self.p2, perm), ..*self })
    }

    /// Flat features: first-player plane, second-player plane, turn plane
    /// (0 when the first player moves, 1 otherwise).
    pub fn encode(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.spec().feature_len()];
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut [f32]) {
        let cells = self.spec().cells();
        assert_eq!(out.len(), 3 * cells, "feature buffer has wrong length");
        let turn = match self.to_move {
            Player::P1 => 0.0,
            Player::P2 => 1.0,
        };
        for cell in 0..cells {
            out[cell] = ((self.p1 >> cell) & 1) as f32;
            out[cells + cell] = ((self.p2 >> cell) & 1) as f32;
            out[2 * cells + cell] = turn;
        }
    }

    pub fn key(&self) -> StateKey {
        let turn = match self.to_move {
            Player::P1 => 0u128,
            Player::P2 => 1u128,
        };
        StateKey(self.p1 as u128 | (self.p2 as u128) << 48 | turn << 96 | (self.kind as u128) << 100)
    }

    /// Inverse of [`GameState::key`].
    pub fn from_key(key: StateKey) -> Result<GameState, GameError> {
        let raw = key.0;
        let mask = (1u128 << 48) - 1;
        let kind = match (raw >> 100) & 0xf {
            0 => GameKind::Ttt3,
            1 => GameKind::Ttt4,
            2 => GameKind::Connect4,
            other => return Err(GameError::InvalidState(format!("bad game tag {other} in key"))),
        };
        let to_move = if (raw >> 96) & 1 == 0 { Player::P1 } else { Player::P2 };
        GameState::from_bitboards(kind, (raw & mask) as u64, ((raw >> 48) & mask) as u64, to_move)
    }

    pub fn render(&self) -> String {
        let spec = self.spec();
        let mut out = String::with_capacity((spec.cols + 1) * spec.rows);
        for display_row in 0..spec.rows {
            let row = if self.kind.is_drop_game() { spec.rows - 1 - display_row } else { display_row };
            for col in 0..spec.cols {
                let bit = 1u64 << (row * spec.cols + col);
                out.push(if self.p1 & bit != 0 {
                    'X'
                } else if self.p2 & bit != 0 {
                    'O'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

pub fn legal_actions(state: &GameState) -> Result<ActionMask, GameError> {
    state.legal_actions()
}

pub fn apply(state: &GameState, action: ActionIndex) -> Result<GameState, GameError> {
    state.apply(action)
}

pub fn terminal_value(state: &GameState) -> Option<Outcome> {
    state.terminal_value()
}

pub fn transform(state: &GameState, op: SymmetryOp) -> Result<GameState, GameError> {
    state.transform(op)
}

pub fn encode(state: &GameState) -> Vec<f32> {
    state.encode()
}

pub fn canonical_key(state: &GameState) -> StateKey {
    state.key()
}

/// Maps an action index through a board symmetry so that
/// `s.transform(op).apply(transform_action(a, op))` equals `s.apply(a).transform(op)`.
/// Inversion leaves actions unchanged.
pub fn transform_action(action: ActionIndex, op: SymmetryOp, kind: GameKind) -> Result<ActionIndex, GameError> {
    let spec = kind.spec();
    let perm = kind.geometry().perm(op).ok_or(GameError::UnsupportedSymmetry { op, game: kind })?;
    if action >= spec.action_count {
        return Err(GameError::IllegalAction { action });
    }
    if op.is_inversion() {
        return Ok(action);
    }
    if kind.is_drop_game() {
        // a column maps to the column of its bottom cell
        Ok(perm[action] as usize % spec.cols)
    } else {
        Ok(perm[action] as usize)
    }
}

/// Permutes a per-action vector so that entry `transform_action(a, op)` of the
/// result holds entry `a` of the input.
pub fn transform_policy<T: Copy + Default>(policy: &[T], op: SymmetryOp, kind: GameKind) -> Result<Vec<T>, GameError> {
    let mut out = vec![T::default(); policy.len()];
    for (a, &p) in policy.iter().enumerate() {
        out[transform_action(a, op, kind)?] = p;
    }
    Ok(out)
}

impl fmt::Debug for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GameState({}, {:?} to move, move {})\n{}", self.kind, self.to_move, self.move_count, self.render())
    }
}

impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
