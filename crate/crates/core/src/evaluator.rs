//! Position evaluators used by search, value-informed selection and the
//! analysis tools: the trained network plus two fixed stubs.

use crate::error::{Error, Result};
use crate::game::{ActionMask, GameState};
use crate::neural::NetParams;
use crate::oracle::StateTable;

/// Priors over actions and a value for the side to move.
pub trait Evaluator: Sync {
    /// Returns `(priors, value)`. Priors have length `action_count`, sum to
    /// one over `mask` and are zero elsewhere.
    fn evaluate(&self, state: &GameState, mask: ActionMask) -> Result<(Vec<f32>, f32)>;

    fn value(&self, state: &GameState) -> Result<f32> {
        let mask = state.legal_actions()?;
        Ok(self.evaluate(state, mask)?.1)
    }
}

impl Evaluator for NetParams<f32> {
    fn evaluate(&self, state: &GameState, mask: ActionMask) -> Result<(Vec<f32>, f32)> {
        let out = self.forward(&state.encode(), mask)?;
        Ok((out.policy, out.value))
    }

    fn value(&self, state: &GameState) -> Result<f32> {
        Ok(NetParams::value(self, &state.encode())?)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, state: &GameState, mask: ActionMask) -> Result<(Vec<f32>, f32)> {
        (**self).evaluate(state, mask)
    }

    fn value(&self, state: &GameState) -> Result<f32> {
        (**self).value(state)
    }
}

pub fn uniform_priors(mask: ActionMask) -> Vec<f32> {
    let p = 1.0 / mask.count() as f32;
    (0..mask.len()).map(|a| if mask.contains(a) { p } else { 0.0 }).collect()
}

/// Uniform priors and the exact game-tree value from a solved table.
pub struct OracleEvaluator<'a> {
    pub table: &'a StateTable,
}

impl Evaluator for OracleEvaluator<'_> {
    fn evaluate(&self, state: &GameState, mask: ActionMask) -> Result<(Vec<f32>, f32)> {
        Ok((uniform_priors(mask), self.value(state)?))
    }

    fn value(&self, state: &GameState) -> Result<f32> {
        Ok(self.table.value(state).map_err(Error::from)? as f32)
    }
}

/// Uniform priors and a constant value; a random-policy, zero-knowledge baseline.
pub struct UniformEvaluator {
    pub value: f32,
}

impl Evaluator for UniformEvaluator {
    fn evaluate(&self, _state: &GameState, mask: ActionMask) -> Result<(Vec<f32>, f32)> {
        Ok((uniform_priors(mask), self.value))
    }

    fn value(&self, _state: &GameState) -> Result<f32> {
        Ok(self.value)
    }
}
