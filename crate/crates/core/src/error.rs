use thiserror::Error;

use crate::game::GameError;
use crate::neural::NetError;
use crate::oracle::OracleError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("search: {0}")]
    Search(String),
    #[error("config: {0}")]
    Config(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
