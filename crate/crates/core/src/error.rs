//! Error type shared across the crate.

use std::fmt;

/// Grid coordinates of a rank, used to attach context to worker errors.
pub type Coords = (usize, usize, usize);

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("owner of id {id} is rank {owner}, outside its user set {users:?}")]
    OwnerOutsideLambda {
        id: usize,
        owner: usize,
        users: Vec<usize>,
    },

    #[error("id {id} for peer {peer} missing from dense store directory")]
    MissingDirectoryEntry { id: usize, peer: usize },

    #[error("word count mismatch between sender and receiver: sent {sent}, expected {expected} (src {src}, dst {dst})")]
    WordCountMismatch {
        sent: usize,
        expected: usize,
        src: usize,
        dst: usize,
    },

    #[error("payload type mismatch on receive (src {src}, dst {dst}, tag {tag})")]
    PayloadKind { src: usize, dst: usize, tag: u64 },

    #[error("deadlock: rank {dst} timed out waiting for a message from rank {src} (context {context}, tag {tag})")]
    Deadlock {
        src: usize,
        dst: usize,
        context: u64,
        tag: u64,
    },

    #[error("transport aborted while rank {rank} was blocked: {reason}")]
    Aborted { rank: usize, reason: String },

    #[error("owner maps diverged across ranks (inconsistent seeds?)")]
    SeedDivergence,

    #[error("unresolved index: global id {id} has no resident dense row")]
    UnresolvedIndex { id: usize },

    #[error("rank {rank} at {coords:?} failed during {phase}: {source}")]
    AtRank {
        rank: usize,
        coords: Coords,
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_rank(self, rank: usize, coords: Coords, phase: &'static str) -> Error {
        Error::AtRank {
            rank,
            coords,
            phase,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Compact display helper for error chains in CLI output.
pub fn render_chain(err: &Error) -> String {
    let mut out = String::new();
    fmt::write(&mut out, format_args!("{err}")).ok();
    out
}
