//! Detector wire protocol: one JSON object per `\n`-terminated line over the
//! detector process's stdin/stdout. Stderr is left to the detector for logs.
//!
//! ```text
//! harness  → {"type":"hello","protocol_version":1}
//! detector → {"type":"hello_ack","name":…,"version":…,"protocol_version":1,"input_policy":…,"score_direction":"higher_is_fake"}
//! harness  → {"type":"score","batch_id":1,"items":[{"id":…,"path":…}]}
//! detector → {"type":"scores","batch_id":1,"scores":[{"id":…,"score":…}]}
//! harness  → {"type":"shutdown"}
//! ```
//!
//! Either side may send `{"type":"error","message":…}`.

mod client;
mod server;
mod wire;

use std::time::Duration;

use thiserror::Error;

pub use client::{DetectorSession, SessionConfig, ShutdownOutcome};
pub use server::{serve, serve_with_hook, BatchScorer};
pub use wire::{
    parse_line, sanitize_non_finite, to_line, DetectorDescriptor, InputPolicy, Message, ScoreDirection, ScoreValue,
    WireItem, WireScore,
};

pub const PROTOCOL_VERSION: u32 = 1;
pub const PROTOCOL_ENV: &str = "SIDBENCH_PROTOCOL";
pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("cannot start detector `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty detector command")]
    EmptyCommand,
    #[error("{phase} timeout after {secs:.1} s")]
    Timeout { phase: &'static str, secs: f64 },
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("unexpected reply type `{got}` (expected `{expected}`)")]
    UnexpectedType { expected: &'static str, got: String },
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("batch_id mismatch: sent {sent}, received {received}")]
    BatchIdMismatch { sent: u64, received: u64 },
    #[error("reply is missing id {0}")]
    MissingId(String),
    #[error("reply contains unexpected id {0}")]
    ExtraId(String),
    #[error("reply contains duplicate id {0}")]
    DuplicateId(String),
    #[error("non-finite score for id {0}")]
    NonFiniteScore(String),
    #[error("duplicate id {0} in request")]
    DuplicateRequestId(String),
    #[error("detector reported error: {0}")]
    Detector(String),
    #[error("detector exited mid-batch ({status}); stderr tail:\n{stderr_tail}")]
    Exited { status: String, stderr_tail: String },
    #[error("session is closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
