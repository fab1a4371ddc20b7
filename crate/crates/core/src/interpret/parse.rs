//! Parsers for the bracketed response grammar.
//!
//! Matching is case-sensitive and anchored at both ends of the trimmed
//! response. Inner text is trimmed, must be non-empty and may not contain `]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COMMONALITY_OPEN: &str = "[Commonality:";
pub const ERROR_OPEN: &str = "[Error:";
pub const NO_COMMON_ERRORS: &str = "[No common errors]";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Error,
    NoCommonErrors,
    Uninterpreted,
}

fn bracketed<'a>(raw: &'a str, open: &str) -> Option<&'a str> {
    let inner = raw.trim().strip_prefix(open)?.strip_suffix(']')?.trim();
    (!inner.is_empty() && !inner.contains(']')).then_some(inner)
}

/// `[Commonality: X]` to `X`.
pub fn parse_commonality(raw: &str) -> Result<String> {
    bracketed(raw, COMMONALITY_OPEN)
        .map(str::to_string)
        .ok_or_else(|| Error::Parse(format!("expected [Commonality: ...], got {:?}", excerpt(raw))))
}

/// `[No common errors]` or `[Error: D]`.
pub fn parse_error_verdict(raw: &str) -> Result<(Verdict, String)> {
    if raw.trim() == NO_COMMON_ERRORS {
        return Ok((Verdict::NoCommonErrors, String::new()));
    }
    bracketed(raw, ERROR_OPEN)
        .map(|d| (Verdict::Error, d.to_string()))
        .ok_or_else(|| Error::Parse(format!("expected [Error: ...] or [No common errors], got {:?}", excerpt(raw))))
}

fn excerpt(s: &str) -> String {
    s.chars().take(80).collect()
}
