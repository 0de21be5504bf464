//! patterncore: a desk-scale engine for definability patterns of universal
//! relational theories.
//!
//! The pipeline: parse a theory in the `.thy` DSL, build a bounded generic
//! (existentially-closed-ish) model, enumerate or mine the γ-type space with
//! its pattern relations, extract the finite core as a minimal retract,
//! compute its automorphism group and Lascar relations, decide bounded
//! Ramsey verdicts via free pattern types, and synthesize the canonical
//! expansions as concrete forbidden-configuration theories.
//!
//! Every bound-relative result carries its catalog level and a stability
//! badge; nothing here is a proof about the infinite objects, only exact
//! computation at the configured truncation.

pub mod canon;
pub mod cli;
pub mod coreengine;
pub mod dsl;
pub mod enumerate;
pub mod expander;
pub mod generic;
pub mod lascar;
pub mod par;
pub mod patspace;
pub mod ramseylab;
pub mod report;
pub mod search;
pub mod sig;

use thiserror::Error;

/// Errors shared across the engine.
#[derive(Debug, Error)]
pub enum PcError {
    #[error("signature error: {0}")]
    Signature(String),
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("budget exceeded in {0}")]
    Budget(String),
    #[error("no model: {0}")]
    NoModel(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Node budget for the backtracking searches. The default is generous for
/// the bundled fixtures; `PATTERNCORE_BUDGET` overrides it globally.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub nodes: u64,
}

impl Default for Budget {
    fn default() -> Self {
        let nodes = std::env::var("PATTERNCORE_BUDGET")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(200_000_000);
        Budget { nodes }
    }
}

impl Budget {
    pub fn new(nodes: u64) -> Self {
        Budget { nodes }
    }

    /// Split off a sub-budget for one phase of a computation.
    pub fn slice(&self, frac: u64) -> Budget {
        Budget {
            nodes: (self.nodes / frac).max(1),
        }
    }
}
