//! Longitudinal psychometric probing of two-agent LLM conversations.
//!
//! Two agents of the same model discuss 36 fixed themes in order. After
//! themes 12, 24 and 36 each agent answers a battery of questionnaires with
//! the conversation so far as context, and the per-factor scores across
//! these three snapshots are tested for consistent change. The utterances
//! themselves feed a topic analysis.
//!
//! Modules, bottom up: [`gateway`] (chat backends), [`protocol`]
//! (conversations and snapshots), [`questionnaire`] (instruments, probes,
//! scoring), [`stats`] (the testing pipeline), [`topics`], [`store`] (run
//! persistence), [`experiment`] (orchestration with resume) and [`report`].

pub mod exec;
pub mod experiment;
pub mod gateway;
pub mod protocol;
pub mod questionnaire;
pub mod report;
pub mod stats;
pub mod store;
pub mod topics;

pub use exec::Exec;

use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_depend_on_both_inputs() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
    }
}
