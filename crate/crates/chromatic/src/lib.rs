//! A lock-free chromatic search tree built on the LLX/SCX/VLX primitives.
//!
//! [`mwcas`] provides the primitives, [`template`] the tree update template
//! with its postcondition validator and history auditor, and [`tree`] the
//! ordered dictionary. The map is generic over integer key types; the aliases
//! below fix the common ones.

pub mod hook;
pub mod mwcas;
pub mod template;
pub mod tree;

pub use mwcas::{Reclamation, ScxLog, ScxRecord, Slot};
pub use tree::{ChromaticMap, Config, Layout, RebalanceStepKind, Shape, StatsSnapshot};

pub type ChromaticMapU64<V> = ChromaticMap<u64, V>;
pub type ChromaticMapU32<V> = ChromaticMap<u32, V>;
pub type ChromaticMapI64<V> = ChromaticMap<i64, V>;
