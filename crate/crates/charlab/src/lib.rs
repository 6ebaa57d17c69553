//! charlab: a desk-scale laboratory for character-aware language modeling.
//!
//! The crate builds synthetic tokenizer vocabularies, generates a 19-task
//! word/character manipulation suite, trains small decoder-only transformers
//! (optionally augmented with a block-causal character encoder), and analyzes
//! the resulting training dynamics: emergence steps, curve collapse, width
//! scaling, and a bipartite percolation simulator.
//!
//! Everything is deterministic given a seed. Data-parallel sections run on
//! rayon when the `parallel` feature (default) is enabled and fall back to
//! sequential execution otherwise; both paths produce bit-identical results.

pub mod evalx;
pub mod model;
pub mod optim;
pub mod par;
pub mod percolation;
pub mod plot;
pub mod rng;
pub mod run;
pub mod scaling;
pub mod taskgen;
pub mod train;
pub mod vocab;

pub use model::{ModelConfig, Parameters};
pub use rng::Rng;
pub use vocab::Vocabulary;
