//! Generator for relational-temporal benchmark datasets.
//!
//! A task is declared as a finite-trace temporal formula over named
//! finite-domain constraints. The formula is compiled into a deterministic,
//! complete, minimal symbolic automaton whose transition guards are
//! propositional formulas over constraint atoms. Annotated datasets are then
//! produced by biased random walks over the automaton, solving the
//! per-transition constraint problems and binding symbolic labels to image
//! references:
//!
//! * **sequential mode** emits a dataset of labeled sequences (positive iff
//!   the induced trace is accepted), and
//! * **incremental mode** emits a curriculum of episodes, each an image
//!   classification dataset consistent with one step of a positive walk.
//!
//! The crate also provides exact and top-1-proof probabilistic evaluation of
//! constraints and automaton transitions from per-variable categorical
//! distributions ([`probeval`]), and an independent validator that re-derives
//! every annotation of an emitted dataset ([`datagen::validate`]).

pub mod csp;
pub mod datagen;
pub mod ltlf;
pub mod probeval;
pub mod sampler;
pub mod sfa;
pub mod spec;
pub mod stream_rng;

pub use spec::{bundled_names, bundled_spec_text, bundled_tasks, load_spec, TaskSpec};

