//! Sample-efficient search over combinatorial model-design spaces.
//!
//! A design space declares ordered dimensions (numerical or categorical)
//! plus optional dependency groups whose member dimensions only exist when
//! a flag dimension is active. Valid designs form the nodes of a design
//! graph whose edges connect designs at distance one; a small graph
//! meta-model trained on the designs explored so far steers the search
//! toward promising candidates.
//!
//! The crate is `no_std` (allocator required). IO, file formats and the
//! command line live in the companion `falcon` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod baselines;
pub mod eval;
pub mod graph;
pub mod model;
pub mod sampling;
pub mod search;
pub mod space;

pub use eval::{Budget, BudgetKind, EvaluationRecord, Evaluator};
pub use graph::{DesignGraph, GraphStats, Subgraph};
pub use model::{MetaModelConfig, MetaModelParams};
pub use search::{SearchConfig, SearchOutcome, Strategy};
pub use space::{Design, DesignSpace, Dimension, DimensionKind, SpaceIndex};
