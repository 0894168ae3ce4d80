//! Natural-logic inference laboratory: exactly-labeled datasets from three
//! formal systems, and tree-structured neural pair classifiers trained on them.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod model;
pub mod nn;
pub mod prop;
pub mod quant;
pub mod relation;
pub mod rng;
pub mod train;
pub mod worlds;

pub use error::{Error, Result};
pub use expr::{parse_sexpr, Expression};
pub use relation::{Relation, RelationOutcome};
