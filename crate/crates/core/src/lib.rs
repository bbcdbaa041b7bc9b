//! Dataflow computation graphs as a game: author a graph in the `.graph`
//! language, train it, score it in bits and battle it against others.

pub mod arena;
pub mod complexity;
pub mod data;
pub mod dsl;
pub mod engine;
pub mod graph;
pub mod metrics;
mod precise;
pub mod rng;
pub mod shape;
pub mod tensor;
#[cfg(feature = "testing")]
pub mod testing;
pub mod training;

pub use dsl::{parse, ParseError};
pub use graph::{validate, GraphSpec, ValidatedGraph};
pub use shape::{Dim, Shape};
