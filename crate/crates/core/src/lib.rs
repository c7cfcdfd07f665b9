pub mod corpus;
pub mod diagnostics;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod index;
pub mod retrieval;
