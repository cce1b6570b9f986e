pub mod cli;
pub mod corpus;
pub mod generation;
pub mod graph;
pub mod lint;
pub mod metrics;
pub mod render;
pub mod service;
