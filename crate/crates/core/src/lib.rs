//! Question answering over text-attributed graphs: topic-node matching,
//! relation-path planning, and a Search/Query/Finish agent loop.

pub mod agent;
pub mod embedding;
pub mod eval;
pub mod graph;
pub mod http;
pub mod kb;
pub mod llm;
pub mod matcher;
pub mod pipeline;
pub mod planner;
pub mod text;
