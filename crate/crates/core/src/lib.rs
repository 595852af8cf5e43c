//! Tool-chaining program synthesis for process-engineering calculations.

pub mod composer;
pub mod config;
pub mod executor;
pub mod extractor;
pub mod gateway;
pub mod pipeline;
pub mod planner;
pub mod progcache;
pub mod rag;
pub mod react_agent;
pub mod reflector;
pub mod runtime;
pub mod text;
pub mod toolhub;
