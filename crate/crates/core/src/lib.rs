//! Deterministic peer-to-peer XML store simulator with adaptive view
//! materialization.
//!
//! Peers sit on a simulated DHT ring, publish XML documents, index their
//! terms and dataguide synopses, answer tree-pattern queries by rewriting
//! them over materialized views (or by shipping the query to document
//! holders), and periodically pick views to materialize under a space
//! budget by benefit-to-size ratio.

pub mod adapt;
pub mod api;
pub mod catalog;
pub mod engine;
pub mod overlay;
pub mod pattern;
pub mod rewriter;
pub mod synopsis;
pub mod table;
pub mod xml;
