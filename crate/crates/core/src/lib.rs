//! Batch audits of demographic disparities in LLM-generated educational
//! content.
//!
//! The pipeline enumerates and samples intersectional student profiles
//! ([`profile_space`]), renders ranking and generation prompts
//! ([`prompt_forge`]) over problem banks ([`corpus`]), drives a model backend
//! ([`llm_gateway`]), and scores the responses with readability indices
//! ([`readability`]), bias metrics ([`metrics`]) and a statistical battery
//! ([`stats`]). [`runner`] ties the stages together into resumable runs and
//! [`analysis`] turns a finished run into report tables.

pub mod analysis;
pub mod corpus;
pub mod llm_gateway;
pub mod metrics;
pub mod profile_space;
pub mod prompt_forge;
pub mod readability;
pub mod runner;
pub mod seed;
pub mod stats;
