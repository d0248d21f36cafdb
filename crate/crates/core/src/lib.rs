// SPDX-License-Identifier: Apache-2.0

//! Execution-aware data engine for coverage-driven testbench generation.
//!
//! The crate turns simulator feedback into supervised fine-tuning data:
//! [`synth`] samples student-grounded trajectories and keeps only
//! coverage-improving transitions, [`stages`] assembles those into staged
//! datasets, [`evalharness`] scores generators under direct and agentic
//! protocols, and [`dedup`] removes benchmark-contaminated repositories.

pub mod domain;
pub mod simbridge;
pub mod genbridge;
pub mod seeds;
pub mod synth;
pub mod stages;
pub mod corpus;
pub mod dedup;
pub mod evalharness;
pub mod artifact;
