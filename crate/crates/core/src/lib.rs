//! Benchmark harness for synthetic-image detectors.
//!
//! The crate is organized by stage: [`manifest`] describes labeled corpora,
//! [`imaging`] perturbs images, [`protocol`] talks to detector processes,
//! [`builtin`] provides reference detectors, [`metrics`] scores results,
//! [`runner`] orchestrates evaluation grids with caching, and [`report`]
//! renders tables.

pub mod builtin;
pub mod demo;
pub mod imaging;
pub mod manifest;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod runner;
