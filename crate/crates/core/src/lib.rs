//! Quality-control engine for variable-effort bounding-box annotation.
//!
//! The crate is organised around the lifecycle of a HIT:
//!
//! - [`dataset`]: scenes, corpora, annotation records and the synthetic corpus generator.
//! - [`scoring`]: IoU, optimal box matching, mIoU/recall and the visible-gold feedback payload.
//! - [`scheduler`]: per-worker visible-gold issuance (Upfront, Regular, Fib+Regular, Dynamic).
//! - [`ledger`]: running gold accuracy, tiers, warnings, bonuses and blocking.
//! - [`payment`]: advertised prices and settled payouts for every pay scheme.
//! - [`workflow`]: task decomposition, iterative improvement and reassembly.
//! - [`session`]: the event-sourced engine shared by live sessions and the simulator.

pub mod dataset;
pub mod ledger;
pub mod money;
pub mod payment;
pub mod scheduler;
pub mod scoring;
pub mod seed;
pub mod session;
pub mod workflow;

pub use dataset::{AnnotationSet, BoundingBox, Corpus, Scene};
pub use money::Cents;
pub use scoring::{MatchResult, ScoreReport};
