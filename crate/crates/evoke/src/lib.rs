//! evoke: a knowledge-enhanced engine that predicts the set of emotions an
//! image evokes in its viewers.
//!
//! The pipeline runs in four stages over frozen model backends:
//! organize visual emotion cues into six categories and derive
//! emotion-suppressing contrastive rules ([`reasoning`]); generate and
//! self-refine a budgeted prompt set against few-shot examples ([`prompts`]);
//! extract cues from each test image, embed text and image, and retrieve the
//! nearest emotion concepts by weighted cosine fusion ([`retrieval`]); then
//! judge which emotions are sufficiently aroused ([`judge`]). The [`eval`]
//! module scores predictions with per-emotion accuracy and balanced F1 over
//! three seeded negative-resampling rounds.
//!
//! [`pipeline::Engine`] assembles the stages into resumable `ingest` /
//! `prepare` / `infer` / `eval` commands over one run directory; [`cli`]
//! exposes them as a binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod judge;
pub mod pipeline;
pub mod prompts;
pub mod reasoning;
pub mod replies;
pub mod retrieval;
pub mod run;
pub mod taxonomy;
pub mod transcript;
