//! Detection, quantification, and mitigation of cross-modality knowledge
//! conflicts in vision-language models.
//!
//! A vision-language model holds knowledge in two places: the language model
//! and the visual components aligned onto it. Asking the same multiple-choice
//! question about an entity shown as an image versus named in text can yield
//! contradictory answers. This crate provides the full toolchain around that
//! phenomenon, built on a pluggable log-probability-serving [`backend`]:
//!
//! - [`datamodel`] — shared domain types (items, distributions, records,
//!   reports) and their validation.
//! - [`dataset_builder`] — turns free-form QA into validated multiple-choice
//!   items by synthesizing distractors through a generator backend.
//! - [`backend`] — the model abstraction with HTTP, replay, and synthetic
//!   implementations plus a recording wrapper.
//! - [`detector`] — recognition filter, paired textual/visual querying, and
//!   the accuracy / flip-rate / conflict-rate metric suite.
//! - [`confidence`] — option-confidence extraction and confidence-based
//!   answer selection strategies.
//! - [`contrastive`] — the log-ratio contrast metric, separation statistics,
//!   and autoregressive visual-memory elicitation.
//! - [`dcd`] — dynamic contrastive decoding over option logits.
//! - [`mitigate`] — prompt-based re-querying strategies and their evaluation
//!   against the visual-answer baseline.

pub mod backend;
pub mod confidence;
pub mod contrastive;
pub mod datamodel;
pub mod dataset_builder;
pub mod dcd;
pub mod detector;
pub mod mitigate;
pub mod parallel;
