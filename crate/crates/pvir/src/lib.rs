//! Multi-view phase-aware pedestrian-vehicle incident reasoning engine.
//!
//! The pipeline turns synchronized multi-view recordings of a
//! pedestrian-vehicle encounter into a structured diagnostic report in four
//! sequential stages: kinematic triggering and clock synchronization
//! ([`trigger`], [`sync`]), behavioral phase segmentation ([`grounding`]),
//! phase-specific captioning and question answering ([`reasoning`]), and
//! schema-validated report synthesis ([`synthesis`]). The [`metrics`]
//! module scores runs (temporal mIoU, caption metrics, VQA rates), and
//! [`pipeline`] orchestrates batch runs over a dataset manifest.

pub mod backend;
pub mod config;
pub mod grounding;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod reasoning;
pub mod sync;
pub mod synthesis;
pub mod trigger;
