//! Simulation and analysis engine for machine-learning systems structured as
//! DAGs of separately trained models.
//!
//! The engine reproduces a counterintuitive failure mode of such systems: an
//! update that improves an upstream model on its own fixed test loss can
//! strictly degrade a downstream model even after the downstream model is
//! retrained.  Everything runs on small finite-support distributions so that
//! Bayes-optimal references and risk decompositions are computed exactly by
//! enumeration rather than estimated.
//!
//! Module map:
//!
//! * [`graph`] — system DAGs, datasets, input routing, topological training.
//! * [`model`] — hypothesis families, loss functions, exhaustive-scan ERM.
//! * [`oracle`] — exact Bayes-style references on finite supports.
//! * [`decomp`] — excess-risk decompositions, the update/retrain protocol,
//!   and Monte-Carlo estimates of expected downstream risk.
//! * [`scenario`] — five self-contained scenario bundles, each isolating one
//!   term of the decomposition, plus the runner that checks their declared
//!   expected effects.
//! * [`config`] — a strict JSON schema for describing custom systems.

pub mod config;
pub mod decomp;
pub mod error;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod scenario;

pub use error::{Error, Result};
