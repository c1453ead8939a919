//! Agitation detection from wristband physiological recordings.
//!
//! The crate covers the whole offline pipeline:
//!
//! ```text
//! E4 archive + labels ── ingest ── preprocess (4 Hz streams) ── features (198 cols)
//!     ── drop non-finite columns ── vae (100-d z_mean) ── selftrain / ensemble ── eval
//! ```
//!
//! [`synth`] generates a deterministic cohort in the same archive format so
//! the pipeline can be exercised end to end without clinical data.

pub mod ensemble;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod modelfile;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod selftrain;
pub mod synth;
pub mod vae;
