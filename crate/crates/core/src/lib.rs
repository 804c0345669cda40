//! Few-shot bioacoustic sound event detection toolkit.
//!
//! * [`annotations`]: ground-truth and prediction CSV tables, episode extraction
//! * [`scoring`]: event-level F-score with IoU matching and UNK handling
//! * [`dsp`]: WAV input, STFT, mel filterbank, PCEN and log compression
//! * [`template_match`]: spectrogram cross-correlation baseline
//! * [`proto_detector`]: prototype-distance baseline with adaptive segments
//! * [`postprocess`]: median filtering, merging and duration filtering
//! * [`synth`]: deterministic synthetic episodes and benchmarks
//! * [`pipeline`]: end-to-end detection over an episode

pub mod annotations;
pub mod dsp;
pub mod error;
pub mod pipeline;
pub mod postprocess;
pub mod proto_detector;
pub mod scoring;
pub mod synth;
pub mod template_match;

pub use error::{Error, Result};
