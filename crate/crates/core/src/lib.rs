//! Motor-imagery EEG decoding, Grad-CAM channel relevance and channel-selection
//! experiments: EDF ingestion, filtering, an autodiff tensor engine, the
//! classifier, training, explanations, statistics, synthetic data and reports.

// `!(x > 0.0)`-style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod dsp;
pub mod edf;
pub mod explain;
pub mod model;
pub mod report;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod training;
