//! Signal conditioning: zero-phase band-pass filtering, windowing trials into
//! fixed-length epochs, per-channel z-scoring and Morlet time-frequency
//! power.

mod epochs;
mod filter;
mod morlet;
mod normalize;

use thiserror::Error;

pub use epochs::{epoch_windows, epochs_from_recording, Epoch, EpochProvenance, EpochSet};
pub use filter::{design_bandpass, filter_recording, filter_zero_phase, FilterSpec, Section};
pub use morlet::{default_freqs, default_n_cycles, morlet_tfr, morlet_wavelet, Tfr};
pub use normalize::{zscore_normalize, ChannelStats};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid band {low}-{high} Hz at fs={fs} Hz (need 0 < low < high < fs/2)")]
    InvalidBand { low: f64, high: f64, fs: f64 },
    #[error("numerically unstable filter: {0}")]
    Unstable(String),
    #[error("signal of {len} samples too short; need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("epoch container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
