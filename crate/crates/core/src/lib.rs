//! Mel-scale subband spatio-temporal beamforming for multichannel in-car
//! speech separation, with the scene simulator, oracle estimators, MVDR
//! baselines, quality metrics and compute-cost model around it.

pub mod beamformer;
pub mod cli;
pub mod cost;
pub mod error;
pub mod estimator;
pub mod features;
pub mod linalg;
pub mod metrics;
pub mod scene;
pub mod signal;
pub mod subband;
pub mod tensor_file;
pub mod weights;

pub use error::{Error, Result};
pub use signal::{
    istft, read_wav, stft, write_wav, Spectrogram, StftConfig, WavEncoding, Waveform,
};
