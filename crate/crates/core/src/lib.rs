//! Mechanistic ECG toolkit.
//!
//! - [`signal`]: multi-lead containers, R-peak detection, beat crops, spectra
//! - [`simulator`]: limit-cycle ECG ODEs with explicit Euler integration
//! - [`calibration`]: fitting simulator morphology to an observed beat
//! - [`constraints`]: simulator-consistency, inter-lead and spectral losses
//! - [`diffusion`]: DDPM schedules, noising, posterior means and sampling
//! - [`retrieval`]: tri-view Jaccard similarity and top-k record retrieval
//! - [`metrics`]: waveform fidelity and embedding-distribution metrics
//! - [`io`]: the CSV / JSON / JSONL file contracts

pub mod calibration;
pub mod constraints;
pub mod diffusion;
pub mod error;
pub mod format;
pub mod io;
pub mod metrics;
pub mod retrieval;
pub mod signal;
pub mod simulator;

pub use error::{Error, Result};
pub use signal::{Beat, Lead, MultiLeadSignal, Spectrum};
pub use simulator::{ParamRegistry, SimConfig, SimState, WaveParams};
