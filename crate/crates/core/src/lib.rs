//! Small-dispersion Kerr fiber channel laboratory.
//!
//! The crate couples a split-step solver for the stochastic nonlinear
//! Schrödinger equation with closed-form perturbative kernels for the
//! recovered pulse coefficients, and Monte Carlo machinery that checks one
//! against the other.

pub mod config;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod field;
pub mod kernels;
pub mod montecarlo;
pub mod noise;
pub mod nlse;
pub mod signal;
pub mod stats;

pub use config::{Centering, ExperimentConfig, ExperimentKind};
pub use detector::{Filter, FilterKind, FilterSpec, HierarchyReport, RegimeMargins};
pub use error::{Error, Result};
pub use experiment::{run_experiment, validate_config, Manifest, Outcome, RunOptions, ValidationReport};
pub use field::{ComplexField, Spectral, TimeGrid, C64};
pub use kernels::{KernelForm, KernelInputs, KernelValues, RecoveryCoefficients};
pub use montecarlo::{McEstimate, McPipeline, McSamples, McSetup, SemiAnalyticReport, SlotEstimate};
pub use nlse::{ChannelParams, Dimensionless, PropagationResult, Propagator};
pub use noise::{NoiseRealization, NoiseSpec};
pub use signal::{AmplitudeLaw, CodeWord, ProfilePoint, PulseTrainSpec, SignalProfile};
pub use stats::{ConditionalPdfParams, CorrelatorPrediction, Moments, ZTable};
