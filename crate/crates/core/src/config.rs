//! Experiment configuration files.
//!
//! A config is a single TOML document. Every physical quantity carries its
//! unit in the key (`_ps`, `_km`, `_w`, ...). With time in ps, distance in
//! km and power in W the propagation equation is used as is, so the values
//! map one-to-one onto [`ChannelParams`] and [`PulseTrainSpec`].

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{FilterKind, FilterSpec, RegimeMargins};
use crate::error::{Error, Result};
use crate::field::TimeGrid;
use crate::kernels::KernelForm;
use crate::montecarlo::McSetup;
use crate::nlse::{ChannelParams, Dimensionless};
use crate::signal::{qpsk_alphabet, AmplitudeLaw, CodeWord, ProfilePoint, PulseTrainSpec};

/// Mixed into the master seed for codeword sampling so it never shares a
/// stream with the channel noise.
const CODEWORD_STREAM: u64 = 0x636f_6465_776f_7264;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Synth,
    Propagate,
    Roundtrip,
    Kernels,
    Correlators,
    PdfTable,
    Validate,
    BetaSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Synth,
        ExperimentKind::Propagate,
        ExperimentKind::Roundtrip,
        ExperimentKind::Kernels,
        ExperimentKind::Correlators,
        ExperimentKind::PdfTable,
        ExperimentKind::Validate,
        ExperimentKind::BetaSweep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Synth => "synth",
            ExperimentKind::Propagate => "propagate",
            ExperimentKind::Roundtrip => "roundtrip",
            ExperimentKind::Kernels => "kernels",
            ExperimentKind::Correlators => "correlators",
            ExperimentKind::PdfTable => "pdf-table",
            ExperimentKind::Validate => "validate",
            ExperimentKind::BetaSweep => "beta-sweep",
        }
    }
}

/// Reference point for the second moments of δC̃.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    #[default]
    SampleMean,
    /// The closed-form dispersionless mean; exact only without a detector.
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTrainConfig {
    /// N; 2N+1 slots.
    pub half_count: usize,
    pub pulse_width_ps: f64,
    pub slot_duration_ps: f64,
    pub average_power_w: f64,
    #[serde(default = "qpsk_alphabet")]
    pub phase_alphabet_rad: Vec<f64>,
    #[serde(default)]
    pub amplitude_law: AmplitudeLaw,
}

/// Explicit symbols; r_k is relative to √P_ave.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub amplitudes: Vec<f64>,
    pub phases_rad: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub length_km: f64,
    pub beta_ps2_per_km: f64,
    pub gamma_per_w_km: f64,
    /// Noise density Q.
    pub noise_q_w_ps_per_km: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: FilterKind,
    #[serde(default)]
    pub tau_a_ps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// δt/dt; the grid is the smallest power of two covering the train.
    pub samples_per_pulse_width: usize,
    pub steps: usize,
    pub smoothing_width_ps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub kernel_form: KernelForm,
    #[serde(default)]
    pub centering: Centering,
    #[serde(default)]
    pub regime: RegimeMargins,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// β values; the first one is the baseline of the paired differences.
    pub beta_ps2_per_km: Vec<f64>,
    /// Runs used for the kernel-expansion comparison at each β.
    #[serde(default = "default_semi_runs")]
    pub semi_analytic_runs: usize,
}

fn default_semi_runs() -> usize {
    16
}

/// A single frozen profile point and the evaluation lattice of the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTableConfig {
    pub mu: f64,
    /// ρ̇/ρ.
    pub rho_dot_ratio_per_ps: f64,
    /// ρ̈/ρ.
    pub rho_ddot_ratio_per_ps2: f64,
    pub phase_dot_per_ps: f64,
    pub phase_ddot_per_ps2: f64,
    pub zeta: Vec<f64>,
    pub xi: Vec<f64>,
    pub omega_per_ps: Vec<f64>,
}

impl KernelTableConfig {
    pub fn point(&self) -> ProfilePoint {
        ProfilePoint::from_ratios(
            self.mu,
            self.rho_dot_ratio_per_ps,
            self.rho_ddot_ratio_per_ps2,
            self.phase_dot_per_ps,
            self.phase_ddot_per_ps2,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdfConfig {
    /// Quadrature points per axis for the consistency integrals.
    pub quadrature_points: usize,
    /// Half width of the quadrature box in standard deviations.
    pub half_width_sigma: f64,
    /// Points per axis of the written density table.
    pub table_points: usize,
}

impl Default for PdfConfig {
    fn default() -> Self {
        Self { quadrature_points: 801, half_width_sigma: 12.0, table_points: 41 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub runs: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub override_regime: bool,
    pub pulse_train: PulseTrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<CodeConfig>,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<KernelTableConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdf: Option<PdfConfig>,
}

fn invalid(e: Error) -> Error {
    match e {
        Error::ConfigInvalid(_) => e,
        other => Error::ConfigInvalid(other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// The serialization with the output directory blanked, so that where
    /// a run is written does not change what it is.
    pub fn canonical_toml(&self) -> Result<String> {
        let c = Self { output_dir: PathBuf::from("."), ..self.clone() };
        c.to_toml_string()
    }

    /// SHA-256 of [`Self::canonical_toml`].
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_toml()?.as_bytes())))
    }

    pub fn pulse_train_spec(&self) -> Result<PulseTrainSpec> {
        let p = &self.pulse_train;
        let spec = PulseTrainSpec {
            half_count: p.half_count,
            slot_duration: p.slot_duration_ps,
            pulse_width: p.pulse_width_ps,
            average_power: p.average_power_w,
            phase_alphabet: p.phase_alphabet_rad.clone(),
            amplitude_law: p.amplitude_law.clone(),
        };
        spec.validate().map_err(invalid)?;
        Ok(spec)
    }

    pub fn channel_params(&self) -> Result<ChannelParams> {
        let c = &self.channel;
        let params = ChannelParams {
            beta: c.beta_ps2_per_km,
            gamma: c.gamma_per_w_km,
            length: c.length_km,
            q: c.noise_q_w_ps_per_km,
        };
        params.validate().map_err(invalid)?;
        Ok(params)
    }

    pub fn filter_spec(&self) -> FilterSpec {
        match self.detector.kind {
            FilterKind::Identity => FilterSpec::identity(),
            kind => FilterSpec { tau_a: self.detector.tau_a_ps, kind },
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        self.pulse_train_spec()?.grid(self.grid.samples_per_pulse_width).map_err(invalid)
    }

    /// The configured symbols, or a codeword drawn from the master seed.
    pub fn code_word(&self) -> Result<CodeWord> {
        let spec = self.pulse_train_spec()?;
        match &self.code {
            Some(c) => CodeWord::from_symbols(&spec, &c.amplitudes, &c.phases_rad),
            None => CodeWord::random(&spec, &mut ChaCha8Rng::seed_from_u64(self.seed ^ CODEWORD_STREAM)),
        }
        .map_err(invalid)
    }

    pub fn dimensionless(&self) -> Result<Dimensionless> {
        let f = self.filter_spec();
        let tau = (!f.is_identity()).then_some(f.tau_a);
        Ok(self.channel_params()?.dimensionless(&self.pulse_train_spec()?, self.time_grid()?.dt, tau))
    }

    pub fn mc_setup(&self) -> Result<McSetup> {
        Ok(McSetup {
            code: self.code_word()?,
            grid: self.time_grid()?,
            params: self.channel_params()?,
            filter: self.filter_spec(),
            steps: self.grid.steps,
            smoothing_width: self.grid.smoothing_width_ps,
        })
    }

    pub fn kernel_table(&self) -> Result<&KernelTableConfig> {
        self.kernels
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("kind kernels needs a [kernels] section".into()))
    }

    pub fn sweep_values(&self) -> Result<&SweepConfig> {
        match &self.sweep {
            Some(s) if !s.beta_ps2_per_km.is_empty() => Ok(s),
            _ => Err(Error::ConfigInvalid("kind beta-sweep needs a non-empty [sweep] section".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
kind = "correlators"
seed = 11
runs = 40
output_dir = "out"

[pulse_train]
half_count = 2
pulse_width_ps = 1.0
slot_duration_ps = 5.0
average_power_w = 1.0

[code]
amplitudes = [1.0, 0.75, 1.2, 0.9, 1.1]
phases_rad = [0.0, 1.5707963267948966, 3.141592653589793, 0.0, 4.71238898038469]

[channel]
length_km = 1.0
beta_ps2_per_km = 0.015
gamma_per_w_km = 1.0
noise_q_w_ps_per_km = 2.5e-6

[detector]
kind = "sinc"
tau_a_ps = 0.1

[grid]
samples_per_pulse_width = 40
steps = 256
smoothing_width_ps = 0.125
"#;

    #[test]
    fn toml_round_trip_is_lossless() {
        let c = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash().unwrap(), back.hash().unwrap());
        let moved = ExperimentConfig { output_dir: "elsewhere".into(), ..c.clone() };
        assert_eq!(c.hash().unwrap(), moved.hash().unwrap());
        let reseeded = ExperimentConfig { seed: 12, ..c };
        assert_ne!(moved.hash().unwrap(), reseeded.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let s = SAMPLE.replace("steps = 256", "steps = 256\nstepz = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&s), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn derived_quantities() {
        let c = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let d = c.dimensionless().unwrap();
        assert!((d.beta_tilde - 0.015).abs() < 1e-15);
        assert!((d.beta_tilde_a.unwrap() - 0.15).abs() < 1e-12);
        assert!((d.snr - 1e4).abs() < 1e-6);
        assert_eq!(c.time_grid().unwrap().samples, 2048);
        assert_eq!(c.code_word().unwrap().amplitudes()[2], 1.2);
    }

    #[test]
    fn random_codeword_follows_seed() {
        let mut c = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        c.code = None;
        let a = c.code_word().unwrap();
        assert_eq!(a, c.code_word().unwrap());
        c.seed += 1;
        assert_ne!(a, c.code_word().unwrap());
    }

    #[test]
    fn bad_symbols_are_config_errors() {
        let s = SAMPLE.replace("[1.0, 0.75, 1.2, 0.9, 1.1]", "[1.0, 0.75]");
        let c = ExperimentConfig::from_toml_str(&s).unwrap();
        assert!(matches!(c.code_word(), Err(Error::ConfigInvalid(_))));
    }
}
