//! Receiver-side averaging, fluctuation extraction around the noiseless
//! solution, and the scale-hierarchy report.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Spectral, TimeGrid, C64};
use crate::nlse::{ChannelParams, Propagator};
use crate::noise::sinc;
use crate::signal::{PulseTrainSpec, SignalProfile};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    /// Spectral multiplication by sinc(ωτ_a).
    #[default]
    Sinc,
    /// Running mean over 2τ_a/dt samples in the time domain.
    TimeBoxcar,
    /// Ideal low-pass |ω| ≤ π/τ_a.
    BrickWall,
    /// No averaging (τ_a → 0).
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub tau_a: f64,
    #[serde(default)]
    pub kind: FilterKind,
}

impl FilterSpec {
    pub fn sinc(tau_a: f64) -> Self {
        Self { tau_a, kind: FilterKind::Sinc }
    }

    pub fn identity() -> Self {
        Self { tau_a: 0.0, kind: FilterKind::Identity }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == FilterKind::Identity
    }

    /// W_a = 2π/τ_a (infinite for the identity filter).
    pub fn bandwidth(&self) -> f64 {
        if self.is_identity() || self.tau_a == 0.0 {
            f64::INFINITY
        } else {
            TAU / self.tau_a
        }
    }

    pub fn check(&self, grid: &TimeGrid) -> Result<()> {
        if self.is_identity() {
            return Ok(());
        }
        let limit = 2.0 * grid.dt;
        // Negated so that NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.tau_a >= limit * (1.0 - 1e-12)) {
            return Err(Error::FilterTooNarrow { tau_a: self.tau_a, limit });
        }
        if self.kind == FilterKind::TimeBoxcar {
            let m = self.tau_a / grid.dt;
            if (m - m.round()).abs() > 1e-9 * m {
                return Err(Error::InvalidInput(format!(
                    "boxcar filter needs tau_a/dt integral, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// A filter bound to a grid.
#[derive(Clone, Debug)]
pub struct Filter {
    spec: FilterSpec,
    spectral: Spectral,
    mask: Vec<C64>,
    half_width: usize,
}

impl Filter {
    pub fn new(spec: FilterSpec, grid: &TimeGrid) -> Result<Self> {
        spec.check(grid)?;
        let spectral = Spectral::new(*grid);
        let mask = match spec.kind {
            FilterKind::Sinc => spectral.omega().iter().map(|w| C64::new(sinc(w * spec.tau_a), 0.0)).collect(),
            FilterKind::BrickWall => {
                let cut = std::f64::consts::PI / spec.tau_a;
                spectral
                    .omega()
                    .iter()
                    .map(|w| C64::new(if w.abs() <= cut { 1.0 } else { 0.0 }, 0.0))
                    .collect()
            }
            FilterKind::TimeBoxcar | FilterKind::Identity => Vec::new(),
        };
        let half_width = if spec.kind == FilterKind::TimeBoxcar { (spec.tau_a / grid.dt).round() as usize } else { 0 };
        Ok(Self { spec, spectral, mask, half_width })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    /// Spectral transfer function in FFT order, for the mask-based kinds.
    pub fn mask(&self) -> Option<&[C64]> {
        if self.mask.is_empty() {
            None
        } else {
            Some(&self.mask)
        }
    }

    pub fn apply(&self, data: &mut [C64], scratch: &mut [C64]) {
        match self.spec.kind {
            FilterKind::Identity => {}
            FilterKind::Sinc | FilterKind::BrickWall => self.spectral.apply_mask(data, &self.mask, scratch),
            FilterKind::TimeBoxcar => boxcar(data, self.half_width),
        }
    }

    pub fn scratch(&self) -> Vec<C64> {
        self.spectral.scratch()
    }

    pub fn apply_field(&self, field: &ComplexField) -> ComplexField {
        let mut v = field.values().to_vec();
        self.apply(&mut v, &mut self.scratch());
        ComplexField::new(*field.grid(), v).expect("same grid")
    }
}

/// Periodic mean of the 2m samples i−m ..= i+m−1, i.e. the average over
/// [t_i − τ_a, t_i + τ_a] with cells centred half a sample early.
fn boxcar(data: &mut [C64], m: usize) {
    let n = data.len();
    let w = 2 * m;
    let src = data.to_vec();
    let inv = 1.0 / w as f64;
    let mut acc: C64 = (0..w).map(|j| src[(j + n - m % n) % n]).sum();
    for i in 0..n {
        data[i] = acc * inv;
        acc += src[(i + m) % n] - src[(i + n - m % n) % n];
    }
}

pub fn filter_field(field: &ComplexField, spec: &FilterSpec) -> Result<ComplexField> {
    Ok(Filter::new(*spec, field.grid())?.apply_field(field))
}

/// F = e^{−iθ}(ψ − Φ) given the noiseless reference Φ and phase θ.
pub fn fluctuation_from_reference(psi: &ComplexField, reference: &ComplexField, theta: &[f64]) -> ComplexField {
    let v = psi
        .values()
        .iter()
        .zip(reference.values())
        .zip(theta)
        .map(|((p, r), th)| (p - r) * C64::from_polar(1.0, -th))
        .collect();
    ComplexField::new(*psi.grid(), v).expect("same grid")
}

/// Ψ = Φ + e^{iθ}F.
pub fn reconstruct_from_fluctuation(reference: &ComplexField, theta: &[f64], f: &ComplexField) -> ComplexField {
    let v = reference
        .values()
        .iter()
        .zip(theta)
        .zip(f.values())
        .map(|((r, th), v)| r + C64::from_polar(1.0, *th) * v)
        .collect();
    ComplexField::new(*reference.grid(), v).expect("same grid")
}

/// F(1, t) = e^{−iθ₀(1,t)}(ψ_out − Φ(L,t)), with Φ from a noiseless split-step
/// run of `x`.
pub fn extract_fluctuation(
    psi_out: &ComplexField,
    x: &ComplexField,
    profile: &SignalProfile,
    params: &ChannelParams,
    steps: usize,
) -> Result<ComplexField> {
    let phi = Propagator::new(*x.grid(), *params, steps)?.forward(x, None, None)?.output;
    Ok(fluctuation_from_reference(psi_out, &phi, &profile.theta0(1.0)))
}

/// Margin factors giving "≪" an operational meaning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeMargins {
    /// SNR⁻¹ ≤ β̃ / snr_factor.
    pub snr_factor: f64,
    /// β̃ ≤ β̃_a / beta_ratio, i.e. τ_a ≤ δt / beta_ratio.
    pub beta_ratio: f64,
    /// β̃_a ≤ beta_a_max.
    pub beta_a_max: f64,
    /// W_a/W ≥ signal_band_ratio.
    pub signal_band_ratio: f64,
    /// W′/W_a ≥ noise_band_ratio.
    pub noise_band_ratio: f64,
    /// βL/τ_a² ≥ dispersion_window_min.
    pub dispersion_window_min: f64,
}

impl Default for RegimeMargins {
    fn default() -> Self {
        Self {
            snr_factor: 10.0,
            beta_ratio: 3.0,
            beta_a_max: 0.2,
            signal_band_ratio: 4.0,
            noise_band_ratio: 4.0,
            dispersion_window_min: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyCheck {
    pub name: String,
    pub relation: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    /// True when the inequality carries no content (e.g. β = 0).
    pub vacuous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub beta_tilde: f64,
    pub beta_tilde_a: Option<f64>,
    pub beta_l_over_tau_sq: Option<f64>,
    pub tau_over_pulse_width: f64,
    pub snr_inverse_over_beta_tilde: Option<f64>,
    pub checks: Vec<HierarchyCheck>,
}

impl HierarchyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&HierarchyCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check(name: &str, relation: &str, value: f64, bound: f64, upper: bool, vacuous: bool) -> HierarchyCheck {
    let pass = vacuous || if upper { value <= bound * (1.0 + 1e-12) } else { value >= bound * (1.0 - 1e-12) };
    HierarchyCheck { name: name.into(), relation: relation.into(), value, bound, pass, vacuous }
}

/// Evaluates SNR⁻¹ ≪ β̃ ≪ β̃_a ≪ 1, W ≪ W_a ≪ W′ and βL/τ_a² ≳ 1 with the
/// given margins. Dispersion inequalities are vacuous when β = 0; filter
/// inequalities are vacuous for the identity filter.
pub fn validate_scale_hierarchy(
    params: &ChannelParams,
    spec: &PulseTrainSpec,
    grid: &TimeGrid,
    filter: &FilterSpec,
    margins: &RegimeMargins,
) -> HierarchyReport {
    let ident = filter.is_identity();
    let tau = if ident { 0.0 } else { filter.tau_a };
    let d = params.dimensionless(spec, grid.dt, (!ident).then_some(tau));
    let no_beta = params.beta == 0.0;
    let bl = params.beta_length();
    let bl_tau2 = (!ident).then(|| bl / (tau * tau));
    let snr_inv = 1.0 / d.snr;
    let ratio = (!no_beta).then(|| snr_inv / d.beta_tilde);
    let tau_ratio = tau / spec.pulse_width;

    let mut checks = vec![
        check("snr_vs_dispersion", "1/SNR <= beta_tilde/margin", snr_inv, d.beta_tilde.abs() / margins.snr_factor, true, no_beta),
        check("detector_vs_pulse", "tau_a/dt <= 1/margin", tau_ratio, 1.0 / margins.beta_ratio, true, ident),
        check(
            "detector_dispersion_small",
            "beta_tilde_a <= max",
            d.beta_tilde_a.unwrap_or(0.0).abs(),
            margins.beta_a_max,
            true,
            no_beta || ident,
        ),
        check(
            "detector_vs_signal_band",
            "W_a/W >= margin",
            if ident { f64::INFINITY } else { spec.pulse_width / tau },
            margins.signal_band_ratio,
            false,
            ident,
        ),
        check(
            "noise_band_vs_detector",
            "W'/W_a >= margin",
            if ident { f64::INFINITY } else { tau / grid.dt },
            margins.noise_band_ratio,
            false,
            ident,
        ),
        check(
            "dispersion_window",
            "beta*L/tau_a^2 >= min",
            bl_tau2.unwrap_or(0.0).abs(),
            margins.dispersion_window_min,
            false,
            no_beta || ident,
        ),
    ];
    // With no averaging the detector-driven limits only make sense at β = 0.
    if ident && !no_beta {
        checks.push(check("identity_filter_needs_no_dispersion", "beta == 0", bl.abs(), 0.0, true, false));
    }
    HierarchyReport {
        beta_tilde: d.beta_tilde,
        beta_tilde_a: d.beta_tilde_a,
        beta_l_over_tau_sq: bl_tau2,
        tau_over_pulse_width: tau_ratio,
        snr_inverse_over_beta_tilde: ratio,
        checks,
    }
}
