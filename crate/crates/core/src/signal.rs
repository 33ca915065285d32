//! Gaussian pulse-train input signals: synthesis, basis projection, the
//! closed-form moment integrals n_s and the smoothed envelope/phase profile
//! consumed by the perturbative machinery.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, TimeGrid, C64};

/// Relative floor applied to ρ when forming ρ̇/ρ and ρ̈/ρ.
pub const RHO_FLOOR_FRACTION: f64 = 1e-6;

/// Minimum sparsity T₀/δt; below this neighbouring pulses overlap by more
/// than about 1%.
pub const MIN_SPARSITY: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AmplitudeLaw {
    Constant { value: f64 },
    /// r_k drawn uniformly from a finite set.
    Discrete { values: Vec<f64> },
}

impl Default for AmplitudeLaw {
    fn default() -> Self {
        AmplitudeLaw::Discrete { values: vec![0.5, 1.0, 1.5] }
    }
}

impl AmplitudeLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            AmplitudeLaw::Constant { value } => *value,
            AmplitudeLaw::Discrete { values } => values[rng.random_range(0..values.len())],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            AmplitudeLaw::Constant { value } => *value >= 0.0 && value.is_finite(),
            AmplitudeLaw::Discrete { values } => {
                !values.is_empty() && values.iter().all(|v| *v >= 0.0 && v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("amplitude law needs finite non-negative values".into()))
        }
    }
}

pub fn qpsk_alphabet() -> Vec<f64> {
    vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseTrainSpec {
    /// N; the train has 2N+1 slots indexed -N..=N.
    pub half_count: usize,
    /// T₀.
    pub slot_duration: f64,
    /// δt.
    pub pulse_width: f64,
    pub average_power: f64,
    pub phase_alphabet: Vec<f64>,
    #[serde(default)]
    pub amplitude_law: AmplitudeLaw,
}

impl Default for PulseTrainSpec {
    fn default() -> Self {
        Self {
            half_count: 4,
            slot_duration: 5.0,
            pulse_width: 1.0,
            average_power: 1.0,
            phase_alphabet: qpsk_alphabet(),
            amplitude_law: AmplitudeLaw::default(),
        }
    }
}

impl PulseTrainSpec {
    pub fn new(half_count: usize, pulse_width: f64, sparsity: f64, average_power: f64) -> Result<Self> {
        let spec = Self {
            half_count,
            slot_duration: sparsity * pulse_width,
            pulse_width,
            average_power,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_width > 0.0 && self.slot_duration > 0.0) {
            return Err(Error::InvalidInput("slot duration and pulse width must be positive".into()));
        }
        if self.sparsity() < MIN_SPARSITY - 1e-12 {
            return Err(Error::InvalidInput(format!(
                "sparsity T0/dt = {} is below {MIN_SPARSITY}",
                self.sparsity()
            )));
        }
        if !(self.average_power > 0.0 && self.average_power.is_finite()) {
            return Err(Error::InvalidInput("average power must be positive".into()));
        }
        if self.phase_alphabet.is_empty()
            || self.phase_alphabet.iter().any(|p| !(0.0..TAU).contains(p))
        {
            return Err(Error::InvalidInput("phase alphabet must be non-empty and within [0, 2pi)".into()));
        }
        self.amplitude_law.validate()
    }

    /// N_t = T₀/δt.
    pub fn sparsity(&self) -> f64 {
        self.slot_duration / self.pulse_width
    }

    pub fn slot_count(&self) -> usize {
        2 * self.half_count + 1
    }

    /// T = (2N+1)·T₀.
    pub fn total_duration(&self) -> f64 {
        self.slot_count() as f64 * self.slot_duration
    }

    pub fn slots(&self) -> impl Iterator<Item = i64> + Clone {
        let n = self.half_count as i64;
        -n..=n
    }

    pub fn slot_center(&self, k: i64) -> f64 {
        k as f64 * self.slot_duration
    }

    /// Signal bandwidth W = 2π/δt.
    pub fn bandwidth(&self) -> f64 {
        TAU / self.pulse_width
    }

    /// Nearest-neighbour overlap ∫g₀g₁/∫g₀² = exp(-N_t²/4).
    pub fn overlap(&self) -> f64 {
        (-self.sparsity().powi(2) / 4.0).exp()
    }

    /// Smallest centred power-of-two grid with `oversample` samples per δt
    /// covering T plus a 4δt guard band on each side.
    pub fn grid(&self, oversample: usize) -> Result<TimeGrid> {
        if oversample == 0 {
            return Err(Error::InvalidInput("oversample must be positive".into()));
        }
        let dt = self.pulse_width / oversample as f64;
        let needed = ((self.total_duration() + 8.0 * self.pulse_width) / dt).ceil() as usize;
        TimeGrid::centered(needed.next_power_of_two().max(2), dt)
    }
}

/// One transmitted pulse train: C_k for k = -N..=N.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeWord {
    spec: PulseTrainSpec,
    coefficients: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct CoefficientRecord {
    k: i64,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct CodeWordRecord {
    spec: PulseTrainSpec,
    coefficients: Vec<CoefficientRecord>,
}

impl CodeWord {
    /// Builds C_k = √P_ave·r_k·e^{iφ_k}; every φ_k must belong to the alphabet.
    pub fn from_symbols(spec: &PulseTrainSpec, amplitudes: &[f64], phases: &[f64]) -> Result<Self> {
        spec.validate()?;
        let n = spec.slot_count();
        if amplitudes.len() != n || phases.len() != n {
            return Err(Error::InvalidInput(format!("codeword needs {n} amplitudes and phases")));
        }
        if amplitudes.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput("amplitudes r_k must be finite and non-negative".into()));
        }
        for p in phases {
            if !spec.phase_alphabet.iter().any(|a| (a - p).abs() < 1e-12) {
                return Err(Error::InvalidInput(format!("phase {p} is not in the alphabet")));
            }
        }
        let s = spec.average_power.sqrt();
        let coefficients = amplitudes
            .iter()
            .zip(phases)
            .map(|(r, p)| C64::from_polar(s * r, *p))
            .collect();
        Ok(Self { spec: spec.clone(), coefficients })
    }

    /// Wraps arbitrary coefficients (e.g. a projection result).
    pub fn from_coefficients(spec: &PulseTrainSpec, coefficients: Vec<C64>) -> Result<Self> {
        if coefficients.len() != spec.slot_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                spec.slot_count(),
                coefficients.len()
            )));
        }
        Ok(Self { spec: spec.clone(), coefficients })
    }

    pub fn random<R: Rng + ?Sized>(spec: &PulseTrainSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let n = spec.slot_count();
        let r: Vec<f64> = (0..n).map(|_| spec.amplitude_law.sample(rng)).collect();
        let p: Vec<f64> = (0..n)
            .map(|_| spec.phase_alphabet[rng.random_range(0..spec.phase_alphabet.len())])
            .collect();
        Self::from_symbols(spec, &r, &p)
    }

    pub fn spec(&self) -> &PulseTrainSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.coefficients
    }

    pub fn coefficient(&self, k: i64) -> C64 {
        self.coefficients[(k + self.spec.half_count as i64) as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        self.spec.slots().zip(self.coefficients.iter().copied())
    }

    /// r_k = |C_k|/√P_ave.
    pub fn amplitudes(&self) -> Vec<f64> {
        let s = self.spec.average_power.sqrt();
        self.coefficients.iter().map(|c| c.norm() / s).collect()
    }

    /// (1/(2N+1)) Σ|C_k|².
    pub fn mean_power(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.coefficients.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = CodeWordRecord {
            spec: self.spec.clone(),
            coefficients: self
                .iter()
                .map(|(k, c)| CoefficientRecord { k, re: c.re, im: c.im })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: CodeWordRecord = serde_json::from_str(s)?;
        rec.spec.validate()?;
        let mut coeffs = vec![C64::new(0.0, 0.0); rec.spec.slot_count()];
        let n = rec.spec.half_count as i64;
        let mut seen = vec![false; coeffs.len()];
        for c in rec.coefficients {
            if c.k < -n || c.k > n {
                return Err(Error::Serialization(format!("slot index {} out of range", c.k)));
            }
            let i = (c.k + n) as usize;
            coeffs[i] = C64::new(c.re, c.im);
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Serialization("codeword is missing slots".into()));
        }
        Self::from_coefficients(&rec.spec, coeffs)
    }
}

/// g_k(t) = g₀(t − kT₀), g₀(t) = √(T₀/(√π δt))·exp(−t²/(2δt²)).
pub fn gaussian_envelope(t: f64, spec: &PulseTrainSpec, k: i64) -> f64 {
    let dt = spec.pulse_width;
    let u = (t - spec.slot_center(k)) / dt;
    (spec.slot_duration / (PI.sqrt() * dt)).sqrt() * (-0.5 * u * u).exp()
}

fn check_grid(grid: &TimeGrid, spec: &PulseTrainSpec) -> Result<()> {
    let limit = spec.pulse_width / 8.0;
    if grid.dt > limit * (1.0 + 1e-12) {
        return Err(Error::GridTooCoarse { dt: grid.dt, limit });
    }
    let half = spec.total_duration() / 2.0 + 4.0 * spec.pulse_width;
    if grid.start > -half + 1e-9 || grid.end() < half - 1e-9 {
        return Err(Error::InvalidInput(format!(
            "grid [{}, {}) does not cover the pulse train with 4*dt guard bands",
            grid.start,
            grid.end()
        )));
    }
    Ok(())
}

/// X(t) = Σ_k C_k g_k(t).
pub fn synthesize_signal(code: &CodeWord, grid: &TimeGrid) -> Result<ComplexField> {
    let spec = code.spec();
    check_grid(grid, spec)?;
    let mut field = ComplexField::zeros(*grid);
    for (i, v) in field.values_mut().iter_mut().enumerate() {
        let t = grid.time(i);
        *v = code.iter().map(|(k, c)| c * gaussian_envelope(t, spec, k)).sum();
    }
    Ok(field)
}

/// C_k = ∫ (dt/T₀) g_k(t) X(t), by the rectangle rule on the field's grid.
pub fn project_coefficients(field: &ComplexField, spec: &PulseTrainSpec) -> CodeWord {
    let grid = field.grid();
    let w = grid.dt / spec.slot_duration;
    let coefficients = spec
        .slots()
        .map(|k| {
            field
                .values()
                .iter()
                .enumerate()
                .map(|(i, x)| x * gaussian_envelope(grid.time(i), spec, k))
                .sum::<C64>()
                * w
        })
        .collect();
    CodeWord { spec: spec.clone(), coefficients }
}

/// Closed-form n_s = ∫ (dt/T₀) g₀ˢ for a given sparsity N_t.
pub fn pulse_moment_for_sparsity(s: u32, sparsity: f64) -> Result<f64> {
    let nt = sparsity;
    match s {
        2 => Ok(1.0),
        4 => Ok(nt / TAU.sqrt()),
        6 => Ok(nt * nt / (PI * 3f64.sqrt())),
        8 => Ok(nt.powi(3) / (2.0 * PI * PI.sqrt())),
        other => Err(Error::UnsupportedMoment(other)),
    }
}

pub fn pulse_moment(s: u32, spec: &PulseTrainSpec) -> Result<f64> {
    pulse_moment_for_sparsity(s, spec.sparsity())
}

/// ξ² = 4n₆ − 3n₄².
pub fn xi_squared(spec: &PulseTrainSpec) -> f64 {
    xi_squared_for_sparsity(spec.sparsity())
}

pub fn xi_squared_for_sparsity(sparsity: f64) -> f64 {
    let n4 = sparsity / TAU.sqrt();
    let n6 = sparsity * sparsity / (PI * 3f64.sqrt());
    4.0 * n6 - 3.0 * n4 * n4
}

/// Local values of the slowly varying profile at one time sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub mu: f64,
    pub rho: f64,
    pub rho_dot: f64,
    pub rho_ddot: f64,
    pub phase_dot: f64,
    pub phase_ddot: f64,
    pub rho_floor: f64,
}

impl ProfilePoint {
    /// A point specified directly by μ, ρ̇/ρ, ρ̈/ρ, φ̇₀, φ̈₀ (ρ normalised to 1).
    pub fn from_ratios(mu: f64, rho_dot_ratio: f64, rho_ddot_ratio: f64, phase_dot: f64, phase_ddot: f64) -> Self {
        Self {
            mu,
            rho: 1.0,
            rho_dot: rho_dot_ratio,
            rho_ddot: rho_ddot_ratio,
            phase_dot,
            phase_ddot,
            rho_floor: 0.0,
        }
    }

    fn rho_reg(&self) -> f64 {
        self.rho.max(self.rho_floor)
    }

    /// ρ̇/ρ with the ρ floor applied.
    pub fn r1(&self) -> f64 {
        let r = self.rho_reg();
        if r == 0.0 {
            0.0
        } else {
            self.rho_dot / r
        }
    }

    /// ρ̈/ρ with the ρ floor applied.
    pub fn r2(&self) -> f64 {
        let r = self.rho_reg();
        if r == 0.0 {
            0.0
        } else {
            self.rho_ddot / r
        }
    }

    /// μ̇ = 2μ·ρ̇/ρ (exact where ρ is above the floor).
    pub fn mu_dot(&self) -> f64 {
        2.0 * self.mu * self.r1()
    }

    /// μ̈ = 2μ(ρ̈/ρ + ρ̇²/ρ²).
    pub fn mu_ddot(&self) -> f64 {
        let r1 = self.r1();
        2.0 * self.mu * (self.r2() + r1 * r1)
    }
}

/// ρ(t), φ₀(t) and their first two time derivatives on a grid, plus
/// μ(t) = γL·ρ²(t).
#[derive(Clone, Debug)]
pub struct SignalProfile {
    grid: TimeGrid,
    pub rho: Vec<f64>,
    pub rho_dot: Vec<f64>,
    pub rho_ddot: Vec<f64>,
    pub phase: Vec<f64>,
    pub phase_dot: Vec<f64>,
    pub phase_ddot: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma_length: f64,
    pub rho_floor: f64,
    pub smoothing_width: f64,
}

/// Piecewise-linear phase target before Gaussian smoothing.
#[derive(Debug, Default)]
struct PhaseTarget {
    base: f64,
    steps: Vec<(f64, f64)>,
    ramps: Vec<(f64, f64, f64)>,
}

fn wrap_to_pi(x: f64) -> f64 {
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * FRAC_1_SQRT_2)
}

fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / TAU.sqrt()
}

impl PhaseTarget {
    fn from_code(code: &CodeWord) -> Result<Self> {
        let spec = code.spec();
        let live: Vec<(i64, f64)> = code
            .iter()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(k, c)| (k, c.arg().rem_euclid(TAU)))
            .collect();
        let Some(&(_, first)) = live.first() else {
            return Err(Error::DegenerateAmplitude("all slot amplitudes are zero; phase undefined".into()));
        };
        let mut target = PhaseTarget { base: first, ..Default::default() };
        let t0 = spec.slot_duration;
        for pair in live.windows(2) {
            let (ka, pa) = pair[0];
            let (kb, pb) = pair[1];
            let delta = wrap_to_pi(pb - pa);
            if delta == 0.0 {
                continue;
            }
            if kb == ka + 1 {
                target.steps.push(((ka as f64 + 0.5) * t0, delta));
            } else {
                let a = (ka as f64 + 0.5) * t0;
                let b = (kb as f64 - 0.5) * t0;
                target.ramps.push((a, b, delta / (b - a)));
            }
        }
        Ok(target)
    }

    /// Gaussian-smoothed value and first two derivatives at t.
    fn smoothed(&self, t: f64, sigma: f64) -> (f64, f64, f64) {
        let (mut f, mut d1, mut d2) = (self.base, 0.0, 0.0);
        for &(b, delta) in &self.steps {
            let u = (t - b) / sigma;
            let pdf = normal_pdf(u);
            f += delta * normal_cdf(u);
            d1 += delta * pdf / sigma;
            d2 -= delta * u * pdf / (sigma * sigma);
        }
        for &(a, b, slope) in &self.ramps {
            // slope·[(t−a)₊ − (t−b)₊] convolved with the Gaussian.
            let ua = (t - a) / sigma;
            let ub = (t - b) / sigma;
            let ramp = |x: f64, u: f64| (t - x) * normal_cdf(u) + sigma * normal_pdf(u);
            f += slope * (ramp(a, ua) - ramp(b, ub));
            d1 += slope * (normal_cdf(ua) - normal_cdf(ub));
            d2 += slope * (normal_pdf(ua) - normal_pdf(ub)) / sigma;
        }
        (f, d1, d2)
    }
}

/// Builds the smoothed profile of a codeword.
///
/// ρ is the overlap-free envelope √P_ave Σ r_k g_k(t), which equals |X(t)|
/// up to the pulse overlap but stays smooth where adjacent phases differ by
/// π. φ₀ is the piecewise-constant slot phase (minimal wrap across each
/// border, linear through dead slots) convolved with a Gaussian of width
/// `smoothing_width`. All derivatives are analytic.
pub fn build_profile(
    code: &CodeWord,
    grid: &TimeGrid,
    smoothing_width: f64,
    gamma_length: f64,
) -> Result<SignalProfile> {
    let spec = code.spec();
    if !(smoothing_width > 0.0 && smoothing_width <= spec.slot_duration / 4.0) {
        return Err(Error::InvalidInput(format!(
            "smoothing width {smoothing_width} must be in (0, T0/4]"
        )));
    }
    let target = PhaseTarget::from_code(code)?;
    let n = grid.samples;
    let dt = spec.pulse_width;
    let mut p = SignalProfile {
        grid: *grid,
        rho: vec![0.0; n],
        rho_dot: vec![0.0; n],
        rho_ddot: vec![0.0; n],
        phase: vec![0.0; n],
        phase_dot: vec![0.0; n],
        phase_ddot: vec![0.0; n],
        mu: vec![0.0; n],
        gamma_length,
        rho_floor: RHO_FLOOR_FRACTION * spec.average_power.sqrt(),
        smoothing_width,
    };
    for i in 0..n {
        let t = grid.time(i);
        let (mut r, mut r1, mut r2) = (0.0, 0.0, 0.0);
        for (k, c) in code.iter() {
            let a = c.norm();
            if a == 0.0 {
                continue;
            }
            let g = a * gaussian_envelope(t, spec, k);
            let u = (t - spec.slot_center(k)) / dt;
            r += g;
            r1 -= g * u / dt;
            r2 += g * (u * u - 1.0) / (dt * dt);
        }
        let (f, f1, f2) = target.smoothed(t, smoothing_width);
        p.rho[i] = r;
        p.rho_dot[i] = r1;
        p.rho_ddot[i] = r2;
        p.phase[i] = f;
        p.phase_dot[i] = f1;
        p.phase_ddot[i] = f2;
        p.mu[i] = gamma_length * r * r;
    }
    Ok(p)
}

impl SignalProfile {
    /// Continuous-wave profile ρ = `amplitude`, φ₀ = `phase`.
    pub fn constant(grid: TimeGrid, amplitude: f64, phase: f64, gamma_length: f64) -> Self {
        let n = grid.samples;
        Self {
            grid,
            rho: vec![amplitude; n],
            rho_dot: vec![0.0; n],
            rho_ddot: vec![0.0; n],
            phase: vec![phase; n],
            phase_dot: vec![0.0; n],
            phase_ddot: vec![0.0; n],
            mu: vec![gamma_length * amplitude * amplitude; n],
            gamma_length,
            rho_floor: RHO_FLOOR_FRACTION * amplitude,
            smoothing_width: 0.0,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn point(&self, i: usize) -> ProfilePoint {
        ProfilePoint {
            mu: self.mu[i],
            rho: self.rho[i],
            rho_dot: self.rho_dot[i],
            rho_ddot: self.rho_ddot[i],
            phase_dot: self.phase_dot[i],
            phase_ddot: self.phase_ddot[i],
            rho_floor: self.rho_floor,
        }
    }

    /// θ₀(ζ, t) = φ₀(t) + μ(t)ζ.
    pub fn theta0(&self, zeta: f64) -> Vec<f64> {
        self.phase.iter().zip(&self.mu).map(|(p, m)| p + m * zeta).collect()
    }

    /// ρ(t)·e^{iφ₀(t)}.
    pub fn to_field(&self) -> ComplexField {
        let v = self
            .rho
            .iter()
            .zip(&self.phase)
            .map(|(r, p)| C64::from_polar(*r, *p))
            .collect();
        ComplexField::new(self.grid, v).expect("profile arrays match grid")
    }

    pub fn max_phase_rate(&self) -> f64 {
        self.phase_dot.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}
