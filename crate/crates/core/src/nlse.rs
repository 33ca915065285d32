//! Split-step integrator for ∂_zψ + iβ∂²_tψ − iγ|ψ|²ψ = η and the
//! dispersion-perturbative noiseless solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Spectral, TimeGrid, C64};
use crate::noise::NoiseSpec;
use crate::signal::{PulseTrainSpec, SignalProfile};

pub const MIN_STEPS: usize = 64;
pub const DEFAULT_STEPS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// β, second dispersion.
    pub beta: f64,
    /// γ, Kerr coefficient.
    pub gamma: f64,
    /// L.
    pub length: f64,
    /// Q, noise density.
    pub q: f64,
}

/// Dimensionless groups of a channel for a given pulse train and grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimensionless {
    /// β̃ = βL/δt².
    pub beta_tilde: f64,
    /// γ̃ = γL·P_ave.
    pub gamma_tilde: f64,
    /// β̃_a = βL/(δt·τ_a), when a detector width is given.
    pub beta_tilde_a: Option<f64>,
    /// SNR = P_ave/(QL·W′/2π).
    pub snr: f64,
    /// QL/T₀.
    pub noise_per_slot: f64,
    /// QL/Δ = QL·W′/2π.
    pub noise_in_band: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.beta, self.gamma, self.length, self.q].iter().all(|v| v.is_finite());
        if !all_finite || self.length <= 0.0 || self.q < 0.0 {
            return Err(Error::InvalidInput(
                "channel needs finite beta and gamma, L > 0 and Q >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn beta_length(&self) -> f64 {
        self.beta * self.length
    }

    pub fn gamma_length(&self) -> f64 {
        self.gamma * self.length
    }

    pub fn dimensionless(&self, spec: &PulseTrainSpec, dt: f64, tau_a: Option<f64>) -> Dimensionless {
        let bl = self.beta_length();
        let in_band = self.q * self.length / dt;
        Dimensionless {
            beta_tilde: bl / (spec.pulse_width * spec.pulse_width),
            gamma_tilde: self.gamma_length() * spec.average_power,
            beta_tilde_a: tau_a.map(|t| bl / (spec.pulse_width * t)),
            snr: if in_band == 0.0 { f64::INFINITY } else { spec.average_power / in_band },
            noise_per_slot: self.q * self.length / spec.slot_duration,
            noise_in_band: in_band,
        }
    }

    /// Channel with β = β̃δt²/L and γ = γ̃/(L·P_ave); Q follows from the SNR
    /// over the grid band.
    pub fn from_dimensionless(
        spec: &PulseTrainSpec,
        length: f64,
        beta_tilde: f64,
        gamma_tilde: f64,
        snr: f64,
        dt: f64,
    ) -> Self {
        let q = if snr.is_infinite() { 0.0 } else { spec.average_power * dt / (snr * length) };
        Self {
            beta: beta_tilde * spec.pulse_width * spec.pulse_width / length,
            gamma: gamma_tilde / (length * spec.average_power),
            length,
            q,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PropagationResult {
    pub output: ComplexField,
    /// (ζ, field) pairs at uniform ζ, including ζ = 0 and ζ = 1.
    pub snapshots: Vec<(f64, ComplexField)>,
    pub steps: usize,
    pub seed: Option<u64>,
}

/// Reusable split-step integrator bound to a grid, channel and step count.
#[derive(Clone, Debug)]
pub struct Propagator {
    grid: TimeGrid,
    params: ChannelParams,
    steps: usize,
    spectral: Spectral,
    half_fwd: Vec<C64>,
    full_fwd: Vec<C64>,
    half_bwd: Vec<C64>,
    full_bwd: Vec<C64>,
}

fn dispersion_mask(omega: &[f64], beta: f64, h: f64) -> Vec<C64> {
    omega.iter().map(|w| C64::from_polar(1.0, beta * w * w * h)).collect()
}

#[inline]
fn kerr(data: &mut [C64], gamma_h: f64) {
    for v in data.iter_mut() {
        *v *= C64::from_polar(1.0, gamma_h * v.norm_sqr());
    }
}

impl Propagator {
    pub fn new(grid: TimeGrid, params: ChannelParams, steps: usize) -> Result<Self> {
        params.validate()?;
        if steps < MIN_STEPS {
            return Err(Error::InvalidInput(format!("steps must be >= {MIN_STEPS}, got {steps}")));
        }
        let spectral = Spectral::new(grid);
        let h = params.length / steps as f64;
        let w = spectral.omega();
        Ok(Self {
            grid,
            params,
            steps,
            half_fwd: dispersion_mask(w, params.beta, 0.5 * h),
            full_fwd: dispersion_mask(w, params.beta, h),
            half_bwd: dispersion_mask(w, params.beta, -0.5 * h),
            full_bwd: dispersion_mask(w, params.beta, -h),
            spectral,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_length(&self) -> f64 {
        self.params.length / self.steps as f64
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    fn check_field(&self, x: &ComplexField) -> Result<()> {
        if x.grid() != &self.grid {
            return Err(Error::InvalidInput("field grid differs from propagator grid".into()));
        }
        Ok(())
    }

    fn check_noise(&self, noise: &NoiseSpec) -> Result<()> {
        if noise.grid.samples != self.grid.samples || noise.grid.dt != self.grid.dt {
            return Err(Error::Aliasing { noise: noise.grid.samples, grid: self.grid.samples });
        }
        let h = self.step_length();
        if (noise.step_length - h).abs() > 1e-12 * h {
            return Err(Error::InvalidInput(format!(
                "noise step length {} differs from solver step {h}",
                noise.step_length
            )));
        }
        Ok(())
    }

    /// Integrates from z = 0 to L. `noise` supplies (spec, run index);
    /// `snapshot_stride` keeps the state every that many steps.
    pub fn forward(
        &self,
        x: &ComplexField,
        noise: Option<(&NoiseSpec, u64)>,
        snapshot_stride: Option<usize>,
    ) -> Result<PropagationResult> {
        self.check_field(x)?;
        if let Some((spec, _)) = noise {
            self.check_noise(spec)?;
        }
        let mut data = x.values().to_vec();
        let mut snapshots = Vec::new();
        self.run(&mut data, 1.0, noise, snapshot_stride, &mut snapshots)?;
        Ok(PropagationResult {
            output: ComplexField::new(self.grid, data)?,
            snapshots,
            steps: self.steps,
            seed: noise.map(|(s, _)| s.seed),
        })
    }

    /// Noiseless integration from z = L back to 0.
    pub fn backward(&self, y: &ComplexField) -> Result<ComplexField> {
        self.check_field(y)?;
        let mut data = y.values().to_vec();
        self.run(&mut data, -1.0, None, None, &mut Vec::new())?;
        ComplexField::new(self.grid, data)
    }

    /// In-place forward propagation used by the Monte Carlo loop.
    pub fn forward_in_place(&self, data: &mut [C64], noise: Option<(&NoiseSpec, u64)>) -> Result<()> {
        if let Some((spec, _)) = noise {
            self.check_noise(spec)?;
        }
        self.run(data, 1.0, noise, None, &mut Vec::new())
    }

    pub fn backward_in_place(&self, data: &mut [C64]) -> Result<()> {
        self.run(data, -1.0, None, None, &mut Vec::new())
    }

    fn run(
        &self,
        data: &mut [C64],
        direction: f64,
        noise: Option<(&NoiseSpec, u64)>,
        snapshot_stride: Option<usize>,
        snapshots: &mut Vec<(f64, ComplexField)>,
    ) -> Result<()> {
        let h = direction * self.step_length();
        let gh = self.params.gamma * h;
        let dispersive = self.params.beta != 0.0;
        let (half, full) = if direction > 0.0 {
            (&self.half_fwd, &self.full_fwd)
        } else {
            (&self.half_bwd, &self.full_bwd)
        };
        let mut scratch = self.spectral.scratch();
        let mut eta = if noise.is_some() { vec![C64::new(0.0, 0.0); data.len()] } else { Vec::new() };
        let stride = snapshot_stride.filter(|s| *s > 0);
        let snap = |data: &[C64], j: usize, out: &mut Vec<(f64, ComplexField)>| {
            out.push((j as f64 / self.steps as f64, ComplexField::new(self.grid, data.to_vec()).unwrap()));
        };
        if stride.is_some() {
            snap(data, 0, snapshots);
        }

        // Adjacent half dispersion steps are fused unless a snapshot needs
        // the state at the step boundary.
        let mut pending_half = false;
        if dispersive {
            self.spectral.forward(data, &mut scratch);
            data.iter_mut().zip(half.iter()).for_each(|(v, m)| *v *= m);
            self.spectral.inverse(data, &mut scratch);
        }
        for j in 0..self.steps {
            match noise {
                Some((spec, run)) => {
                    kerr(data, 0.5 * gh);
                    spec.fill_step(run, j as u64, &mut eta);
                    let dz = spec.step_length;
                    data.iter_mut().zip(&eta).for_each(|(v, e)| *v += e * dz);
                    kerr(data, 0.5 * gh);
                }
                None => kerr(data, gh),
            }
            let last = j + 1 == self.steps;
            let want_snap = stride.is_some_and(|s| (j + 1) % s == 0 || last);
            if dispersive {
                self.spectral.forward(data, &mut scratch);
                if last || want_snap {
                    data.iter_mut().zip(half.iter()).for_each(|(v, m)| *v *= m);
                    pending_half = !last;
                } else {
                    data.iter_mut().zip(full.iter()).for_each(|(v, m)| *v *= m);
                }
                self.spectral.inverse(data, &mut scratch);
            }
            if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NanDetected { step: j + 1 });
            }
            if want_snap {
                snap(data, j + 1, snapshots);
            }
            if pending_half {
                self.spectral.forward(data, &mut scratch);
                data.iter_mut().zip(half.iter()).for_each(|(v, m)| *v *= m);
                self.spectral.inverse(data, &mut scratch);
                pending_half = false;
            }
        }
        Ok(())
    }
}

pub fn propagate_forward(
    x: &ComplexField,
    params: &ChannelParams,
    noise: Option<&NoiseSpec>,
    run: u64,
    steps: usize,
) -> Result<PropagationResult> {
    Propagator::new(*x.grid(), *params, steps)?.forward(x, noise.map(|n| (n, run)), None)
}

pub fn propagate_backward(y: &ComplexField, params: &ChannelParams, steps: usize) -> Result<ComplexField> {
    Propagator::new(*y.grid(), *params, steps)?.backward(y)
}

/// Relative L² residual of backward(forward(X)) without noise.
pub fn roundtrip_residual(x: &ComplexField, params: &ChannelParams, steps: usize) -> Result<f64> {
    let p = Propagator::new(*x.grid(), *params, steps)?;
    let y = p.forward(x, None, None)?.output;
    Ok(p.backward(&y)?.relative_distance(x))
}

/// Runs the round trip with `steps`, doubling up to `max_steps` until the
/// residual is at most `tolerance`. Returns (steps used, residual).
pub fn adaptive_roundtrip(
    x: &ComplexField,
    params: &ChannelParams,
    steps: usize,
    max_steps: usize,
    tolerance: f64,
) -> Result<(usize, f64)> {
    let mut n = steps;
    loop {
        let r = roundtrip_residual(x, params, n)?;
        if r <= tolerance || n * 2 > max_steps {
            return Ok((n, r));
        }
        n *= 2;
    }
}

/// Φ⁽⁰⁾(ζ, t) = ρ(t)·e^{iθ₀(ζ,t)}.
pub fn dispersionless_solution(profile: &SignalProfile, zeta: f64) -> ComplexField {
    let v = profile
        .rho
        .iter()
        .zip(profile.theta0(zeta))
        .map(|(r, th)| C64::from_polar(*r, th))
        .collect();
    ComplexField::new(*profile.grid(), v).expect("profile arrays match grid")
}

/// θ₀(ζ, t) = φ₀(t) + μ(t)ζ.
pub fn theta0(profile: &SignalProfile, zeta: f64) -> Vec<f64> {
    profile.theta0(zeta)
}

/// The three coefficient functions φ⁽¹⁾₀, φ⁽¹⁾₁, φ⁽¹⁾₂ at one sample.
pub fn phi1_coefficients(rho: f64, rho_dot: f64, rho_ddot: f64, phase_dot: f64, phase_ddot: f64, rho_floor: f64) -> [C64; 3] {
    let r = rho.max(rho_floor);
    let rd2 = if r > 0.0 { rho_dot * rho_dot / r } else { 0.0 };
    [
        C64::new(2.0 * rho_dot * phase_dot + phase_ddot * rho, rho * phase_dot * phase_dot - rho_ddot),
        C64::new(rho_ddot + 3.0 * rd2, phase_ddot * rho + 4.0 * rho_dot * phase_dot),
        C64::new(0.0, 2.0 / 3.0 * (rho_ddot + 5.0 * rd2)),
    ]
}

/// Φ̃⁽¹⁾(ζ, t) = βLζ·Σ_k φ⁽¹⁾_k(t)(μ(t)ζ)^k.
pub fn phi1_correction(profile: &SignalProfile, zeta: f64, params: &ChannelParams) -> ComplexField {
    let bz = params.beta_length() * zeta;
    let v = (0..profile.grid().samples)
        .map(|i| {
            if bz == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let c = phi1_coefficients(
                profile.rho[i],
                profile.rho_dot[i],
                profile.rho_ddot[i],
                profile.phase_dot[i],
                profile.phase_ddot[i],
                profile.rho_floor,
            );
            let m = profile.mu[i] * zeta;
            (c[0] + c[1] * m + c[2] * m * m) * bz
        })
        .collect();
    ComplexField::new(*profile.grid(), v).expect("profile arrays match grid")
}

/// e^{iθ₀(ζ,t)}(ρ + Φ̃⁽¹⁾).
pub fn perturbed_solution(profile: &SignalProfile, zeta: f64, params: &ChannelParams) -> ComplexField {
    let corr = phi1_correction(profile, zeta, params);
    let v = profile
        .rho
        .iter()
        .zip(profile.theta0(zeta))
        .zip(corr.values())
        .map(|((r, th), c)| C64::from_polar(1.0, th) * (r + c))
        .collect();
    ComplexField::new(*profile.grid(), v).expect("profile arrays match grid")
}
