//! Closed-form response and recovery kernels of the linearized channel, in
//! the frozen-coefficient approximation, and the semi-analytic recovered
//! fluctuation δX̃ built from one noise realization.
//!
//! Three independent routes to the recovery kernels are provided so they
//! can be checked against each other:
//! * [`recovery_kernels`] transcribes the closed form term by term;
//! * [`RecoveryPolynomial`] holds the same expression regrouped as a
//!   polynomial in ω and ξ (the form used by [`semi_analytic_delta_x`]);
//! * [`linearized_recovery_kernels`] composes the response kernels M⁽⁰⁾,
//!   M⁽¹⁾, M⁽²·¹⁾ with the linearized backward map (coefficients a₁..a₆).
//!
//! Each route exists in two [`KernelForm`]s. The reference M⁽²·¹⁾ lacks a
//! term common to both noise channels; the corrected form restores it, so
//! that noise entering at ξ = 0 is recovered exactly.

use std::io::Write;

use num_complex::ComplexFloat;
use serde::{Deserialize, Serialize};

use crate::detector::Filter;
use crate::error::{Error, Result};
use crate::field::{ComplexField, Spectral, TimeGrid, C64};
use crate::noise::NoiseSpec;
pub use crate::signal::ProfilePoint;
use crate::signal::SignalProfile;

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelInputs {
    pub zeta: f64,
    pub xi: f64,
    pub omega: f64,
    pub point: ProfilePoint,
    pub beta_length: f64,
}

impl KernelInputs {
    pub fn new(zeta: f64, xi: f64, omega: f64, point: ProfilePoint, beta_length: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&zeta) || !(0.0..=zeta).contains(&xi) {
            return Err(Error::InvalidInput(format!("need 0 <= xi <= zeta <= 1, got xi={xi}, zeta={zeta}")));
        }
        Ok(Self { zeta, xi, omega, point, beta_length })
    }
}

/// Coefficients of η(ξ,ω) and η̄(ξ,−ω).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelValues {
    pub eta: C64,
    pub eta_bar: C64,
}

impl std::ops::Add for KernelValues {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { eta: self.eta + o.eta, eta_bar: self.eta_bar + o.eta_bar }
    }
}

impl KernelValues {
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        (self.eta - o.eta).abs().max((self.eta_bar - o.eta_bar).abs())
    }
}

/// Leading order in β̃_a, expanded to first order in βLω².
pub fn kernel_m0(k: &KernelInputs) -> KernelValues {
    let s = k.zeta - k.xi;
    let mu = k.point.mu;
    let b = k.beta_length * k.omega * k.omega;
    KernelValues {
        eta: ONE + I * (mu * s) + b * (I * s - mu * s * s - I * (mu * mu / 3.0) * s.powi(3)),
        eta_bar: I * (mu * s) - b * I * (mu * mu / 3.0) * s.powi(3),
    }
}

/// First correction in β̃_a: terms in βLω·μ̇ and βLω·φ̇₀.
pub fn kernel_m1(k: &KernelInputs) -> KernelValues {
    let (z, x) = (k.zeta, k.xi);
    let s = z - x;
    let mu = k.point.mu;
    let mud = k.point.mu_dot();
    let p1 = k.point.phase_dot;
    let b = k.beta_length * k.omega / 3.0;
    KernelValues {
        eta: b * s * (6.0 * p1 * (re(s * mu) - I) + mud * (re(s * (5.0 * z + x) * mu) - 6.0 * I * z)),
        eta_bar: b * s * s * (re(6.0 * p1 * mu) + mud * (re((5.0 * z + x) * mu) - 3.0 * I)),
    }
}

/// First correction in β̃ (ω-independent).
pub fn kernel_m21(k: &KernelInputs) -> KernelValues {
    let (z, x) = (k.zeta, k.xi);
    let s = z - x;
    let mu = k.point.mu;
    let r1 = k.point.r1();
    let r2 = k.point.r2();
    let p1 = k.point.phase_dot;
    let p2 = k.point.phase_ddot;
    let (z2, x2, z3, x3) = (z * z, x * x, z.powi(3), x.powi(3));
    let eta = mu * r1 * r1 / 3.0
        * (re(10.0 * mu * mu * (z3 - x3)) - 3.0 * I * mu * (7.0 * z2 + 4.0 * z * x + 5.0 * x2) - 6.0 * z)
        + 2.0 * mu * (z + x) * r1 * p1 * (re(2.0 * mu * s) - 3.0 * I)
        + p1 * p1 * (re(mu * s) - I)
        + p2 * (re(mu * mu * (z2 - x2)) - I * mu * (3.0 * z + x) - 1.0)
        + 2.0 * mu * r2 / 3.0 * (re(mu * mu * (z3 - x3)) - I * mu * (4.0 * z2 + z * x + x2) - 3.0 * z);
    let eta_bar = mu * r1 * r1 / 3.0
        * (re(10.0 * mu * mu * (z3 + x3)) - I * mu * (11.0 * z2 + 2.0 * z * x + 5.0 * x2) - 3.0 * z + 3.0 * x)
        + 2.0 * mu * r1 * p1 * (re(2.0 * mu * (z2 + x2)) - I * (z + x))
        + p1 * p1 * mu * (z + x)
        + p2 * mu * (re(mu * (z2 + x2)) - 2.0 * I * z)
        + 2.0 * mu * r2 / 3.0 * (re(mu * mu * (z3 + x3)) - 3.0 * I * z2 * mu - 3.0 * z);
    let f = -k.beta_length * s;
    KernelValues { eta: eta * f, eta_bar: eta_bar * f }
}

/// First-order kernel variant. `Corrected` adds [`kernel_m21_complement`] to M⁽²·¹⁾.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelForm {
    #[default]
    Reference,
    Corrected,
}

/// i(ζ−ξ)²βL[μ̇φ̇₀ + μ̇²(2ζ+ξ)/3], identical in both channels: the part of the
/// linearized response missing from the reference M⁽²·¹⁾.
pub fn kernel_m21_complement(k: &KernelInputs) -> KernelValues {
    let s = k.zeta - k.xi;
    let mud = k.point.mu_dot();
    let v = I * (k.beta_length * s * s * (mud * k.point.phase_dot + mud * mud * (2.0 * k.zeta + k.xi) / 3.0));
    KernelValues { eta: v, eta_bar: v }
}

/// M⁽⁰⁾ + M⁽¹⁾ + M⁽²·¹⁾.
pub fn response_kernels(k: &KernelInputs) -> KernelValues {
    kernel_m0(k) + kernel_m1(k) + kernel_m21(k)
}

pub fn response_kernels_with(k: &KernelInputs, form: KernelForm) -> KernelValues {
    match form {
        KernelForm::Reference => response_kernels(k),
        KernelForm::Corrected => response_kernels(k) + kernel_m21_complement(k),
    }
}

/// a₁..a₆ of the linearized backward map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCoefficients(pub [C64; 6]);

pub fn recovery_coefficients(p: &ProfilePoint) -> RecoveryCoefficients {
    let mu = p.mu;
    let (r1, r2) = (p.r1(), p.r2());
    let (p1, p2) = (p.phase_dot, p.phase_ddot);
    let mu2 = mu * mu;
    let mu3 = mu2 * mu;
    // ρ-ratios are written through r1 = ρ̇/ρ and r2 = ρ̈/ρ.
    let a1 = -p2 - I * p1 * p1 - mu * (4.0 * I * r1 * p1 + I * p2 + p1 * p1)
        - mu2 / 3.0 * (2.0 * I * r2 + 12.0 * r1 * p1 + 11.0 * I * r1 * r1 + 3.0 * p2)
        - 2.0 * mu3 / 3.0 * (r2 + 5.0 * r1 * r1);
    let a2 = re(mu * (r1 * r1 + p1 * p1))
        + mu2 * (re(4.0 * r1 * p1) - I * r1 * r1 / 3.0 + p2)
        + 2.0 * mu3 / 3.0 * (r2 + 5.0 * r1 * r1);
    let a3 = re(-2.0 * p1) + 2.0 * I * mu * p1 + 2.0 * I * mu2 * r1 / 3.0;
    let a4 = mu * (re(2.0 * r1) + 2.0 * I * p1) + 2.0 * I * mu2 * r1 / 3.0;
    let a5 = I + mu - I * mu2 / 3.0;
    let a6 = -I * mu2 / 3.0;
    RecoveryCoefficients([a1, a2, a3, a4, a5, a6])
}

/// M₍ₓ₎η and M₍ₓ₎η̄ through first order in β, transcribed term by term.
pub fn recovery_kernels(xi: f64, omega: f64, p: &ProfilePoint, beta_length: f64) -> KernelValues {
    let mu = p.mu;
    let (r1, r2) = (p.r1(), p.r2());
    let (p1, p2) = (p.phase_dot, p.phase_ddot);
    let x = xi;
    let (x2, x3, x4) = (x * x, x.powi(3), x.powi(4));
    let mu2 = mu * mu;
    let mu3 = mu2 * mu;
    let bw = beta_length * omega;
    let bw2 = beta_length * omega * omega;
    let bl = beta_length;

    let eta = ONE - I * mu * x
        + bw * (re(2.0 * mu2 * x3 * r1 / 3.0) + (re(2.0 * mu * x2) + 2.0 * I * x) * p1)
        + bw2 * (I * mu2 * x3 / 3.0 - mu * x2 - I * x)
        + bl * (r1 * p1 * (re(-4.0 * mu2 * x3) - 2.0 * I * mu * (3.0 * x2 - 2.0 * x + 1.0))
            + (re(-mu2 * x3) - I * mu * x2 - x) * p2
            + r2 / 3.0 * (re(-2.0 * mu3 * x4) - 2.0 * I * mu2 * x3)
            + r1 * r1 / 3.0 * (re(-10.0 * mu3 * x4) - I * mu2 * (15.0 * x3 - 12.0 * x + 8.0))
            + (re(-mu * x2) - I * x) * p1 * p1);

    let eta_bar = -I * mu * x
        + bw2 * I * mu2 * x3 / 3.0
        + bw * (re(2.0 * mu * x2 * p1) + 2.0 * r1 / 3.0 * (re(mu2 * x3) - 3.0 * I * mu * x2))
        + bl * (re(2.0 * mu3 * x4 * r2 / 3.0)
            + r1 * p1 * (re(4.0 * mu2 * x3) - 2.0 * I * mu * (x - 1.0).powi(2))
            + mu2 * x3 * p2
            + r1 * r1 / 3.0 * (re(10.0 * mu3 * x4) - I * mu2 * (5.0 * x3 - 12.0 * x + 8.0) + 3.0 * mu * x2)
            + mu * x2 * p1 * p1);
    KernelValues { eta, eta_bar }
}

/// The complement passes through the recovery map unchanged, since it is i
/// times a real multiple of η + η̄.
pub fn recovery_kernels_with(xi: f64, omega: f64, p: &ProfilePoint, beta_length: f64, form: KernelForm) -> KernelValues {
    let reference = recovery_kernels(xi, omega, p, beta_length);
    match form {
        KernelForm::Reference => reference,
        KernelForm::Corrected => {
            let k = KernelInputs { zeta: 1.0, xi, omega, point: *p, beta_length };
            reference + kernel_m21_complement(&k)
        }
    }
}

/// The β⁰ part of M⁽⁰⁾ at ζ = 1 is c₀ + c₁μ(1−ξ); value and first two
/// frozen-coefficient time derivatives.
fn lead(c0: C64, c1: C64, s: f64, p: &ProfilePoint) -> [C64; 3] {
    [c0 + c1 * p.mu * s, c1 * p.mu_dot() * s, c1 * p.mu_ddot() * s]
}

/// ∂_t acting under ∫dω e^{−iωt}: −iωM + Ṁ.
fn d1(m: &[C64; 3], w: f64) -> C64 {
    -I * w * m[0] + m[1]
}

fn d2(m: &[C64; 3], w: f64) -> C64 {
    -(w * w) * m[0] - 2.0 * I * w * m[1] + m[2]
}

/// Recovery kernels obtained by inserting M⁽⁰⁾ + M⁽¹⁾ + M⁽²·¹⁾ at ζ = 1 into
/// δX̃ = e^{iφ₀}[(1−iμ)F − iμF̄] + βL·e^{iφ₀}Σ a_k·(F, F̄, F′, F̄′, F″, F̄″),
/// with the derivative terms built from the β⁰ kernels.
pub fn linearized_recovery_kernels(xi: f64, omega: f64, p: &ProfilePoint, beta_length: f64) -> KernelValues {
    linearized_recovery_kernels_with(xi, omega, p, beta_length, KernelForm::Reference)
}

pub fn linearized_recovery_kernels_with(
    xi: f64,
    omega: f64,
    p: &ProfilePoint,
    beta_length: f64,
    form: KernelForm,
) -> KernelValues {
    let at = |w: f64| response_kernels_with(&KernelInputs { zeta: 1.0, xi, omega: w, point: *p, beta_length }, form);
    let m = at(omega);
    let mm = at(-omega);
    let a = recovery_coefficients(p).0;
    let s = 1.0 - xi;
    let mu = p.mu;
    let one_minus = ONE - I * mu;

    // η channel: F carries M_η(ω), F̄ carries conj M_η̄(−ω).
    let le = lead(ONE, I, s, p);
    let lbc = lead(ZERO, -I, s, p);
    // η̄ channel: F carries M_η̄(ω), F̄ carries conj M_η(−ω).
    let lb = lead(ZERO, I, s, p);
    let lec = lead(ONE, -I, s, p);

    let sec = |f: &[C64; 3], g: &[C64; 3]| {
        a[0] * f[0] + a[1] * g[0] + a[2] * d1(f, omega) + a[3] * d1(g, omega) + a[4] * d2(f, omega) + a[5] * d2(g, omega)
    };
    KernelValues {
        eta: one_minus * m.eta - I * mu * mm.eta_bar.conj() + beta_length * sec(&le, &lbc),
        eta_bar: one_minus * m.eta_bar - I * mu * mm.eta.conj() + beta_length * sec(&lb, &lec),
    }
}

/// Highest ω power in the recovery kernels.
pub const OMEGA_ORDER: usize = 2;
/// Highest ξ power in the recovery kernels.
pub const XI_ORDER: usize = 4;

/// M₍ₓ₎ = Σ_{p≤2, q≤4} c_pq ω^p ξ^q for both noise channels at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryPolynomial {
    pub eta: [[C64; XI_ORDER + 1]; OMEGA_ORDER + 1],
    pub eta_bar: [[C64; XI_ORDER + 1]; OMEGA_ORDER + 1],
}

impl RecoveryPolynomial {
    pub fn new(p: &ProfilePoint, beta_length: f64) -> Self {
        Self::with_form(p, beta_length, KernelForm::Reference)
    }

    pub fn with_form(p: &ProfilePoint, beta_length: f64, form: KernelForm) -> Self {
        let mu = p.mu;
        let (r1, r2) = (p.r1(), p.r2());
        let (p1, p2) = (p.phase_dot, p.phase_ddot);
        let mu2 = mu * mu;
        let mu3 = mu2 * mu;
        let b = beta_length;
        let rp = r1 * p1;
        let rr = r1 * r1;
        let mut e = [[ZERO; XI_ORDER + 1]; OMEGA_ORDER + 1];
        let mut f = [[ZERO; XI_ORDER + 1]; OMEGA_ORDER + 1];

        e[0][0] = ONE + b * (-2.0 * I * mu * rp - (8.0 / 3.0) * I * mu2 * rr);
        e[0][1] = -I * mu + b * (4.0 * I * mu * rp - p2 + 4.0 * I * mu2 * rr - I * p1 * p1);
        e[0][2] = b * (-6.0 * I * mu * rp - I * mu * p2 - mu * p1 * p1);
        e[0][3] = b * (re(-4.0 * mu2 * rp - mu2 * p2) - (2.0 / 3.0) * I * mu2 * r2 - 5.0 * I * mu2 * rr);
        e[0][4] = re(b * (-(2.0 / 3.0) * mu3 * r2 - (10.0 / 3.0) * mu3 * rr));
        e[1][1] = b * 2.0 * I * p1;
        e[1][2] = re(b * 2.0 * mu * p1);
        e[1][3] = re(b * (2.0 / 3.0) * mu2 * r1);
        e[2][1] = -I * b;
        e[2][2] = re(-b * mu);
        e[2][3] = I * b * mu2 / 3.0;

        f[0][0] = b * (-2.0 * I * mu * rp - (8.0 / 3.0) * I * mu2 * rr);
        f[0][1] = -I * mu + b * (4.0 * I * mu * rp + 4.0 * I * mu2 * rr);
        f[0][2] = b * (-2.0 * I * mu * rp + mu * rr + mu * p1 * p1);
        f[0][3] = b * (re(4.0 * mu2 * rp + mu2 * p2) - (5.0 / 3.0) * I * mu2 * rr);
        f[0][4] = re(b * ((2.0 / 3.0) * mu3 * r2 + (10.0 / 3.0) * mu3 * rr));
        f[1][2] = b * (re(2.0 * mu * p1) - 2.0 * I * mu * r1);
        f[1][3] = re(b * (2.0 / 3.0) * mu2 * r1);
        f[2][3] = I * b * mu2 / 3.0;
        if form == KernelForm::Corrected {
            // 2iμ(ρ̇φ̇₀/ρ)(1−ξ)² + (4/3)iμ²(ρ̇/ρ)²(1−ξ)²(2+ξ), expanded in ξ.
            let c = [
                I * b * (2.0 * mu * rp + (8.0 / 3.0) * mu2 * rr),
                I * b * (-4.0 * mu * rp - 4.0 * mu2 * rr),
                I * b * (2.0 * mu * rp),
                I * b * ((4.0 / 3.0) * mu2 * rr),
            ];
            for (q, v) in c.iter().enumerate() {
                e[0][q] += v;
                f[0][q] += v;
            }
        }
        Self { eta: e, eta_bar: f }
    }

    pub fn evaluate(&self, xi: f64, omega: f64) -> KernelValues {
        let eval = |c: &[[C64; XI_ORDER + 1]; OMEGA_ORDER + 1]| {
            let mut acc = ZERO;
            let mut wp = 1.0;
            for row in c {
                let mut xq = 1.0;
                let mut inner = ZERO;
                for v in row {
                    inner += v * xq;
                    xq *= xi;
                }
                acc += inner * wp;
                wp *= omega;
            }
            acc
        };
        KernelValues { eta: eval(&self.eta), eta_bar: eval(&self.eta_bar) }
    }
}

/// ξ-moments of the rotated, detector-averaged noise increments,
/// N_q(t) = K_a[Σ_j ξ_j^q e^{−iθ₀(ξ_j,t)} η_j Δz], with the midpoint ξ_j of
/// step j. These are the midpoint-rule quadratures of ∫₀¹dξ ξ^q η_(a)(ξ,t).
#[derive(Clone, Debug)]
pub struct AveragedNoise {
    grid: TimeGrid,
    steps: usize,
    moments: Vec<Vec<C64>>,
}

impl AveragedNoise {
    /// Accumulates the moments from per-step noise fields η_j.
    pub fn from_steps<'a, I>(steps: I, step_length: f64, profile: &SignalProfile, filter: &Filter) -> Result<Self>
    where
        I: ExactSizeIterator<Item = &'a ComplexField>,
    {
        let n = steps.len();
        let grid = *profile.grid();
        let mut acc = Accumulator::new(grid, n, profile);
        for (j, eta) in steps.enumerate() {
            if eta.grid().samples != grid.samples {
                return Err(Error::Aliasing { noise: eta.grid().samples, grid: grid.samples });
            }
            acc.add(j, eta.values(), step_length);
        }
        Ok(acc.finish(filter))
    }

    /// Regenerates the noise of `run` from its key instead of storing it.
    pub fn from_spec(spec: &NoiseSpec, run: u64, steps: usize, profile: &SignalProfile, filter: &Filter) -> Result<Self> {
        let grid = *profile.grid();
        if spec.grid.samples != grid.samples || spec.grid.dt != grid.dt {
            return Err(Error::Aliasing { noise: spec.grid.samples, grid: grid.samples });
        }
        let mut acc = Accumulator::new(grid, steps, profile);
        let mut eta = vec![ZERO; grid.samples];
        for j in 0..steps {
            spec.fill_step(run, j as u64, &mut eta);
            acc.add(j, &eta, spec.step_length);
        }
        Ok(acc.finish(filter))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// N_q in the time domain.
    pub fn moment(&self, q: usize) -> &[C64] {
        &self.moments[q]
    }
}

struct Accumulator<'p> {
    grid: TimeGrid,
    steps: usize,
    profile: &'p SignalProfile,
    moments: Vec<Vec<C64>>,
}

impl<'p> Accumulator<'p> {
    fn new(grid: TimeGrid, steps: usize, profile: &'p SignalProfile) -> Self {
        Self { grid, steps, profile, moments: vec![vec![ZERO; grid.samples]; XI_ORDER + 1] }
    }

    fn add(&mut self, j: usize, eta: &[C64], dz: f64) {
        let xi = (j as f64 + 0.5) / self.steps as f64;
        let p = self.profile;
        for (i, e) in eta.iter().enumerate() {
            let v = C64::from_polar(dz, -(p.phase[i] + p.mu[i] * xi)) * e;
            let mut w = v;
            for q in 0..=XI_ORDER {
                self.moments[q][i] += w;
                w *= xi;
            }
        }
    }

    fn finish(mut self, filter: &Filter) -> AveragedNoise {
        let mut scratch = filter.scratch();
        for m in &mut self.moments {
            filter.apply(m, &mut scratch);
        }
        AveragedNoise { grid: self.grid, steps: self.steps, moments: self.moments }
    }
}

/// δX̃(t) = e^{iφ₀} Σ_{p,q} [c^η_pq(t)(i∂_t)^p N_q + c^η̄_pq(t)(i∂_t)^p N̄_q],
/// with the recovery polynomial frozen at each t. Derivatives are spectral
/// with |ω| ≤ `cutoff`; the p = 0 terms are used unfiltered.
pub fn semi_analytic_delta_x(
    noise: &AveragedNoise,
    profile: &SignalProfile,
    beta_length: f64,
    cutoff: f64,
) -> Result<ComplexField> {
    semi_analytic_delta_x_with(noise, profile, beta_length, cutoff, KernelForm::Reference)
}

pub fn semi_analytic_delta_x_with(
    noise: &AveragedNoise,
    profile: &SignalProfile,
    beta_length: f64,
    cutoff: f64,
    form: KernelForm,
) -> Result<ComplexField> {
    let grid = *profile.grid();
    if noise.grid.samples != grid.samples {
        return Err(Error::Aliasing { noise: noise.grid.samples, grid: grid.samples });
    }
    let n = grid.samples;
    let polys: Vec<RecoveryPolynomial> =
        (0..n).map(|i| RecoveryPolynomial::with_form(&profile.point(i), beta_length, form)).collect();
    let spectral = Spectral::new(grid);
    let mut scratch = spectral.scratch();
    let mut out = vec![ZERO; n];
    let max_p = if beta_length == 0.0 { 0 } else { OMEGA_ORDER };
    let mut buf = vec![ZERO; n];
    for q in 0..=XI_ORDER {
        let nq = noise.moment(q);
        for conj in [false, true] {
            for p in 0..=max_p {
                if conj {
                    buf.iter_mut().zip(nq).for_each(|(b, v)| *b = v.conj());
                } else {
                    buf.copy_from_slice(nq);
                }
                if p > 0 {
                    spectral.apply_omega_power(&mut buf, p as u32, cutoff, &mut scratch);
                }
                for (i, (o, v)) in out.iter_mut().zip(&buf).enumerate() {
                    let c = if conj { polys[i].eta_bar[p][q] } else { polys[i].eta[p][q] };
                    *o += c * v;
                }
            }
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o *= C64::from_polar(1.0, profile.phase[i]);
    }
    ComplexField::new(grid, out)
}

/// Writes a CSV of all kernels on the Cartesian product of the given ζ, ξ
/// and ω values (rows with ξ > ζ are skipped). The M⁽²·¹⁾ and M₍ₓ₎ columns
/// follow `form`.
pub fn write_kernel_table<W: Write>(
    mut w: W,
    point: &ProfilePoint,
    beta_length: f64,
    zetas: &[f64],
    xis: &[f64],
    omegas: &[f64],
    form: KernelForm,
) -> Result<()> {
    writeln!(
        w,
        "zeta,xi,omega,m0_eta_re,m0_eta_im,m0_etabar_re,m0_etabar_im,m1_eta_re,m1_eta_im,m1_etabar_re,m1_etabar_im,\
m21_eta_re,m21_eta_im,m21_etabar_re,m21_etabar_im,mx_eta_re,mx_eta_im,mx_etabar_re,mx_etabar_im"
    )?;
    for &z in zetas {
        for &x in xis {
            if x > z {
                continue;
            }
            for &om in omegas {
                let k = KernelInputs::new(z, x, om, *point, beta_length)?;
                let m21 = match form {
                    KernelForm::Reference => kernel_m21(&k),
                    KernelForm::Corrected => kernel_m21(&k) + kernel_m21_complement(&k),
                };
                let mx = recovery_kernels_with(x, om, point, beta_length, form);
                let vals = [kernel_m0(&k), kernel_m1(&k), m21, mx];
                write!(w, "{z:e},{x:e},{om:e}")?;
                for v in vals {
                    write!(w, ",{:e},{:e},{:e},{:e}", v.eta.re, v.eta.im, v.eta_bar.re, v.eta_bar.im)?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}
