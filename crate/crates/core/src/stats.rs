//! Analytic per-slot correlators of the recovered coefficients, the
//! conditional density of one recovered coefficient, and z-score comparison
//! against Monte Carlo estimates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::C64;
use crate::montecarlo::McEstimate;
use crate::nlse::ChannelParams;
use crate::signal::{pulse_moment_for_sparsity, xi_squared_for_sparsity, CodeWord};

/// Pass threshold on |z|.
pub const Z_THRESHOLD: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n4: f64,
    pub n6: f64,
    pub n8: f64,
    pub xi2: f64,
}

impl Moments {
    pub fn for_sparsity(sparsity: f64) -> Self {
        Self {
            n4: pulse_moment_for_sparsity(4, sparsity).expect("supported"),
            n6: pulse_moment_for_sparsity(6, sparsity).expect("supported"),
            n8: pulse_moment_for_sparsity(8, sparsity).expect("supported"),
            xi2: xi_squared_for_sparsity(sparsity),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub k: i64,
    /// μ_k = γL|C_k|².
    pub mu: f64,
    /// ⟨|δC̃_k|²⟩.
    pub abs2: f64,
    /// ⟨δC̃_k²⟩.
    pub square: C64,
    /// ⟨δC̃_k⟩ (dispersionless part).
    pub mean: C64,
    /// O(β̃) part of ⟨|δC̃_k|²⟩.
    pub abs2_beta_term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorPrediction {
    pub slots: Vec<SlotPrediction>,
    pub moments: Moments,
    /// QL/T₀.
    pub noise_per_slot: f64,
    /// QL/Δ = QL·W′/2π.
    pub noise_in_band: f64,
    pub beta_tilde: f64,
}

/// Evaluates the per-slot correlators; `dt` is the grid step fixing the
/// noise band W′ = 2π/dt that enters the mean.
pub fn predict_correlators(code: &CodeWord, params: &ChannelParams, dt: f64) -> CorrelatorPrediction {
    let spec = code.spec();
    let m = Moments::for_sparsity(spec.sparsity());
    let d = params.dimensionless(spec, dt, None);
    let gl = params.gamma_length();
    let bt = d.beta_tilde;
    let qs = d.noise_per_slot;
    let slots = code
        .iter()
        .map(|(k, c)| {
            let mu = gl * c.norm_sqr();
            let beta_term = -bt * (8.0 / 15.0) * mu.powi(3) * m.n8 * qs;
            let abs2 = qs * (1.0 + (2.0 / 3.0) * mu * mu * m.n6) + beta_term;
            let square = c * c * (qs * gl)
                * C64::new(-(2.0 / 3.0) * mu * m.n6 + bt * (8.0 / 15.0) * mu * mu * m.n8, -m.n4);
            let mean = -C64::i() * c * (d.noise_in_band * gl) * C64::new(1.0, -mu * m.n4 / 3.0);
            SlotPrediction { k, mu, abs2, square, mean, abs2_beta_term: beta_term }
        })
        .collect();
    CorrelatorPrediction { slots, moments: m, noise_per_slot: qs, noise_in_band: d.noise_in_band, beta_tilde: bt }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPdfParams {
    pub mu: f64,
    /// φ_m = arg C_m.
    pub phase: f64,
    pub moments: Moments,
    /// QL/T₀.
    pub noise_per_slot: f64,
    pub beta_tilde: f64,
}

impl ConditionalPdfParams {
    pub fn new(mu: f64, phase: f64, sparsity: f64, noise_per_slot: f64, beta_tilde: f64) -> Self {
        Self { mu, phase, moments: Moments::for_sparsity(sparsity), noise_per_slot, beta_tilde }
    }

    pub fn for_slot(code: &CodeWord, k: i64, params: &ChannelParams, dt: f64) -> Self {
        let c = code.coefficient(k);
        let d = params.dimensionless(code.spec(), dt, None);
        Self::new(params.gamma_length() * c.norm_sqr(), c.arg(), code.spec().sparsity(), d.noise_per_slot, d.beta_tilde)
    }

    /// D = 1 + ξ²μ²/3.
    pub fn determinant(&self) -> f64 {
        1.0 + self.moments.xi2 * self.mu * self.mu / 3.0
    }

    /// Rotated, centred coordinates x + iy = e^{−iφ}(δC̃ − centre).
    pub fn coordinates(&self, delta_c: C64, centre: C64) -> (f64, f64) {
        let v = C64::from_polar(1.0, -self.phase) * (delta_c - centre);
        (v.re, v.im)
    }

    /// P⁽⁰⁾ at rotated coordinates.
    pub fn base_density(&self, x: f64, y: f64) -> f64 {
        let d = self.determinant();
        let (mu, n4, n6) = (self.mu, self.moments.n4, self.moments.n6);
        let form = (1.0 + 4.0 * n6 * mu * mu / 3.0) * x * x + 2.0 * x * y * mu * n4 + y * y;
        (-form / (self.noise_per_slot * d)).exp() / (std::f64::consts::PI * self.noise_per_slot * d.sqrt())
    }

    /// Bracketed O(β̃) factor so that P = P⁽⁰⁾(1 + β̃·correction).
    pub fn correction(&self, x: f64, y: f64) -> f64 {
        let d = self.determinant();
        let (mu, n4, n8) = (self.mu, self.moments.n4, self.moments.n8);
        let u = y + n4 * mu * x;
        8.0 * mu.powi(3) * n8 / (15.0 * d) * (1.0 - 2.0 * u * u / (self.noise_per_slot * d))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdfValue {
    pub density: f64,
    pub base: f64,
    /// Set when the first-order density is negative (far tails).
    pub negative: bool,
}

/// P_m[C̃_m|C_m] at δC̃ = `delta_c`, centred on `centre` (the analytic mean
/// by default, or a sample mean). The value is not clipped.
pub fn conditional_pdf(delta_c: C64, centre: C64, p: &ConditionalPdfParams) -> PdfValue {
    let (x, y) = p.coordinates(delta_c, centre);
    let base = p.base_density(x, y);
    let density = base * (1.0 + p.beta_tilde * p.correction(x, y));
    PdfValue { density, base, negative: density < 0.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdfMomentReport {
    pub mu: f64,
    /// ∫P⁽⁰⁾.
    pub normalization: f64,
    /// ∫P⁽⁰⁾·correction.
    pub correction_integral: f64,
    pub e_x2: f64,
    pub e_y2: f64,
    pub e_xy: f64,
    /// E[x²+y²] under P⁽⁰⁾.
    pub abs2: f64,
    /// E[(x+iy)²] under P⁽⁰⁾.
    pub square: C64,
    /// d/dβ̃ of E[x²+y²].
    pub abs2_beta_slope: f64,
    /// d/dβ̃ of E[(x+iy)²].
    pub square_beta_slope: C64,
    pub predicted_abs2: f64,
    pub predicted_square: C64,
    pub predicted_abs2_beta_slope: f64,
    pub predicted_square_beta_slope: C64,
    /// Largest deviation, in units of QL/T₀ (unity for the normalizations).
    pub max_error: f64,
}

impl PdfMomentReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_error <= tolerance
    }
}

/// Integrates P⁽⁰⁾ and its correction with the trapezoid rule on a
/// `points`² grid spanning ±`half_width` standard deviations per axis and
/// checks the second moments against [`predict_correlators`]' formulas.
pub fn pdf_moment_consistency(p: &ConditionalPdfParams, points: usize, half_width: f64) -> PdfMomentReport {
    let s = p.noise_per_slot;
    let (mu, m) = (p.mu, p.moments);
    let sx = (s / 2.0).sqrt();
    let sy = (s / 2.0 * (1.0 + 4.0 * m.n6 * mu * mu / 3.0)).sqrt();
    let hx = 2.0 * half_width * sx / (points - 1) as f64;
    let hy = 2.0 * half_width * sy / (points - 1) as f64;
    let mut acc = [0.0f64; 8];
    for i in 0..points {
        let x = -half_width * sx + i as f64 * hx;
        let wx = if i == 0 || i + 1 == points { 0.5 } else { 1.0 };
        for j in 0..points {
            let y = -half_width * sy + j as f64 * hy;
            let wy = if j == 0 || j + 1 == points { 0.5 } else { 1.0 };
            let w = wx * wy * p.base_density(x, y);
            let c = p.correction(x, y);
            acc[0] += w;
            acc[1] += w * c;
            acc[2] += w * x * x;
            acc[3] += w * y * y;
            acc[4] += w * x * y;
            acc[5] += w * c * (x * x + y * y);
            acc[6] += w * c * (x * x - y * y);
            acc[7] += w * c * 2.0 * x * y;
        }
    }
    let a = hx * hy;
    let v: Vec<f64> = acc.iter().map(|t| t * a).collect();
    let abs2 = v[2] + v[3];
    let square = C64::new(v[2] - v[3], 2.0 * v[4]);
    let predicted_abs2 = s * (1.0 + 2.0 * m.n6 * mu * mu / 3.0);
    let predicted_square = s * mu * C64::new(-2.0 * m.n6 * mu / 3.0, -m.n4);
    let predicted_abs2_beta_slope = -(8.0 / 15.0) * mu.powi(3) * m.n8 * s;
    let predicted_square_beta_slope = C64::new((8.0 / 15.0) * mu.powi(3) * m.n8 * s, 0.0);
    let abs2_beta_slope = v[5];
    let square_beta_slope = C64::new(v[6], v[7]);
    let errs = [
        (v[0] - 1.0).abs(),
        v[1].abs(),
        (abs2 - predicted_abs2).abs() / s,
        (square - predicted_square).norm() / s,
        (abs2_beta_slope - predicted_abs2_beta_slope).abs() / s,
        (square_beta_slope - predicted_square_beta_slope).norm() / s,
    ];
    PdfMomentReport {
        mu,
        normalization: v[0],
        correction_integral: v[1],
        e_x2: v[2],
        e_y2: v[3],
        e_xy: v[4],
        abs2,
        square,
        abs2_beta_slope,
        square_beta_slope,
        predicted_abs2,
        predicted_square,
        predicted_abs2_beta_slope,
        predicted_square_beta_slope,
        max_error: errs.iter().cloned().fold(0.0, f64::max),
    }
}

/// CSV (x, y, density, base, negative) on a rectangular grid of rotated
/// coordinates.
pub fn write_pdf_table<W: Write>(mut w: W, p: &ConditionalPdfParams, xs: &[f64], ys: &[f64]) -> Result<()> {
    writeln!(w, "x,y,density,base,negative")?;
    for &x in xs {
        for &y in ys {
            let base = p.base_density(x, y);
            let d = base * (1.0 + p.beta_tilde * p.correction(x, y));
            writeln!(w, "{x:e},{y:e},{d:e},{base:e},{}", d < 0.0)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZRow {
    pub k: i64,
    pub quantity: String,
    pub predicted: f64,
    pub estimated: f64,
    pub standard_error: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZTable {
    pub rows: Vec<ZRow>,
    pub max_abs_z: f64,
    pub pass: bool,
    pub note: String,
}

impl ZTable {
    pub fn from_rows(rows: Vec<ZRow>) -> Self {
        let max_abs_z = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
        let n = rows.len();
        Self {
            pass: max_abs_z <= Z_THRESHOLD,
            max_abs_z,
            note: format!(
                "{n} comparisons at |z| <= {Z_THRESHOLD}; under the null about {:.2} would exceed by chance",
                n as f64 * 0.0027
            ),
            rows,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,quantity,predicted,estimated,standard_error,z")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:e},{:e},{:e},{:.4}", r.k, r.quantity, r.predicted, r.estimated, r.standard_error, r.z)?;
        }
        Ok(())
    }
}

pub fn z_score(estimated: f64, predicted: f64, se: f64) -> f64 {
    if se > 0.0 {
        (estimated - predicted) / se
    } else if estimated == predicted {
        0.0
    } else {
        f64::INFINITY.copysign(estimated - predicted)
    }
}

fn row(k: i64, q: &str, predicted: f64, estimated: f64, se: f64) -> ZRow {
    ZRow { k, quantity: q.into(), predicted, estimated, standard_error: se, z: z_score(estimated, predicted, se) }
}

/// Which predicted quantities enter a comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompareSelection {
    pub abs2: bool,
    pub square: bool,
    pub mean: bool,
}

impl Default for CompareSelection {
    fn default() -> Self {
        Self { abs2: true, square: true, mean: false }
    }
}

/// Per-slot z-scores of the estimate against the prediction.
pub fn compare(prediction: &CorrelatorPrediction, estimate: &McEstimate, sel: CompareSelection) -> ZTable {
    let mut rows = Vec::new();
    for (p, e) in prediction.slots.iter().zip(&estimate.slots) {
        debug_assert_eq!(p.k, e.k);
        if sel.abs2 {
            rows.push(row(p.k, "abs2", p.abs2, e.abs2, e.abs2_se));
        }
        if sel.square {
            rows.push(row(p.k, "square_re", p.square.re, e.square.re, e.square_se.re));
            rows.push(row(p.k, "square_im", p.square.im, e.square.im, e.square_se.im));
        }
        if sel.mean {
            rows.push(row(p.k, "mean_re", p.mean.re, e.mean.re, e.mean_se.re));
            rows.push(row(p.k, "mean_im", p.mean.im, e.mean.im, e.mean_se.im));
        }
    }
    ZTable::from_rows(rows)
}
