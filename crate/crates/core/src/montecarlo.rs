//! Monte Carlo estimation of recovered-coefficient statistics through the
//! full channel: noisy forward propagation, detector averaging of the
//! fluctuation, noiseless backward propagation and basis projection.
//!
//! Runs are keyed by index, evaluated on a worker pool and reduced in index
//! order, so every estimate depends only on (setup, seed, run count).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{validate_scale_hierarchy, Filter, FilterSpec, HierarchyReport, RegimeMargins};
use crate::error::{Error, Result};
use crate::field::{ComplexField, TimeGrid, C64};
use crate::kernels::{semi_analytic_delta_x_with, AveragedNoise, KernelForm};
use crate::nlse::{ChannelParams, Propagator};
use crate::noise::NoiseSpec;
use crate::signal::{build_profile, gaussian_envelope, synthesize_signal, CodeWord, SignalProfile};

/// Runs with ‖F‖/‖X‖ above this leave the linearized regime.
pub const FLUCTUATION_FLAG: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSetup {
    pub code: CodeWord,
    pub grid: TimeGrid,
    pub params: ChannelParams,
    pub filter: FilterSpec,
    pub steps: usize,
    /// Phase smoothing width of the reference profile.
    pub smoothing_width: f64,
}

// CodeWord round-trips through its own JSON layout.
impl Serialize for CodeWord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: serde_json::Value =
            serde_json::from_str(&self.to_json().map_err(serde::ser::Error::custom)?).map_err(serde::ser::Error::custom)?;
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CodeWord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        CodeWord::from_json(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub run: u64,
    /// δC̃_k for every slot.
    pub delta_c: Vec<C64>,
    /// ‖F‖/‖X‖ before averaging.
    pub fluctuation_ratio: f64,
}

/// Precomputed, immutable state shared by all runs of one setup.
#[derive(Clone, Debug)]
pub struct McPipeline {
    setup: McSetup,
    propagator: Propagator,
    filter: Filter,
    x: ComplexField,
    profile: SignalProfile,
    phi_l: Vec<C64>,
    rot: Vec<C64>,
    basis: Vec<(usize, Vec<f64>)>,
    reference: Vec<C64>,
    x_norm: f64,
}

impl McPipeline {
    pub fn new(setup: McSetup) -> Result<Self> {
        let x = synthesize_signal(&setup.code, &setup.grid)?;
        let profile = build_profile(&setup.code, &setup.grid, setup.smoothing_width, setup.params.gamma_length())?;
        let propagator = Propagator::new(setup.grid, setup.params, setup.steps)?;
        let filter = Filter::new(setup.filter, &setup.grid)?;
        let phi_l = propagator.forward(&x, None, None)?.output.into_values();
        let rot = profile.theta0(1.0).iter().map(|th| C64::from_polar(1.0, *th)).collect();
        let spec = setup.code.spec();
        let g = setup.grid;
        let w = g.dt / spec.slot_duration;
        // Weights are kept on ±12δt around each centre; beyond that g_k < 1e-31.
        let reach = 12.0 * spec.pulse_width;
        let basis: Vec<(usize, Vec<f64>)> = spec
            .slots()
            .map(|k| {
                let c = spec.slot_center(k);
                let lo = g.index_of(c - reach).unwrap_or(0);
                let hi = g.index_of(c + reach).unwrap_or(g.samples - 1);
                (lo, (lo..=hi).map(|i| w * gaussian_envelope(g.time(i), spec, k)).collect())
            })
            .collect();
        let mut me = Self { x_norm: x.norm(), reference: Vec::new(), setup, propagator, filter, x, profile, phi_l, rot, basis };
        me.reference = me.project(me.x.values());
        Ok(me)
    }

    pub fn setup(&self) -> &McSetup {
        &self.setup
    }

    pub fn profile(&self) -> &SignalProfile {
        &self.profile
    }

    pub fn input(&self) -> &ComplexField {
        &self.x
    }

    pub fn filter(&self) -> &Filter {
        &self.filter
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    /// Noise keyed by `seed` with the solver's step length.
    pub fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            q: self.setup.params.q,
            seed,
            step_length: self.propagator.step_length(),
            grid: self.setup.grid,
        }
    }

    /// Basis projection ∫(dt/T₀) g_k(t) f(t) for every slot.
    pub fn project(&self, data: &[C64]) -> Vec<C64> {
        self.basis
            .iter()
            .map(|(lo, w)| w.iter().zip(&data[*lo..]).map(|(a, b)| b * a).sum())
            .collect()
    }

    /// One realization; returns the run statistics and the recovered X̃.
    pub fn run_with_field(&self, noise: &NoiseSpec, run: u64) -> Result<(RunOutput, Vec<C64>)> {
        let mut data = self.x.values().to_vec();
        self.propagator.forward_in_place(&mut data, Some((noise, run)))?;
        // F = e^{−iθ₀(1,t)}(ψ − Φ(L,t)), averaged, then re-embedded.
        for ((v, p), r) in data.iter_mut().zip(&self.phi_l).zip(&self.rot) {
            *v = (*v - p) * r.conj();
        }
        let f_norm = (data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.setup.grid.dt).sqrt();
        let mut scratch = self.filter.scratch();
        self.filter.apply(&mut data, &mut scratch);
        for ((v, p), r) in data.iter_mut().zip(&self.phi_l).zip(&self.rot) {
            *v = p + r * *v;
        }
        self.propagator.backward_in_place(&mut data)?;
        let c = self.project(&data);
        let delta_c = c.iter().zip(&self.reference).map(|(a, b)| a - b).collect();
        let fluctuation_ratio = if self.x_norm > 0.0 { f_norm / self.x_norm } else { 0.0 };
        Ok((RunOutput { run, delta_c, fluctuation_ratio }, data))
    }

    pub fn run(&self, noise: &NoiseSpec, run: u64) -> Result<RunOutput> {
        Ok(self.run_with_field(noise, run)?.0)
    }

    /// backward(forward(X)) without noise.
    pub fn noiseless_recovery(&self) -> Result<ComplexField> {
        let y = ComplexField::new(self.setup.grid, self.phi_l.clone())?;
        self.propagator.backward(&y)
    }

    pub fn hierarchy(&self, margins: &RegimeMargins) -> HierarchyReport {
        validate_scale_hierarchy(&self.setup.params, self.setup.code.spec(), &self.setup.grid, &self.setup.filter, margins)
    }
}

/// All per-run outputs of one seed, in run order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSamples {
    pub seed: u64,
    pub slots: Vec<i64>,
    pub runs: Vec<RunOutput>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}

/// Runs `runs` independent realizations; `workers = 0` uses all cores.
pub fn simulate(pipeline: &McPipeline, seed: u64, runs: usize, workers: usize) -> Result<McSamples> {
    let noise = pipeline.noise_spec(seed);
    let out: Result<Vec<RunOutput>> =
        pool(workers)?.install(|| (0..runs as u64).into_par_iter().map(|r| pipeline.run(&noise, r)).collect());
    Ok(McSamples { seed, slots: pipeline.setup.code.spec().slots().collect(), runs: out? })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotEstimate {
    pub k: i64,
    pub mean: C64,
    /// Standard errors of Re and Im of the mean.
    pub mean_se: C64,
    /// ⟨|δC̃ − m|²⟩ with m the sample mean or a supplied centre.
    pub abs2: f64,
    pub abs2_se: f64,
    /// ⟨(δC̃ − m)²⟩.
    pub square: C64,
    pub square_se: C64,
    /// ⟨|δC̃|²⟩ without centring.
    pub raw_abs2: f64,
    pub raw_abs2_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub seed: u64,
    pub runs: usize,
    pub slots: Vec<SlotEstimate>,
    /// Runs whose fluctuation ratio exceeded [`FLUCTUATION_FLAG`].
    pub flagged_runs: Vec<u64>,
    pub max_fluctuation_ratio: f64,
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn complex_stats(v: &[C64]) -> (C64, C64) {
    let re: Vec<f64> = v.iter().map(|c| c.re).collect();
    let im: Vec<f64> = v.iter().map(|c| c.im).collect();
    let (mr, sr) = mean_and_se(&re);
    let (mi, si) = mean_and_se(&im);
    (C64::new(mr, mi), C64::new(sr, si))
}

fn slot_estimate(k: i64, d: &[C64], centre: Option<C64>) -> SlotEstimate {
    let (mean, mean_se) = complex_stats(d);
    let m = centre.unwrap_or(mean);
    let cen: Vec<C64> = d.iter().map(|v| v - m).collect();
    let (abs2, abs2_se) = mean_and_se(&cen.iter().map(|v| v.norm_sqr()).collect::<Vec<_>>());
    let (square, square_se) = complex_stats(&cen.iter().map(|v| v * v).collect::<Vec<_>>());
    let (raw_abs2, raw_abs2_se) = mean_and_se(&d.iter().map(|v| v.norm_sqr()).collect::<Vec<_>>());
    SlotEstimate { k, mean, mean_se, abs2, abs2_se, square, square_se, raw_abs2, raw_abs2_se }
}

impl McSamples {
    pub fn slot_values(&self, slot: usize) -> Vec<C64> {
        self.runs.iter().map(|r| r.delta_c[slot]).collect()
    }

    pub fn estimate(&self) -> McEstimate {
        self.estimate_about(None)
    }

    /// Second moments about `centres` (one per slot) instead of the sample
    /// mean.
    pub fn estimate_about(&self, centres: Option<&[C64]>) -> McEstimate {
        let slots = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, k)| slot_estimate(*k, &self.slot_values(i), centres.map(|c| c[i])))
            .collect();
        let flagged_runs =
            self.runs.iter().filter(|r| r.fluctuation_ratio > FLUCTUATION_FLAG).map(|r| r.run).collect();
        McEstimate {
            seed: self.seed,
            runs: self.runs.len(),
            slots,
            flagged_runs,
            max_fluctuation_ratio: self.runs.iter().map(|r| r.fluctuation_ratio).fold(0.0, f64::max),
        }
    }

    /// Estimates from the first and second halves of the runs.
    pub fn split_half(&self) -> (McEstimate, McEstimate) {
        let h = self.runs.len() / 2;
        let a = McSamples { runs: self.runs[..h].to_vec(), ..self.clone() };
        let b = McSamples { runs: self.runs[h..].to_vec(), ..self.clone() };
        (a.estimate(), b.estimate())
    }
}

/// Largest |z| of the centred ⟨|δC̃|²⟩ between two independent halves.
pub fn split_half_max_z(a: &McEstimate, b: &McEstimate) -> f64 {
    a.slots
        .iter()
        .zip(&b.slots)
        .map(|(x, y)| ((x.abs2 - y.abs2) / (x.abs2_se.powi(2) + y.abs2_se.powi(2)).sqrt()).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSlot {
    pub k: i64,
    /// Mean of |δC̃_b − m_b|² − |δC̃_a − m_a|² over paired runs.
    pub abs2_difference: f64,
    pub abs2_difference_se: f64,
    /// SE the difference would have with independent noise.
    pub unpaired_se: f64,
}

/// Common-random-number difference of the centred ⟨|δC̃|²⟩, b minus a.
pub fn paired_difference(a: &McSamples, b: &McSamples) -> Result<Vec<PairedSlot>> {
    if a.seed != b.seed || a.runs.len() != b.runs.len() || a.slots != b.slots {
        return Err(Error::InvalidInput("paired samples need the same seed, runs and slots".into()));
    }
    Ok(a.slots
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let (va, vb) = (a.slot_values(i), b.slot_values(i));
            let (ma, _) = complex_stats(&va);
            let (mb, _) = complex_stats(&vb);
            let ea: Vec<f64> = va.iter().map(|v| (v - ma).norm_sqr()).collect();
            let eb: Vec<f64> = vb.iter().map(|v| (v - mb).norm_sqr()).collect();
            let d: Vec<f64> = eb.iter().zip(&ea).map(|(x, y)| x - y).collect();
            let (m, se) = mean_and_se(&d);
            let (_, sa) = mean_and_se(&ea);
            let (_, sb) = mean_and_se(&eb);
            PairedSlot { k: *k, abs2_difference: m, abs2_difference_se: se, unpaired_se: (sa * sa + sb * sb).sqrt() }
        })
        .collect())
}

/// Hierarchy-gated estimate of the correlators of one setup.
pub fn monte_carlo_correlators(
    setup: McSetup,
    runs: usize,
    seed: u64,
    workers: usize,
    margins: &RegimeMargins,
    override_regime: bool,
) -> Result<(McEstimate, HierarchyReport)> {
    let pipeline = McPipeline::new(setup)?;
    let report = pipeline.hierarchy(margins);
    if !report.passed() && !override_regime {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        return Err(Error::RegimeViolation(names.join(", ")));
    }
    let est = simulate(&pipeline, seed, runs, workers)?.estimate();
    Ok((est, report))
}

/// Agreement of the semi-analytic recovered fluctuation with the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiAnalyticReport {
    pub form: KernelForm,
    pub seed: u64,
    pub runs: usize,
    /// √(Σ|δC̃_pipe − δC̃_semi|² / Σ|δC̃_pipe|²) over all runs and slots.
    pub relative_rms: f64,
    /// The same ratio for δX̃(t) on the whole grid.
    pub field_relative_rms: f64,
}

/// Runs the full pipeline and the kernel expansion on the same noise. Time
/// derivatives in the expansion are band-limited to the detector band.
pub fn semi_analytic_comparison(
    pipeline: &McPipeline,
    seed: u64,
    runs: usize,
    workers: usize,
    form: KernelForm,
) -> Result<SemiAnalyticReport> {
    let noise = pipeline.noise_spec(seed);
    let bl = pipeline.setup.params.beta_length();
    let cutoff = pipeline.setup.filter.bandwidth();
    let one = |r: u64| -> Result<[f64; 4]> {
        let (out, xt) = pipeline.run_with_field(&noise, r)?;
        let avg = AveragedNoise::from_spec(&noise, r, pipeline.setup.steps, &pipeline.profile, &pipeline.filter)?;
        let dx = semi_analytic_delta_x_with(&avg, &pipeline.profile, bl, cutoff, form)?;
        let semi = pipeline.project(dx.values());
        let num = out.delta_c.iter().zip(&semi).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den = out.delta_c.iter().map(|a| a.norm_sqr()).sum();
        let (mut fnum, mut fden) = (0.0, 0.0);
        for ((t, x), d) in xt.iter().zip(pipeline.x.values()).zip(dx.values()) {
            fnum += (t - x - d).norm_sqr();
            fden += (t - x).norm_sqr();
        }
        Ok([num, den, fnum, fden])
    };
    let parts: Result<Vec<[f64; 4]>> = pool(workers)?.install(|| (0..runs as u64).into_par_iter().map(one).collect());
    let mut acc = [0.0; 4];
    for p in parts? {
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    Ok(SemiAnalyticReport {
        form,
        seed,
        runs,
        relative_rms: (acc[0] / acc[1]).sqrt(),
        field_relative_rms: (acc[2] / acc[3]).sqrt(),
    })
}
