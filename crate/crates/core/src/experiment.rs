//! Experiment orchestration: config validation, one output directory per
//! run with the manifest written first, and deterministic artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Centering, ExperimentConfig, ExperimentKind};
use crate::detector::{validate_scale_hierarchy, HierarchyReport};
use crate::error::{Error, Result};
use crate::field::{ComplexField, C64};
use crate::kernels::{linearized_recovery_kernels_with, recovery_kernels_with, write_kernel_table, RecoveryPolynomial};
use crate::montecarlo::{paired_difference, semi_analytic_comparison, simulate, McPipeline, McSetup};
use crate::nlse::{roundtrip_residual, Propagator, MIN_STEPS};
use crate::noise::{NoiseSpec, MIN_NOISE_BANDWIDTH_RATIO};
use crate::signal::{synthesize_signal, CodeWord};
use crate::stats::{
    compare, pdf_moment_consistency, predict_correlators, write_pdf_table, CompareSelection,
    ConditionalPdfParams, ZTable, Z_THRESHOLD,
};
use crate::KernelForm;

pub const MANIFEST: &str = "manifest.json";
pub const ROUNDTRIP_TOLERANCE: f64 = 1e-8;
pub const KERNEL_ROUTE_TOLERANCE: f64 = 1e-8;
pub const PDF_TOLERANCE: f64 = 1e-6;
const SYNTH_POWER_TOLERANCE: f64 = 1e-9;
const KERR_PHASE_PER_STEP_MAX: f64 = 0.05;
const GUARD_EDGE_MAX: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub name: String,
    pub relation: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

fn grid_check(name: &str, relation: &str, value: f64, bound: f64, upper: bool) -> GridCheck {
    let pass = if upper { value <= bound } else { value >= bound };
    GridCheck { name: name.into(), relation: relation.into(), value, bound, pass }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Construction failures; when non-empty the other sections may be empty.
    pub errors: Vec<String>,
    pub hierarchy: Option<HierarchyReport>,
    pub grid: Vec<GridCheck>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = self.errors.clone();
        if let Some(h) = &self.hierarchy {
            out.extend(h.failures().iter().map(|c| format!("{} ({})", c.name, c.relation)));
        }
        out.extend(self.grid.iter().filter(|c| !c.pass).map(|c| format!("{} ({})", c.name, c.relation)));
        out
    }
}

/// Scale hierarchy plus grid sanity. Never fails; problems are reported.
pub fn validate_config(config: &ExperimentConfig) -> ValidationReport {
    let mut report = ValidationReport { errors: Vec::new(), hierarchy: None, grid: Vec::new(), passed: false };
    let parts = (|| -> Result<_> {
        Ok((config.pulse_train_spec()?, config.channel_params()?, config.time_grid()?, config.code_word()?))
    })();
    let (spec, params, grid, code) = match parts {
        Ok(p) => p,
        Err(e) => {
            report.errors.push(e.to_string());
            return report;
        }
    };
    let filter = config.filter_spec();
    if let Err(e) = filter.check(&grid) {
        report.errors.push(e.to_string());
    }
    report.hierarchy = Some(validate_scale_hierarchy(&params, &spec, &grid, &filter, &config.analysis.regime));

    let g = &config.grid;
    report.grid.push(grid_check(
        "noise_band_vs_signal",
        "W'/W >= min",
        spec.pulse_width / grid.dt,
        MIN_NOISE_BANDWIDTH_RATIO,
        false,
    ));
    if !filter.is_identity() {
        report.grid.push(grid_check("detector_resolved", "tau_a/dt >= 2", filter.tau_a / grid.dt, 2.0, false));
    }
    report.grid.push(grid_check("steps", "steps >= min", g.steps as f64, MIN_STEPS as f64, false));
    report.grid.push(grid_check(
        "smoothing_width",
        "smoothing/T0 <= 1/4",
        g.smoothing_width_ps / spec.slot_duration,
        0.25,
        true,
    ));
    match synthesize_signal(&code, &grid) {
        Ok(x) => {
            let peak = x.max_abs();
            let v = x.values();
            let edge = v[0].norm().max(v[v.len() - 1].norm());
            report.grid.push(grid_check(
                "guard_band",
                "|X(edge)|/max|X| <= max",
                if peak > 0.0 { edge / peak } else { 0.0 },
                GUARD_EDGE_MAX,
                true,
            ));
            report.grid.push(grid_check(
                "kerr_phase_per_step",
                "gamma*max|X|^2*dz <= max",
                params.gamma.abs() * peak * peak * params.length / g.steps.max(1) as f64,
                KERR_PHASE_PER_STEP_MAX,
                true,
            ));
        }
        Err(e) => report.errors.push(e.to_string()),
    }
    report.passed = report.errors.is_empty()
        && report.grid.iter().all(|c| c.pass)
        && report.hierarchy.as_ref().is_some_and(|h| h.passed());
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub config_sha256: String,
    pub seed: u64,
    pub runs: usize,
    pub kerrlab_version: String,
    pub status: RunStatus,
    pub passed: Option<bool>,
    pub summary: Option<String>,
    pub override_regime: bool,
    pub hierarchy_passed: Option<bool>,
    /// The only field that differs between identical reruns.
    pub wall_time_s: Option<f64>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    pub workers: usize,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub summary: String,
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

struct Bundle {
    dir: PathBuf,
    manifest: Manifest,
}

impl Bundle {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.manifest.artifacts.push(Artifact {
            name: name.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn save_manifest(&self) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        fs::write(self.dir.join(MANIFEST), s)?;
        Ok(())
    }
}

struct Verdict {
    passed: bool,
    summary: String,
}

/// Runs the configured experiment into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let started = Instant::now();
    let validation = validate_config(config);
    if let Some(e) = validation.errors.first() {
        return Err(Error::ConfigInvalid(e.clone()));
    }
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut b = Bundle {
        dir: dir.clone(),
        manifest: Manifest {
            kind: config.kind,
            config_sha256: config.hash()?,
            seed: config.seed,
            runs: config.runs,
            kerrlab_version: env!("CARGO_PKG_VERSION").into(),
            status: RunStatus::Running,
            passed: None,
            summary: None,
            override_regime: config.override_regime,
            hierarchy_passed: validation.hierarchy.as_ref().map(|h| h.passed()),
            wall_time_s: None,
            artifacts: Vec::new(),
        },
    };
    b.save_manifest()?;
    b.write("config.toml", config.canonical_toml()?.as_bytes())?;
    b.json("validation.json", &validation)?;

    let result = if config.kind == ExperimentKind::Validate {
        let f = validation.failures();
        Ok(Verdict {
            passed: validation.passed,
            summary: if f.is_empty() { "all checks pass".into() } else { format!("failed: {}", f.join("; ")) },
        })
    } else {
        gate(config, &validation).and_then(|_| dispatch(config, opts, &mut b))
    };
    b.manifest.wall_time_s = Some(started.elapsed().as_secs_f64());
    match result {
        Ok(v) => {
            b.manifest.status = RunStatus::Complete;
            b.manifest.passed = Some(v.passed);
            b.manifest.summary = Some(v.summary.clone());
            b.save_manifest()?;
            Ok(Outcome { passed: v.passed, summary: v.summary, out_dir: dir, manifest: b.manifest })
        }
        Err(e) => {
            b.manifest.status = RunStatus::Failed;
            b.manifest.summary = Some(e.to_string());
            b.save_manifest()?;
            Err(e)
        }
    }
}

fn gate(config: &ExperimentConfig, v: &ValidationReport) -> Result<()> {
    if config.kind == ExperimentKind::Kernels || config.override_regime || v.passed {
        return Ok(());
    }
    Err(Error::RegimeViolation(v.failures().join("; ")))
}

fn dispatch(config: &ExperimentConfig, opts: &RunOptions, b: &mut Bundle) -> Result<Verdict> {
    match config.kind {
        ExperimentKind::Synth => synth(config, b),
        ExperimentKind::Propagate => propagate(config, b),
        ExperimentKind::Roundtrip => roundtrip(config, b),
        ExperimentKind::Kernels => kernels(config, b),
        ExperimentKind::Correlators => correlators(config, opts, b),
        ExperimentKind::PdfTable => pdf_table(config, b),
        ExperimentKind::BetaSweep => beta_sweep(config, opts, b),
        ExperimentKind::Validate => unreachable!("handled by run_experiment"),
    }
}

fn field_csv(f: &ComplexField) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    f.write_csv(&mut v)?;
    Ok(v)
}

/// ∫|Σ C_k g_k|² / T in closed form, overlaps included.
fn expected_mean_power(code: &CodeWord) -> f64 {
    let spec = code.spec();
    let nt2 = spec.sparsity().powi(2);
    let mut e = 0.0;
    for (k, a) in code.iter() {
        for (l, c) in code.iter() {
            let d = (k - l) as f64;
            e += (a * c.conj()).re * (-d * d * nt2 / 4.0).exp();
        }
    }
    e * spec.slot_duration / spec.total_duration()
}

#[derive(Serialize)]
struct SynthSummary {
    samples: usize,
    dt_ps: f64,
    slots: usize,
    mean_power_w: f64,
    expected_mean_power_w: f64,
    relative_error: f64,
}

fn synth(config: &ExperimentConfig, b: &mut Bundle) -> Result<Verdict> {
    let code = config.code_word()?;
    let grid = config.time_grid()?;
    let x = synthesize_signal(&code, &grid)?;
    b.write("code.json", code.to_json()?.as_bytes())?;
    b.write("field.csv", &field_csv(&x)?)?;
    let measured = x.energy() / code.spec().total_duration();
    let expected = expected_mean_power(&code);
    let s = SynthSummary {
        samples: grid.samples,
        dt_ps: grid.dt,
        slots: code.spec().slot_count(),
        mean_power_w: measured,
        expected_mean_power_w: expected,
        relative_error: (measured / expected - 1.0).abs(),
    };
    b.json("summary.json", &s)?;
    Ok(Verdict {
        passed: s.relative_error <= SYNTH_POWER_TOLERANCE,
        summary: format!("{} samples, mean power {:.9e} W (relative error {:.1e})", s.samples, measured, s.relative_error),
    })
}

#[derive(Serialize)]
struct PropagateSummary {
    steps: usize,
    noisy: bool,
    energy_in: f64,
    energy_out: f64,
    expected_noise_energy: f64,
    snapshots: Vec<(f64, f64)>,
}

fn propagate(config: &ExperimentConfig, b: &mut Bundle) -> Result<Verdict> {
    let setup = config.mc_setup()?;
    let x = synthesize_signal(&setup.code, &setup.grid)?;
    let p = Propagator::new(setup.grid, setup.params, setup.steps)?;
    let noise = NoiseSpec::new(setup.params.q, config.seed, p.step_length(), setup.grid)?;
    let noisy = setup.params.q > 0.0;
    let r = p.forward(&x, noisy.then_some((&noise, 0)), config.grid.snapshot_stride)?;
    b.write("input.csv", &field_csv(&x)?)?;
    b.write("output.csv", &field_csv(&r.output)?)?;
    let mut snaps = Vec::new();
    for (i, (zeta, f)) in r.snapshots.iter().enumerate() {
        let mut buf = Vec::new();
        f.write_binary(&mut buf)?;
        b.write(&format!("snapshot_{i:04}.bin"), &buf)?;
        snaps.push((*zeta, f.energy()));
    }
    let s = PropagateSummary {
        steps: r.steps,
        noisy,
        energy_in: x.energy(),
        energy_out: r.output.energy(),
        expected_noise_energy: setup.params.q * setup.params.length * setup.grid.duration() / setup.grid.dt,
        snapshots: snaps,
    };
    b.json("summary.json", &s)?;
    let passed = r.output.is_finite();
    Ok(Verdict { passed, summary: format!("energy {:.6e} -> {:.6e}", s.energy_in, s.energy_out) })
}

#[derive(Serialize)]
struct RoundtripSummary {
    steps: usize,
    residual: f64,
    tolerance: f64,
}

fn roundtrip(config: &ExperimentConfig, b: &mut Bundle) -> Result<Verdict> {
    let setup = config.mc_setup()?;
    let x = synthesize_signal(&setup.code, &setup.grid)?;
    let residual = roundtrip_residual(&x, &setup.params, setup.steps)?;
    let s = RoundtripSummary { steps: setup.steps, residual, tolerance: ROUNDTRIP_TOLERANCE };
    b.json("roundtrip.json", &s)?;
    Ok(Verdict { passed: residual <= ROUNDTRIP_TOLERANCE, summary: format!("round-trip residual {residual:.3e}") })
}

#[derive(Serialize)]
struct KernelRouteSummary {
    form: KernelForm,
    points: usize,
    max_route_difference: f64,
    tolerance: f64,
}

fn kernels(config: &ExperimentConfig, b: &mut Bundle) -> Result<Verdict> {
    let t = config.kernel_table()?;
    let point = t.point();
    let bl = config.channel_params()?.beta_length();
    let form = config.analysis.kernel_form;
    let mut table = Vec::new();
    write_kernel_table(&mut table, &point, bl, &t.zeta, &t.xi, &t.omega_per_ps, form)?;
    b.write("kernel_table.csv", &table)?;
    let poly = RecoveryPolynomial::with_form(&point, bl, form);
    let mut worst = 0.0f64;
    let mut n = 0;
    for &xi in &t.xi {
        for &w in &t.omega_per_ps {
            let a = recovery_kernels_with(xi, w, &point, bl, form);
            let c = linearized_recovery_kernels_with(xi, w, &point, bl, form);
            let p = poly.evaluate(xi, w);
            let scale = 1.0 + a.eta.norm() + a.eta_bar.norm();
            worst = worst.max(a.max_abs_diff(&c) / scale).max(a.max_abs_diff(&p) / scale);
            n += 1;
        }
    }
    let s = KernelRouteSummary { form, points: n, max_route_difference: worst, tolerance: KERNEL_ROUTE_TOLERANCE };
    b.json("kernel_routes.json", &s)?;
    Ok(Verdict {
        passed: worst <= KERNEL_ROUTE_TOLERANCE,
        summary: format!("{n} points, largest route difference {worst:.2e}"),
    })
}

fn samples_csv(slots: &[i64], runs: &[crate::montecarlo::RunOutput]) -> Vec<u8> {
    let mut s = String::from("run,k,re,im,fluctuation_ratio\n");
    for r in runs {
        for (k, v) in slots.iter().zip(&r.delta_c) {
            s.push_str(&format!("{},{},{:e},{:e},{:e}\n", r.run, k, v.re, v.im, r.fluctuation_ratio));
        }
    }
    s.into_bytes()
}

fn correlators(config: &ExperimentConfig, opts: &RunOptions, b: &mut Bundle) -> Result<Verdict> {
    let setup = config.mc_setup()?;
    let prediction = predict_correlators(&setup.code, &setup.params, setup.grid.dt);
    let identity = setup.filter.is_identity();
    let pipeline = McPipeline::new(setup)?;
    let samples = simulate(&pipeline, config.seed, config.runs, opts.workers)?;
    let centres: Vec<C64> = prediction.slots.iter().map(|s| s.mean).collect();
    let estimate = match config.analysis.centering {
        Centering::SampleMean => samples.estimate(),
        Centering::Analytic => samples.estimate_about(Some(&centres)),
    };
    let sel = CompareSelection { abs2: true, square: true, mean: identity };
    let table = compare(&prediction, &estimate, sel);
    b.json("prediction.json", &prediction)?;
    b.json("estimate.json", &estimate)?;
    b.write("samples.csv", &samples_csv(&samples.slots, &samples.runs))?;
    write_z_table(b, &table)?;
    if !estimate.flagged_runs.is_empty() {
        log::warn!("{} runs left the linearized regime", estimate.flagged_runs.len());
    }
    Ok(Verdict {
        passed: table.pass,
        summary: format!("{} runs, max |z| = {:.2} over {} rows", config.runs, table.max_abs_z, table.rows.len()),
    })
}

fn write_z_table(b: &mut Bundle, table: &ZTable) -> Result<()> {
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    b.write("z_table.csv", &csv)?;
    b.json("z_table.json", table)
}

fn pdf_table(config: &ExperimentConfig, b: &mut Bundle) -> Result<Verdict> {
    let setup = config.mc_setup()?;
    let pc = config.pdf.unwrap_or_default();
    if pc.quadrature_points < 3 || pc.table_points < 2 {
        return Err(Error::ConfigInvalid("pdf quadrature_points >= 3 and table_points >= 2 required".into()));
    }
    let mut reports = Vec::new();
    for (k, _) in setup.code.iter() {
        let p = ConditionalPdfParams::for_slot(&setup.code, k, &setup.params, setup.grid.dt);
        reports.push((k, pdf_moment_consistency(&p, pc.quadrature_points, pc.half_width_sigma)));
        let m = p.moments;
        let s = p.noise_per_slot;
        let half = 4.0 * (s / 2.0 * (1.0 + 4.0 * m.n6 * p.mu * p.mu / 3.0)).sqrt();
        let axis: Vec<f64> =
            (0..pc.table_points).map(|i| -half + 2.0 * half * i as f64 / (pc.table_points - 1) as f64).collect();
        let mut csv = Vec::new();
        write_pdf_table(&mut csv, &p, &axis, &axis)?;
        b.write(&format!("pdf_slot_{k}.csv"), &csv)?;
    }
    let worst = reports.iter().map(|(_, r)| r.max_error).fold(0.0, f64::max);
    b.json("pdf_consistency.json", &reports)?;
    Ok(Verdict {
        passed: worst <= PDF_TOLERANCE,
        summary: format!("{} slots, largest moment error {worst:.2e}", reports.len()),
    })
}

#[derive(Serialize)]
struct SweepRow {
    beta_ps2_per_km: f64,
    beta_tilde: f64,
    k: i64,
    predicted_difference: f64,
    observed_difference: f64,
    paired_se: f64,
    unpaired_se: f64,
    z: f64,
}

fn beta_sweep(config: &ExperimentConfig, opts: &RunOptions, b: &mut Bundle) -> Result<Verdict> {
    let sweep = config.sweep_values()?.clone();
    let base = config.mc_setup()?;
    let with_beta = |beta: f64| McSetup { params: crate::nlse::ChannelParams { beta, ..base.params }, ..base.clone() };
    let predict = |s: &McSetup| predict_correlators(&s.code, &s.params, s.grid.dt);
    for &beta in &sweep.beta_ps2_per_km {
        let s = with_beta(beta);
        let h = validate_scale_hierarchy(&s.params, s.code.spec(), &s.grid, &s.filter, &config.analysis.regime);
        if !h.passed() && !config.override_regime {
            let names: Vec<&str> = h.failures().iter().map(|c| c.name.as_str()).collect();
            return Err(Error::RegimeViolation(format!("beta = {beta}: {}", names.join(", "))));
        }
    }
    let s0 = with_beta(sweep.beta_ps2_per_km[0]);
    let p0 = predict(&s0);
    let baseline = simulate(&McPipeline::new(s0)?, config.seed, config.runs, opts.workers)?;
    let mut rows = Vec::new();
    let mut semi = String::from("beta_ps2_per_km,beta_tilde,form,relative_rms,field_relative_rms\n");
    for &beta in &sweep.beta_ps2_per_km {
        let s = with_beta(beta);
        let p = predict(&s);
        let pipeline = McPipeline::new(s)?;
        let samples = simulate(&pipeline, config.seed, config.runs, opts.workers)?;
        for ((d, a), z0) in paired_difference(&baseline, &samples)?.iter().zip(&p.slots).zip(&p0.slots) {
            let predicted = a.abs2 - z0.abs2;
            rows.push(SweepRow {
                beta_ps2_per_km: beta,
                beta_tilde: p.beta_tilde,
                k: d.k,
                predicted_difference: predicted,
                observed_difference: d.abs2_difference,
                paired_se: d.abs2_difference_se,
                unpaired_se: d.unpaired_se,
                z: crate::stats::z_score(d.abs2_difference, predicted, d.abs2_difference_se),
            });
        }
        if sweep.semi_analytic_runs > 0 {
            for form in [KernelForm::Reference, KernelForm::Corrected] {
                let r = semi_analytic_comparison(&pipeline, config.seed, sweep.semi_analytic_runs, opts.workers, form)?;
                let name = serde_json::to_value(form)?;
                semi.push_str(&format!(
                    "{beta:e},{:e},{},{:e},{:e}\n",
                    p.beta_tilde,
                    name.as_str().unwrap_or_default(),
                    r.relative_rms,
                    r.field_relative_rms
                ));
            }
        }
    }
    let mut csv = String::from(
        "beta_ps2_per_km,beta_tilde,k,predicted_difference,observed_difference,paired_se,unpaired_se,z\n",
    );
    // The baseline rows are identically zero and carry no information.
    let informative: Vec<&SweepRow> = rows.iter().filter(|r| r.beta_ps2_per_km != sweep.beta_ps2_per_km[0]).collect();
    for r in &informative {
        csv.push_str(&format!(
            "{:e},{:e},{},{:e},{:e},{:e},{:e},{:.4}\n",
            r.beta_ps2_per_km, r.beta_tilde, r.k, r.predicted_difference, r.observed_difference, r.paired_se, r.unpaired_se, r.z
        ));
    }
    b.write("sweep.csv", csv.as_bytes())?;
    if sweep.semi_analytic_runs > 0 {
        b.write("semi_analytic.csv", semi.as_bytes())?;
    }
    let worst = informative.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    Ok(Verdict {
        passed: worst <= Z_THRESHOLD,
        summary: format!("{} paired comparisons, max |z| = {worst:.2}", informative.len()),
    })
}

/// Reads a manifest back from an output directory.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
}
