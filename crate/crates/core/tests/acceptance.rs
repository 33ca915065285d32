//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown.
//! The process fails if any criterion fails that is not listed in
//! [`KNOWN_DEVIATIONS`]; listed ones are still evaluated and printed.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use kerrlab::detector::{Filter, FilterKind, FilterSpec};
use kerrlab::kernels::{linearized_recovery_kernels, recovery_kernels, RecoveryPolynomial};
use kerrlab::montecarlo::{paired_difference, semi_analytic_comparison, simulate, McPipeline, McSetup};
use kerrlab::nlse::{perturbed_solution, roundtrip_residual, Propagator};
use kerrlab::noise::{averaged_noise_covariance, spectral_filter_gain, NoiseSpec};
use kerrlab::signal::{build_profile, pulse_moment_for_sparsity, synthesize_signal, xi_squared_for_sparsity};
use kerrlab::stats::{compare, pdf_moment_consistency, predict_correlators, z_score, CompareSelection, Z_THRESHOLD};
use kerrlab::{ChannelParams, CodeWord, ConditionalPdfParams, KernelForm, PulseTrainSpec, Spectral, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances.
const Z_MAX: f64 = Z_THRESHOLD;
const PDF_MAX: f64 = 1e-6;
const MOMENT_REL_MAX: f64 = 1e-10;
const ROUNDTRIP_MAX: f64 = 1e-8;
const ORDER_TARGET: f64 = 2.0;
const ORDER_TOL: f64 = 0.1;
const COMPOSITION_MAX: f64 = 1e-8;
const BETA_ORDER_BAND: (f64, f64) = (1.6, 2.4);

// Frozen semi-analytic error envelope c₀ + c₁β̃² + c₂/√SNR. Fitted once on
// seed 1 (16 runs per point, both kernel forms, non-negative relative least
// squares) and inflated by 1.25 × the worst calibration ratio. The acceptance
// run uses seed 2.
const ENVELOPE_C0: f64 = 1.5e-2;
const ENVELOPE_C1: f64 = 270.0;
const ENVELOPE_C2: f64 = 35.0;
const ENVELOPE_SEED: u64 = 2;

/// Criteria expected to fail, with the reason.
const KNOWN_DEVIATIONS: &[(usize, &str)] = &[(
    7,
    "reference M(2.1) omits i(zeta-xi)^2 betaL[mu' phi0' + mu'^2(2zeta+xi)/3]; its recovery error is first order in beta",
)];

type Criterion = fn(&mut Vec<Line>);

struct Line {
    n: usize,
    pass: bool,
}

fn report(lines: &mut Vec<Line>, n: usize, title: &str, pass: bool, detail: String, started: Instant) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {tag} {title}: {detail} ({:.1}s)", started.elapsed().as_secs_f64());
    lines.push(Line { n, pass });
}

fn train(half_count: usize) -> PulseTrainSpec {
    PulseTrainSpec { half_count, ..PulseTrainSpec::default() }
}

/// Amplitudes cycle 0.75..1.2 and phases step by π/2.
fn cycling_code(spec: &PulseTrainSpec) -> CodeWord {
    let n = spec.slot_count();
    let amps = [0.75, 0.9, 1.0, 1.1, 1.2];
    let r: Vec<f64> = (0..n).map(|i| amps[i % amps.len()]).collect();
    let p: Vec<f64> = (0..n).map(|i| (i % 4) as f64 * PI / 2.0).collect();
    CodeWord::from_symbols(spec, &r, &p).unwrap()
}

fn mc_setup(code: CodeWord, oversample: usize, bt: f64, snr: f64, filter: FilterSpec, steps: usize) -> McSetup {
    let grid = code.spec().grid(oversample).unwrap();
    let params = ChannelParams::from_dimensionless(code.spec(), 1.0, bt, 1.0, snr, grid.dt);
    McSetup { code, grid, params, filter, steps, smoothing_width: 0.125 }
}

fn criterion_1(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let spec = train(4);
    let code = cycling_code(&spec);
    let setup = mc_setup(code.clone(), 32, 0.0, 1e4, FilterSpec::sinc(0.125), 256);
    let pipeline = McPipeline::new(setup.clone()).unwrap();
    let est = simulate(&pipeline, 1, 2000, 0).unwrap().estimate();
    let pred = predict_correlators(&code, &setup.params, setup.grid.dt);
    let table = compare(&pred, &est, CompareSelection { abs2: true, square: true, mean: false });

    // Noise draws are keyed per step, so doubling the steps changes the
    // realizations; the refined run is checked statistically instead.
    let fine = McPipeline::new(McSetup { steps: 512, ..setup }).unwrap();
    let fine_est = simulate(&fine, 1, 1000, 0).unwrap().estimate();
    let refine = compare(&pred, &fine_est, CompareSelection { abs2: true, square: true, mean: false }).max_abs_z;
    report(
        lines,
        1,
        "dispersionless correlators",
        table.max_abs_z <= Z_MAX && refine <= Z_MAX,
        format!(
            "9 slots, 2000 runs, max|z| = {:.2} over {} rows (<= {Z_MAX}); 512 steps over 1000 runs max|z| = {:.2}; flagged runs {}",
            table.max_abs_z,
            table.rows.len(),
            refine,
            est.flagged_runs.len()
        ),
        t,
    );
}

fn criterion_2(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let spec = train(1);
    let code = CodeWord::from_symbols(&spec, &[1.2; 3], &[0.0; 3]).unwrap();
    let at = |bt: f64| mc_setup(code.clone(), 32, bt, 1e4, FilterSpec::sinc(0.1), 256);
    let (s0, s1) = (at(0.0), at(0.05));
    let p0 = predict_correlators(&code, &s0.params, s0.grid.dt);
    let p1 = predict_correlators(&code, &s1.params, s1.grid.dt);
    let a = simulate(&McPipeline::new(s0).unwrap(), 7, 2000, 0).unwrap();
    let b = simulate(&McPipeline::new(s1).unwrap(), 7, 2000, 0).unwrap();
    let diff = paired_difference(&a, &b).unwrap();
    let mut worst = 0.0f64;
    let mut ratio = 0.0;
    for ((d, x), y) in diff.iter().zip(&p1.slots).zip(&p0.slots) {
        worst = worst.max(z_score(d.abs2_difference, x.abs2 - y.abs2, d.abs2_difference_se).abs());
        ratio += d.unpaired_se / d.abs2_difference_se / diff.len() as f64;
    }
    report(
        lines,
        2,
        "dispersion correction to <|dC|^2>",
        worst <= Z_MAX,
        format!(
            "beta~ 0 vs 0.05, 3 slots, 2000 paired runs, predicted shift {:.3e}, max|z| = {worst:.2}; paired SE {ratio:.1}x below unpaired",
            p1.slots[1].abs2_beta_term
        ),
        t,
    );
}

fn criterion_3(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let spec = train(4);
    let code = cycling_code(&spec);
    let setup = mc_setup(code.clone(), 8, 0.0, 1e3, FilterSpec::identity(), 256);
    let pipeline = McPipeline::new(setup.clone()).unwrap();
    let est = simulate(&pipeline, 3, 4000, 0).unwrap().estimate();
    let pred = predict_correlators(&code, &setup.params, setup.grid.dt);
    let table = compare(&pred, &est, CompareSelection { abs2: false, square: false, mean: true });
    report(
        lines,
        3,
        "mean shift at W'/W = 8",
        table.max_abs_z <= Z_MAX,
        format!("9 slots, 4000 runs, no detector, max|z| = {:.2} over {} rows", table.max_abs_z, table.rows.len()),
        t,
    );
}

fn criterion_4(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for mu in [0.0, 0.5, 1.0, 2.0] {
        let p = ConditionalPdfParams::new(mu, 0.7, 5.0, 1e-4, 0.015);
        let r = pdf_moment_consistency(&p, 801, 12.0);
        worst = worst.max(r.max_error);
    }
    report(
        lines,
        4,
        "density normalization and moments",
        worst <= PDF_MAX,
        format!("mu in {{0, 0.5, 1, 2}}, largest error {worst:.2e} (<= {PDF_MAX:e})"),
        t,
    );
}

/// n_s by the trapezoid rule on ±40δt, which is spectrally accurate for
/// Gaussians.
fn moment_by_quadrature(s: u32, nt: f64) -> f64 {
    let (dt, t0) = (1.0, nt);
    let h = 1e-3;
    let m = (40.0 / h) as i64;
    let amp = (t0 / (PI.sqrt() * dt)).sqrt();
    let sum: f64 = (-m..=m).map(|i| (amp * (-0.5 * (i as f64 * h).powi(2)).exp()).powi(s as i32)).sum();
    sum * h / t0
}

fn criterion_5(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut gap = f64::INFINITY;
    for nt in [3.0, 5.0, 8.0] {
        for s in [2, 4, 6, 8] {
            let c = pulse_moment_for_sparsity(s, nt).unwrap();
            worst = worst.max((c / moment_by_quadrature(s, nt) - 1.0).abs());
        }
        gap = gap.min(xi_squared_for_sparsity(nt) - pulse_moment_for_sparsity(6, nt).unwrap());
    }
    report(
        lines,
        5,
        "pulse moments",
        worst <= MOMENT_REL_MAX && gap > 0.0,
        format!("N_t in {{3, 5, 8}}, worst relative error {worst:.1e}; min(xi^2 - n6) = {gap:.3}"),
        t,
    );
}

fn criterion_6(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let spec = train(4);
    let code = cycling_code(&spec);
    let grid = spec.grid(32).unwrap();
    let x = synthesize_signal(&code, &grid).unwrap();
    let params = ChannelParams::from_dimensionless(&spec, 1.0, 0.015, 1.0, f64::INFINITY, grid.dt);
    let residual = roundtrip_residual(&x, &params, 256).unwrap();

    // Step convergence against a 4096-step reference.
    let small = train(1);
    let c3 = cycling_code(&small);
    let g3 = small.grid(16).unwrap();
    let x3 = synthesize_signal(&c3, &g3).unwrap();
    let p3 = ChannelParams::from_dimensionless(&small, 1.0, 0.05, 1.0, f64::INFINITY, g3.dt);
    let run = |steps: usize| Propagator::new(g3, p3, steps).unwrap().forward(&x3, None, None).unwrap().output;
    let reference = run(4096);
    let errs: Vec<f64> = [64, 128, 256].iter().map(|&n| run(n).relative_distance(&reference)).collect();
    let orders = [(errs[0] / errs[1]).log2(), (errs[1] / errs[2]).log2()];

    // Perturbative background: smooth phase so that O(β²) dominates.
    let profile = build_profile(&c3, &g3, 0.5, 1.0).unwrap();
    let xs = profile.to_field();
    let bts = [0.002, 0.004, 0.008];
    let res: Vec<f64> = bts
        .iter()
        .map(|&bt| {
            let p = ChannelParams::from_dimensionless(&small, 1.0, bt, 1.0, f64::INFINITY, g3.dt);
            let y = Propagator::new(g3, p, 2048).unwrap().forward(&xs, None, None).unwrap().output;
            y.relative_distance(&perturbed_solution(&profile, 1.0, &p))
        })
        .collect();
    let slopes = [(res[1] / res[0]).log2(), (res[2] / res[1]).log2()];
    let ok_order = orders.iter().all(|o| (o - ORDER_TARGET).abs() <= ORDER_TOL);
    let ok_phi = slopes.iter().all(|o| (o - ORDER_TARGET).abs() <= ORDER_TOL);
    report(
        lines,
        6,
        "solver fidelity",
        residual <= ROUNDTRIP_MAX && ok_order && ok_phi,
        format!(
            "round trip {residual:.1e} (<= {ROUNDTRIP_MAX:e}); step order {:.3}, {:.3}; first-order background residual slope {:.3}, {:.3} (target {ORDER_TARGET} +- {ORDER_TOL})",
            orders[0], orders[1], slopes[0], slopes[1]
        ),
        t,
    );
}

fn composition_check() -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let spec = train(1);
    let grid = spec.grid(16).unwrap();
    let amps = [0.5, 1.0, 1.5];
    let mut worst = 0.0f64;
    let mut points = 0;
    for _ in 0..20 {
        let r: Vec<f64> = (0..3).map(|_| amps[rng.random_range(0..3)]).collect();
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(0..4) as f64 * PI / 2.0).collect();
        let code = CodeWord::from_symbols(&spec, &r, &p).unwrap();
        let gl = rng.random_range(0.2..1.5);
        let bl = rng.random_range(-0.05..0.05);
        let profile = build_profile(&code, &grid, 0.125, gl).unwrap();
        let centre = grid.samples / 2;
        for i in (centre - 160..centre + 160).step_by(8) {
            let pt = profile.point(i);
            let poly = RecoveryPolynomial::new(&pt, bl);
            for xi in [0.0, 0.3, 0.6, 1.0] {
                for w in [-6.0, -1.5, 0.0, 2.0, 6.0] {
                    let a = recovery_kernels(xi, w, &pt, bl);
                    let scale = 1.0 + a.eta.norm() + a.eta_bar.norm();
                    worst = worst
                        .max(a.max_abs_diff(&linearized_recovery_kernels(xi, w, &pt, bl)) / scale)
                        .max(a.max_abs_diff(&poly.evaluate(xi, w)) / scale);
                    points += 1;
                }
            }
        }
    }
    (worst, points)
}

fn three_slot(bt: f64, snr: f64, filter: FilterSpec, oversample: usize) -> McPipeline {
    let spec = train(1);
    let code = CodeWord::from_symbols(&spec, &[1.0, 0.8, 1.2], &[0.0, PI / 2.0, PI]).unwrap();
    McPipeline::new(mc_setup(code, oversample, bt, snr, filter, 256)).unwrap()
}

/// Least-squares slope of log(√(e² − e₀²)) against log β̃, with e₀ the β = 0
/// floor of the same noise.
fn beta_order(form: KernelForm) -> f64 {
    let bts: [f64; 3] = [0.005, 0.01, 0.02];
    let err = |bt: f64| {
        let p = three_slot(bt, 1e12, FilterSpec::identity(), 32);
        semi_analytic_comparison(&p, ENVELOPE_SEED, 16, 0, form).unwrap().relative_rms
    };
    let floor = err(0.0);
    let pts: Vec<(f64, f64)> =
        bts.iter().map(|&b| (b.ln(), 0.5 * (err(b).powi(2) - floor * floor).max(1e-300).ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_7(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let (comp, points) = composition_check();
    let mut envelope_ratio = 0.0f64;
    for snr in [1e4, 1e5, 1e6] {
        for bt in [0.0, 0.005, 0.01, 0.02] {
            let p = three_slot(bt, snr, FilterSpec::sinc(0.1), 40);
            let e = semi_analytic_comparison(&p, ENVELOPE_SEED, 16, 0, KernelForm::Reference).unwrap().relative_rms;
            envelope_ratio = envelope_ratio.max(e / (ENVELOPE_C0 + ENVELOPE_C1 * bt * bt + ENVELOPE_C2 / snr.sqrt()));
        }
    }
    let order = beta_order(KernelForm::Reference);
    let corrected = beta_order(KernelForm::Corrected);
    let in_band = |s: f64| (BETA_ORDER_BAND.0..=BETA_ORDER_BAND.1).contains(&s);
    report(
        lines,
        7,
        "kernel consistency",
        comp <= COMPOSITION_MAX && envelope_ratio <= 1.0 && in_band(order),
        format!(
            "composition {comp:.1e} over {points} points (<= {COMPOSITION_MAX:e}); envelope use {envelope_ratio:.2} (<= 1); \
beta order of recovery error {order:.2} (band {:?}); corrected kernels give {corrected:.2}",
            BETA_ORDER_BAND
        ),
        t,
    );
}

fn criterion_8(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let spec = train(1);
    let grid = kerrlab::TimeGrid::centered(256, 1.0 / 16.0).unwrap();
    let (q, dz) = (1.0, 0.01);
    let noise = NoiseSpec::new(q, 8, dz, grid).unwrap();
    let realizations = 10_000;
    let tau = 0.25;
    let boxcar = Filter::new(FilterSpec { tau_a: tau, kind: FilterKind::TimeBoxcar }, &grid).unwrap();
    let sinc = Filter::new(FilterSpec::sinc(tau), &grid).unwrap();
    let sp = Spectral::new(grid);
    let m = (2.0 * tau / grid.dt).round() as usize;
    let lags: Vec<usize> = (0..=m + 2).collect();
    // Off the sinc nulls at multiples of 32, where round-off dominates.
    let bins: Vec<usize> = vec![0, 3, 7, 11, 16, 24, 40, 48, 56, 72, 100, 127];
    let n = grid.samples;
    let mut cov = vec![Vec::with_capacity(realizations); lags.len()];
    let mut pow = vec![Vec::with_capacity(realizations); bins.len()];
    let mut eta = vec![C64::new(0.0, 0.0); n];
    let mut scratch = sp.scratch();
    for r in 0..realizations as u64 {
        noise.fill_step(r, 0, &mut eta);
        let mut a = eta.clone();
        boxcar.apply(&mut a, &mut scratch);
        for (j, &l) in lags.iter().enumerate() {
            let c: f64 = (0..n).map(|i| (a[(i + l) % n] * a[i].conj()).re).sum::<f64>() / n as f64;
            cov[j].push(c * dz);
        }
        let mut b = eta.clone();
        sinc.apply(&mut b, &mut scratch);
        sp.forward(&mut b, &mut scratch);
        for (j, &k) in bins.iter().enumerate() {
            pow[j].push(b[k].norm_sqr());
        }
    }
    let mut worst_cov = 0.0f64;
    for (j, &l) in lags.iter().enumerate() {
        let (mean, se) = kerrlab::montecarlo::mean_and_se(&cov[j]);
        worst_cov = worst_cov.max(z_score(mean, q * averaged_noise_covariance(l as f64 * grid.dt, tau), se).abs());
    }
    let white = noise.sample_variance() * n as f64;
    let mut worst_gain = 0.0f64;
    for (j, &k) in bins.iter().enumerate() {
        let (mean, se) = kerrlab::montecarlo::mean_and_se(&pow[j]);
        worst_gain = worst_gain.max(z_score(mean, white * spectral_filter_gain(sp.omega()[k], tau), se).abs());
    }

    // Energy growth of noisy propagation, signal present.
    let code = cycling_code(&spec);
    let g = spec.grid(16).unwrap();
    let x = synthesize_signal(&code, &g).unwrap();
    let params = ChannelParams::from_dimensionless(&spec, 1.0, 0.0, 1.0, 1e3, g.dt);
    let prop = Propagator::new(g, params, 128).unwrap();
    let ns = NoiseSpec::new(params.q, 9, prop.step_length(), g).unwrap();
    let growth: Vec<f64> = (0..1000)
        .map(|r| prop.forward(&x, Some((&ns, r)), None).unwrap().output.energy() - x.energy())
        .collect();
    let (gm, gse) = kerrlab::montecarlo::mean_and_se(&growth);
    let expected = params.q * params.length * g.duration() / g.dt;
    let zg = z_score(gm, expected, gse);
    report(
        lines,
        8,
        "noise statistics",
        worst_cov <= Z_MAX && worst_gain <= Z_MAX && zg.abs() <= Z_MAX,
        format!(
            "{realizations} realizations: triangle covariance max|z| = {worst_cov:.2} over {} lags, sinc^2 gain max|z| = {worst_gain:.2} over {} bins; energy growth {gm:.4e} vs {expected:.4e} (z = {zg:.2})",
            lags.len(),
            bins.len()
        ),
        t,
    );
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut lines = Vec::new();
    let all: [(usize, Criterion); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    for (n, f) in all {
        if wanted(n) {
            f(&mut lines);
        }
    }
    let mut unexpected = 0;
    for l in &lines {
        match (l.pass, KNOWN_DEVIATIONS.iter().find(|(n, _)| *n == l.n)) {
            (false, Some((_, why))) => println!("criterion {} is a known deviation: {why}", l.n),
            (false, None) => unexpected += 1,
            (true, Some(_)) => println!("criterion {} passed although listed as a known deviation", l.n),
            (true, None) => {}
        }
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} criteria pass, {unexpected} unexpected failures", lines.len());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
