use std::f64::consts::PI;

use kerrlab::detector::{Filter, FilterKind, FilterSpec};
use kerrlab::montecarlo::{simulate, split_half_max_z, McPipeline, McSetup};
use kerrlab::nlse::Propagator;
use kerrlab::signal::{project_coefficients, synthesize_signal};
use kerrlab::{ChannelParams, CodeWord, PulseTrainSpec, Spectral, TimeGrid, C64};
use proptest::prelude::*;

fn spec() -> PulseTrainSpec {
    PulseTrainSpec { half_count: 2, ..PulseTrainSpec::default() }
}

fn coefficients() -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((0.2f64..1.5, 0.0f64..2.0 * PI).prop_map(|(r, p)| C64::from_polar(r, p)), 5)
}

fn samples(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| C64::new(a, b)), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synthesis_and_projection_are_linear(a in coefficients(), b in coefficients(), s in -2.0f64..2.0) {
        let sp = spec();
        let grid = sp.grid(16).unwrap();
        let sum: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + y * s).collect();
        let proj = |c: Vec<C64>| {
            let cw = CodeWord::from_coefficients(&sp, c).unwrap();
            project_coefficients(&synthesize_signal(&cw, &grid).unwrap(), &sp).coefficients().to_vec()
        };
        let (pa, pb, ps) = (proj(a), proj(b), proj(sum));
        for i in 0..ps.len() {
            prop_assert!((ps[i] - pa[i] - pb[i] * s).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_recovers_well_separated_symbols(c in coefficients()) {
        let sp = spec();
        let cw = CodeWord::from_coefficients(&sp, c.clone()).unwrap();
        let back = project_coefficients(&synthesize_signal(&cw, &sp.grid(32).unwrap()).unwrap(), &sp);
        // Neighbouring Gaussians 5 widths apart overlap at the e^{-25/4} level.
        for (x, y) in back.coefficients().iter().zip(&c) {
            prop_assert!((x - y).norm() < 1e-2 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn fft_round_trip_and_parseval(v in samples(64)) {
        let grid = TimeGrid::centered(64, 0.1).unwrap();
        let sp = Spectral::new(grid);
        let mut s = sp.scratch();
        let mut w = v.clone();
        sp.forward(&mut w, &mut s);
        let time: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        let freq: f64 = w.iter().map(|x| x.norm_sqr()).sum::<f64>() / 64.0;
        prop_assert!((time - freq).abs() <= 1e-12 * (1.0 + time));
        sp.inverse(&mut w, &mut s);
        for (x, y) in v.iter().zip(&w) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn filters_are_linear(a in samples(128), b in samples(128), s in -3.0f64..3.0, k in 0usize..4) {
        let grid = TimeGrid::centered(128, 0.05).unwrap();
        let kind = [FilterKind::Identity, FilterKind::Sinc, FilterKind::BrickWall, FilterKind::TimeBoxcar][k];
        let f = Filter::new(FilterSpec { tau_a: 0.2, kind }, &grid).unwrap();
        let mut scratch = f.scratch();
        let mut sum: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + y * s).collect();
        let (mut fa, mut fb) = (a, b);
        f.apply(&mut fa, &mut scratch);
        f.apply(&mut fb, &mut scratch);
        f.apply(&mut sum, &mut scratch);
        for i in 0..sum.len() {
            prop_assert!((sum[i] - fa[i] - fb[i] * s).norm() < 1e-11);
        }
    }

    #[test]
    fn noiseless_propagation_conserves_energy(c in coefficients(), bt in 0.0f64..0.1) {
        let sp = spec();
        let grid = sp.grid(16).unwrap();
        let x = synthesize_signal(&CodeWord::from_coefficients(&sp, c).unwrap(), &grid).unwrap();
        let params = ChannelParams::from_dimensionless(&sp, 1.0, bt, 1.0, f64::INFINITY, grid.dt);
        let y = Propagator::new(grid, params, 64).unwrap().forward(&x, None, None).unwrap().output;
        prop_assert!((y.energy() / x.energy() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn split_halves_agree_within_noise() {
    let sp = PulseTrainSpec { half_count: 1, ..PulseTrainSpec::default() };
    let code = CodeWord::from_symbols(&sp, &[1.0, 0.8, 1.2], &[0.0, PI / 2.0, PI]).unwrap();
    let grid = sp.grid(16).unwrap();
    let params = ChannelParams::from_dimensionless(&sp, 1.0, 0.0, 1.0, 1e4, grid.dt);
    let setup = McSetup { code, grid, params, filter: FilterSpec::sinc(0.25), steps: 128, smoothing_width: 0.125 };
    let samples = simulate(&McPipeline::new(setup).unwrap(), 3, 400, 0).unwrap();
    let (a, b) = samples.split_half();
    assert!(split_half_max_z(&a, &b) < 4.0);
}
