use std::sync::Arc;

use nagumo_core::exit_stats::{run_ensemble, ExitConfig};
use nagumo_core::freezing::{solve_stochastic_wave, Freezer, PhaseTracker};
use nagumo_core::grid::{inner_l2, shift, GridSpec};
use nagumo_core::io::{parse_report, report_json, SCHEMA_EXIT};
use nagumo_core::noise::{NoiseSampler, NoiseStream};
use nagumo_core::spde::{run_path, InitialCondition, PathState, Scheme, SimConfig};
use nagumo_core::wave::{compute_spectral_data, solve_deterministic_wave, NagumoParams};

fn sim(sigma: f64, points: usize, dt: f64, t_end: f64, seed: u64) -> SimConfig {
    SimConfig {
        params: NagumoParams::new(1.0, 0.25, sigma).unwrap(),
        grid: GridSpec::new(20.0, points).unwrap(),
        dt,
        t_end,
        seed,
        scheme: Scheme::SemiImplicit,
    }
}

fn ensemble(threads: usize, seed: u64) -> nagumo_core::exit_stats::ExitResult {
    let cfg = ExitConfig {
        eta: 0.01,
        epsilon: None,
        sigma_list: vec![0.0, 0.15],
        t_horizon: 3.0,
        n_paths: 12,
        master_seed: seed,
        sim: sim(0.0, 256, 0.01, 3.0, seed),
        initial: InitialCondition::ExactWave,
        pad_factor: 2,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_ensemble(&cfg).unwrap())
}

#[test]
fn ensemble_depends_on_seed_only() {
    let a = ensemble(1, 11);
    let b = ensemble(3, 11);
    assert_eq!(a, b);
    assert_eq!(a.per_sigma[0].exit_count, 0);
    assert!(a.per_sigma[1].exit_count > 0);
    assert_ne!(a.per_sigma[1].exit_times, ensemble(1, 12).per_sigma[1].exit_times);

    let back = parse_report(SCHEMA_EXIT, &report_json(SCHEMA_EXIT, &a).unwrap()).unwrap();
    assert_eq!(a, back);
}

#[test]
fn tracked_phase_recovers_a_shifted_start() {
    let cfg = sim(0.0, 512, 0.005, 4.0, 0);
    let p = cfg.params;
    let w = solve_deterministic_wave(&p, &cfg.grid, None).unwrap();
    let spec = compute_spectral_data(&w, &p).unwrap();
    let sw = solve_stochastic_wave(&p, &cfg.grid, &spec, &w).unwrap();
    let freezer = Freezer::new(&sw, &spec, &p).unwrap();
    let u0 = shift(&sw.profile, -0.3).unwrap();
    let mut last = None;
    let mut tracker = PhaseTracker::new(&freezer, &u0, cfg.dt, |t, ps| {
        last = Some((t, ps.gamma, ps.v.clone()));
        Ok(std::ops::ControlFlow::Continue(()))
    })
    .unwrap();
    assert!((tracker.state.gamma - 0.3).abs() < 1e-3, "{}", tracker.state.gamma);
    let sampler = Arc::new(NoiseSampler::build(cfg.grid, 2).unwrap());
    let mut stream = NoiseStream::for_path(sampler, 0, 0);
    let state = PathState {
        u: u0,
        t: 0.0,
        increments_consumed: 0,
    };
    let end = run_path(&cfg, state, &mut stream, &mut [&mut tracker]).unwrap();
    drop(tracker);
    let (t, gamma, v) = last.unwrap();
    assert!((t - 4.0).abs() < 1e-9);
    assert!((gamma - sw.speed * t - 0.3).abs() < 1e-3, "{gamma}");
    assert!(inner_l2(&v, &spec.psi_tw).unwrap().abs() < 1e-3);
    let frozen = shift(&end.u, gamma).unwrap();
    let gap = frozen.sub(&sw.profile).unwrap();
    assert!(gap.values()[64..448].iter().all(|d| d.abs() < 1e-3));
}
