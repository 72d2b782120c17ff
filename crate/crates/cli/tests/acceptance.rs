//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 8 (exit-time scaling) is the slow ensemble; it runs when
//! `NAGUMO_ACCEPTANCE_SLOW=1` is set and is reported as NOT RUN otherwise.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use nagumo_core::chaining::{
    dudley_integral, max_moment_bound, moment_to_tail, sup_growth_experiment, tail_to_moment,
    ConvolutionSetup, GrowthExperimentConfig, GrowthProcess, IncrementMetric,
};
use nagumo_core::exit_stats::{run_ensemble, scaling_fit, ExitConfig};
use nagumo_core::freezing::{solve_stochastic_wave, Freezer, StochasticWave};
use nagumo_core::grid::{inner_l2, norm_h1, norm_l2, GridSpec};
use nagumo_core::noise::{NoiseSampler, NoiseStream};
use nagumo_core::spde::{InitialCondition, PathState, Scheme, SimConfig, Stepper};
use nagumo_core::stats::linear_fit;
use nagumo_core::wave::{compute_spectral_data, solve_deterministic_wave, NagumoParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn params(a: f64) -> NagumoParams {
    NagumoParams::new(1.0, a, 0.0).unwrap()
}

fn reference_grid() -> GridSpec {
    GridSpec::new(20.0, 512).unwrap()
}

fn wave_correctness() -> Outcome {
    let grid = GridSpec::new(40.0, 2048).unwrap();
    let mut pass = true;
    let mut notes = Vec::new();
    for a in [0.1, 0.25, 0.4] {
        let w = solve_deterministic_wave(&params(a), &grid, None).unwrap();
        let c_err = (w.speed - 2f64.sqrt() * (0.5 - a)).abs();
        let front_err = grid
            .coordinates()
            .iter()
            .zip(w.profile.values())
            .map(|(x, u)| (u - 1.0 / (1.0 + (x / 2f64.sqrt()).exp())).abs())
            .fold(0.0, f64::max);
        pass &= c_err <= 1e-5 && front_err <= 1e-4;
        notes.push(format!("a={a}: |dc|={c_err:.1e}, sup|dPhi|={front_err:.1e}"));
    }
    outcome(pass, notes.join("; "))
}

fn spectral_objects() -> Outcome {
    let p = params(0.25);
    let w = solve_deterministic_wave(&p, &reference_grid(), None).unwrap();
    let s = compute_spectral_data(&w, &p).unwrap();
    let pairing = inner_l2(&w.derivative, &s.psi_tw).unwrap();
    let scale = s.linearization.scale();
    let pass = (pairing - 1.0).abs() <= 1e-8
        && s.neutral_eigenvalue.abs() <= 1e-5 * scale
        && s.second_eigenvalue < 0.0
        && s.beta > 0.0;
    outcome(
        pass,
        format!(
            "<Phi',psi>-1={:.1e}, |lambda0|={:.1e} (scale {scale:.1}), lambda1={:.4}, beta={:.4}",
            pairing - 1.0,
            s.neutral_eigenvalue.abs(),
            s.second_eigenvalue,
            s.beta
        ),
    )
}

fn noise_fidelity() -> Outcome {
    let grid = GridSpec::new(16.0, 257).unwrap();
    let dx = grid.dx();
    let sampler = Arc::new(NoiseSampler::build(grid, 2).unwrap());
    let mut stream = NoiseStream::for_path(sampler.clone(), 31, 0);
    let offsets = [0.0, 0.5, 1.0, 2.0];
    let lags: Vec<usize> = offsets.iter().map(|r| (r / dx).round() as usize).collect();
    let (lo, hi) = (64, 193);
    let n = 10_000;
    let mut sums = vec![0.0; 4];
    let mut sq = vec![0.0; 4];
    let mut xi = vec![0.0; grid.len()];
    for _ in 0..n {
        stream.next_into(1.0, &mut xi);
        for (k, &lag) in lags.iter().enumerate() {
            let e = (lo..hi).map(|i| xi[i] * xi[i + lag]).sum::<f64>() / (hi - lo) as f64;
            sums[k] += e;
            sq[k] += e * e;
        }
    }
    let mut pass = sampler.clipped_mass() <= 1e-8;
    let mut notes = vec![format!("clipped={:.1e}", sampler.clipped_mass())];
    for k in 0..4 {
        let mean = sums[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / (n - 1) as f64).sqrt();
        let target = (-offsets[k] * offsets[k]).exp();
        pass &= (mean - target).abs() <= 3.0 * se;
        notes.push(format!("r={}: {mean:.4} vs {target:.4} ({:.1} se)", offsets[k], (mean - target).abs() / se));
    }
    outcome(pass, notes.join("; "))
}

fn stochastic_wave_order() -> Outcome {
    let p0 = params(0.25);
    let grid = reference_grid();
    let w = solve_deterministic_wave(&p0, &grid, None).unwrap();
    let s = compute_spectral_data(&w, &p0).unwrap();
    let sigmas = [0.02, 0.04, 0.08, 0.16];
    let (mut dh1, mut dc) = (Vec::new(), Vec::new());
    for sigma in sigmas {
        let sw = solve_stochastic_wave(&p0.with_sigma(sigma).unwrap(), &grid, &s, &w).unwrap();
        dh1.push(norm_h1(&sw.profile.sub(&w.profile).unwrap()).ln());
        dc.push((sw.speed - w.speed).abs().ln());
    }
    let ls: Vec<f64> = sigmas.iter().map(|v: &f64| v.ln()).collect();
    let a = linear_fit(&ls, &dh1).unwrap().slope;
    let b = linear_fit(&ls, &dc).unwrap().slope;
    outcome(
        (a - 2.0).abs() <= 0.2 && (b - 2.0).abs() <= 0.2,
        format!("H1 slope {a:.4}, speed slope {b:.4}"),
    )
}

/// Largest `‖V(t)‖_{L²}` of a σ = 0 tracked run from the discrete front.
fn deterministic_tracking_error(points: usize, dt: f64) -> (f64, f64) {
    let p = params(0.25);
    let grid = GridSpec::new(20.0, points).unwrap();
    let w = solve_deterministic_wave(&p, &grid, None).unwrap();
    let spec = compute_spectral_data(&w, &p).unwrap();
    let sw = StochasticWave::from_deterministic(&w);
    let freezer = Freezer::new(&sw, &spec, &p).unwrap();
    let cfg = SimConfig {
        params: p,
        grid,
        dt,
        t_end: 10.0,
        seed: 0,
        scheme: Scheme::SemiImplicit,
    };
    let mut stepper = Stepper::new(&cfg).unwrap();
    let sampler = Arc::new(NoiseSampler::build(grid, 2).unwrap());
    let mut stream = NoiseStream::for_path(sampler, 0, 0);
    let mut state = PathState {
        u: w.profile.clone(),
        t: 0.0,
        increments_consumed: 0,
    };
    let mut ps = freezer.start(&state.u).unwrap();
    let mut worst = norm_l2(&ps.v);
    for _ in 0..cfg.n_steps() {
        let prev = state.u.clone();
        let xi = stepper.step(&mut state, &mut stream).unwrap().to_vec();
        ps = freezer.phase_step(&ps, &prev, &state.u, &xi, dt).unwrap();
        worst = worst.max(norm_l2(&ps.v));
    }
    let dx = grid.dx();
    (worst, 10.0 * (dx * dx + dt))
}

fn tracking_consistency() -> Outcome {
    let (coarse, coarse_bound) = deterministic_tracking_error(257, 0.01);
    let (fine, fine_bound) = deterministic_tracking_error(513, 0.005);
    let ratio = fine / coarse;
    let pass = coarse <= coarse_bound && fine <= fine_bound && ratio <= 0.75;
    outcome(
        pass,
        format!(
            "coarse {coarse:.2e} <= {coarse_bound:.3}, fine {fine:.2e} <= {fine_bound:.3}, ratio {ratio:.3}"
        ),
    )
}

fn growth(process: GrowthProcess, horizons: Vec<f64>, n_paths: usize) -> (bool, String, f64) {
    let cfg = GrowthExperimentConfig {
        horizons,
        dt: 0.05,
        n_paths,
        seed: 7,
        process,
        convolution: ConvolutionSetup::default(),
    };
    let r = sup_growth_experiment(&cfg).unwrap();
    let means: Vec<String> = r.rows.iter().map(|row| format!("{:.3}", row.mean_sup_sq)).collect();
    (
        r.log_preferred,
        format!(
            "E sup = [{}], ln T fit R2 {:.5}, AIC ln {:.2} vs linear {:.2}",
            means.join(", "),
            r.log_fit.r_squared,
            r.log_fit.aic(),
            r.linear_fit.aic()
        ),
        r.log_fit.r_squared,
    )
}

fn ou_growth() -> Outcome {
    let (pref, detail, r2) = growth(GrowthProcess::ScalarOu, vec![10.0, 100.0, 1000.0, 10000.0], 2000);
    outcome(pref && r2 >= 0.99, detail)
}

fn convolution_growth() -> Outcome {
    let (pref, detail, r2) = growth(GrowthProcess::SemigroupConvolution, vec![10.0, 100.0, 1000.0], 200);
    outcome(pref && r2 >= 0.95, detail)
}

fn exit_scaling() -> Outcome {
    let cfg = ExitConfig {
        eta: 0.01,
        epsilon: None,
        sigma_list: vec![0.08, 0.10, 0.12, 0.14],
        t_horizon: 20.0,
        n_paths: 400,
        master_seed: 2024,
        sim: SimConfig {
            params: params(0.25),
            grid: reference_grid(),
            dt: 0.005,
            t_end: 20.0,
            seed: 2024,
            scheme: Scheme::SemiImplicit,
        },
        initial: InitialCondition::ExactWave,
        pad_factor: 2,
    };
    let res = run_ensemble(&cfg).unwrap();
    let table: Vec<String> = res
        .per_sigma
        .iter()
        .map(|r| format!("{}:{}/{}", r.sigma, r.exit_count, r.path_count))
        .collect();
    let increasing = res.per_sigma.windows(2).all(|w| w[1].p_hat > w[0].p_hat);
    let fit = match scaling_fit(&res, cfg.eta) {
        Ok(f) => {
            let ok = f.r_squared >= 0.9 && f.slope > 0.0;
            (ok, format!("slope {:.3}, R2 {:.3}", f.slope, f.r_squared))
        }
        Err(e) => (false, format!("no fit: {e}")),
    };
    outcome(
        increasing && fit.0,
        format!("exits [{}], strictly increasing: {increasing}; {}", table.join(", "), fit.1),
    )
}

/// (Θ, ϑ, A, N, p, moment_to_tail, tail_to_moment, max_moment_bound),
/// reference values at 50 significant digits, rounded to 30.
const CONVERTER_REFERENCE: [(f64, f64, f64, u64, u32, &str, &str, &str); 20] = [
    (2.760159, 3.286326, 480981.084, 859792, 1, "1.54094305885149234014815778186", "2.3332744976438692428094032137e+3", "2.42950794680212110531004621442e+3"),
    (0.283658, 0.330345, 827785.162, 930814, 7, "1.5584249879114105123701326731", "4.42175571751249687755023434213e+9", "4.69263693721194835342259323187e+9"),
    (1.802861, 7.454926, 794098.101, 684730, 11, "8.61232084488007202352612924828e-2", "7.02560802861478721569284496098e+32", "6.29846937438086366769847784583e+32"),
    (2.721991, 6.411835, 232808.528, 521836, 11, "7.20738216856058542663689194991e-1", "2.49261271655081485776702442259e+36", "4.45412724244426619250651360735e+36"),
    (2.587053, 0.901562, 234165.424, 188714, 1, "1.95581810635196312198512165287", "1.94502209292807705778099989858e+3", "1.91361434263354293187595033065e+3"),
    (2.974204, 4.839254, 351288.764, 975322, 4, "1.22898658334047867256339709919", "3.67572145277677769282950778996e+13", "4.98758141974732789469732564039e+13"),
    (0.956102, 2.242131, 847695.827, 47672, 12, "7.27306906622256597788292551558e-1", "1.93326176013512822648036893655e+29", "4.32504248778062796262279071509e+28"),
    (2.481224, 13.764534, 801460.112, 563765, 8, "6.96048091526554691265932882476e-3", "1.22112665849850002676873171706e+26", "9.9334587196257309886296654061e+25"),
    (1.390574, 7.393563, 645967.034, 692251, 8, "1.10342485443247181842487375646e-2", "1.01972752875164557260673098049e+22", "1.06200447321558149329549879791e+22"),
    (1.589783, 1.090709, 69319.03, 199801, 9, "1.83412434816638297287876198204", "1.3928744497105661679433324367e+25", "2.92777211153859731169598519519e+25"),
    (0.304083, 0.804512, 880218.557, 213819, 8, "5.5190482621610017517580440711e-1", "3.33829046606581799101758398803e+11", "1.42053927945417575242728589458e+11"),
    (0.25144, 1.425359, 561409.778, 610479, 5, "5.41936871939793071650410237618e-3", "2.01250520665635293975131372076e+6", "2.07651658699381491124047727103e+6"),
    (2.192982, 12.860573, 994248.262, 398212, 3, "3.57851713923462666252762195355e-3", "3.04333826830367428073605078406e+9", "2.48334146162549619375883796413e+9"),
    (2.797599, 12.015975, 133241.182, 319991, 1, "6.71950492897894382051917472508e-2", "2.17852486975337837613868358544e+3", "2.32764110583627865370839521905e+3"),
    (0.292071, 0.900977, 352374.157, 251417, 7, "3.47424645860973953333605786025e-1", "4.2545248142712464444282748693e+9", "3.5377643008570272848553270339e+9"),
    (1.914877, 5.223137, 724821.142, 309569, 4, "5.08957903398674088380282533707e-1", "1.35060154671063231078911260679e+12", "1.0432454871943637502287642871e+12"),
    (0.309731, 1.337511, 301624.407, 256033, 8, "6.47704142115722498769610474128e-2", "2.36408633944561771100044248121e+11", "2.13529654573645244612210019962e+11"),
    (1.95625, 5.197994, 842320.462, 279793, 4, "5.45789733818581210783504096757e-1", "1.6745005589795350706994993926e+12", "1.19906669819758521713106108628e+12"),
    (2.293394, 11.976772, 575705.626, 942258, 7, "1.32558367796121347073864916548e-2", "1.87021268999571930711018395262e+22", "2.40805188171173255809043399869e+22"),
    (2.75834, 16.240391, 13141.354, 812128, 7, "3.40260584940537655232305139762e-3", "2.62132765458541403182329580765e+22", "2.96012632371884715780000468301e+23"),
];

fn rel(a: f64, reference: &str) -> f64 {
    let r: f64 = reference.parse().unwrap();
    ((a - r) / r).abs()
}

/// `∫₀¹ √ln(T/ν²) dν` evaluated independently by substitution `ν = e^{-s}`
/// and composite Gauss–Legendre on a truncated `s` range.
fn sqrt_capped_reference(horizon: f64) -> f64 {
    let nodes = [
        (-0.906_179_845_938_664, 0.236_926_885_056_189),
        (-0.538_469_310_105_683, 0.478_628_670_499_366),
        (0.0, 0.568_888_888_888_889),
        (0.538_469_310_105_683, 0.478_628_670_499_366),
        (0.906_179_845_938_664, 0.236_926_885_056_189),
    ];
    let (panels, s_max) = (4000, 60.0);
    let h = s_max / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = (k as f64 + 0.5) * h;
        for (x, wgt) in nodes {
            let s = mid + 0.5 * h * x;
            total += 0.5 * h * wgt * (horizon.ln() + 2.0 * s).sqrt() * (-s).exp();
        }
    }
    total
}

fn toolkit_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for &(theta, vt, a, n, p, m2t, t2m, mmb) in &CONVERTER_REFERENCE {
        worst = worst
            .max(rel(moment_to_tail(theta, vt), m2t))
            .max(rel(tail_to_moment(a, theta, p).unwrap(), t2m))
            .max(rel(max_moment_bound(n, theta, p).unwrap(), mmb));
    }
    let mut notes = vec![format!("converters worst rel {worst:.1e}")];
    let mut pass = worst <= 1e-12;
    for horizon in [100.0, 1000.0] {
        let q = dudley_integral(&IncrementMetric::sqrt_capped(horizon, 1.0).unwrap()).unwrap();
        let reference = sqrt_capped_reference(horizon);
        let err = ((q - reference) / reference).abs();
        pass &= err <= 1e-3;
        notes.push(format!("Dudley T={horizon}: {q:.5} vs {reference:.5} (rel {err:.1e})"));
    }
    outcome(pass, notes.join("; "))
}

fn nagumo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nagumo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn replay_identical(sub: &str, preset: &str, sets: &[&str], dir: &Path) -> Result<usize, String> {
    let first = dir.join(format!("{sub}-1"));
    let second = dir.join(format!("{sub}-4"));
    let mut args = vec!["--threads", "1", "--out", first.to_str().unwrap(), sub, "--config", preset];
    for s in sets {
        args.extend(["--set", s]);
    }
    let out = nagumo(&args);
    if !out.status.success() {
        return Err(format!("{sub}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let manifest = first.join("manifest.toml");
    let out = nagumo(&[
        "--threads",
        "4",
        "--out",
        second.to_str().unwrap(),
        sub,
        "--config",
        manifest.to_str().unwrap(),
    ]);
    if !out.status.success() {
        return Err(format!("{sub} replay: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(&first).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.toml" {
            continue;
        }
        let a = std::fs::read(first.join(&name)).unwrap();
        let b = std::fs::read(second.join(&name)).map_err(|e| format!("{name:?}: {e}"))?;
        if a != b {
            return Err(format!("{sub}: {name:?} differs"));
        }
        compared += 1;
    }
    Ok(compared)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let preset = |f: &str| root.join(f).to_str().unwrap().to_string();
    let runs: [(&str, String, Vec<&str>); 4] = [
        ("wave", preset("wave.toml"), vec![]),
        ("simulate", preset("simulate.toml"), vec!["sim.t_end=2", "snapshot_every=100"]),
        (
            "exit",
            preset("exit.toml"),
            vec!["n_paths=12", "t_horizon=3", "sigma_list=[0.2, 0.4]", "sim.grid.points=256", "sim.dt=0.01"],
        ),
        (
            "chaining",
            preset("chaining-ou.toml"),
            vec!["n_paths=200", "horizons=[10.0, 30.0, 100.0]", "metric_horizons=[10.0]"],
        ),
    ];
    let mut files = 0;
    for (sub, cfg, sets) in &runs {
        match replay_identical(sub, cfg, sets, dir.path()) {
            Ok(n) => files += n,
            Err(e) => return outcome(false, e),
        }
    }
    outcome(true, format!("{files} result files byte-identical across 1 and 4 threads"))
}

fn main() {
    let slow = std::env::var("NAGUMO_ACCEPTANCE_SLOW").is_ok_and(|v| v == "1");
    let criteria: [(u32, &str, fn() -> Outcome, bool); 10] = [
        (1, "wave correctness", wave_correctness, false),
        (2, "spectral objects", spectral_objects, false),
        (3, "noise fidelity", noise_fidelity, false),
        (4, "O(sigma^2) stochastic wave corrections", stochastic_wave_order, false),
        (5, "tracking consistency", tracking_consistency, false),
        (6, "OU supremum growth", ou_growth, false),
        (7, "convolution supremum growth", convolution_growth, false),
        (8, "exit-time scaling", exit_scaling, true),
        (9, "toolkit exactness", toolkit_exactness, false),
        (10, "determinism", determinism, false),
    ];
    let mut failed = 0;
    for (id, name, run, is_slow) in criteria {
        if is_slow && !slow {
            println!("criterion {id} ({name}): NOT RUN (slow; set NAGUMO_ACCEPTANCE_SLOW=1)");
            continue;
        }
        let started = std::time::Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(o) => {
                let verdict = if o.pass { "PASS" } else { "FAIL" };
                failed += usize::from(!o.pass);
                println!("criterion {id} ({name}): {verdict} [{secs:.1}s] {}", o.detail);
            }
            Err(_) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] panicked");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
