//! Acceptance checks, one line of output per criterion.
//!
//! Run with `cargo test --release --test acceptance`. Criteria run on
//! separate threads; the process exits non-zero if any fails.

use std::f64::consts::FRAC_PI_4;
use std::time::Instant;

use chstab::cli::initial_condition;
use chstab::diag::relative_error;
use chstab::driver::{
    ee2_tau_update, reference_solve, run, tol_phi_select, ReferenceMethod, RunOutput, Scheme, SolverConfig,
};
use chstab::krylov::{ee2_krylov_step, ee2_krylov_step_with, phi_step_dense, KrylovOptions};
use chstab::lim::{chebyshev_order, lim_step};
use chstab::problem::epsilon_m;
use chstab::sparse::CsrMatrix;
use chstab::{CahnHilliardProblem, GridSpec, NormMode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn eps4() -> f64 {
    epsilon_m(1.0, 4).unwrap()
}

/// Square domain of side 64 discretized with `n x n` cells.
fn benchmark(n: usize, eyre: bool) -> (CahnHilliardProblem, DVector<f64>) {
    let spec = GridSpec::new(n, n, 64.0, 64.0).unwrap();
    let problem = CahnHilliardProblem::from_grid(spec, eps4(), eyre).unwrap();
    let y0 = initial_condition(&spec, 2024);
    (problem, y0)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
    let sxy: f64 = points.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn krylov_vs_dense() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut short_steps = 0;
    for case in 0..50 {
        let n = rng.random_range(2..=20);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = b.transpose() * &b / n as f64 + DMatrix::identity(n, n) * 0.1;
        let eyre = case % 2 == 0;
        let problem =
            CahnHilliardProblem::new(CsrMatrix::from_dense(&a), rng.random_range(0.3..1.2), eyre).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let sys = problem.linearize(&y).unwrap();
        let tau = rng.random_range(0.1..10.0) / sys.one_norm_a_hat();
        let step = ee2_krylov_step(&sys, &y, tau, 1e-12, n).unwrap();
        if step.tau != tau {
            short_steps += 1;
        }
        let m = sys.to_dense();
        let exact = phi_step_dense(&m, &y, &(sys.g_hat() - &m * &y), tau);
        worst = worst.max((&step.y_next - &exact).norm() / exact.norm());
    }
    outcome(
        worst <= 1e-10 && short_steps == 0,
        format!("max relative difference {worst:.2e}, shortened steps {short_steps}"),
    )
}

fn convergence_slope(scheme: Scheme) -> (f64, Vec<f64>) {
    let (problem, y0) = benchmark(32, false);
    let t_final = 20.0;
    let reference = reference_solve(&problem, &y0, t_final, ReferenceMethod::classical()).unwrap();
    let taus = [0.5, 0.25, 0.125, 0.0625];
    let errors: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let config = SolverConfig::new(scheme, false, tau, t_final, 1e-7);
            let out = run(&problem, &config, &y0).unwrap();
            relative_error(&out.y_final, &reference).unwrap()
        })
        .collect();
    let points: Vec<(f64, f64)> = taus.iter().zip(&errors).map(|(t, e)| (t.ln(), e.ln())).collect();
    (fit_slope(&points), errors)
}

fn ee2_order() -> Outcome {
    let (slope, errors) = convergence_slope(Scheme::Ee2);
    outcome((slope - 2.0).abs() <= 0.35, format!("slope {slope:.3}, errors {}", fmt_list(&errors)))
}

fn lim_order() -> Outcome {
    let (slope, errors) = convergence_slope(Scheme::Lim);
    outcome(slope >= 0.8, format!("slope {slope:.3}, errors {}", fmt_list(&errors)))
}

/// The four 64x64, T = 100 runs shared by the mass and energy criteria.
fn long_runs() -> Vec<(String, RunOutput)> {
    let (problem, y0) = benchmark(64, false);
    let t_final = 100.0;
    let configs = [
        ("LIM tau=0.5", SolverConfig::new(Scheme::Lim, false, 0.5, t_final, 1e-2)),
        ("LIM tol=1e-2", SolverConfig::new(Scheme::Lim, true, 1.0, t_final, 1e-2)),
        ("EE2 tau=0.5", SolverConfig::new(Scheme::Ee2, false, 0.5, t_final, 1e-5).with_m_max(100)),
        ("EE2 tol=1e-2", SolverConfig::new(Scheme::Ee2, true, 1.0, t_final, 1e-2)),
    ];
    configs
        .into_iter()
        .map(|(name, c)| (name.to_string(), run(&problem, &c, &y0).unwrap()))
        .collect()
}

fn mass_conservation(runs: &[(String, RunOutput)]) -> Outcome {
    let worst: Vec<String> = runs
        .iter()
        .map(|(name, out)| {
            let m = out.records.iter().map(|r| r.mass_dev).fold(0.0, f64::max);
            format!("{name}: {m:.1e}")
        })
        .collect();
    let pass = runs
        .iter()
        .all(|(_, out)| out.records.iter().all(|r| r.mass_dev <= 1e-10));
    outcome(pass, worst.join(", "))
}

fn energy_decay(runs: &[(String, RunOutput)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, out) in runs {
        let e0 = out.initial_energy.unwrap();
        let mut prev = None;
        let mut worst = f64::NEG_INFINITY;
        for r in &out.records {
            let e = r.energy.unwrap();
            if let Some((t_prev, e_prev)) = prev {
                if t_prev > 10.0 {
                    worst = worst.max(e - e_prev);
                }
            }
            prev = Some((r.t, e));
        }
        pass &= worst <= 1e-6 * e0;
        parts.push(format!("{name}: max increase {:.1e} E0", worst / e0));
    }
    outcome(pass, parts.join(", "))
}

fn order_bounds() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for x in [1e2, 1e4, 1e6] {
        let p = chebyshev_order(1.0, x) as f64;
        let upper = (FRAC_PI_4 * (x + 1.0).sqrt()).ceil();
        let lower = 0.9 * FRAC_PI_4 * x.sqrt();
        pass &= p <= upper && p >= lower;
        parts.push(format!("p({x:e}) = {p} in [{lower:.1}, {upper}]"));
    }
    outcome(pass, parts.join(", "))
}

fn eyre_spectrum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = GridSpec::unit_spacing(6, 6).unwrap();
    let mut worst_re: f64 = 0.0;
    let mut worst_im: f64 = 0.0;
    for _ in 0..100 {
        let eps = rng.random_range(0.2..2.0);
        let amp = rng.random_range(0.01..1.5);
        let problem = CahnHilliardProblem::from_grid(spec, eps, true).unwrap();
        let y = DVector::from_fn(36, |_, _| rng.random_range(-amp..amp));
        let sys = problem.linearize(&y).unwrap();
        let scale = sys.one_norm_a_hat();
        for z in sys.to_dense().complex_eigenvalues().iter() {
            worst_re = worst_re.max(-z.re / scale);
            worst_im = worst_im.max(z.im.abs() / scale);
        }
    }
    outcome(
        worst_re <= 1e-8 && worst_im <= 1e-8,
        format!("max -Re/|A|_1 {worst_re:.1e}, max |Im|/|A|_1 {worst_im:.1e}"),
    )
}

/// Adaptive EE2 with the splitting, sampling the residual on each accepted step.
fn residual_monotonicity() -> Outcome {
    let (problem, y0) = benchmark(64, true);
    let mut violations = 0;
    let mut samples = 0;
    let mut worst_drop: f64 = 0.0;
    for m_max in [10, 30] {
        let (t_final, tol) = (60.0, 1e-3);
        let mut y = y0.clone();
        let mut rhs_y = problem.rhs(&y).unwrap();
        let (mut t, mut tau): (f64, f64) = (0.0, 1.0);
        while t < t_final {
            let step_tau = tau.min(t_final - t);
            let sys = problem.linearize(&y).unwrap();
            let tol_phi = tol_phi_select(sys.g_hat().norm(), rhs_y.norm(), tol);
            let step = ee2_krylov_step_with(&sys, &y, &rhs_y, step_tau, KrylovOptions::new(tol_phi, m_max)).unwrap();
            let mut prev = 0.0;
            for k in 1..=50 {
                let r = step.krylov.resnorm(step.tau * k as f64 / 50.0);
                samples += 1;
                if r < prev - 1e-12 {
                    violations += 1;
                }
                worst_drop = worst_drop.max(prev - r);
                prev = r;
            }
            let rhs_next = problem.rhs(&step.y_next).unwrap();
            let y_pc = &y + (&rhs_y + &rhs_next) * (0.5 * step.tau);
            let est = (&step.y_next - &y_pc).norm() / y_pc.norm();
            t = if step.tau == t_final - t { t_final } else { t + step.tau };
            tau = ee2_tau_update(step.tau, est, tol);
            y = step.y_next;
            rhs_y = rhs_next;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in {samples} samples, largest drop {worst_drop:.1e}"),
    )
}

struct Point {
    label: String,
    matvecs: u64,
    error: f64,
}

/// Cheapest run among `pool` whose error is at most twice `error`.
fn cheapest_matching<'a>(pool: &'a [Point], error: f64) -> Option<&'a Point> {
    pool.iter()
        .filter(|p| p.error <= 2.0 * error)
        .min_by_key(|p| p.matvecs)
}

fn cost_ordering() -> Outcome {
    let (problem, y0) = benchmark(64, false);
    let t_final = 200.0;
    let reference = reference_solve(&problem, &y0, t_final, ReferenceMethod::classical()).unwrap();
    let measure = |label: String, config: SolverConfig| {
        let out = run(&problem, &config, &y0).unwrap();
        Point {
            label,
            matvecs: out.total_matvecs(),
            error: relative_error(&out.y_final, &reference).unwrap(),
        }
    };
    let lim_adaptive: Vec<Point> = [(1e-2, 1.0), (1e-3, 0.5), (1e-4, 0.25)]
        .iter()
        .map(|&(tol, tau0)| measure(format!("LIM tol={tol:e}"), SolverConfig::new(Scheme::Lim, true, tau0, t_final, tol)))
        .collect();
    let ee2: Vec<Point> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&tol| measure(format!("EE2(30) tol={tol:e}"), SolverConfig::new(Scheme::Ee2, true, 1.0, t_final, tol)))
        .collect();
    let lim_constant: Vec<Point> = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]
        .iter()
        .map(|&tau| measure(format!("LIM tau={tau}"), SolverConfig::new(Scheme::Lim, false, tau, t_final, 1e-3)))
        .collect();

    let mut pass = true;
    let mut parts = Vec::new();
    for group in [&lim_adaptive, &ee2, &lim_constant] {
        for p in group.iter() {
            parts.push(format!("{} {} mv err {:.2e}", p.label, p.matvecs, p.error));
        }
    }
    let mut matched_a = 0;
    for p in &ee2 {
        if let Some(q) = cheapest_matching(&lim_adaptive, p.error) {
            matched_a += 1;
            pass &= p.matvecs < q.matvecs;
            parts.push(format!("(a) {} vs {}: {:.2}x", p.label, q.label, q.matvecs as f64 / p.matvecs as f64));
        }
    }
    let mut matched_b = 0;
    for p in &lim_adaptive {
        if let Some(q) = cheapest_matching(&lim_constant, p.error) {
            matched_b += 1;
            let gain = q.matvecs as f64 / p.matvecs as f64;
            pass &= gain >= 2.0;
            parts.push(format!("(b) {} vs {}: {gain:.2}x", p.label, q.label));
        }
    }
    pass &= matched_a > 0 && matched_b > 0;
    outcome(pass, parts.join("; "))
}

fn lim_is_euler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for case in 0..100 {
        let spec = GridSpec::new(rng.random_range(2..10), rng.random_range(2..10), 8.0, 8.0).unwrap();
        let problem = CahnHilliardProblem::from_grid(spec, rng.random_range(0.2..1.5), case % 2 == 0).unwrap();
        let y = DVector::from_fn(spec.len(), |_, _| rng.random_range(-1.0..1.0));
        let sys = problem.linearize(&y).unwrap();
        let mode = if case % 4 < 2 {
            NormMode::ExactProduct
        } else {
            NormMode::UpperBound
        };
        let tau = rng.random_range(0.01..=1.0) / sys.lambda_max(mode);
        let step = lim_step(&sys, &y, tau, mode).unwrap();
        let ay = sys.apply_a_hat(&y).unwrap();
        let euler = DVector::from_fn(y.len(), |i, _| y[i] + tau * (sys.g_hat()[i] - ay[i]));
        if step.p != 1 || step.y_next != euler {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 100 instances differ"))
}

fn main() {
    let started = Instant::now();
    let results: Vec<(usize, &str, Outcome, f64)> = std::thread::scope(|s| {
        let timed = |f: fn() -> Outcome| {
            move || {
                let t = Instant::now();
                let o = f();
                (o, t.elapsed().as_secs_f64())
            }
        };
        let c1 = s.spawn(timed(krylov_vs_dense));
        let c2 = s.spawn(timed(ee2_order));
        let c3 = s.spawn(timed(lim_order));
        let c45 = s.spawn(|| {
            let t = Instant::now();
            let runs = long_runs();
            let secs = t.elapsed().as_secs_f64();
            (mass_conservation(&runs), energy_decay(&runs), secs)
        });
        let c6 = s.spawn(timed(order_bounds));
        let c7 = s.spawn(timed(eyre_spectrum));
        let c8 = s.spawn(timed(residual_monotonicity));
        let c9 = s.spawn(timed(cost_ordering));
        let c10 = s.spawn(timed(lim_is_euler));
        let (o1, t1) = c1.join().unwrap();
        let (o2, t2) = c2.join().unwrap();
        let (o3, t3) = c3.join().unwrap();
        let (o4, o5, t45) = c45.join().unwrap();
        let (o6, t6) = c6.join().unwrap();
        let (o7, t7) = c7.join().unwrap();
        let (o8, t8) = c8.join().unwrap();
        let (o9, t9) = c9.join().unwrap();
        let (o10, t10) = c10.join().unwrap();
        vec![
            (1, "Krylov step matches dense phi", o1, t1),
            (2, "EE2 convergence order 2", o2, t2),
            (3, "LIM convergence order >= 1", o3, t3),
            (4, "mass conservation", o4, t45),
            (5, "energy decay after t = 10", o5, t45),
            (6, "Chebyshev order bounds", o6, t6),
            (7, "split operator has real nonnegative spectrum", o7, t7),
            (8, "Krylov residual nondecreasing in time", o8, t8),
            (9, "cost ordering EE2(30) < adaptive LIM < constant LIM", o9, t9),
            (10, "LIM with p = 1 is explicit Euler", o10, t10),
        ]
    });
    let mut failed = 0;
    for (k, name, o, secs) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {k:>2}: {name} ({secs:.1} s) {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
