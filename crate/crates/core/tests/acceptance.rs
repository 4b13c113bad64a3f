//! Acceptance gate: one line per criterion, then a single assertion.
//!
//! The lines go to stderr uncaptured: `cargo test --test acceptance`.

mod common;

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use common::{grid_minimum, instance, mms_error, perturbed_spec};
use gsrecon::basis::{BasisFamily, BasisKind, MAX_DIM, MIN_DIM};
use gsrecon::fem::StiffnessSystem;
use gsrecon::reconstruction::{reconstruct, Mode, Problem, Status};
use gsrecon::twin::{manufacture, run_twin, synthesize_measurements, twin_mesh, TwinSpec};
use gsrecon::Mesh;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn standard() -> (Mesh, TwinSpec) {
    let m = twin_mesh();
    let spec = TwinSpec::standard(&m);
    (m, spec)
}

fn convergence_count() -> Outcome {
    let (m, spec) = standard();
    let start = Instant::now();
    let twin = run_twin(&m, &spec, spec.config()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let h = &twin.reconstruction.history;
    let pass = h.status == Status::Converged && h.iterations() <= 30 && secs <= 60.0;
    outcome(pass, format!("{} iterations to tol 1e-6 in {secs:.2} s (cap 30, 60 s)", h.iterations()))
}

fn residual_decay() -> Outcome {
    let (m, spec) = standard();
    let twin = run_twin(&m, &spec, spec.config()).unwrap();
    let mut cfg = spec.config();
    // Run past convergence so iteration 10 exists regardless of the stop.
    cfg.tol = 1e-14;
    cfg.max_iter = 12;
    let problem = Problem::new(m, &twin.measurements, cfg).unwrap();
    let r = reconstruct(&problem, None).unwrap().history.psi_residuals();
    let at10 = r[9];
    // Iterations are numbered from 1; r[k - 1] belongs to iteration k.
    let monotone = r[2..].windows(2).all(|w| w[1] < w[0]);
    outcome(
        at10 <= 1e-5 && monotone,
        format!("residual at iteration 10 = {at10:.2e} (≤ 1e-5), decreasing after iteration 3: {monotone}"),
    )
}

fn iteration_cost() -> Outcome {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    let out = Command::new(env!("CARGO_BIN_EXE_gsrecon"))
        .args(["bench", "--frames", "10"])
        .args(["--mesh", &format!("{data}/twin_mesh.txt")])
        .args(["--measurements", &format!("{data}/twin_measurements.json")])
        .args(["--config", &format!("{data}/twin_config.json")])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    let field = |prefix: &str, key: &str| -> Option<f64> {
        let line = text.lines().find(|l| l.starts_with(prefix))?;
        let mut words = line.split_whitespace();
        words.position(|w| w == key)?;
        words.next()?.parse().ok()
    };
    let (Some(iters), Some(mean)) = (field("frames", "iterations"), field("iteration time mean", "mean")) else {
        return outcome(false, format!("bench output not understood: {text}"));
    };
    outcome(
        out.status.success() && iters >= 100.0 && mean <= 0.1,
        format!("bench mean {mean:.4} s per iteration over {iters} iterations (≤ 0.1 s, ≥ 100)"),
    )
}

fn chord_fidelity() -> Outcome {
    let (m, spec) = standard();
    let twin = run_twin(&m, &spec, spec.config()).unwrap();
    let mis = twin.problem.misfits(&twin.reconstruction.state).unwrap();
    let worst = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let beta = worst(mis.interferometry.per_sensor());
    let alpha = worst(mis.polarimetry.per_sensor());
    outcome(
        beta <= 0.01 && alpha <= 0.1,
        format!("worst chord misfit: interferometry {beta:.2e} (≤ 1e-2), polarimetry {alpha:.2e} (≤ 1e-1)"),
    )
}

fn profile_recovery() -> Outcome {
    let (m, spec) = standard();
    let mut cfg = spec.config();
    cfg.eps1 = 1e-7;
    cfg.eps2 = 1e-7;
    let start = Instant::now();
    let twin = run_twin(&m, &spec, cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let e = &twin.errors;
    outcome(
        e.a <= 0.05 && e.b <= 0.05 && secs <= 60.0,
        format!("ε = 1e-7: L2 error A {:.2e}, B {:.2e} (≤ 5e-2) in {secs:.2} s", e.a, e.b),
    )
}

fn fem_order() -> Outcome {
    let start = Instant::now();
    let errors: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| mms_error(n)).collect();
    let secs = start.elapsed().as_secs_f64();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let pass = orders.iter().all(|o| (1.8..=2.2).contains(o)) && secs <= 30.0;
    outcome(pass, format!("L2 orders {orders:.3?} (in [1.8, 2.2]) in {secs:.2} s"))
}

fn optimization() -> Outcome {
    let (_, _, ne, ..) = instance(2, 10, 8, 1e-2);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_grad = 0.0f64;
    for _ in 0..10 {
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = ne.gradient(&u);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..8 {
            let h = 1e-4 * u[i].abs().max(1.0);
            let (mut up, mut um) = (u.clone(), u.clone());
            up[i] += h;
            um[i] -= h;
            let fd = (ne.cost(&up) - ne.cost(&um)) / (2.0 * h);
            worst_grad = worst_grad.max((fd - g[i]).abs() / gnorm);
        }
    }
    let (_, _, small, ..) = instance(4, 6, 4, 1e-3);
    let u = DVector::from_vec(small.solve().unwrap());
    let oracle = grid_minimum(&small);
    let brute = (&u - &oracle).norm() / oracle.norm();
    outcome(
        worst_grad <= 1e-6 && brute <= 1e-10,
        format!("gradient vs central differences {worst_grad:.1e} (≤ 1e-6), l=6 m=2 vs grid search {brute:.1e} (≤ 1e-10)"),
    )
}

fn conservation() -> Outcome {
    let (m, spec) = standard();
    let sys = StiffnessSystem::new(&m).unwrap();
    let truth = manufacture(&m, &sys, &spec).unwrap();
    let meas = synthesize_measurements(&m, &truth, &spec).unwrap();
    let cfg = spec.config();
    let problem = Problem::with_system(m, sys, &meas, cfg.clone()).unwrap();
    let ip = problem.plasma_current();
    // Same schedule as a cold-start reconstruction.
    let mut state = problem.cold_start().unwrap();
    let mut worst_ip = ((problem.total_current(&state) - ip) / ip).abs();
    for k in 0..15 {
        let relax = cfg.cold_start_eps * 0.1f64.powi(k);
        state = problem.step_with(&state, cfg.eps1.max(relax), cfg.eps2.max(relax)).unwrap();
        worst_ip = worst_ip.max(((problem.total_current(&state) - ip) / ip).abs());
    }

    let mut worst_unity = 0.0f64;
    let mut worst_kernel = 0.0f64;
    for kind in [BasisKind::PiecewiseLinear, BasisKind::CubicBSpline] {
        for dim in MIN_DIM..=MAX_DIM {
            let fam = BasisFamily::uniform(kind, dim).unwrap();
            for k in 0..=1000 {
                let s: f64 = fam.eval(k as f64 / 1000.0).unwrap().iter().sum();
                worst_unity = worst_unity.max((s - 1.0).abs());
            }
            let lam = fam.regularization_matrix();
            let block = lam.block();
            for (alpha, beta) in [(1.0, 0.0), (0.0, 1.0), (0.7, -2.3)] {
                let c = DVector::from_vec(fam.affine_coefficients(alpha, beta));
                let r = (block * &c).norm() / (block.norm() * c.norm());
                worst_kernel = worst_kernel.max(r);
            }
        }
    }
    outcome(
        worst_ip <= 1e-12 && worst_unity <= 1e-12 && worst_kernel <= 1e-12,
        format!(
            "∫j_φ vs I_p over 15 iterations {worst_ip:.1e}, partition of unity {worst_unity:.1e}, Λ on affine {worst_kernel:.1e} (all ≤ 1e-12)"
        ),
    )
}

fn real_time_sequence() -> Outcome {
    let (m, base) = standard();
    let sys = StiffnessSystem::new(&m).unwrap();
    let mut rt_cfg = base.config();
    rt_cfg.mode = Mode::RealTime(2);
    // The frame before the sequence is the converged unperturbed twin.
    let mut carried = run_twin(&m, &base, base.config()).unwrap().reconstruction.state;
    let mut worst = 0.0f64;
    for frame in 0..10 {
        let spec = perturbed_spec(&base, 0.01, 500 + frame);
        let truth = manufacture(&m, &sys, &spec).unwrap();
        let meas = synthesize_measurements(&m, &truth, &spec).unwrap();
        let full = Problem::with_system(m.clone(), sys.clone(), &meas, spec.config()).unwrap();
        let reference = reconstruct(&full, None).unwrap();
        let rt = Problem::with_system(m.clone(), sys.clone(), &meas, rt_cfg.clone()).unwrap();
        let run = reconstruct(&rt, Some(carried)).unwrap();
        worst = worst.max(run.state.psi.relative_difference(&reference.state.psi));
        carried = run.state;
    }
    outcome(worst <= 0.01, format!("10 frames, RealTime(2) warm-started: worst ψ deviation {worst:.2e} (≤ 1e-2)"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("convergence count", convergence_count),
        ("residual decay", residual_decay),
        ("iteration cost", iteration_cost),
        ("chord fidelity", chord_fidelity),
        ("profile recovery", profile_recovery),
        ("FEM convergence order", fem_order),
        ("optimization correctness", optimization),
        ("conservation invariants", conservation),
        ("real-time truncation", real_time_sequence),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        // Direct writes bypass the harness capture, so the gate is always shown.
        let _ = writeln!(std::io::stderr(), "[{tag}] {} {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
