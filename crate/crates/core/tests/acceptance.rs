//! Acceptance gate: one line per criterion, `PASS` or `FAIL`, with timing.
//!
//! Run with `cargo test -p smallnoise --test acceptance`.
//! Criteria run one at a time so their timings do not overlap.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use smallnoise::branching::{
    geometric_relation_residual, geometric_theta_closed_form, solve_csb_kappa, solve_ct_phi, theta_inverse_csb,
    theta_inverse_ct, BranchingMechanism, MechanismKind,
};
use smallnoise::flow::{compute_rescaled_flow, default_poincare_samples, invert_w, poincare_residual};
use smallnoise::limit_law::{laplace_w, sample_w, WLaw};
use smallnoise::model::ModelSpec;
use smallnoise::scale::{classify_boundaries, FellerClass};
use smallnoise::stats::{variance_stderr, MeanEstimate};
use smallnoise::verify::{run, ExperimentConfig, ExperimentReport};

static SERIAL: Mutex<()> = Mutex::new(());

const LOGISTIC_CONFIG: &str = include_str!("../configs/main_theorem_logistic.toml");
const KFW_CONFIG: &str = include_str!("../configs/main_theorem_kfw.toml");

/// Runs `check`, prints the verdict line and fails the test on `FAIL`.
fn criterion(id: u32, title: &str, limit_secs: f64, check: impl FnOnce() -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (ok, detail) = check();
    let secs = start.elapsed().as_secs_f64();
    let in_time = secs < limit_secs;
    let status = if ok && in_time { "PASS" } else { "FAIL" };
    // Written past the test harness capture so every verdict line shows.
    let line = format!("criterion {id:2} {status} {title}: {detail}; {secs:.1} s (limit {limit_secs} s)\n");
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} exceeded {limit_secs} s: {secs:.1} s");
}

fn model(name: &str) -> smallnoise::DiffusionModel {
    ModelSpec::named(name).build().unwrap()
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn verdict_summary(r: &ExperimentReport) -> String {
    r.verdicts
        .iter()
        .filter(|v| !v.informational)
        .map(|v| format!("{}={:.3e}{}", v.name, v.observed, if v.passed { "" } else { "(x)" }))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn c01_rescaled_flow_golden_values() {
    criterion(1, "rescaled flow golden values", 10.0, || {
        let logistic = compute_rescaled_flow(&model("logistic_feller"), 20.0, 2001).unwrap();
        let err_logistic =
            logistic.grid().iter().zip(logistic.values()).map(|(y, v)| (v - y / (1.0 + y)).abs()).fold(0.0, f64::max);
        let ga = ModelSpec::named("gilpin_ayala_pow").with_param("theta", 2.0).build().unwrap();
        let ga = compute_rescaled_flow(&ga, 20.0, 2001).unwrap();
        let err_ga =
            ga.grid().iter().zip(ga.values()).map(|(y, v)| (v - y / (1.0 + y * y).sqrt()).abs()).fold(0.0, f64::max);
        (
            err_logistic < 1e-6 && err_ga < 1e-6,
            format!("max err logistic {err_logistic:.2e}, gilpin-ayala theta=2 {err_ga:.2e} (tol 1e-6)"),
        )
    });
}

#[test]
fn c02_inverse_round_trip_and_poincare() {
    criterion(2, "inverse round trip and Poincare residual", 10.0, || {
        let m = model("logistic_feller");
        let rescaled = compute_rescaled_flow(&m, 20.0, 2001).unwrap();
        let round_trip = rescaled
            .grid()
            .iter()
            .zip(rescaled.values())
            .skip(1)
            .map(|(&y, &x)| (invert_w(&m, x).unwrap() - y).abs() / y.max(1.0))
            .fold(0.0, f64::max);
        let check = poincare_residual(&rescaled, &default_poincare_samples(&rescaled)).unwrap();
        (
            round_trip < 1e-6 && check.functional < 1e-6,
            format!(
                "round trip {round_trip:.2e}, functional residual {:.2e} (tol 1e-6); infinitesimal {:.2e}",
                check.functional, check.infinitesimal
            ),
        )
    });
}

#[test]
fn c03_w_law() {
    criterion(3, "W law moments, atom, Laplace transform", 30.0, || {
        let law = WLaw::new(1.0, 1.0).unwrap();
        let w = sample_w(&law, 1_000_000, 3).unwrap();
        let mean = MeanEstimate::of(&w).unwrap();
        let var = mean.variance;
        let var_se = variance_stderr(&w).unwrap();
        let atom = MeanEstimate::frequency(w.iter().map(|&v| v == 0.0)).unwrap();
        let mut ok = mean.within(1.0, 3.0) && (var - 1.0).abs() <= 3.0 * var_se && atom.within((-2.0f64).exp(), 3.0);
        let mut detail = format!(
            "mean {:.4}+-{:.4}, variance {var:.4}+-{var_se:.4}, atom {:.5}+-{:.5} vs {:.5}",
            mean.mean,
            mean.stderr,
            atom.mean,
            atom.stderr,
            (-2.0f64).exp()
        );
        for s in [0.5, 1.0, 2.0, 4.0] {
            let lt: Vec<f64> = w.iter().map(|&v| (-s * v).exp()).collect();
            let est = MeanEstimate::of(&lt).unwrap();
            let exact = laplace_w(&law, s);
            ok &= est.within(exact, 3.0);
            detail.push_str(&format!(", L({s}) z={:.2}", (est.mean - exact) / est.stderr));
        }
        (ok, detail)
    });
}

#[test]
fn c04_branching_transforms() {
    criterion(4, "branching transforms", 10.0, || {
        let feller = BranchingMechanism::feller(1.0, 1.0).unwrap();
        let ks = grid(0.0, 10.0, 101);
        let kappa = solve_csb_kappa(&feller, &ks).unwrap();
        let err_kappa = ks.iter().zip(&kappa.values).map(|(s, v)| (v - 2.0 * s / (2.0 + s)).abs()).fold(0.0, f64::max);
        let ts = grid(0.0, 1.9, 96);
        let theta = theta_inverse_csb(&feller, &ts).unwrap();
        let err_theta = ts.iter().zip(&theta.values).map(|(s, v)| (v - 2.0 * s / (2.0 - s)).abs()).fold(0.0, f64::max);
        let binary = BranchingMechanism::binary_splitting(MechanismKind::CtMechanism);
        let phi1: f64 = solve_ct_phi(&binary, &[0.0, 1.0]).unwrap().values[1];
        let u: f64 = 0.3;
        let geometric = BranchingMechanism::geometric(MechanismKind::CtMechanism, u).unwrap();
        let gs = grid(0.05, 0.95, 19);
        let geo_theta = theta_inverse_ct(&geometric, &gs).unwrap();
        let relation = geometric_relation_residual(u, &geo_theta);
        let closed = gs
            .iter()
            .zip(&geo_theta.values)
            .map(|(&s, &v)| (v - geometric_theta_closed_form(u, s)).abs())
            .fold(0.0, f64::max);
        (
            err_kappa < 1e-6 && err_theta < 1e-6 && (phi1 - 0.5).abs() < 1e-6 && relation < 1e-6,
            format!(
                "kappa err {err_kappa:.2e}, theta err {err_theta:.2e}, binary phi(1) {phi1:.9}, \
                 geometric relation residual {relation:.3e} (tol 1e-6; computed theta vs its closed form {closed:.2e})"
            ),
        )
    });
}

#[test]
fn c05_boundary_classification() {
    criterion(5, "boundary classification", 10.0, || {
        let (left, right) = classify_boundaries(&model("logistic_feller"), 0.1).unwrap();
        let (_, kfw_right) = classify_boundaries(&model("kimura_fisher_wright"), 0.1).unwrap();
        let ok = left.attracting
            && left.feller == FellerClass::Exit
            && !right.attracting
            && right.feller == FellerClass::Entrance
            && kfw_right.location == Some(1.0)
            && kfw_right.feller == FellerClass::Exit;
        (
            ok,
            format!(
                "logistic 0: {:?} attracting={}, inf: {:?} attracting={}; kfw x_c=1: {:?}",
                left.feller, left.attracting, right.feller, right.attracting, kfw_right.feller
            ),
        )
    });
}

#[test]
fn c06_hitting_probability() {
    criterion(6, "hitting probability vs Monte Carlo", 60.0, || {
        let cfg = ExperimentConfig::for_model("logistic_feller");
        let r = run("hitting", &cfg).unwrap().report;
        let row = &r.metrics.rows[0];
        (r.passed(), format!("analytic {:.5}, frequency {:.5}+-{:.5} (band 3 stderr)", row[1], row[2], row[3]))
    });
}

#[test]
fn c07_main_theorem_trend() {
    criterion(7, "main theorem W1 trend and calibrated threshold", 300.0, || {
        let mut ok = true;
        let mut detail = Vec::new();
        for (name, text) in [("logistic", LOGISTIC_CONFIG), ("kfw", KFW_CONFIG)] {
            let cfg = ExperimentConfig::parse(text).unwrap();
            let r = run("main-theorem", &cfg).unwrap().report;
            let needed = r.verdicts.iter().filter(|v| v.name.starts_with("w1_"));
            ok &= needed.clone().all(|v| v.passed);
            let w1 = r.metrics.column("w1").unwrap();
            let limit = r.verdict("w1_final").unwrap().threshold;
            detail.push(format!(
                "{name}: w1 {:?} final <= {limit:.4} ({})",
                w1.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
                if needed.clone().all(|v| v.passed) { "ok" } else { "violated" }
            ));
        }
        (ok, detail.join("; "))
    });
}

#[test]
fn c08_gronwall_scaling() {
    criterion(8, "Gronwall restart gap scaling", 300.0, || {
        let mut ok = true;
        let mut detail = Vec::new();
        for (name, text) in [("logistic", LOGISTIC_CONFIG), ("kfw", KFW_CONFIG)] {
            let cfg = ExperimentConfig::parse(text).unwrap();
            let r = run("gronwall", &cfg).unwrap().report;
            ok &= r.passed();
            detail.push(format!("{name}: {}", verdict_summary(&r)));
        }
        (ok, detail.join("; "))
    });
}

#[test]
fn c09_linearization() {
    criterion(9, "linearization near the boundary", 120.0, || {
        let cfg = ExperimentConfig::for_model("logistic_feller");
        let r = run("linearization", &cfg).unwrap().report;
        let diffs = r.metrics.column("mean_abs_diff").unwrap();
        let mut linear = ExperimentConfig::for_model("custom");
        linear.model = ModelSpec::named("custom").with_param("mu1", 1.0).with_param("a1", 1.0);
        linear.n_paths = 2_000;
        let lr = run("linearization", &linear).unwrap().report;
        let worst = lr.metrics.column("max_abs_diff").unwrap().into_iter().fold(0.0, f64::max);
        (
            r.passed() && lr.verdict("noise_shared").is_some_and(|v| v.passed) && worst < 1e-9,
            format!("logistic mean |X/eps - Y| {diffs:.4?}; linear model max pathwise gap {worst:.1e} (tol 1e-9)"),
        )
    });
}

#[test]
fn c10_determinism() {
    criterion(10, "byte-identical reports across worker counts", 300.0, || {
        let mut small = ExperimentConfig::parse(LOGISTIC_CONFIG).unwrap();
        small.seed = 7;
        small.n_paths = 1_000;
        small.reference_size = 100_000;
        small.bootstrap = 20;
        let mut ok = true;
        let mut checked = Vec::new();
        for name in ["main-theorem", "gronwall", "linearization", "three-stages", "fluid-limit", "hitting", "overshoot"]
        {
            let mut cfg = small.clone();
            if name == "hitting" {
                cfg.n_paths = 200;
            }
            let render = |threads: usize| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
                pool.install(|| run(name, &cfg).unwrap().report.to_json().unwrap())
            };
            let a = render(1);
            let same = a == render(1) && a == render(3);
            ok &= same;
            checked.push(format!("{name}={}", if same { "identical" } else { "differs" }));
        }
        (ok, checked.join(" "))
    });
}
