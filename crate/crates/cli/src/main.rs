//! Command-line front end: simulation, deterministic objects, boundary
//! classification and the verification experiments.
//!
//! Exit codes: 0 on success, 2 when a verdict failed, 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use smallnoise::branching::{
    gw_phi, solve_csb_kappa, solve_ct_phi, theta_inverse_csb, theta_inverse_ct, BranchingMechanism, MechanismKind,
    TransformKind,
};
use smallnoise::flow::{compute_rescaled_flow, default_poincare_samples, poincare_residual};
use smallnoise::io::CsvTable;
use smallnoise::limit_law::{laplace_w, sample_w, samples_csv, WLaw};
use smallnoise::model::{ModelParams, ModelSpec};
use smallnoise::scale::{classify_boundaries, BoundaryVerdict, FellerClass};
use smallnoise::sde::{critical_time, default_dt, simulate_paths, SimSpec};
use smallnoise::stats::MeanEstimate;
use smallnoise::verify::{
    calibrate_main_theorem, run, ExperimentConfig, ExperimentReport, Metrics, Provenance, Rule, Timing, Verdict,
    EXPERIMENTS,
};

#[derive(Parser, Debug)]
#[command(name = "smallnoise", version, about = "Small-noise diffusions leaving a repelling boundary")]
struct Cli {
    /// Experiment configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving report.json and data files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Format of data tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate paths of the diffusion.
    Simulate(SimulateArgs),
    /// Tabulate the rescaled flow and check the Poincaré equation.
    Flow(FlowArgs),
    /// Sample the martingale limit W and compare moments with the exact law.
    LimitLaw(LimitLawArgs),
    /// Solve a branching transform on a grid.
    Branching(BranchingArgs),
    /// Classify both ends of the domain.
    Classify(ClassifyArgs),
    /// Run a named verification experiment.
    Verify(VerifyArgs),
    /// Summarise report files.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// Built-in model name; overrides the config.
    #[arg(long)]
    model: Option<String>,
    /// Model parameter `key=value`, repeatable.
    #[arg(long = "param", value_parser = parse_key_value)]
    params: Vec<(String, f64)>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epsilon: f64,
    /// Start point; defaults to epsilon.
    #[arg(long)]
    x0: Option<f64>,
    /// Horizon; defaults to twice the critical time.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 100)]
    n_paths: usize,
    #[arg(long, default_value_t = 200)]
    intervals: usize,
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 20.0)]
    y_max: f64,
    #[arg(long, default_value_t = 2001)]
    grid: usize,
}

#[derive(Args, Debug)]
struct LimitLawArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Gw,
    Ct,
    Csb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Binary,
    Geometric,
    Feller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransformArg {
    Phi,
    Kappa,
    Theta,
}

#[derive(Args, Debug)]
struct BranchingArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Ct)]
    kind: KindArg,
    #[arg(long, value_enum, default_value_t = FamilyArg::Binary)]
    family: FamilyArg,
    #[arg(long, value_enum, default_value_t = TransformArg::Phi)]
    transform: TransformArg,
    /// Geometric parameter.
    #[arg(long, default_value_t = 0.3)]
    u: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    a_prime0: f64,
    /// Right end of the grid; defaults to 1, or 0.9 of the admissible cap.
    #[arg(long)]
    s_max: Option<f64>,
    #[arg(long, default_value_t = 101)]
    points: usize,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// One of: fluid-limit, main-theorem, gronwall, linearization,
    /// three-stages, hitting, overshoot.
    experiment: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Freeze the calibrated threshold into `<out-dir>/config.toml` instead
    /// of running the experiment (main-theorem only).
    #[arg(long)]
    calibrate: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report files; defaults to `<out-dir>/report.json`.
    files: Vec<PathBuf>,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((k.to_string(), v))
}

/// Output directory and table format of one run.
struct Sink {
    out_dir: PathBuf,
    format: Format,
}

impl Sink {
    fn write_table(&self, stem: &str, table: &CsvTable) -> Result<PathBuf> {
        let path = self.out_dir.join(match self.format {
            Format::Csv => format!("{stem}.csv"),
            Format::Json => format!("{stem}.json"),
        });
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        match self.format {
            Format::Csv => table.write(&path)?,
            Format::Json => {
                let value = serde_json::json!({ "meta": table.meta, "columns": table.header, "rows": table.rows });
                std::fs::write(&path, serde_json::to_string_pretty(&value)? + "\n")?;
            }
        }
        Ok(path)
    }

    fn finish(&self, report: &ExperimentReport, started: Instant) -> Result<bool> {
        report.write_json(&self.out_dir.join("report.json"))?;
        let timing = Timing {
            experiment: report.experiment.clone(),
            seconds: started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        };
        std::fs::write(self.out_dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
        for v in &report.verdicts {
            let tag = match (v.passed, v.informational) {
                (true, _) => "pass",
                (false, true) => "info",
                (false, false) => "FAIL",
            };
            println!(
                "{tag:4} {}: observed {:.6e} {:?} {:.6e} ({:?})",
                v.name, v.observed, v.rule, v.threshold, v.provenance
            );
        }
        Ok(report.passed())
    }
}

fn base_config(cli: &Cli, model: &ModelArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::for_model(model.model.as_deref().unwrap_or("logistic_feller")),
    };
    if let Some(name) = &model.model {
        if cfg.model.name != *name {
            cfg.model = ModelSpec::named(name);
        }
    }
    for (k, v) in &model.params {
        cfg.model.params.insert(k.clone(), *v);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let ctx = Sink { out_dir: cli.out_dir.clone(), format: cli.format };
    std::fs::create_dir_all(&ctx.out_dir).with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    let started = Instant::now();
    match &cli.command {
        Command::Simulate(a) => simulate(cli, &ctx, a, started),
        Command::Flow(a) => flow_cmd(cli, &ctx, a, started),
        Command::LimitLaw(a) => limit_law(cli, &ctx, a, started),
        Command::Branching(a) => branching(cli, &ctx, a, started),
        Command::Classify(a) => classify(cli, &ctx, a, started),
        Command::Verify(a) => verify(cli, &ctx, a, started),
        Command::Report(a) => report(&ctx, a),
    }
}

fn simulate(cli: &Cli, ctx: &Sink, a: &SimulateArgs, started: Instant) -> Result<bool> {
    let mut cfg = base_config(cli, &a.model)?;
    cfg.epsilons = vec![a.epsilon];
    cfg.n_paths = a.n_paths;
    cfg.dt = a.dt;
    let model = cfg.build_model()?;
    let x0 = a.x0.unwrap_or(a.epsilon);
    let params = if a.epsilon == 0.0 {
        ModelParams::deterministic(&model, x0)?
    } else {
        ModelParams::new(&model, a.epsilon, x0)?
    };
    let horizon = match a.horizon {
        Some(h) => h,
        None if a.epsilon > 0.0 => 2.0 * critical_time(model.gamma, a.epsilon)?,
        None => bail!("--horizon is required when epsilon = 0"),
    };
    let dt = match a.dt {
        Some(dt) => dt,
        None if a.epsilon > 0.0 => default_dt(model.gamma, a.epsilon)?,
        None => 1e-3 / model.gamma,
    };
    let spec = SimSpec::uniform(dt, horizon, a.intervals)?;
    let ens = simulate_paths(&model, &params, &spec, a.n_paths, cfg.seed)?;
    ctx.write_table("paths", &ens.to_csv(a.n_paths))?;
    let finals = ens.final_states();
    let est = MeanEstimate::of(&finals)?;
    let mut metrics = Metrics::new(&["epsilon", "horizon", "dt", "final_mean", "final_stderr", "absorbed_fraction"]);
    metrics.push(vec![a.epsilon, horizon, dt, est.mean, est.stderr, ens.absorbed_fraction()]);
    ctx.finish(&ExperimentReport::new("simulate", &cfg, model.fingerprint(), metrics), started)
}

fn flow_cmd(cli: &Cli, ctx: &Sink, a: &FlowArgs, started: Instant) -> Result<bool> {
    let cfg = base_config(cli, &a.model)?;
    let model = cfg.build_model()?;
    let rescaled = compute_rescaled_flow(&model, a.y_max, a.grid)?;
    let check = poincare_residual(&rescaled, &default_poincare_samples(&rescaled))?;
    ctx.write_table("rescaled_flow", &rescaled.to_csv())?;
    let mut metrics = Metrics::new(&["y_max", "grid", "functional_residual", "infinitesimal_residual"]);
    metrics.push(vec![a.y_max, a.grid as f64, check.functional, check.infinitesimal]);
    let mut report = ExperimentReport::new("flow", &cfg, model.fingerprint(), metrics);
    report.verdicts.push(Verdict::new(
        "poincare_functional",
        check.functional,
        Rule::Below,
        1e-6,
        Provenance::Analytic,
    ));
    ctx.finish(&report, started)
}

fn limit_law(cli: &Cli, ctx: &Sink, a: &LimitLawArgs, started: Instant) -> Result<bool> {
    let cfg = base_config(cli, &a.model)?;
    let model = cfg.build_model()?;
    let law = WLaw::new(model.gamma, model.a_prime0)?;
    let w = sample_w(&law, a.n, cfg.seed)?;
    ctx.write_table("laws/w_samples", &samples_csv("w", &law, cfg.seed, &w))?;
    let mut metrics = Metrics::new(&["statistic", "argument", "estimate", "stderr", "exact"]);
    let mean = MeanEstimate::of(&w)?;
    metrics.push(vec![0.0, f64::NAN, mean.mean, mean.stderr, law.mean()]);
    let atom = MeanEstimate::frequency(w.iter().map(|&v| v == 0.0))?;
    metrics.push(vec![1.0, f64::NAN, atom.mean, atom.stderr, law.atom()]);
    let mut report_verdicts = vec![
        Verdict::new("mean", (mean.mean - law.mean()).abs(), Rule::AtMost, 3.0 * mean.stderr, Provenance::Analytic),
        Verdict::new("atom", (atom.mean - law.atom()).abs(), Rule::AtMost, 3.0 * atom.stderr, Provenance::Analytic),
    ];
    for s in [0.5, 1.0, 2.0, 4.0] {
        let lt: Vec<f64> = w.iter().map(|&v| (-s * v).exp()).collect();
        let est = MeanEstimate::of(&lt)?;
        let exact = laplace_w(&law, s);
        metrics.push(vec![2.0, s, est.mean, est.stderr, exact]);
        report_verdicts.push(Verdict::new(
            format!("laplace[{s}]"),
            (est.mean - exact).abs(),
            Rule::AtMost,
            3.0 * est.stderr,
            Provenance::Analytic,
        ));
    }
    let mut report = ExperimentReport::new("limit-law", &cfg, model.fingerprint(), metrics);
    report.verdicts = report_verdicts;
    ctx.finish(&report, started)
}

fn branching(cli: &Cli, ctx: &Sink, a: &BranchingArgs, started: Instant) -> Result<bool> {
    let kind = match a.kind {
        KindArg::Gw => MechanismKind::GwGeneratingFunction,
        KindArg::Ct => MechanismKind::CtMechanism,
        KindArg::Csb => MechanismKind::CsbMechanism,
    };
    let mech = match a.family {
        FamilyArg::Binary => BranchingMechanism::binary_splitting(kind),
        FamilyArg::Geometric => BranchingMechanism::geometric(kind, a.u)?,
        FamilyArg::Feller => {
            if a.kind != KindArg::Csb {
                bail!("the Feller mechanism is a continuous-state mechanism; use --kind csb");
            }
            BranchingMechanism::feller(a.gamma, a.a_prime0)?
        }
    };
    let s_max = match (a.s_max, mech.csb_cap()) {
        (Some(s), _) => s,
        (None, Some(cap)) if a.kind == KindArg::Csb && a.transform == TransformArg::Theta => 0.9 * cap,
        _ => 1.0,
    };
    if a.points < 2 {
        bail!("--points must be at least 2");
    }
    let grid: Vec<f64> = (0..a.points).map(|i| s_max * i as f64 / (a.points - 1) as f64).collect();
    let sol = match (a.kind, a.transform) {
        (KindArg::Gw, TransformArg::Phi) => gw_phi(&mech, &grid)?,
        (KindArg::Ct, TransformArg::Phi) => solve_ct_phi(&mech, &grid)?,
        (KindArg::Csb, TransformArg::Kappa) => solve_csb_kappa(&mech, &grid)?,
        (KindArg::Ct, TransformArg::Theta) => theta_inverse_ct(&mech, &grid)?,
        (KindArg::Csb, TransformArg::Theta) => theta_inverse_csb(&mech, &grid)?,
        (k, t) => bail!("no solver for {t:?} of a {k:?} mechanism"),
    };
    let stem = match sol.kind {
        TransformKind::Phi => "transform_phi",
        TransformKind::Kappa => "transform_kappa",
        TransformKind::Theta => "transform_theta",
    };
    ctx.write_table(stem, &sol.to_csv())?;
    let cfg = base_config(cli, &ModelArgs::default())?;
    let mut metrics = Metrics::new(&["s_max", "points", "residual"]);
    metrics.push(vec![s_max, a.points as f64, sol.residual]);
    let hash = serde_json::to_string(&mech)?;
    ctx.finish(&ExperimentReport::new("branching", &cfg, hash, metrics), started)
}

fn class_name(c: FellerClass) -> &'static str {
    match c {
        FellerClass::Regular => "regular",
        FellerClass::Exit => "exit",
        FellerClass::Entrance => "entrance",
        FellerClass::Natural => "natural",
    }
}

fn verdict_json(v: &BoundaryVerdict) -> serde_json::Value {
    serde_json::json!({
        "class": class_name(v.feller),
        "attracting": v.attracting,
        "location": v.location,
        "detail": v,
    })
}

fn classify(cli: &Cli, ctx: &Sink, a: &ClassifyArgs, started: Instant) -> Result<bool> {
    let mut cfg = base_config(cli, &a.model)?;
    cfg.epsilons = vec![a.epsilon];
    let model = cfg.build_model()?;
    let (left, right) = classify_boundaries(&model, a.epsilon)?;
    let out = serde_json::json!({
        "model": model.name,
        "epsilon": a.epsilon,
        "left": verdict_json(&left),
        "right": verdict_json(&right),
    });
    let text = serde_json::to_string_pretty(&out)? + "\n";
    std::fs::write(ctx.out_dir.join("classification.json"), &text)?;
    print!("{text}");
    let mut metrics = Metrics::new(&["epsilon", "left_attracting", "right_attracting"]);
    metrics.push(vec![a.epsilon, f64::from(u8::from(left.attracting)), f64::from(u8::from(right.attracting))]);
    ctx.finish(&ExperimentReport::new("classify", &cfg, model.fingerprint(), metrics), started)
}

fn verify(cli: &Cli, ctx: &Sink, a: &VerifyArgs, started: Instant) -> Result<bool> {
    if !EXPERIMENTS.contains(&a.experiment.as_str()) {
        bail!("unknown experiment `{}`; known: {}", a.experiment, EXPERIMENTS.join(", "));
    }
    let mut cfg = base_config(cli, &a.model)?;
    if let Some(e) = &a.epsilons {
        if a.experiment == "hitting" {
            cfg.hitting_epsilons = e.clone();
        } else {
            cfg.epsilons = e.clone();
        }
    }
    if let Some(n) = a.n_paths {
        cfg.n_paths = n;
    }
    if a.dt.is_some() {
        cfg.dt = a.dt;
    }
    if a.calibrate {
        if a.experiment != "main-theorem" {
            bail!("--calibrate applies to main-theorem only");
        }
        let threshold = calibrate_main_theorem(&cfg)?;
        println!("w1_final = {} ({})", threshold.value, threshold.note);
        cfg.thresholds.insert("w1_final".into(), threshold);
        let path = ctx.out_dir.join("config.toml");
        std::fs::write(&path, cfg.to_toml()?)?;
        println!("wrote {}", path.display());
        return Ok(true);
    }
    let outcome = run(&a.experiment, &cfg)?;
    for (name, table) in &outcome.tables {
        let stem = name.strip_suffix(".csv").unwrap_or(name);
        ctx.write_table(stem, table)?;
    }
    ctx.write_table("metrics", &outcome.report.metrics_csv())?;
    ctx.finish(&outcome.report, started)
}

fn report(ctx: &Sink, a: &ReportArgs) -> Result<bool> {
    let files: Vec<PathBuf> = if a.files.is_empty() { vec![ctx.out_dir.join("report.json")] } else { a.files.clone() };
    let mut all_passed = true;
    for f in &files {
        let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let r = ExperimentReport::from_json(&text).map_err(|e| anyhow!("{}: {e}", f.display()))?;
        let failed = r.failures().len();
        println!(
            "{}: {} on {} ({} verdicts, {} failed)",
            f.display(),
            r.experiment,
            r.config.model.name,
            r.verdicts.len(),
            failed
        );
        all_passed &= r.passed();
    }
    Ok(all_passed)
}
