use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use reluflow::catalog::TargetMap;
use reluflow::kr::{kr_map, GridDensity};
use reluflow::maurey::{
    ball_grid, builtin_mixture, rate_fit, sample_schedule, Reference, TimeMixture,
};
use reluflow::metrics::{oscillation_counterexample, rounding_tv};
use reluflow::pipeline::{evaluate, realize, PipelineConfig, PipelinePlan};
use reluflow::schedule::{ControlSchedule, PointBatch, SegmentSource};

#[derive(Parser)]
#[command(
    name = "reluflow",
    version,
    about = "Single-neuron ReLU flows that realize transport maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; built-in defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; the main artifact goes to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a flow plan for a target map and report its errors.
    Realize {
        /// Also write the fully expanded segment list.
        #[arg(long)]
        expand: bool,
    },
    /// Sampling-rate study on a time-dependent mixture.
    Maurey,
    /// Tabulate a Knöthe–Rosenblatt map between two grid densities.
    Kr,
    /// Reproduce the oscillation and rounding counterexamples.
    Counterexample,
    /// Trajectories of points under a schedule or plan.
    Simulate {
        /// Schedule or plan JSON.
        #[arg(long)]
        schedule: PathBuf,
        /// CSV with one point per line.
        #[arg(long)]
        points: PathBuf,
    },
    /// Re-evaluate a stored plan against the config's target.
    Evaluate {
        #[arg(long)]
        plan: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    match &cli.command {
        Command::Realize { expand } => cmd_realize(cli, *expand),
        Command::Maurey => cmd_maurey(cli).map(|_| true),
        Command::Kr => cmd_kr(cli).map(|_| true),
        Command::Counterexample => cmd_counterexample(cli).map(|_| true),
        Command::Simulate { schedule, points } => cmd_simulate(cli, schedule, points).map(|_| true),
        Command::Evaluate { plan } => cmd_evaluate(cli, plan),
    }
}

fn load_config<T: DeserializeOwned>(cli: &Cli, default: impl FnOnce() -> T) -> Result<T> {
    match &cli.config {
        Some(path) => {
            let text = read(path)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
        None => Ok(default()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes `name` under `--out`, or prints it when `stdout` is set and no directory was given.
fn emit(cli: &Cli, name: &str, text: &str, stdout: bool) -> Result<()> {
    match &cli.out {
        Some(dir) => {
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
        }
        None if stdout => {
            print!("{text}");
            Ok(())
        }
        None => Ok(()),
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn default_pipeline() -> PipelineConfig {
    PipelineConfig::unit(TargetMap::sine_shear(0.25), 2, 1.0 / 16.0)
}

#[derive(Serialize)]
struct Report<'a, C, R> {
    config: &'a C,
    report: R,
}

fn cmd_realize(cli: &Cli, expand: bool) -> Result<bool> {
    let config: PipelineConfig = load_config(cli, default_pipeline)?;
    let r = realize(&config)?;
    emit(cli, "plan.json", &r.plan.to_json(), false)?;
    if expand {
        let mut full = ControlSchedule::new(r.plan.d);
        r.plan.visit(false, &mut |seg| full.push_ref(seg));
        emit(cli, "schedule.json", &full.to_json(), false)?;
    }
    if let Some(f) = &r.factorization {
        emit(cli, "factorization.json", &serde_json::to_string(f)?, false)?;
    }
    let report = Report {
        config: &config,
        report: &r.report,
    };
    emit(cli, "report.json", &pretty(&report)?, true)?;
    if !r.report.passed {
        eprintln!(
            "errors above epsilon {}: L^p {:.4e}, TV {:.4e}",
            config.epsilon, r.report.errors.lp_error, r.report.errors.tv_error
        );
    }
    Ok(r.report.passed)
}

fn cmd_evaluate(cli: &Cli, plan: &Path) -> Result<bool> {
    let config: PipelineConfig = load_config(cli, default_pipeline)?;
    let plan = PipelinePlan::from_json(&read(plan)?)?;
    let eval = evaluate(&config, &plan)?;
    let passed = eval.lp_error <= config.epsilon && eval.tv_error <= config.epsilon;
    emit(
        cli,
        "evaluation.json",
        &pretty(&Report {
            config: &config,
            report: eval,
        })?,
        true,
    )?;
    Ok(passed)
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MaureyConfig {
    /// `None` selects the built-in three-atom mixture.
    mixture: Option<TimeMixture>,
    ns: Vec<usize>,
    seeds: usize,
    seed: u64,
    /// Evaluation points: the `grid^d` lattice clipped to the unit ball.
    grid: usize,
    /// RK4 step of the reference flow.
    step: f64,
}

impl Default for MaureyConfig {
    fn default() -> Self {
        MaureyConfig {
            mixture: None,
            ns: vec![16, 32, 64, 128, 256, 512],
            seeds: 20,
            seed: 0,
            grid: 11,
            step: 1e-4,
        }
    }
}

fn cmd_maurey(cli: &Cli) -> Result<()> {
    let mut config: MaureyConfig = load_config(cli, MaureyConfig::default)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if config.grid < 2 || config.seeds == 0 || config.step.is_nan() || config.step <= 0.0 {
        bail!("need grid >= 2, seeds >= 1, step > 0");
    }
    let m = config.mixture.clone().unwrap_or_else(builtin_mixture);
    m.validate()?;
    let pts = ball_grid(m.d, config.grid, 1.0);
    let reference = Reference::new(&m, &pts, config.step);
    let jobs: Vec<(usize, u64)> = config
        .ns
        .iter()
        .flat_map(|&n| (0..config.seeds as u64).map(move |s| (n, config.seed + s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let run = sample_schedule(&m, n, seed)?;
            Ok((n, seed, reference.errors(&run, m.radius)))
        })
        .collect::<reluflow::Result<Vec<_>>>()?;
    let mut csv = format!("# config {}\n", serde_json::to_string(&config)?);
    csv.push_str("kind,n,seed,e_n,delta_n,ball_violations\n");
    for (n, seed, e) in &rows {
        writeln!(
            csv,
            "run,{n},{seed},{:e},{:e},{}",
            e.e_n, e.delta_n, e.ball_violations
        )?;
    }
    let mut means = Vec::new();
    for &n in &config.ns {
        let group: Vec<_> = rows.iter().filter(|r| r.0 == n).map(|r| r.2).collect();
        let k = group.len() as f64;
        let e = group.iter().map(|r| r.e_n).sum::<f64>() / k;
        let q = group.iter().map(|r| r.delta_n).sum::<f64>() / k;
        let v: usize = group.iter().map(|r| r.ball_violations).sum();
        writeln!(csv, "mean,{n},,{e:e},{q:e},{v}")?;
        means.push((n as f64, e, q));
    }
    let es: Vec<_> = means.iter().map(|m| (m.0, m.1)).collect();
    let qs: Vec<_> = means.iter().map(|m| (m.0, m.2)).collect();
    if let (Ok(se), Ok(sq)) = (rate_fit(&es), rate_fit(&qs)) {
        writeln!(csv, "slope,,,{se},{sq},")?;
    }
    emit(cli, "maurey.csv", &csv, true)
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct KrConfig {
    source: GridDensity,
    target: GridDensity,
    /// Table points per axis over the source box.
    table: usize,
}

impl Default for KrConfig {
    fn default() -> Self {
        KrConfig {
            source: GridDensity::uniform(1, 513),
            target: GridDensity::from_fn(&[513], |x| 2.0 * x[0]).expect("linear density"),
            table: 17,
        }
    }
}

fn cmd_kr(cli: &Cli) -> Result<()> {
    let config: KrConfig = load_config(cli, KrConfig::default)?;
    if config.table < 2 {
        bail!("table needs at least 2 points per axis");
    }
    let map = kr_map(&config.source, &config.target)?;
    let d = map.dim();
    let src = &config.source;
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let (lo, hi) = (src.lower[k], src.upper[k]);
            (0..config.table)
                .map(|i| lo + (hi - lo) * i as f64 / (config.table - 1) as f64)
                .collect()
        })
        .collect();
    let total = config.table.pow(d as u32);
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; d];
            for k in (0..d).rev() {
                x[k] = axes[k][idx % config.table];
                idx /= config.table;
            }
            x
        })
        .collect();
    let images = points
        .par_iter()
        .map(|x| map.try_eval(x))
        .collect::<reluflow::Result<Vec<_>>>()?;
    let mut csv = String::new();
    let names: Vec<String> = (0..d)
        .map(|k| format!("x{k}"))
        .chain((0..d).map(|k| format!("y{k}")))
        .collect();
    csv.push_str(&names.join(","));
    csv.push('\n');
    for (x, y) in points.iter().zip(&images) {
        let row: Vec<String> = x.iter().chain(y).map(|v| v.to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    emit(cli, "kr.csv", &csv, true)
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CounterexampleConfig {
    alpha: f64,
    oscillation_h: Vec<f64>,
    rounding_h: Vec<f64>,
    refine: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        CounterexampleConfig {
            alpha: 0.1,
            oscillation_h: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            rounding_h: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            refine: 8,
        }
    }
}

fn cmd_counterexample(cli: &Cli) -> Result<()> {
    let config: CounterexampleConfig = load_config(cli, CounterexampleConfig::default)?;
    let mut csv = format!("# config {}\n", serde_json::to_string(&config)?);
    csv.push_str("example,h,sup_displacement,tv\n");
    for &h in &config.oscillation_h {
        let (sup, tv) = oscillation_counterexample(config.alpha, h)?;
        writeln!(csv, "oscillation,{h},{sup},{tv}")?;
    }
    for &h in &config.rounding_h {
        writeln!(csv, "rounding,{h},{h},{}", rounding_tv(h, config.refine)?)?;
    }
    emit(cli, "counterexample.csv", &csv, true)
}

/// Points from CSV: one comma-separated point per line, `#` starts a comment.
fn parse_points(text: &str, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let x = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .with_context(|| format!("{}:{}: not a list of numbers", path.display(), i + 1))?;
        if let Some(first) = out.first() {
            if first.len() != x.len() {
                bail!(
                    "{}:{}: expected {} coordinates, got {}",
                    path.display(),
                    i + 1,
                    first.len(),
                    x.len()
                );
            }
        }
        out.push(x);
    }
    Ok(out)
}

fn cmd_simulate(cli: &Cli, schedule: &Path, points: &Path) -> Result<()> {
    let text = read(schedule)?;
    let pts = parse_points(&read(points)?, points)?;
    let mut csv = String::new();
    let row = |csv: &mut String, t: f64, batch: &PointBatch| -> Result<()> {
        for i in 0..batch.len() {
            let x: Vec<String> = batch.point(i).iter().map(|v| v.to_string()).collect();
            writeln!(csv, "{i},{t},{},{}", x.join(","), batch.logdets()[i])?;
        }
        Ok(())
    };
    let header = |d: usize| {
        let xs: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        format!("point,t,{},logdet\n", xs.join(","))
    };
    if let Ok(s) = ControlSchedule::from_json(&text) {
        check_points(&pts, s.dim())?;
        csv.push_str(&header(s.dim()));
        let mut batch = PointBatch::new(s.dim(), &pts);
        let mut t = 0.0;
        row(&mut csv, t, &batch)?;
        for seg in s.iter() {
            batch.apply(seg);
            t += seg.duration;
            row(&mut csv, t, &batch)?;
        }
    } else {
        // A plan: one row per stage, since swap stages hold millions of segments.
        let plan = PipelinePlan::from_json(&text)
            .with_context(|| format!("{} is neither a schedule nor a plan", schedule.display()))?;
        check_points(&pts, plan.d)?;
        csv.push_str(&header(plan.d));
        let mut batch = PointBatch::new(plan.d, &pts);
        let mut t = 0.0;
        row(&mut csv, t, &batch)?;
        let stages = [
            PipelinePlan {
                g: ControlSchedule::new(plan.d),
                m2: None,
                ..plan.clone()
            },
            PipelinePlan {
                m1: None,
                m2: None,
                ..plan.clone()
            },
            PipelinePlan {
                m1: None,
                g: ControlSchedule::new(plan.d),
                ..plan.clone()
            },
        ];
        for stage in &stages {
            let flowed = stage.flow_points(&batch.points(), false);
            let logdets: Vec<f64> = batch
                .logdets()
                .iter()
                .zip(&flowed.logdets)
                .map(|(a, b)| a + b)
                .collect();
            let mut dt = 0.0;
            stage.visit(false, &mut |seg| dt += seg.duration);
            t += dt;
            batch = PointBatch::with_logdets(plan.d, &flowed.points, &logdets);
            row(&mut csv, t, &batch)?;
        }
    }
    emit(cli, "trajectories.csv", &csv, true)
}

fn check_points(pts: &[Vec<f64>], d: usize) -> Result<()> {
    match pts.first() {
        Some(x) if x.len() != d => bail!("points have {} coordinates, schedule has {d}", x.len()),
        _ => Ok(()),
    }
}
