//! `ocplab` command-line front end: one subcommand per analysis, one output
//! directory per run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use ocplab::classify::{self, ClassifyOptions};
use ocplab::config::Config;
use ocplab::{direct, extremal, flow, json, model, suite, sweep, Execution, ProblemSpec};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "ocplab", version, about = "Numerical laboratory for affine optimal control problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to runs/<command>-<config hash>-s<seed>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random draw; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// 0 = warnings, 1 = info, 2 = debug, 3 = trace; also widens JSON reports.
    #[arg(long, global = true, default_value_t = 0)]
    verbosity: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate the system under the configured open-loop control.
    Simulate,
    /// Multistart direct solve of the fixed-endpoint problem.
    Solve,
    /// Shoot a normal extremal to the target.
    Shoot,
    /// Multipliers, rank and fair/tame/smooth verdicts at the target.
    Classify,
    /// Value map over a grid slice with continuity diagnostics.
    Sweep,
    /// Closed-form oracle checks on the builtin benchmarks.
    Bench,
    /// Bracket rank at increasing depth.
    Hormander,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::Shoot => "shoot",
            Command::Classify => "classify",
            Command::Sweep => "sweep",
            Command::Bench => "bench",
            Command::Hormander => "hormander",
        }
    }
}

struct Failure {
    category: &'static str,
    message: String,
}

impl From<ocplab::Error> for Failure {
    fn from(e: ocplab::Error) -> Self {
        Failure {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            category: "io",
            message: e.to_string(),
        }
    }
}

fn fail(category: &'static str, message: impl Into<String>) -> Failure {
    Failure {
        category,
        message: message.into(),
    }
}

/// Output directory plus the facts recorded in its manifest.
struct Run {
    command: Command,
    dir: PathBuf,
    config_path: Option<PathBuf>,
    config_hash: Option<String>,
    seed: u64,
    threads: Option<usize>,
    files: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), Failure> {
        let w = BufWriter::new(File::create(self.path(name))?);
        json::write(w, value)?;
        Ok(())
    }

    fn write_csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), Failure> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_manifest(&mut self) -> Result<(), Failure> {
        let manifest = json!({
            "command": self.command.name(),
            "config": self.config_path.as_ref().map(|p| p.display().to_string()),
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "threads": self.threads,
            "parallel_feature": cfg!(feature = "parallel"),
            "versions": {
                "ocplab": ocplab::VERSION,
                "ocplab-cli": env!("CARGO_PKG_VERSION"),
            },
            "files": self.files,
        });
        let w = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        json::write(w, &manifest)?;
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_config(path: Option<&Path>) -> Result<(Config, Vec<u8>), Failure> {
    let path = path.ok_or_else(|| fail("config", "--config is required for this command"))?;
    let bytes = fs::read(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| fail("config", "config is not valid UTF-8"))?;
    Ok((Config::parse(text)?, bytes))
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(fail("config", "--threads must be positive"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| fail("config", format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the parallel feature; --threads {n} ignored");
    Ok(())
}

fn run(cli: &Cli) -> Result<String, Failure> {
    let g = &cli.global;
    configure_threads(g.threads)?;
    let loaded = match (cli.command, g.config.as_deref()) {
        (Command::Bench, None) => None,
        (_, path) => Some(load_config(path)?),
    };
    let config_hash = loaded.as_ref().map(|(_, b)| sha256_hex(b));
    let seed = g.seed.or(loaded.as_ref().and_then(|(c, _)| c.seed)).unwrap_or(0);
    let dir = g.out.clone().unwrap_or_else(|| {
        let tag = config_hash.as_deref().map_or("builtin", |h| &h[..12]);
        PathBuf::from("runs").join(format!("{}-{tag}-s{seed}", cli.command.name()))
    });
    fs::create_dir_all(&dir).map_err(|e| fail("io", format!("{}: {e}", dir.display())))?;
    let mut run = Run {
        command: cli.command,
        dir,
        config_path: g.config.clone(),
        config_hash,
        seed,
        threads: g.threads,
        files: Vec::new(),
    };
    info!("writing to {}", run.dir.display());

    let summary = match (cli.command, loaded) {
        (Command::Bench, _) => bench(&mut run)?,
        (cmd, Some((config, _))) => {
            let spec = config.problem()?;
            if let Some(w) = spec.system.potential_bound_warning(8) {
                log::warn!("{w}");
            }
            match cmd {
                Command::Simulate => simulate(&mut run, &config, &spec)?,
                Command::Solve => solve(&mut run, &config, &spec)?,
                Command::Shoot => shoot(&mut run, &config, &spec)?,
                Command::Classify => classify(&mut run, &config, &spec, g.verbosity)?,
                Command::Sweep => sweep(&mut run, &config, &spec)?,
                Command::Hormander => hormander(&mut run, &config, &spec)?,
                Command::Bench => unreachable!(),
            }
        }
        (_, None) => unreachable!("config loaded for every command but bench"),
    };
    run.write_manifest()?;
    Ok(summary)
}

fn simulate(run: &mut Run, config: &Config, spec: &ProblemSpec) -> Result<String, Failure> {
    let u = config.open_loop_control(spec)?;
    let traj = flow::integrate(spec, &u)?;
    run.write_csv("trajectory.csv", |w| traj.write_csv(w))?;
    let cost = ocplab::endpoint::cost(spec, &u).ok();
    run.write_json(
        "simulate.json",
        &json!({
            "final_state": traj.final_state(),
            "blowup_flag": traj.blowup_flag,
            "final_time": traj.times.last(),
            "cost": cost,
        }),
    )?;
    Ok(format!(
        "simulate: x(T) = {:?}{}",
        traj.final_state(),
        if traj.blowup_flag { " (left the chart)" } else { "" }
    ))
}

fn solve(run: &mut Run, config: &Config, spec: &ProblemSpec) -> Result<String, Failure> {
    let target = config.target(spec)?;
    let opts = config.solve_options(Some(run.seed))?;
    let set = direct::solve_fixed_endpoint(spec, &target, &opts)?;
    run.write_csv("candidates.csv", |w| set.write_csv(w))?;
    let mut summary = set.summary_json();
    summary["cost"] = json!(set.value());
    run.write_json("solve.json", &summary)?;
    if set.best().is_none() {
        return Err(ocplab::Error::Unreachable.into());
    }
    Ok(format!(
        "solve: V = {:.10}, {} candidates, {} clusters",
        set.value(),
        set.candidates.len(),
        set.clusters.len()
    ))
}

fn shoot(run: &mut Run, config: &Config, spec: &ProblemSpec) -> Result<String, Failure> {
    let target = config.target(spec)?;
    let p0 = config
        .shoot
        .as_ref()
        .and_then(|s| s.p0.clone())
        .unwrap_or_else(|| vec![0.0; spec.dim()]);
    if p0.len() != spec.dim() {
        return Err(fail("config", "config error at `shoot.p0`: length must equal the state dimension"));
    }
    let arc = extremal::shoot(spec, &target, &p0)?;
    let conj = extremal::conjugate_times(spec, &arc.initial_covector)?;
    run.write_csv("extremal.csv", |w| arc.write_csv(w))?;
    let residual = arc
        .final_state()
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    run.write_json(
        "shoot.json",
        &json!({
            "target": target,
            "initial_covector": arc.initial_covector,
            "cost": arc.cost,
            "final_state": arc.final_state(),
            "final_residual": residual,
            "hamiltonian_drift": arc.hamiltonian_drift(&spec.system),
            "conjugate_times": conj,
        }),
    )?;
    Ok(format!("shoot: cost {:.10}, residual {residual:.3e}, {} conjugate times", arc.cost, conj.len()))
}

fn classify(run: &mut Run, config: &Config, spec: &ProblemSpec, verbosity: u8) -> Result<String, Failure> {
    let target = config.target(spec)?;
    let opts = ClassifyOptions {
        solve: config.solve_options(Some(run.seed))?,
        seeds: Vec::new(),
    };
    let report = classify::classify_point(spec, &target, &opts)?;
    run.write_csv("candidates.csv", |w| report.candidates.write_csv(w))?;
    run.write_json("classify.json", &report.to_json(verbosity))?;
    Ok(format!(
        "classify: V = {:.10}, class {:?}, fair {:?}, tame {:?}, smooth {:?}, {:?}",
        report.value(),
        report.class_x,
        report.fair,
        report.tame,
        report.smooth,
        report.confidence
    ))
}

fn sweep(run: &mut Run, config: &Config, spec: &ProblemSpec) -> Result<String, Failure> {
    let (grid, mut opts, confirm) = config.grid(spec)?;
    opts.solve.seed = run.seed;
    let mut map = sweep::value_map(spec, &grid, &opts)?;
    let mut report = sweep::continuity_diagnostics(&map);
    if confirm {
        sweep::confirm_lsc(spec, &mut map, &mut report, &opts);
    }
    run.write_csv("value_map.csv", |w| map.write_csv(w))?;
    run.write_json("sweep.json", &map.summary_json(Some(&report)))?;
    let reached = map.values.iter().filter(|v| v.is_finite()).count();
    Ok(format!(
        "sweep: {} cells, {reached} reached, {} jump cells, {} lsc violations",
        map.values.len(),
        map.jump_flags.iter().filter(|b| **b).count(),
        report.lsc_violations.len()
    ))
}

fn bench(run: &mut Run) -> Result<String, Failure> {
    let rows = suite::run_suite(Execution::Parallel, run.seed);
    let table = suite::format_table(&rows);
    print!("{table}");
    run.write_csv("bench.csv", |w| {
        writeln!(w, "benchmark,check,passed,error,tolerance,seconds")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.benchmark,
                r.check,
                r.passed,
                flow::fmt_num(r.error),
                flow::fmt_num(r.tolerance),
                flow::fmt_num(r.seconds)
            )?;
        }
        Ok(())
    })?;
    let checks: Vec<Value> = rows
        .iter()
        .map(|r| json!({"benchmark": r.benchmark, "check": r.check, "passed": r.passed, "error": r.error, "tolerance": r.tolerance}))
        .collect();
    let failed = rows.iter().filter(|r| !r.passed).count();
    run.write_json("bench.json", &json!({"passed": rows.len() - failed, "failed": failed, "checks": checks}))?;
    if failed > 0 {
        return Err(fail("oracle-mismatch", format!("{failed} of {} oracle checks failed", rows.len())));
    }
    Ok(format!("bench: {} checks passed", rows.len()))
}

fn hormander(run: &mut Run, config: &Config, spec: &ProblemSpec) -> Result<String, Failure> {
    let h = config.hormander.clone().unwrap_or(ocplab::config::HormanderConfig { point: None, depth: None });
    let point = h.point.unwrap_or_else(|| spec.x0.clone());
    if point.len() != spec.dim() {
        return Err(fail("config", "config error at `hormander.point`: length must equal the state dimension"));
    }
    let depth = h.depth.unwrap_or(model::DEFAULT_BRACKET_DEPTH);
    let ranks: Vec<usize> = (0..=depth).map(|k| model::weak_hormander_rank(&spec.system, &point, k)).collect();
    let full = ranks.iter().position(|&r| r == spec.dim());
    run.write_json(
        "hormander.json",
        &json!({"point": point, "dim": spec.dim(), "depth": depth, "rank_by_depth": ranks, "full_rank_depth": full}),
    )?;
    Ok(match full {
        Some(k) => format!("hormander: rank {} reached at depth {k}", spec.dim()),
        None => format!("hormander: rank {} of {} at depth {depth}", ranks[depth], spec.dim()),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbosity {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let line = json!({"error": {"category": f.category, "message": f.message}});
            eprintln!("{line}");
            ExitCode::from(if f.category == "config" { 2 } else { 1 })
        }
    }
}
