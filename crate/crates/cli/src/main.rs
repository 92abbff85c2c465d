mod error;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use swarmnav::autodiff::op_gradcheck_suite;
use swarmnav::baselines::BaselineConfig;
use swarmnav::bench::{
    compute_metrics, map_seeds, run_episode, run_occlusion_ablation, run_sweep, write_manifest, write_report,
    write_rows_csv, Axis, Controller, EpisodeOptions, FrameWriter, Method, OcclusionCondition, ResultRow,
};
use swarmnav::config::Config;
use swarmnav::objective::loss_gradcheck_suite;
use swarmnav::perception::{CameraId, Perception, PerceptionConfig, RigKind};
use swarmnav::policy::PolicyParams;
use swarmnav::sim::rng::stream_seed;
use swarmnav::sim::{make_circle_swap, Scenario};
use swarmnav::trainer::{rollout_gradcheck, train};

use error::CliError;

const BUILD_ID: &str = env!("SWARMNAV_BUILD_ID");

#[derive(Parser, Debug)]
#[command(name = "swarmnav", version = BUILD_ID, about = "Differentiable swarm navigation: train, evaluate, sweep, gradient-check and render")]
struct Cli {
    /// Output root; every run writes into a subdirectory.
    #[arg(long, env = "SWARMNAV_OUT", default_value = "runs", global = true)]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file (TOML), applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset: default or smoke.
    #[arg(long, default_value = "default")]
    preset: String,
    /// Dotted-key override, e.g. `--set train.lr=3e-4`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Run subdirectory name (defaults to the subcommand name).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodKind {
    Policy,
    Apf,
    Dwa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scope {
    Ops,
    Losses,
    Rollout,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a policy by backpropagation through the simulator.
    Train {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `--set train.iterations=N`.
        #[arg(long)]
        iters: Option<u64>,
        /// Shorthand for `--set train.batch_size=N`.
        #[arg(long)]
        batch: Option<usize>,
        /// Shorthand for `--set train.seed=N`.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint and optimizer state in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a policy or baseline on seeded maps, a scenario file, a sweep
    /// axis or the camera-failure ablation.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "policy")]
        method: MethodKind,
        /// Policy checkpoint (required for `--method policy`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate this scenario file instead of generated maps.
        #[arg(long, conflicts_with_all = ["sweep", "occlusion"])]
        scenario: Option<PathBuf>,
        /// Sweep one stress axis with the configured values.
        #[arg(long, value_enum, conflicts_with = "occlusion")]
        sweep: Option<AxisArg>,
        /// Run the five-condition camera-failure ablation.
        #[arg(long)]
        occlusion: bool,
        /// Failed cameras (front, left, back, right), comma separated.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["sweep", "occlusion"])]
        failed: Vec<String>,
        /// Dump per-step frames of the first episode.
        #[arg(long, conflicts_with_all = ["sweep", "occlusion"])]
        frames: bool,
    },
    /// Compare several methods along one stress axis on shared maps.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Methods: `apf`, `dwa` or `NAME=CHECKPOINT[:panoramic|:forward]`.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        /// Axis values (defaults to the configured `eval.*` list).
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        scope: Scope,
        /// Seed of the random check points (and of the rollout map).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Agents in the rollout check.
        #[arg(long, default_value_t = 4)]
        agents: usize,
        /// Horizon of the rollout check.
        #[arg(long, default_value_t = 16)]
        horizon: usize,
    },
    /// Run one episode and write its trajectory, optionally with frame images.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "policy")]
        method: MethodKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scenario file; otherwise the first configured map.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write a PNG frame per step plus an index.
        #[arg(long)]
        frames: bool,
        /// Episode length in steps (defaults to `eval.steps`).
        #[arg(long)]
        steps: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Scale,
    Density,
    Speed,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Scale => Axis::Scale,
            AxisArg::Density => Axis::Density,
            AxisArg::Speed => Axis::Speed,
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    build_id: &'a str,
    started_unix: u64,
    seed: u64,
    out_dir: String,
    outputs: Vec<String>,
    config: &'a Config,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn resolve_config(common: &Common, extra: Vec<String>) -> Result<Config, CliError> {
    let mut cfg = Config::preset(&common.preset)?;
    if let Some(path) = &common.config {
        cfg = Config::load_over(&cfg, path)?;
    }
    let mut sets = extra;
    if let Some(w) = common.workers {
        sets.push(format!("train.workers={}", w));
        sets.push(format!("eval.workers={}", w));
    }
    sets.extend(common.set.iter().cloned());
    Ok(cfg.with_overrides(&sets)?)
}

/// Creates the run directory and writes the manifest before any work.
fn start_run(out: &Path, common: &Common, command: &str, cfg: &Config, seed: u64, outputs: &[&str]) -> Result<PathBuf, CliError> {
    let dir = out.join(common.name.as_deref().unwrap_or(command));
    let manifest = RunManifest {
        command,
        args: std::env::args().collect(),
        build_id: BUILD_ID,
        started_unix: now_unix(),
        seed,
        out_dir: dir.display().to_string(),
        outputs: outputs.iter().map(|o| dir.join(o).display().to_string()).collect(),
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    write_manifest(&dir, &text)?;
    Ok(dir)
}

fn pool(workers: usize) -> Result<Option<rayon::ThreadPool>, CliError> {
    if workers == 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map(Some).map_err(|e| CliError::Config(e.to_string()))
}

fn parse_cameras(names: &[String]) -> Result<Vec<CameraId>, CliError> {
    names
        .iter()
        .map(|n| CameraId::parse(n.trim()).ok_or_else(|| CliError::Config(format!("unknown camera `{}` (front, left, back, right)", n))))
        .collect()
}

fn load_policy(path: Option<&PathBuf>) -> Result<PolicyParams, CliError> {
    let path = path.ok_or_else(|| CliError::Config("--checkpoint is required for the policy method".into()))?;
    if !path.exists() {
        return Err(CliError::Io(format!("checkpoint {} not found", path.display())));
    }
    Ok(PolicyParams::load(path)?)
}

/// Owned pieces a controller borrows from.
struct Loaded {
    params: Option<PolicyParams>,
    perception: Option<Perception>,
    baseline: BaselineConfig,
}

impl Loaded {
    fn new(kind: MethodKind, checkpoint: Option<&PathBuf>, cfg: &Config, rig: Option<RigKind>) -> Result<Self, CliError> {
        let (params, perception) = if kind == MethodKind::Policy {
            let p = load_policy(checkpoint)?;
            let pc = PerceptionConfig { rig: rig.unwrap_or(cfg.perception.rig), ..cfg.perception.clone() };
            (Some(p), Some(Perception::new(&pc)?))
        } else {
            (None, None)
        };
        Ok(Self { params, perception, baseline: cfg.baseline.clone() })
    }

    fn controller(&self, kind: MethodKind) -> Controller<'_> {
        match kind {
            MethodKind::Policy => Controller::Policy {
                params: self.params.as_ref().expect("policy loaded"),
                perception: self.perception.as_ref().expect("policy loaded"),
            },
            MethodKind::Apf => Controller::Apf(&self.baseline),
            MethodKind::Dwa => Controller::Dwa(&self.baseline),
        }
    }

    fn tile_dims(&self) -> Option<[usize; 2]> {
        self.perception.as_ref().map(|p| p.input_dims())
    }
}

fn method_name(kind: MethodKind) -> &'static str {
    match kind {
        MethodKind::Policy => "policy",
        MethodKind::Apf => "apf",
        MethodKind::Dwa => "dwa",
    }
}

fn cmd_train(out: &Path, common: Common, iters: Option<u64>, batch: Option<usize>, seed: Option<u64>, resume: bool) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(i) = iters {
        extra.push(format!("train.iterations={}", i));
    }
    if let Some(b) = batch {
        extra.push(format!("train.batch_size={}", b));
    }
    if let Some(s) = seed {
        extra.push(format!("train.seed={}", s));
    }
    let cfg = resolve_config(&common, extra)?;
    let dir = start_run(out, &common, "train", &cfg, cfg.train.seed, &["policy.ckpt", "optimizer.state", "train_log.csv"])?;
    println!("build {}", BUILD_ID);
    println!("parameters: {}", cfg.arch.param_count()?);
    println!("run directory: {}", dir.display());
    let every = (cfg.train.iterations / 20).max(1);
    let started = std::time::Instant::now();
    let outcome = train(&cfg, &dir, resume, |s| {
        if (s.iteration + 1) % every == 0 || s.iteration == 0 {
            println!(
                "iter {:>6}  total {:.4}  col {:.4}  v {:.4}  success {:.3}  lr {:.2e}  {:.1}s",
                s.iteration,
                s.total,
                s.loss_col,
                s.loss_v,
                s.success,
                s.lr,
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    println!("completed {} iterations; log {}", outcome.iterations, outcome.log_path.display());
    Ok(())
}

fn rows_for_maps(cfg: &Config, controller: Controller, name: &str, failed: &[CameraId], frames: Option<&mut FrameWriter>, scenario: Option<&Scenario>) -> Result<Vec<ResultRow>, CliError> {
    let mut jobs: Vec<(u64, Scenario)> = Vec::new();
    match scenario {
        Some(s) => jobs.push((s.seed, s.clone())),
        None => {
            for seed in map_seeds(&cfg.eval) {
                jobs.push((seed, make_circle_swap(&cfg.scenario, seed, &cfg.dynamics)?));
            }
        }
    }
    let mut frames = frames;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (k, (seed, sc)) in jobs.iter().enumerate() {
        let opts = EpisodeOptions {
            steps: cfg.eval.steps,
            noise_seed: stream_seed(*seed, &[0xC11_0001]),
            freeze_on_collision: cfg.eval.freeze_on_collision,
            failed,
            interactions: true,
        };
        let fw = if k == 0 { frames.as_deref_mut() } else { None };
        let rec = run_episode(controller, name, sc, &cfg.dynamics, &opts, fw)?;
        let m = compute_metrics(std::slice::from_ref(&rec));
        rows.push(row(name, "map", 0.0, *seed, &m));
        records.push(rec);
    }
    let m = compute_metrics(&records);
    rows.push(row(name, "all", 0.0, jobs[0].0, &m));
    Ok(rows)
}

fn row(method: &str, axis: &str, value: f64, seed: u64, m: &swarmnav::bench::MetricsReport) -> ResultRow {
    ResultRow {
        method: method.into(),
        axis: axis.into(),
        value,
        map_seed: seed,
        sr: m.success_rate,
        cr: m.collision_rate,
        mfct: m.mfct,
        mean_speed: m.mean_speed,
        duration: m.duration,
    }
}

fn print_rows(rows: &[ResultRow]) {
    println!("{:<12} {:<8} {:>8} {:>8} {:>7} {:>8} {:>8} {:>10}", "method", "axis", "value", "map", "SR", "CR", "MFCT", "speed");
    for r in rows {
        println!(
            "{:<12} {:<8} {:>8.3} {:>8} {:>7.3} {:>8.4} {:>8.2} {:>10.3}",
            r.method, r.axis, r.value, r.map_seed, r.sr, r.cr, r.mfct, r.mean_speed
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    out: &Path,
    common: Common,
    method: MethodKind,
    checkpoint: Option<PathBuf>,
    scenario: Option<PathBuf>,
    sweep: Option<AxisArg>,
    occlusion: bool,
    failed: Vec<String>,
    frames: bool,
) -> Result<(), CliError> {
    let cfg = resolve_config(&common, vec![])?;
    let failed = parse_cameras(&failed)?;
    let dir = start_run(out, &common, "eval", &cfg, cfg.eval.seed, &["results.csv", "report.toml"])?;
    let loaded = Loaded::new(method, checkpoint.as_ref(), &cfg, None)?;
    let name = method_name(method);
    let controller = loaded.controller(method);
    let pool = pool(cfg.eval.workers)?;
    if occlusion {
        let mut conditions = OcclusionCondition::STANDARD.to_vec();
        conditions.push(OcclusionCondition::All);
        let table = run_occlusion_ablation(Method { name, controller }, &conditions, &cfg, pool.as_ref())?;
        let mut w = csv::Writer::from_path(dir.join("results.csv")).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &table.rows {
            w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
            println!("{:<7} {:<6} SR {:.3}  CR {:.4}  MFCT {:.2}  ΔSR {:+.1} pp", r.mode, r.condition, r.sr, r.cr, r.mfct, r.delta_sr_pp);
        }
        w.flush()?;
        for (mode, d) in &table.left_minus_right_pp {
            println!("{} left-minus-right SR: {:+.1} pp", mode, d);
        }
        write_report(&dir.join("report.toml"), BUILD_ID, &cfg, &table)?;
        return Ok(());
    }
    if let Some(axis) = sweep {
        let axis: Axis = axis.into();
        let res = run_sweep(&[Method { name, controller }], axis, &axis.values(&cfg.eval), &cfg, pool.as_ref())?;
        write_rows_csv(&dir.join("results.csv"), &res.rows)?;
        write_rows_csv(&dir.join("results_maps.csv"), &res.per_map)?;
        write_report(&dir.join("report.toml"), BUILD_ID, &cfg, &res)?;
        print_rows(&res.rows);
        return Ok(());
    }
    let sc = scenario.as_ref().map(|p| Scenario::load(p)).transpose()?;
    let mut fw = if frames { Some(FrameWriter::new(&dir.join("frames"), loaded.tile_dims())?) } else { None };
    let rows = rows_for_maps(&cfg, controller, name, &failed, fw.as_mut(), sc.as_ref())?;
    if let Some(fw) = fw {
        println!("wrote {} frames", fw.finish()?);
    }
    write_rows_csv(&dir.join("results.csv"), &rows)?;
    write_report(&dir.join("report.toml"), BUILD_ID, &cfg, &rows)?;
    print_rows(&rows);
    Ok(())
}

fn cmd_sweep(out: &Path, common: Common, axis: AxisArg, methods: Vec<String>, values: Vec<f64>) -> Result<(), CliError> {
    let cfg = resolve_config(&common, vec![])?;
    let axis: Axis = axis.into();
    let values = if values.is_empty() { axis.values(&cfg.eval) } else { values };
    let dir = start_run(out, &common, "sweep", &cfg, cfg.eval.seed, &["sweep.csv", "sweep_maps.csv", "report.toml"])?;
    let mut loaded = Vec::new();
    for spec in &methods {
        let (name, kind, ckpt, rig) = match spec.split_once('=') {
            None => match spec.as_str() {
                "apf" => (spec.clone(), MethodKind::Apf, None, None),
                "dwa" => (spec.clone(), MethodKind::Dwa, None, None),
                other => return Err(CliError::Config(format!("unknown method `{}`; use apf, dwa or NAME=CHECKPOINT", other))),
            },
            Some((name, rest)) => {
                let (path, rig) = match rest.rsplit_once(':') {
                    Some((p, "panoramic")) => (p, Some(RigKind::Panoramic)),
                    Some((p, "forward")) => (p, Some(RigKind::Forward)),
                    _ => (rest, None),
                };
                (name.to_string(), MethodKind::Policy, Some(PathBuf::from(path)), rig)
            }
        };
        loaded.push((name, kind, Loaded::new(kind, ckpt.as_ref(), &cfg, rig)?));
    }
    let ms: Vec<Method> = loaded.iter().map(|(n, k, l)| Method { name: n, controller: l.controller(*k) }).collect();
    let pool = pool(cfg.eval.workers)?;
    let res = run_sweep(&ms, axis, &values, &cfg, pool.as_ref())?;
    write_rows_csv(&dir.join("sweep.csv"), &res.rows)?;
    write_rows_csv(&dir.join("sweep_maps.csv"), &res.per_map)?;
    write_report(&dir.join("report.toml"), BUILD_ID, &cfg, &res)?;
    print_rows(&res.rows);
    Ok(())
}

fn cmd_gradcheck(out: &Path, common: Common, scope: Scope, seed: u64, agents: usize, horizon: usize) -> Result<(), CliError> {
    let extra = match scope {
        Scope::Rollout => vec![format!("train.horizon={}", horizon), format!("scenario.n_agents={}", agents)],
        _ => vec![],
    };
    let cfg = resolve_config(&common, extra)?;
    let dir = start_run(out, &common, "gradcheck", &cfg, seed, &["gradcheck.csv"])?;
    let (tol, results): (f64, Vec<(String, f64)>) = match scope {
        Scope::Ops => (1e-6, op_gradcheck_suite(seed).map_err(|e| CliError::Numeric(e.to_string()))?.into_iter().map(|(n, r)| (n.to_string(), r.max_rel_error)).collect()),
        Scope::Losses => (1e-6, loss_gradcheck_suite(seed).map_err(|e| CliError::Numeric(e.to_string()))?.into_iter().map(|(n, r)| (n.to_string(), r.max_rel_error)).collect()),
        Scope::Rollout => {
            let params = PolicyParams::init(cfg.train.seed, &cfg.arch)?;
            println!("parameters: {}", params.count());
            let sc = make_circle_swap(&cfg.scenario, seed, &cfg.dynamics)?;
            let r = rollout_gradcheck(&cfg, &params, &sc, stream_seed(seed, &[0xC11_0002]), 1e-6)?;
            (1e-5, vec![(format!("rollout_{}x{}", sc.agents.len(), cfg.train.horizon), r.max_rel_error)])
        }
    };
    let mut w = csv::Writer::from_path(dir.join("gradcheck.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(["check", "max_rel_error", "tolerance", "pass"]).map_err(|e| CliError::Io(e.to_string()))?;
    let mut failed = Vec::new();
    for (name, err) in &results {
        let pass = *err < tol;
        println!("{:<8} {:<28} max rel err {:.3e}  (tol {:.0e})", if pass { "PASS" } else { "FAIL" }, name, err, tol);
        w.write_record([name.clone(), format!("{:e}", err), format!("{:e}", tol), pass.to_string()]).map_err(|e| CliError::Io(e.to_string()))?;
        if !pass {
            failed.push(name.clone());
        }
    }
    w.flush()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

fn cmd_render(out: &Path, common: Common, method: MethodKind, checkpoint: Option<PathBuf>, scenario: Option<PathBuf>, frames: bool, steps: Option<usize>) -> Result<(), CliError> {
    let extra = steps.map(|s| vec![format!("eval.steps={}", s)]).unwrap_or_default();
    let cfg = resolve_config(&common, extra)?;
    let dir = start_run(out, &common, "render", &cfg, cfg.eval.seed, &["trajectory.csv", "scenario.toml", "frames/index.csv"])?;
    let loaded = Loaded::new(method, checkpoint.as_ref(), &cfg, None)?;
    let sc = match scenario {
        Some(p) => Scenario::load(&p)?,
        None => make_circle_swap(&cfg.scenario, cfg.eval.seed, &cfg.dynamics)?,
    };
    sc.save(&dir.join("scenario.toml"))?;
    let opts = EpisodeOptions {
        steps: cfg.eval.steps,
        noise_seed: stream_seed(sc.seed, &[0xC11_0001]),
        freeze_on_collision: cfg.eval.freeze_on_collision,
        failed: &[],
        interactions: true,
    };
    let mut fw = if frames { Some(FrameWriter::new(&dir.join("frames"), loaded.tile_dims())?) } else { None };
    let rec = run_episode(loaded.controller(method), method_name(method), &sc, &cfg.dynamics, &opts, fw.as_mut())?;
    if let Some(fw) = fw {
        println!("wrote {} frames", fw.finish()?);
    }
    let mut w = csv::Writer::from_path(dir.join("trajectory.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(["step", "agent", "x", "y", "z", "vx", "vy", "vz", "frozen"]).map_err(|e| CliError::Io(e.to_string()))?;
    for (k, (ps, vs)) in rec.positions.iter().zip(&rec.velocities).enumerate() {
        for (i, (p, v)) in ps.iter().zip(vs).enumerate() {
            let frozen = rec.frozen_at[i].is_some_and(|f| f <= k);
            w.write_record([
                k.to_string(),
                i.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                v[0].to_string(),
                v[1].to_string(),
                v[2].to_string(),
                frozen.to_string(),
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    let m = compute_metrics(std::slice::from_ref(&rec));
    println!("SR {:.3}  CR {:.4}  MFCT {:.2}  mean speed {:.3}", m.success_rate, m.collision_rate, m.mfct, m.mean_speed);
    Ok(())
}

fn key_help() -> String {
    let mut s = String::from("Config keys (default values):\n");
    for (k, v) in Config::default().key_listing() {
        s.push_str(&format!("  {} = {}\n", k, v));
    }
    s.push_str("\nExit codes: 0 ok, 2 usage, 3 config, 4 i/o, 5 numeric, 6 checkpoint, 7 check failed.\n");
    s
}

fn main() {
    let help = key_help();
    let mut cmd = Cli::command().after_long_help(help.clone());
    for name in ["train", "eval", "sweep", "gradcheck", "render"] {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_help(h));
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let out = cli.out;
    let result = match cli.cmd {
        Cmd::Train { common, iters, batch, seed, resume } => cmd_train(&out, common, iters, batch, seed, resume),
        Cmd::Eval { common, method, checkpoint, scenario, sweep, occlusion, failed, frames } => {
            cmd_eval(&out, common, method, checkpoint, scenario, sweep, occlusion, failed, frames)
        }
        Cmd::Sweep { common, axis, methods, values } => cmd_sweep(&out, common, axis, methods, values),
        Cmd::Gradcheck { common, scope, seed, agents, horizon } => cmd_gradcheck(&out, common, scope, seed, agents, horizon),
        Cmd::Render { common, method, checkpoint, scenario, frames, steps } => {
            cmd_render(&out, common, method, checkpoint, scenario, frames, steps)
        }
    };
    if let Err(e) = result {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
