//! Command-line front end for training, evaluation, rendering, ablations,
//! gradient checks and toy-scene generation.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or config error,
//! 3 runtime abort. The `fewshot-nerf` binary is a thin wrapper around
//! [`run`].

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use fewshot_nerf::scenedata::{sphere3_dataset, write_atomic, write_transforms_dataset};
use fewshot_nerf::trainer::{
    ablate, evaluate, extra_variants, ladder, load_dataset, removal_variants, render_novel, train, variant,
    Checkpoint, Preset, TrainConfig, Variant,
};
use fewshot_nerf::verify::{gradcheck_suite, GradcheckScale};
use fewshot_nerf::Error;
use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ABORT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fewshot-nerf", version, about = "Few-shot radiance fields at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes checkpoint, loss log and resolved config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on the test views of its dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this transforms manifest instead of the configured data.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        views: Option<usize>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one dataset camera from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Camera index in the dataset.
        #[arg(long)]
        view: usize,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Image path (`.png`, anything else is PPM).
        #[arg(long)]
        out: PathBuf,
        /// Depth map path (raw little-endian f32 with a size header).
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Train and evaluate a set of ablation configurations.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// `ladder`, `removal`, `all`, or a comma-separated list of variant names.
        /// Any --toggle flags add a `custom` row.
        #[arg(long, default_value = "ladder")]
        variants: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compare every analytic gradient with central finite differences.
    Gradcheck {
        /// `quick` or `full`.
        #[arg(long, default_value = "full")]
        scale: String,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write a toy dataset (transforms manifest plus oracle images).
    MakeScene {
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        force: bool,
    },
}

/// Flags that build a [`TrainConfig`].
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config: a `preset` name plus overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset to start from; overrides the file's `preset` key.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Switch a component, e.g. `--toggle kl=off`. Repeatable.
    #[arg(long = "toggle", value_name = "NAME=on|off")]
    pub toggles: Vec<String>,
    /// Number of training views in the few-shot split.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

/// A failed command: exit code plus message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    pub fn abort(message: impl Display) -> Self {
        Self {
            code: EXIT_ABORT,
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Format { .. } | Error::Io { .. } => Self::usage(e),
            _ => Self::abort(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Record of one invocation, written as `run.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    fn new(command: &str, config: &ConfigArgs, out: &Path) -> Self {
        Self {
            command: command.into(),
            config: config.config.clone(),
            out: out.to_path_buf(),
            seed: config.seed,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// An output directory built in a hidden sibling and renamed into place on
/// [`commit`](RunDir::commit). Dropping it uncommitted removes the staging
/// directory.
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl RunDir {
    pub fn create(target: &Path, force: bool) -> CliResult<Self> {
        if target.exists() && !force {
            return Err(Failure::usage(format!(
                "{}: already exists (pass --force to replace it)",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| Failure::usage(format!("{}: not a directory name", target.display())))?;
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Failure::usage(format!("{}: {e}", parent.display())))?;
        let staging = parent.join(format!(".{}.staging-{}", name.to_string_lossy(), std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Failure::abort(format!("{}: {e}", staging.display())))?;
        }
        fs::create_dir(&staging).map_err(|e| Failure::usage(format!("{}: {e}", staging.display())))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.staging.join(name), bytes).map_err(Failure::abort)
    }

    pub fn commit(mut self) -> CliResult<()> {
        let io = |e: std::io::Error| Failure::abort(format!("{}: {e}", self.target.display()));
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(io)?;
        }
        fs::rename(&self.staging, &self.target).map_err(io)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn parse_toggle(spec: &str) -> CliResult<(&str, bool)> {
    let bad = || Failure::usage(format!("--toggle `{spec}`: expected NAME=on|off"));
    let (name, value) = spec.split_once('=').ok_or_else(bad)?;
    let on = match value {
        "on" => true,
        "off" => false,
        _ => return Err(bad()),
    };
    Ok((name, on))
}

/// Resolves the config file, preset and flag overrides into a validated
/// config. Flags win over the file, the file over the preset.
pub fn resolve_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let (mut table, source) = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let table = text
                .parse::<toml::Table>()
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            (table, path.display().to_string())
        }
        None => (toml::Table::new(), "flags".to_string()),
    };
    let file_preset = match table.remove("preset") {
        Some(toml::Value::String(s)) => Some(s),
        Some(other) => return Err(Failure::usage(format!("{source}: preset must be a string, got {other}"))),
        None => None,
    };
    let name = args.preset.clone().or(file_preset).unwrap_or_else(|| "toy".into());
    let preset = Preset::parse(&name)?;
    let mut cfg =
        TrainConfig::with_overrides(preset, table).map_err(|e| Failure::usage(format!("{source}: {e}")))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(views) = args.views {
        cfg.data.views = views;
    }
    if let Some(iterations) = args.iterations {
        cfg.iterations = iterations;
    }
    for spec in &args.toggles {
        let (name, on) = parse_toggle(spec)?;
        cfg.toggles.set(name, on)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn select_variants(spec: &str, custom: Option<&TrainConfig>) -> CliResult<Vec<Variant>> {
    let mut out = match spec {
        "ladder" => ladder(),
        "removal" => {
            let mut v = vec![variant("full")?];
            v.extend(removal_variants());
            v
        }
        "all" => ladder().into_iter().chain(extra_variants()).chain(removal_variants()).collect(),
        list => list
            .split(',')
            .map(|n| variant(n.trim()))
            .collect::<fewshot_nerf::Result<Vec<_>>>()?,
    };
    if let Some(cfg) = custom {
        out.push(Variant {
            name: "custom".into(),
            toggles: cfg.toggles,
            kl_source: cfg.loss.kl_source,
        });
    }
    Ok(out)
}

fn cmd_train(args: &ConfigArgs, out: &Path, force: bool) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    let dir = RunDir::create(out, force)?;
    let data = load_dataset(&cfg)?;
    let started = Instant::now();
    let run = train(&cfg, &data)?;
    dir.write("checkpoint.bin", &run.checkpoint.to_bytes())?;
    dir.write("loss.log", run.log_text().as_bytes())?;
    dir.write("config.toml", cfg.to_toml().as_bytes())?;
    dir.write("run.json", RunManifest::new("train", args, out).to_json().as_bytes())?;
    if let Some(e) = run.aborted {
        dir.commit()?;
        return Err(Failure::abort(format!(
            "training aborted after {} iterations: {e} (last finite state saved to {})",
            run.checkpoint.iteration,
            out.display()
        )));
    }
    let mut summary = format!(
        "trained {} iterations in {:.1}s",
        run.checkpoint.iteration,
        started.elapsed().as_secs_f64()
    );
    if !data.test.is_empty() {
        let report = evaluate(&run.checkpoint, &data)?;
        dir.write("eval.json", report.to_json().as_bytes())?;
        summary += &format!("; test PSNR {:.3} SSIM {:.4}", report.mean.psnr, report.mean.ssim);
    }
    dir.commit()?;
    println!("{summary} -> {}", out.display());
    Ok(())
}

fn load_for_checkpoint(
    path: &Path,
    manifest: Option<&Path>,
    views: Option<usize>,
) -> CliResult<(Checkpoint, fewshot_nerf::scenedata::Dataset)> {
    let ckpt = Checkpoint::load(path)?;
    let mut cfg = ckpt.config.clone();
    if let Some(m) = manifest {
        cfg.data.manifest = Some(m.to_path_buf());
    }
    if let Some(v) = views {
        cfg.data.views = v;
    }
    let data = load_dataset(&cfg)?;
    Ok((ckpt, data))
}

fn cmd_eval(checkpoint: &Path, manifest: Option<&Path>, views: Option<usize>, out: Option<&Path>) -> CliResult<()> {
    let (ckpt, data) = load_for_checkpoint(checkpoint, manifest, views)?;
    let report = evaluate(&ckpt, &data)?;
    let json = report.to_json();
    if let Some(path) = out {
        write_atomic(path, json.as_bytes()).map_err(Failure::abort)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_render(
    checkpoint: &Path,
    view: usize,
    manifest: Option<&Path>,
    out: &Path,
    depth: Option<&Path>,
) -> CliResult<()> {
    let (ckpt, data) = load_for_checkpoint(checkpoint, manifest, None)?;
    let camera = data
        .cameras
        .get(view)
        .ok_or_else(|| Failure::usage(format!("view {view} out of range (dataset has {})", data.len())))?;
    render_novel(&ckpt, camera, data.background, out, depth)?;
    println!("rendered view {view} -> {}", out.display());
    Ok(())
}

fn cmd_ablate(args: &ConfigArgs, spec: &str, out: &Path, force: bool) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    let custom = (!args.toggles.is_empty()).then_some(&cfg);
    let variants = select_variants(spec, custom)?;
    let dir = RunDir::create(out, force)?;
    let data = load_dataset(&cfg)?;
    let table = ablate(&cfg, &variants, &data)?;
    let text = table.to_text();
    dir.write("ablation.txt", text.as_bytes())?;
    let json = serde_json::to_string_pretty(&table).expect("table serializes");
    dir.write("ablation.json", json.as_bytes())?;
    dir.write("config.toml", cfg.to_toml().as_bytes())?;
    dir.write("run.json", RunManifest::new("ablate", args, out).to_json().as_bytes())?;
    dir.commit()?;
    print!("{text}");
    Ok(())
}

fn cmd_gradcheck(scale: &str, inject_fault: bool) -> CliResult<()> {
    let scale = GradcheckScale::parse(scale)?;
    let started = Instant::now();
    let report = gradcheck_suite(scale, inject_fault)?;
    print!("{}", report.to_text());
    println!("{} components in {:.1}s", report.rows.len(), started.elapsed().as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            message: format!("gradient check failed: {}", report.failing().join(", ")),
        })
    }
}

fn cmd_make_scene(name: &str, out: &Path, size: usize, force: bool) -> CliResult<()> {
    if name != "sphere3" {
        return Err(Failure::usage(format!("unknown scene `{name}` (available: sphere3)")));
    }
    let data = sphere3_dataset(size)?;
    let dir = RunDir::create(out, force)?;
    write_transforms_dataset(dir.path(), &data)?;
    dir.commit()?;
    println!("wrote {} views of {name} at {size}x{size} -> {}", data.len(), out.display());
    Ok(())
}

/// Runs a parsed command.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, force } => cmd_train(&config, &out, force),
        Command::Eval {
            checkpoint,
            manifest,
            views,
            out,
        } => cmd_eval(&checkpoint, manifest.as_deref(), views, out.as_deref()),
        Command::Render {
            checkpoint,
            view,
            manifest,
            out,
            depth,
        } => cmd_render(&checkpoint, view, manifest.as_deref(), &out, depth.as_deref()),
        Command::Ablate {
            config,
            variants,
            out,
            force,
        } => cmd_ablate(&config, &variants, &out, force),
        Command::Gradcheck { scale, inject_fault } => cmd_gradcheck(&scale, inject_fault),
        Command::MakeScene { name, out, size, force } => cmd_make_scene(&name, &out, size, force),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
