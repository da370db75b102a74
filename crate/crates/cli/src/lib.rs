//! The `mfred` command line: argument parsing, config resolution, task
//! dispatch and artifact writing.

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;

pub mod config;
pub mod models;
pub mod output;
pub mod tasks;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Why a run stopped before producing a verdict.
#[derive(Debug)]
pub enum Failure {
    /// Unknown model or task, wrong family, malformed arguments.
    Usage(String),
    /// Config file unreadable, malformed or inconsistent.
    Config(String),
    /// A solver or I/O error.
    Exec(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Config(_) | Failure::Exec(_) => EXIT_ERROR,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Exec(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<mfred_core::Error> for Failure {
    fn from(e: mfred_core::Error) -> Self {
        Failure::Exec(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Exec(format!("{e:#}"))
    }
}

macro_rules! tasks {
    ($($variant:ident => $name:literal, $model:literal;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum Task { $($variant),* }

        impl Task {
            pub const ALL: &'static [Task] = &[$(Task::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(Task::$variant => $name),* }
            }

            /// Catalog model used when neither the config nor the command
            /// line names one.
            pub fn default_model(self) -> &'static str {
                match self { $(Task::$variant => $model),* }
            }

            pub fn parse(s: &str) -> Option<Task> {
                match s { $($name => Some(Task::$variant),)* _ => None }
            }
        }
    };
}

tasks! {
    SolveFinite => "solve-finite", "demo-finite-A";
    VerifyReduction => "verify-reduction", "demo-finite-A";
    SolveReducedMaster => "solve-reduced-master", "demo-power";
    SolveFb => "solve-fb", "demo-power";
    VerifyConsistency => "verify-consistency", "demo-power";
    SolveMfgc => "solve-mfgc", "demo-controls-quad";
    SolveMfgcReduced => "solve-mfgc-reduced", "demo-power-controls";
    SolvePq => "solve-pq", "demo-pq-small";
    CheckAbc => "check-abc", "demo-power";
    CheckMonotone => "check-monotone", "demo-finite-A";
    NoiseSolve => "noise-solve", "demo-noise";
    NoiseExpansion => "noise-expansion", "demo-noise";
    NoiseStability => "noise-stability", "demo-noise";
    Convergence => "convergence", "demo-finite-A";
}

#[derive(Debug, Parser)]
#[command(name = "mfred", version, about = "Reduced master equations: solvers and checks")]
struct Args {
    /// A task name, or `run` to take the task from the config.
    command: String,
    /// Config overrides as key=value; values are read as JSON when possible.
    overrides: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

/// Parses `args` (including the program name), runs the task and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            };
        }
    };
    let quiet = args.quiet;
    match execute(args) {
        Ok(Verdict { pass, lines }) => {
            if !quiet {
                for l in lines {
                    println!("{l}");
                }
            }
            if pass {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(f) => {
            eprintln!("mfred: {f}");
            f.exit_code()
        }
    }
}

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

fn execute(args: Args) -> Result<Verdict, Failure> {
    let started = Instant::now();
    let mut overrides = Vec::with_capacity(args.overrides.len());
    for o in &args.overrides {
        overrides.push(config::parse_override(o).map_err(Failure::Usage)?);
    }
    let mut cfg = config::load(args.config.as_deref(), &overrides).map_err(Failure::Config)?;

    let task = if args.command == "run" {
        let name = cfg
            .task
            .as_deref()
            .ok_or_else(|| Failure::Config("`run` needs a `task` key in the config".into()))?;
        Task::parse(name).ok_or_else(|| Failure::Usage(format!("unknown task `{name}`")))?
    } else {
        let t = Task::parse(&args.command).ok_or_else(|| {
            let known: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
            Failure::Usage(format!("unknown task `{}` (known: run, {})", args.command, known.join(", ")))
        })?;
        if let Some(other) = cfg.task.as_deref().filter(|n| *n != t.name()) {
            return Err(Failure::Config(format!("config names task `{other}` but `{}` was requested", t.name())));
        }
        t
    };
    let model_name = cfg.model.clone().unwrap_or_else(|| task.default_model().to_string());
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("mfred-out").join(task.name()));

    let model = models::resolve(&model_name, &cfg)?;
    let ctx = tasks::Ctx {
        task,
        cfg: &cfg,
        seed,
        model,
    };
    let outcome = tasks::run(&ctx)?;

    // The manifest echoes the resolved config; the output directory is left
    // out so reruns elsewhere compare equal.
    cfg.task = Some(task.name().to_string());
    cfg.model = Some(model_name.clone());
    cfg.seed = Some(seed);
    cfg.out = None;
    let cfg_value = serde_json::to_value(&cfg).map_err(|e| Failure::Exec(e.to_string()))?;
    let info = output::RunInfo {
        task: task.name(),
        model: &model_name,
        seed,
        config: &cfg_value,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    output::write_all(&out_dir, &info, &outcome)?;

    let mut lines = Vec::with_capacity(outcome.checks.len() + 1);
    for c in &outcome.checks {
        let mut line = format!(
            "{} {} (margin {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            mfred_core::ode::fmt_f64(c.worst_margin)
        );
        if !c.pass {
            if let Some(w) = &c.witness {
                line.push_str(&format!(" witness: {}", w.label));
            }
            if !c.failed.is_empty() {
                line.push_str(&format!(" failed: {}", c.failed.join("; ")));
            }
        }
        lines.push(line);
    }
    lines.push(format!("wrote {}", out_dir.display()));
    Ok(Verdict {
        pass: outcome.passed(),
        lines,
    })
}
