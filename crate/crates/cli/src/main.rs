//! Command-line runner: single sessions, deterministic replay, the
//! ablation grid, and site-pack linting.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use webagent_core::environment::SitePack;
use webagent_core::memory::WindowSize;
use webagent_core::session::{
    replay_trajectory, run_session, write_trajectory, AblationFlags, EnvironmentSelection,
    FinalStatus, ModelsRef, SessionConfig, Trajectory,
};

#[derive(Parser)]
#[command(name = "webagent", version, about = "Web-agent runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session against a site pack or a live browser endpoint.
    Run(RunArgs),
    /// Re-execute a logged action sequence against a pack and verify
    /// snapshot agreement.
    Replay {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Run the ablation flag grid over a directory of packs and print a
    /// success-rate table.
    Ablate(AblateArgs),
    /// Lint a site pack.
    ValidatePack { pack: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Session config file; direct flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pack: Option<PathBuf>,
    /// Remote-debugging endpoint (e.g. http://127.0.0.1:9222).
    #[arg(long, conflicts_with = "pack")]
    browser: Option<String>,
    #[arg(long)]
    models: Option<PathBuf>,
    /// Task JSON file ({instruction, target_url, task_id, constraints}).
    #[arg(long)]
    task_file: Option<PathBuf>,
    /// Trajectory output path (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Raw memory window: a number or `unbounded`.
    #[arg(long)]
    window: Option<String>,
    /// Render synthetic screenshots in the simulator.
    #[arg(long)]
    raster: bool,
    /// Directory of canned knowledge docs keyed by site domain.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Let the planner model search for site guidance itself.
    #[arg(long)]
    live_search: bool,
    #[arg(long)]
    no_eip: bool,
    #[arg(long)]
    no_checklist: bool,
    #[arg(long)]
    no_memory: bool,
    #[arg(long)]
    no_moge_fallbacks: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Directory scanned for `<name>/pack.json` fixtures.
    #[arg(long)]
    packs: PathBuf,
    /// Comma-separated subset of configurations to run.
    #[arg(long)]
    flags: Option<String>,
    /// Directory for per-run trajectory logs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
}

fn parse_window(s: &str) -> Result<WindowSize> {
    if s.eq_ignore_ascii_case("unbounded") {
        return Ok(WindowSize::UNBOUNDED);
    }
    let n: usize = s.parse().with_context(|| format!("bad window `{s}`"))?;
    Ok(WindowSize::Bounded(n))
}

fn build_run_config(args: &RunArgs) -> Result<SessionConfig> {
    let mut config = match &args.config {
        Some(path) => SessionConfig::load(path)?,
        None => {
            let models = args
                .models
                .clone()
                .context("--models is required without --config")?;
            let environment = if let Some(endpoint) = &args.browser {
                EnvironmentSelection::Browser {
                    endpoint: endpoint.clone(),
                    viewport: (1280, 800),
                    settle_delay_ms: 500,
                }
            } else {
                EnvironmentSelection::Simulator {
                    pack: args.pack.clone().context("--pack or --browser is required")?,
                    synthetic_raster: args.raster,
                }
            };
            SessionConfig {
                task: None,
                max_steps: webagent_core::session::DEFAULT_MAX_STEPS,
                window_size: WindowSize::default(),
                flags: AblationFlags::default(),
                environment,
                models: ModelsRef::Path(models),
                knowledge_corpus: None,
                live_search: false,
                pattern: Default::default(),
            }
        }
    };

    if let Some(pack) = &args.pack {
        config.environment = EnvironmentSelection::Simulator {
            pack: pack.clone(),
            synthetic_raster: args.raster,
        };
    }
    if let Some(models) = &args.models {
        config.models = ModelsRef::Path(models.clone());
    }
    if let Some(task_file) = &args.task_file {
        let raw = std::fs::read_to_string(task_file)
            .with_context(|| format!("reading {}", task_file.display()))?;
        config.task = Some(serde_json::from_str(&raw)?);
    }
    if let Some(n) = args.max_steps {
        config.max_steps = n;
    }
    if let Some(w) = &args.window {
        config.window_size = parse_window(w)?;
    }
    if let Some(corpus) = &args.corpus {
        config.knowledge_corpus = Some(corpus.clone());
    }
    if args.live_search {
        config.live_search = true;
    }
    config.flags.eip &= !args.no_eip;
    config.flags.checklist &= !args.no_checklist;
    config.flags.memory &= !args.no_memory;
    config.flags.moge_fallbacks &= !args.no_moge_fallbacks;
    Ok(config)
}

fn print_summary(trajectory: &Trajectory) {
    println!(
        "final status: {:?} after {} step(s); model calls: {} total ({}); distillations: {}; stall warnings: {}",
        trajectory.final_status,
        trajectory.steps.len(),
        trajectory.counters.total_model_calls,
        trajectory
            .counters
            .model_calls
            .iter()
            .map(|(role, n)| format!("{role}={n}"))
            .collect::<Vec<_>>()
            .join(", "),
        trajectory.counters.distillations,
        trajectory.counters.stall_warnings,
    );
    if let Some(checklist) = &trajectory.checklist {
        for item in &checklist.items {
            println!("  [{}] {}", item.status.as_str(), item.description);
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    let config = build_run_config(&args)?;
    let trajectory = run_session(&config)?;
    print_summary(&trajectory);
    if let Some(out) = &args.out {
        write_trajectory(&trajectory, out)
            .with_context(|| format!("writing {}", out.display()))?;
        println!("trajectory written to {}", out.display());
    }
    Ok(if trajectory.final_status == FinalStatus::Success { 0 } else { 1 })
}

fn cmd_replay(pack: &Path, trajectory: &Path) -> Result<i32> {
    let report = replay_trajectory(pack, trajectory)?;
    match report.divergence {
        None => {
            println!("replay ok: {} step(s), snapshots agree", report.steps);
            Ok(0)
        }
        Some((step, detail)) => {
            eprintln!("replay diverged at step {step}: {detail}");
            Ok(1)
        }
    }
}

/// Per-pack overrides read from `<pack dir>/config.json` when present.
#[derive(Default, serde::Deserialize)]
struct PackOverrides {
    max_steps: Option<usize>,
    knowledge_corpus: Option<PathBuf>,
    synthetic_raster: Option<bool>,
}

struct AblationRow {
    name: &'static str,
    flags: AblationFlags,
    window: WindowSize,
}

fn ablation_rows() -> Vec<AblationRow> {
    let on = AblationFlags::default();
    vec![
        AblationRow { name: "full", flags: on, window: WindowSize::default() },
        AblationRow {
            name: "no_eip",
            flags: AblationFlags { eip: false, ..on },
            window: WindowSize::default(),
        },
        AblationRow {
            name: "no_checklist",
            flags: AblationFlags { checklist: false, ..on },
            window: WindowSize::default(),
        },
        AblationRow {
            name: "no_memory_w5",
            flags: AblationFlags { memory: false, ..on },
            window: WindowSize::Bounded(5),
        },
        AblationRow {
            name: "no_memory_unbounded",
            flags: AblationFlags { memory: false, ..on },
            window: WindowSize::UNBOUNDED,
        },
        AblationRow {
            name: "no_moge",
            flags: AblationFlags { moge_fallbacks: false, ..on },
            window: WindowSize::default(),
        },
    ]
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    let selected: Option<Vec<String>> = args.flags.as_ref().map(|list| {
        list.split(',')
            .map(|s| s.trim().replace('-', "_"))
            .filter(|s| !s.is_empty())
            .collect()
    });
    let rows: Vec<AblationRow> = ablation_rows()
        .into_iter()
        .filter(|row| selected.as_ref().is_none_or(|keep| keep.iter().any(|k| k == row.name)))
        .collect();
    if rows.is_empty() {
        bail!("no known configurations in --flags");
    }

    let mut packs: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(&args.packs)
        .with_context(|| format!("reading {}", args.packs.display()))?
    {
        let dir = entry?.path();
        if dir.is_dir() && dir.join("pack.json").is_file() && dir.join("models.json").is_file() {
            packs.push(dir);
        }
    }
    packs.sort();
    if packs.is_empty() {
        bail!("no `<name>/pack.json` fixtures under {}", args.packs.display());
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
    }

    let pack_names: Vec<String> = packs
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().to_string())
        .collect();
    println!("{:<22} {}  success-rate", "configuration", pack_names.join("  "));

    for row in &rows {
        let mut cells = Vec::new();
        let mut successes = 0usize;
        for (dir, name) in packs.iter().zip(&pack_names) {
            let overrides: PackOverrides = match std::fs::read_to_string(dir.join("config.json")) {
                Ok(raw) => serde_json::from_str(&raw)
                    .with_context(|| format!("{}/config.json", dir.display()))?,
                Err(_) => PackOverrides::default(),
            };
            let models = {
                let specific = dir.join(format!("models.{}.json", row.name));
                if specific.is_file() { specific } else { dir.join("models.json") }
            };
            let config = SessionConfig {
                task: None,
                max_steps: args.max_steps.or(overrides.max_steps).unwrap_or(
                    webagent_core::session::DEFAULT_MAX_STEPS,
                ),
                window_size: row.window,
                flags: row.flags,
                environment: EnvironmentSelection::Simulator {
                    pack: dir.join("pack.json"),
                    synthetic_raster: overrides.synthetic_raster.unwrap_or(false),
                },
                models: ModelsRef::Path(models),
                knowledge_corpus: overrides.knowledge_corpus.as_ref().map(|p| dir.join(p)),
                live_search: false,
                pattern: Default::default(),
            };
            let trajectory = run_session(&config)
                .with_context(|| format!("{} under {}", name, row.name))?;
            if let Some(out) = &args.out {
                write_trajectory(&trajectory, &out.join(format!("{}_{}.jsonl", name, row.name)))?;
            }
            let ok = trajectory.final_status == FinalStatus::Success;
            successes += usize::from(ok);
            cells.push(format!(
                "{:<width$}",
                if ok { "ok" } else { "fail" },
                width = name.len()
            ));
        }
        println!(
            "{:<22} {}  {}/{}",
            row.name,
            cells.join("  "),
            successes,
            packs.len()
        );
    }
    Ok(0)
}

fn cmd_validate_pack(path: &Path) -> Result<i32> {
    match SitePack::load(path) {
        Ok(pack) => {
            println!(
                "ok: {} ({} pages, {} transitions)",
                pack.site_id,
                pack.pages.len(),
                pack.transitions.len()
            );
            Ok(0)
        }
        Err(e) => {
            eprintln!("invalid pack {}: {e}", path.display());
            Ok(1)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay { pack, trajectory } => cmd_replay(&pack, &trajectory),
        Command::Ablate(args) => cmd_ablate(args),
        Command::ValidatePack { pack } => cmd_validate_pack(&pack),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
