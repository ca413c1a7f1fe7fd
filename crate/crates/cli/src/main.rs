use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use alignzero::analysis::{
    adversarial_detect, compare_reports, errors_on_states, evaluate_model, mean, AdversarialConfig,
    AdversarialStateSet, AdversarialSummary, EvalConfig, EvalReport, PolicySource,
};
use alignzero::config::{load_train_config, parse_train_config, to_ini_string};
use alignzero::game::{GameKind, GameState};
use alignzero::neural::{load_checkpoint, NetParams};
use alignzero::oracle::{solve_game, StateTable};
use alignzero::report::{render_comparison, render_report, write_atomic};
use alignzero::training::{load_visits, train_with_progress};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "alignzero", version, about = "AlphaZero with value-informed selection and augmentation on solved games")]
struct Cli {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for self-play, matches and scans.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Directory that holds training runs.
    #[arg(long, global = true, env = "ALIGNZERO_RUN_DIR", default_value = "runs")]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a game exactly and write the oracle table.
    Solve {
        #[arg(long)]
        game: GameKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network by self-play.
    Train(TrainArgs),
    /// Evaluate a checkpoint against the oracle and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Find endgame states the network misjudges, or score a checkpoint on a saved set.
    Detect(DetectArgs),
    /// Compare JSON reports against the first one.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Directory for the comparison table and charts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render CSV tables and SVG charts from JSON reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the size and root value of an oracle table, or one position's entry.
    Inspect {
        table: PathBuf,
        /// Board diagram such as "X.O/.X./..." with the side to move given by --to-move.
        #[arg(long)]
        board: Option<String>,
        #[arg(long, default_value = "p1")]
        to_move: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Config file with [train], [net] and [search] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    game: Option<GameKind>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    profile: Option<String>,
    /// Extra `section.key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to <run-dir>/<timestamp>-<mode>-<game>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyFlag {
    SearchVisits,
    SearchGreedy,
    Network,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    table: PathBuf,
    /// Training visit counts (visits.json) for the generalization curve.
    #[arg(long)]
    visits: Option<PathBuf>,
    /// Games per seed against the oracle; 0 skips match play.
    #[arg(long, default_value_t = 1000)]
    games: usize,
    /// Comma-separated evaluation seeds; defaults to the global seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    simulations: Option<usize>,
    /// Play the policy head's argmax instead of sampling it.
    #[arg(long)]
    policy_greedy: bool,
    #[arg(long, value_enum, default_value = "search-visits")]
    misalignment_policy: PolicyFlag,
    #[arg(long)]
    label: Option<String>,
    /// Report path; defaults to reports/<label>.json next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Score the checkpoint on this saved state set instead of searching.
    #[arg(long)]
    states: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    games: usize,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    /// Largest number of empty cells solved exactly.
    #[arg(long)]
    max_empty: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    version: String,
    git: Option<String>,
    command: Vec<String>,
    seed: u64,
    started: String,
    finished: String,
    config: String,
    artifacts: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let parts: Vec<&str> =
                text.lines().map(str::trim).take_while(|l| !l.starts_with("Usage:")).filter(|l| !l.is_empty()).collect();
            eprintln!("{}", parts.join(" "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers == 0 {
        bail!("--workers must be at least 1");
    }
    match cli.command {
        Command::Solve { game, ref out } => cmd_solve(game, out),
        Command::Train(ref args) => cmd_train(&cli, args),
        Command::Evaluate(ref args) => cmd_evaluate(&cli, args),
        Command::Detect(ref args) => cmd_detect(&cli, args),
        Command::Compare { ref reports, ref out } => cmd_compare(reports, out.as_deref()),
        Command::Report { ref reports, ref out } => cmd_report(reports, out),
        Command::Inspect { ref table, ref board, ref to_move } => cmd_inspect(table, board.as_deref(), to_move),
    }
}

fn cmd_solve(game: GameKind, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            bail!("output directory {} does not exist", parent.display());
        }
    }
    let started = Instant::now();
    let table = solve_game(game, 50_000_000)?;
    table.save(out).with_context(|| format!("writing {}", out.display()))?;
    let root = table.value(&GameState::initial(game))?;
    println!(
        "{game}: {} positions, root value {root:+} ({}), {:.1}s -> {}",
        table.len(),
        outcome_name(root),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn outcome_name(v: i8) -> &'static str {
    match v {
        1 => "first player wins",
        -1 => "second player wins",
        _ => "draw",
    }
}

fn cmd_inspect(path: &Path, board: Option<&str>, to_move: &str) -> Result<()> {
    let table = StateTable::load(path).with_context(|| format!("reading {}", path.display()))?;
    let game = table.game();
    match board {
        None => {
            let root = table.value(&GameState::initial(game))?;
            println!("{game}: {} positions, root value {root:+} ({})", table.len(), outcome_name(root));
        }
        Some(b) => {
            let player = match to_move.to_ascii_lowercase().as_str() {
                "p1" | "x" => alignzero::game::Player::P1,
                "p2" | "o" => alignzero::game::Player::P2,
                other => bail!("--to-move must be p1 or p2, got `{other}`"),
            };
            let state = GameState::from_diagram(game, &b.replace('/', "\n"), player)?;
            let entry = table.lookup(&state)?;
            println!(
                "value {:+} ({} for the side to move), optimal actions {:?}, {} plies to the end",
                entry.value,
                match entry.value {
                    1 => "win",
                    -1 => "loss",
                    _ => "draw",
                },
                entry.optimal_actions.iter().collect::<Vec<_>>(),
                entry.depth_to_outcome
            );
        }
    }
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut overrides = Vec::new();
    if let Some(g) = args.game {
        overrides.push(format!("train.game={g}"));
    }
    if let Some(m) = &args.mode {
        overrides.push(format!("train.mode={m}"));
    }
    if let Some(p) = &args.profile {
        overrides.push(format!("train.profile={p}"));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("train.seed={s}"));
    }
    overrides.push(format!("train.workers={}", cli.workers));
    overrides.extend(args.overrides.iter().cloned());
    let cfg = match &args.config {
        Some(path) => load_train_config(path, &overrides)?,
        None => parse_train_config("", &overrides)?,
    };
    let started = chrono::Utc::now();
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => cli.run_dir.join(format!("{}-{}-{}", started.format("%Y%m%dT%H%M%SZ"), cfg.mode, cfg.game)),
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let config_text = to_ini_string(&cfg);
    write_atomic(&out.join("config.ini"), config_text.as_bytes())?;
    eprintln!("training {} {} for {} games into {}", cfg.game, cfg.mode, cfg.total_games, out.display());
    let result = train_with_progress(&cfg, Some(&out), |r| {
        eprintln!(
            "  {:>8} games  loss {:.4} (value {:.4}, policy {:.4})  {:.0}s",
            r.games, r.loss_total, r.loss_value, r.loss_policy, r.elapsed_secs
        );
    })?;
    let mut artifacts = vec![out.join("config.ini"), out.join("train_log.jsonl"), out.join("visits.json")];
    artifacts.extend(result.checkpoints.iter().cloned());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        git: git_revision(),
        command: std::env::args().collect(),
        seed: cfg.seed,
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        config: config_text,
        artifacts,
    };
    write_manifest(&out, &manifest)?;
    println!("{}", out.display());
    Ok(())
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "--short", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?.as_bytes())?;
    Ok(())
}

/// Adds `paths` to the manifest of the run containing `dir`, if there is one.
fn record_artifacts(dir: &Path, paths: &[PathBuf]) -> Result<()> {
    let Some(run) = dir.ancestors().find(|d| d.join("manifest.json").is_file()) else { return Ok(()) };
    let path = run.join("manifest.json");
    let mut manifest: RunManifest = serde_json::from_slice(&std::fs::read(&path)?)
        .with_context(|| format!("reading {}", path.display()))?;
    for p in paths {
        if !manifest.artifacts.contains(p) {
            manifest.artifacts.push(p.clone());
        }
    }
    manifest.finished = chrono::Utc::now().to_rfc3339();
    write_manifest(run, &manifest)
}

fn game_for(params: &NetParams<f32>) -> Result<GameKind> {
    [GameKind::Ttt3, GameKind::Ttt4, GameKind::Connect4]
        .into_iter()
        .find(|g| g.spec().feature_len() == params.config.input_dim && g.spec().action_count == params.config.action_count)
        .ok_or_else(|| anyhow!("checkpoint shape matches no known game"))
}

fn load_net(path: &Path) -> Result<(NetParams<f32>, GameKind)> {
    let params = load_checkpoint(path, None).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let game = game_for(&params)?;
    Ok((params, game))
}

fn default_report_path(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join("reports").join(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let (params, game) = load_net(&args.checkpoint)?;
    let table = StateTable::load(&args.table).with_context(|| format!("reading table {}", args.table.display()))?;
    if table.game() != game {
        bail!("table is for {} but the checkpoint plays {game}", table.game());
    }
    let visits = args.visits.as_deref().map(load_visits).transpose()?;
    let mut cfg = EvalConfig::for_game(game);
    cfg.n_games = args.games;
    cfg.seeds = if args.seeds.is_empty() { vec![cli.seed.unwrap_or(0)] } else { args.seeds.clone() };
    cfg.policy_greedy = args.policy_greedy;
    cfg.workers = cli.workers;
    if let Some(n) = args.simulations {
        cfg.search.num_simulations = n;
        cfg.misalignment.search.num_simulations = n;
    }
    cfg.search.validate()?;
    cfg.misalignment.policy = match args.misalignment_policy {
        PolicyFlag::SearchVisits => PolicySource::SearchVisits,
        PolicyFlag::SearchGreedy => PolicySource::SearchGreedy,
        PolicyFlag::Network => PolicySource::Network,
    };
    let label = args.label.clone().unwrap_or_else(|| {
        args.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
    });
    let (report, _) = evaluate_model(&params, &table, visits.as_ref(), &label, &cfg)?;
    let out = args.out.clone().unwrap_or_else(|| default_report_path(&args.checkpoint, &format!("{label}.json")));
    write_json(&out, &report)?;
    record_artifacts(out.parent().unwrap_or(Path::new(".")), std::slice::from_ref(&out))?;
    for (name, value, _) in report.metrics() {
        println!("{name:<28} {value:.4}");
    }
    println!("{}", out.display());
    Ok(())
}

fn cmd_detect(cli: &Cli, args: &DetectArgs) -> Result<()> {
    let (params, game) = load_net(&args.checkpoint)?;
    if let Some(states) = &args.states {
        let set: AdversarialStateSet = serde_json::from_slice(
            &std::fs::read(states).with_context(|| format!("reading {}", states.display()))?,
        )
        .with_context(|| format!("parsing {}", states.display()))?;
        if set.game != game {
            bail!("state set is for {} but the checkpoint plays {game}", set.game);
        }
        let errors = errors_on_states(&params, &set)?;
        println!("{} states, mean error {:.4} (detecting network: {:.4})", set.states.len(), mean(&errors), set.mean_error());
        return Ok(());
    }
    let mut cfg = AdversarialConfig::for_game(game, args.games);
    cfg.threshold = args.threshold;
    cfg.seed = cli.seed.unwrap_or(0);
    cfg.workers = cli.workers;
    if let Some(m) = args.max_empty {
        cfg.budget.max_empty_cells = m;
    }
    let set = adversarial_detect(&params, &cfg)?;
    let summary = AdversarialSummary::from(&set);
    let out = args.out.clone().unwrap_or_else(|| default_report_path(&args.checkpoint, "adversarial.json"));
    write_json(&out, &set)?;
    record_artifacts(out.parent().unwrap_or(Path::new(".")), std::slice::from_ref(&out))?;
    println!(
        "{} unique states with error > {} from {} games (mean error {:.4}, mean misalignment {:.4}, {} skipped)",
        summary.states, summary.threshold, summary.games, summary.mean_error, summary.mean_misalignment, set.skipped
    );
    println!("{}", out.display());
    Ok(())
}

fn read_reports(paths: &[PathBuf]) -> Result<Vec<EvalReport>> {
    if paths.is_empty() {
        bail!("no reports given");
    }
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

fn cmd_compare(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let reports = read_reports(paths)?;
    let cmp = compare_reports(&reports)?;
    println!("baseline: {}", cmp.baseline);
    for row in &cmp.rows {
        println!(
            "{:<28} {:<16} {:>10.4} -> {:>10.4}  {}",
            row.metric, row.candidate, row.baseline, row.value, row.summary
        );
    }
    if let Some(dir) = out {
        write_json(&dir.join("comparison.json"), &cmp)?;
        let written = render_comparison(&reports, &cmp, dir)?;
        println!("{} files -> {}", written.len() + 1, dir.display());
    }
    Ok(())
}

fn cmd_report(paths: &[PathBuf], out: &Path) -> Result<()> {
    let reports = read_reports(paths)?;
    let mut count = 0;
    for r in &reports {
        count += render_report(r, out)?.len();
    }
    println!("{count} files -> {}", out.display());
    Ok(())
}
