use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trustlab::agents::{fixed_fraction_respond, ReceiverPolicy};
use trustlab::analysis::{export_reports, rank_leaderboard, summarize, DEFAULT_ALPHA};
use trustlab::gateway::{read_transcript, TranscriptEntry};
use trustlab::prompting::TemplateSet;
use trustlab::runner::{execute, transcript_path_for, ExecuteOptions, Progress, RunManifest, RunStore, StoreError};

/// Repeated trust-game experiments: run a manifest, build reports, replay games.
#[derive(Debug, Parser)]
#[command(name = "trustlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play every (cell, iteration) pair of a manifest into the store.
    Run {
        /// Manifest TOML file.
        #[arg(long)]
        manifest: PathBuf,
        /// Store file; overrides the manifest's `output`.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Maximum games in flight.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
        /// Continue an existing store, skipping pairs already recorded.
        #[arg(long)]
        resume: bool,
        /// Replace every provider with its scripted mock; no network access.
        #[arg(long)]
        mock: bool,
    },
    /// Summarize a store into leaderboards, distributions and panels.
    Report {
        #[arg(long)]
        store: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Significance level for rank grouping.
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Print one game round by round with its transcripts and re-check its payoffs.
    Replay {
        #[arg(long)]
        store: PathBuf,
        game_id: String,
    },
    /// Check a template directory (or the built-in set) for placeholder errors.
    ValidateTemplates {
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

/// Exit 1: the work itself failed. Exit 2: bad input, nothing was done.
enum Failure {
    Runtime(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> ExitCode {
        match self {
            Failure::Runtime(_) => ExitCode::from(1),
            Failure::Usage(_) => ExitCode::from(2),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { manifest, store, jobs, resume, mock } => cmd_run(&manifest, store, jobs, resume, mock),
        Command::Report { store, out, alpha } => cmd_report(&store, &out, alpha),
        Command::Replay { store, game_id } => cmd_replay(&store, &game_id),
        Command::ValidateTemplates { templates } => cmd_validate(templates.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let (Failure::Runtime(msg) | Failure::Usage(msg)) = &f;
            eprintln!("error: {msg}");
            f.code()
        }
    }
}

fn cmd_run(
    manifest_path: &Path,
    store: Option<PathBuf>,
    jobs: u16,
    resume: bool,
    mock: bool,
) -> Result<ExitCode, Failure> {
    let mut manifest = RunManifest::load(manifest_path).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(store) = store {
        manifest.output_path = store;
    }
    if !mock && manifest.cells.iter().any(|c| c.sender_id.starts_with("llm:")) {
        log::info!("live mode: provider requests will go over the network");
    }
    let progress = |p: &Progress<'_>| {
        let g = p.game;
        let status = if g.is_complete() {
            format!("sender {}", g.record.sender_total)
        } else {
            format!("FAILED: {}", g.error.as_deref().unwrap_or("unknown"))
        };
        eprintln!("[{}/{}] {} #{} {}: {status}", p.done, p.pending, g.cell_key, g.iteration, g.game_id);
    };
    let opts = ExecuteOptions { jobs: jobs as usize, resume, mock, progress: Some(&progress), ..Default::default() };
    let summary = execute(&manifest, &opts).map_err(|e| match e {
        trustlab::runner::RunError::StoreExists(_) | trustlab::runner::RunError::Templates(_) => {
            Failure::Usage(e.to_string())
        }
        other => Failure::Runtime(other.to_string()),
    })?;
    println!(
        "{} pairs: {} already stored, {} played ({} failed); store holds {} failed; {} remaining",
        summary.total_pairs,
        summary.skipped,
        summary.executed,
        summary.failed_this_run,
        summary.failed_in_store,
        summary.remaining
    );
    println!("store: {}", manifest.output_path.display());
    Ok(if summary.all_complete() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn load_store(path: &Path) -> Result<RunStore, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("store {} does not exist", path.display())));
    }
    RunStore::load(path).map_err(|e: StoreError| Failure::Runtime(e.to_string()))
}

fn cmd_report(store_path: &Path, out: &Path, alpha: f64) -> Result<ExitCode, Failure> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::Usage(format!("alpha {alpha} must be in (0, 1)")));
    }
    let store = load_store(store_path)?;
    let summaries = summarize(&store).map_err(|e| Failure::Runtime(e.to_string()))?;
    let boards = rank_leaderboard(&summaries, alpha);
    let files = export_reports(&summaries, &boards, out, &store.content_hash())
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    for s in summaries.iter().filter(|s| s.excluded_failures > 0 || s.is_missing()) {
        eprintln!("{}: {} failed game(s) excluded", s.cell_key, s.excluded_failures);
    }
    for f in &files.files {
        println!("{}", out.join(f).display());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_entry(e: &TranscriptEntry) {
    println!("    [{}] {:?} ({} ms)", e.exchange_id, e.outcome, e.latency_ms);
    if let Some(last) = e.request.last() {
        println!("      last request message ({:?}): {}", last.role, indent(&last.content));
    }
    if let Some(r) = &e.reasoning_text {
        println!("      reasoning: {}", indent(r));
    }
    if let Some(t) = &e.response_text {
        println!("      reply: {}", indent(t));
    }
    if let Some(err) = &e.error {
        println!("      error: {err}");
    }
}

fn indent(s: &str) -> String {
    let mut out = String::new();
    for (i, line) in s.lines().enumerate() {
        if i > 0 {
            out.push('\n');
            if !line.trim().is_empty() {
                out.push_str("        ");
            }
        }
        out.push_str(line.trim_end());
    }
    out
}

fn cmd_replay(store_path: &Path, game_id: &str) -> Result<ExitCode, Failure> {
    let store = load_store(store_path)?;
    let game = store.find(game_id).ok_or_else(|| Failure::Usage(format!("no game '{game_id}' in the store")))?;
    let transcripts = read_transcript(&transcript_path_for(store_path))
        .map_err(|e| Failure::Runtime(format!("reading transcripts: {e}")))?;
    let rec = &game.record;

    println!("game {}  cell {}  iteration {}  seed {}", game.game_id, game.cell_key, game.iteration, game.seed);
    println!("sender {}  receiver r={}  status {:?}", rec.sender_descriptor, rec.receiver_return_fraction, game.status);
    if let Some(p) = &game.provider {
        println!("provider {} model {} {}", p.profile, p.model_id, if p.mock { "(mock)" } else { &p.endpoint_url });
    }
    if let Some(err) = &game.error {
        println!("error in round {}: {err}", game.failed_round.unwrap_or(0));
    }
    println!("{:>5} {:>8} {:>9} {:>9} {:>8} {:>9}", "round", "sent", "tripled", "returned", "sender", "receiver");
    for o in &rec.outcomes {
        println!(
            "{:>5} {:>8} {:>9} {:>9} {:>8} {:>9}",
            o.round_index,
            o.amount_sent.to_string(),
            o.tripled_amount.to_string(),
            o.amount_returned.to_string(),
            o.sender_round_payoff.to_string(),
            o.receiver_round_payoff.to_string()
        );
        for id in &o.exchange_ids {
            match transcripts.iter().find(|e| &e.exchange_id == id) {
                Some(e) => print_entry(e),
                None => println!("    [{id}] missing from transcript"),
            }
        }
    }
    println!("totals: sender {}  receiver {}", rec.sender_total, rec.receiver_total);

    let mut problems = Vec::new();
    if let Err(e) = rec.verify() {
        problems.push(e.to_string());
    }
    match ReceiverPolicy::new(rec.receiver_return_fraction) {
        Ok(policy) => {
            for o in &rec.outcomes {
                let expected = fixed_fraction_respond(o.tripled_amount, &policy);
                if expected != o.amount_returned {
                    problems.push(format!(
                        "round {}: receiver returned {} but its policy gives {expected}",
                        o.round_index, o.amount_returned
                    ));
                }
            }
        }
        Err(e) => problems.push(e.to_string()),
    }
    if game.is_complete() && !rec.is_complete() {
        problems.push(format!("marked complete with {} of {} rounds", rec.outcomes.len(), rec.config.num_rounds));
    }
    if problems.is_empty() {
        println!("verified: recomputed payoffs match the stored record");
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Failure::Runtime(format!("stored record does not replay: {}", problems.join("; "))))
    }
}

fn cmd_validate(dir: Option<&Path>) -> Result<ExitCode, Failure> {
    let set = match dir {
        Some(d) if !d.is_dir() => return Err(Failure::Usage(format!("{} is not a directory", d.display()))),
        Some(d) => TemplateSet::load_dir(d).map_err(|e| Failure::Runtime(e.to_string()))?,
        None => TemplateSet::builtin().clone(),
    };
    set.validate().map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("templates {} ok (sha256 {})", set.version(), set.hash());
    Ok(ExitCode::SUCCESS)
}
