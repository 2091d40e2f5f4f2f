//! Treatment-matrix expansion and reproducible, resumable execution.

mod manifest;
mod matrix;
mod store;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use manifest::{ManifestError, ProviderConfig, RunManifest};
pub use matrix::{derive_seed, expand_matrix, game_id_for, MatrixError, TreatmentCell};
pub use store::{
    compact_transcripts, transcript_path_for, GameStatus, ProviderMeta, RunStore, StoreError, StoreWriter,
    StoredGame,
};

use crate::agents::{FixedFractionReceiver, ReceiverPolicy, SenderAgent, SenderSpec};
use crate::game::run_game;
use crate::gateway::{Clock, Gateway, JsonlTranscript, MemoryTranscript, MockOutcome, ProviderProfile, SystemClock, TranscriptSink, VirtualClock};
use crate::llm_sender::LlmSender;
use crate::prompting::{TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error("store {0} already holds games; pass resume to continue it")]
    StoreExists(PathBuf),
    #[error("{0}")]
    Config(String),
}

/// One finished (cell, iteration) pair, as reported to progress callbacks.
#[derive(Debug, Clone)]
pub struct Progress<'a> {
    pub game: &'a StoredGame,
    pub done: usize,
    pub pending: usize,
}

type ProgressFn<'a> = dyn Fn(&Progress<'_>) + Sync + 'a;

pub struct ExecuteOptions<'a> {
    /// Maximum games in flight.
    pub jobs: usize,
    pub resume: bool,
    /// Replace every provider with its scripted mock.
    pub mock: bool,
    /// Stop after this many new games (fault injection and smoke runs).
    pub stop_after: Option<usize>,
    /// Defaults to a virtual clock in mock mode and the system clock otherwise.
    pub clock: Option<Arc<dyn Clock>>,
    pub progress: Option<&'a ProgressFn<'a>>,
}

impl Default for ExecuteOptions<'_> {
    fn default() -> Self {
        Self { jobs: 1, resume: false, mock: false, stop_after: None, clock: None, progress: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub total_pairs: usize,
    /// Pairs already in the store when the run started.
    pub skipped: usize,
    pub executed: usize,
    pub failed_this_run: usize,
    /// Failed games across the whole store after the run.
    pub failed_in_store: usize,
    /// Pairs still missing from the store.
    pub remaining: usize,
}

impl RunSummary {
    pub fn all_complete(&self) -> bool {
        self.failed_in_store == 0 && self.remaining == 0
    }
}

struct Resolved {
    templates: Arc<TemplateSet>,
    template_hash: String,
    gateway: Arc<Gateway>,
}

fn fallback_script(rounds: u32, samples: u32) -> Vec<MockOutcome> {
    vec![MockOutcome::Reply("AMOUNT: 0".into()); (rounds * samples) as usize]
}

fn build_sender(
    manifest: &RunManifest,
    cell: &TreatmentCell,
    game_id: &str,
    resolved: &Resolved,
    mock: bool,
    sink: Arc<MemoryTranscript>,
) -> Result<(Box<dyn SenderAgent + Send>, Option<ProviderMeta>), String> {
    let spec: SenderSpec = cell.sender().map_err(|e| e.to_string())?;
    if let Some(s) = spec.build_scripted(cell.receiver_r) {
        return Ok((s, None));
    }
    let SenderSpec::Llm { profile: name } = spec else { unreachable!("scripted senders handled above") };
    let config = manifest.providers.get(&name).ok_or_else(|| format!("no provider profile '{name}'"))?;
    let profile: ProviderProfile = if mock {
        config.mock_profile(&name, fallback_script(manifest.game_config.num_rounds, cell.strategy.samples()))
    } else {
        config.http_profile(&name)
    };
    profile.validate()?;
    let meta = ProviderMeta {
        profile: name,
        model_id: profile.model_id.clone(),
        endpoint_url: profile.endpoint_url.clone(),
        mock: profile.is_mock(),
    };
    let sender = LlmSender::new(
        resolved.gateway.clone(),
        profile,
        resolved.templates.clone(),
        sink as Arc<dyn TranscriptSink>,
        cell.objective,
        cell.strategy,
        cell.toggles,
        manifest.game_config,
        game_id,
    );
    Ok((Box::new(sender), Some(meta)))
}

fn play_one(
    manifest: &RunManifest,
    cell: &TreatmentCell,
    iteration: u32,
    seed: u64,
    resolved: &Resolved,
    mock: bool,
) -> (StoredGame, Vec<crate::gateway::TranscriptEntry>) {
    let game_id = game_id_for(seed);
    let sink = Arc::new(MemoryTranscript::new());
    let mut stored = StoredGame {
        game_id: game_id.clone(),
        cell_key: cell.key(),
        cell: cell.clone(),
        iteration,
        seed,
        template_hash: resolved.template_hash.clone(),
        provider: None,
        status: GameStatus::Complete,
        error: None,
        failed_round: None,
        record: crate::game::GameRecord::new(manifest.game_config, cell.sender_id.clone(), cell.receiver_r),
    };
    let receiver = match ReceiverPolicy::new(cell.receiver_r) {
        Ok(p) => FixedFractionReceiver::new(p),
        Err(e) => {
            stored.status = GameStatus::Failed;
            stored.error = Some(e.to_string());
            return (stored, Vec::new());
        }
    };
    match build_sender(manifest, cell, &game_id, resolved, mock, sink.clone()) {
        Err(e) => {
            stored.status = GameStatus::Failed;
            stored.error = Some(e);
        }
        Ok((mut sender, meta)) => {
            stored.provider = meta;
            match run_game(sender.as_mut(), &receiver, &manifest.game_config, &cell.toggles, seed) {
                Ok(record) => stored.record = record,
                Err(aborted) => {
                    log::warn!("{game_id} ({}) aborted: {aborted}", cell.key());
                    stored.status = GameStatus::Failed;
                    stored.error = Some(aborted.cause.to_string());
                    stored.failed_round = Some(aborted.round_index);
                    stored.record = aborted.partial;
                }
            }
        }
    }
    (stored, sink.take())
}

/// Runs every (cell, iteration) pair not yet in the store.
///
/// Each game's transcript entries are written before its store line, so a
/// game present in the store always has its full transcript. On resume,
/// transcript entries of games that never reached the store are discarded.
pub fn execute(manifest: &RunManifest, opts: &ExecuteOptions<'_>) -> Result<RunSummary, RunError> {
    let templates = match &manifest.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::builtin().clone(),
    };
    let clock = opts.clock.clone().unwrap_or_else(|| {
        if opts.mock {
            Arc::new(VirtualClock::new())
        } else {
            Arc::new(SystemClock)
        }
    });
    let resolved = Resolved {
        template_hash: templates.hash(),
        templates: Arc::new(templates),
        gateway: Arc::new(Gateway::new(clock)),
    };

    let store_path = &manifest.output_path;
    let transcript_path = transcript_path_for(store_path);
    let existing = if store_path.exists() {
        if opts.resume {
            RunStore::load_for_resume(store_path)?
        } else {
            let s = RunStore::load(store_path)?;
            if !s.is_empty() {
                return Err(RunError::StoreExists(store_path.clone()));
            }
            s
        }
    } else {
        RunStore::default()
    };
    let dropped = compact_transcripts(&transcript_path, &existing)?;
    if dropped > 0 {
        log::info!("discarded {dropped} transcript entries of unfinished games");
    }

    let writer = StoreWriter::open(store_path)?;
    let transcripts = JsonlTranscript::open(&transcript_path).map_err(|e| StoreError::io(&transcript_path, e))?;

    let done_pairs = existing.completed_pairs();
    let all_pairs = manifest.pairs();
    let mut pending: Vec<(usize, u32, u64)> = all_pairs
        .iter()
        .copied()
        .filter(|(ci, it, _)| !done_pairs.contains(&(manifest.cells[*ci].key(), *it)))
        .collect();
    let skipped = all_pairs.len() - pending.len();
    if let Some(limit) = opts.stop_after {
        pending.truncate(limit);
    }

    let next = AtomicUsize::new(0);
    let finished = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<StoreError>> = Mutex::new(None);
    let jobs = opts.jobs.max(1).min(pending.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(ci, iteration, seed)) = pending.get(idx) else { break };
                let cell = &manifest.cells[ci];
                let (game, entries) = play_one(manifest, cell, iteration, seed, &resolved, opts.mock);
                let written = transcripts
                    .append_all(&entries)
                    .map_err(|e| StoreError::io(&transcript_path, e))
                    .and_then(|_| writer.append(&game));
                if let Err(e) = written {
                    abort.store(true, Ordering::SeqCst);
                    fatal.lock().unwrap().get_or_insert(e);
                    break;
                }
                if !game.is_complete() {
                    failed.fetch_add(1, Ordering::SeqCst);
                }
                let done = finished.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(cb) = opts.progress {
                    cb(&Progress { game: &game, done, pending: pending.len() });
                }
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e.into());
    }
    let executed = finished.into_inner();
    let failed_this_run = failed.into_inner();
    Ok(RunSummary {
        total_pairs: all_pairs.len(),
        skipped,
        executed,
        failed_this_run,
        failed_in_store: existing.failed_count() + failed_this_run,
        remaining: all_pairs.len() - skipped - executed,
    })
}
