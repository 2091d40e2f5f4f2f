//! Per-cell metrics, significance-grouped leaderboards and report export.

mod report;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{final_fraction, GameError};
use crate::runner::{RunStore, TreatmentCell};

pub use report::{export_reports, ReportError, ReportFiles};
pub use stats::{mann_whitney_u, normal_approximation, MannWhitney, Method, StatsError, EXACT_LIMIT};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("game {game_id}: {source}")]
    Record {
        game_id: String,
        #[source]
        source: GameError,
    },
}

/// Everything measured for one treatment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_key: String,
    pub cell: TreatmentCell,
    /// Iteration numbers of the complete games, ascending.
    pub iterations: Vec<u32>,
    /// Final fraction of the theoretical maximum, one per complete game.
    pub fractions: Vec<f64>,
    /// Dollars sent, one row per complete game, one column per round.
    pub per_round_sent: Vec<Vec<f64>>,
    /// `None` when the cell has no complete game.
    pub mean_fraction: Option<f64>,
    /// Mean over games of the per-game average amount sent, in dollars.
    pub mean_amount_sent_per_game: Option<f64>,
    pub excluded_failures: usize,
}

impl CellSummary {
    pub fn is_missing(&self) -> bool {
        self.fractions.is_empty()
    }

    /// Per-game average amount sent, in dollars.
    pub fn game_means(&self) -> Vec<f64> {
        self.per_round_sent.iter().map(|row| mean(row).unwrap_or(0.0)).collect()
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// One summary per cell in the store, ordered by cell key. Failed games are
/// counted, not measured; each fraction is recomputed from the stored rounds.
pub fn summarize(store: &RunStore) -> Result<Vec<CellSummary>, AnalysisError> {
    let mut by_cell: BTreeMap<&str, CellSummary> = BTreeMap::new();
    for game in store.sorted() {
        let entry = by_cell.entry(&game.cell_key).or_insert_with(|| CellSummary {
            cell_key: game.cell_key.clone(),
            cell: game.cell.clone(),
            iterations: Vec::new(),
            fractions: Vec::new(),
            per_round_sent: Vec::new(),
            mean_fraction: None,
            mean_amount_sent_per_game: None,
            excluded_failures: 0,
        });
        if !game.is_complete() {
            entry.excluded_failures += 1;
            continue;
        }
        let wrap = |source| AnalysisError::Record { game_id: game.game_id.clone(), source };
        game.record.verify().map_err(wrap)?;
        let fraction = final_fraction(&game.record).map_err(wrap)?;
        entry.iterations.push(game.iteration);
        entry.fractions.push(fraction);
        entry.per_round_sent.push(game.record.amounts_sent().map(|c| c.as_dollars()).collect());
    }
    Ok(by_cell
        .into_values()
        .map(|mut s| {
            s.mean_fraction = mean(&s.fractions);
            s.mean_amount_sent_per_game = mean(&s.game_means());
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub sender_id: String,
    pub mean_fraction: f64,
    pub games: usize,
    pub rank_letter: String,
}

/// Senders competing under one treatment (every cell field except the sender).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub treatment_key: String,
    pub entries: Vec<LeaderboardEntry>,
    /// Two-sided p-values between entries, indexed in entry order.
    pub p_values: Vec<Vec<f64>>,
    /// Senders present elsewhere in the run with no complete game here.
    pub missing: Vec<String>,
}

/// A, B, ..., Z, AA, AB, ...
pub fn rank_letter(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'A' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Builds one leaderboard per treatment, ordered by treatment key.
///
/// Entries are sorted by mean fraction (ties by sender id). Walking down the
/// list, an entry opens a new letter when its fractions differ from those of
/// the current group's leader at level `alpha`; it then leads the new group.
pub fn rank_leaderboard(summaries: &[CellSummary], alpha: f64) -> Vec<Leaderboard> {
    let senders: BTreeSet<&str> = summaries.iter().map(|s| s.cell.sender_id.as_str()).collect();
    let mut groups: BTreeMap<String, Vec<&CellSummary>> = BTreeMap::new();
    for s in summaries {
        groups.entry(s.cell.treatment_key()).or_default().push(s);
    }

    groups
        .into_iter()
        .map(|(treatment_key, cells)| {
            let mut present: Vec<(&CellSummary, f64)> =
                cells.iter().filter_map(|c| c.mean_fraction.map(|m| (*c, m))).collect();
            present.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cell.sender_id.cmp(&y.0.cell.sender_id)));

            let n = present.len();
            let mut p_values = vec![vec![1.0; n]; n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let p = mann_whitney_u(&present[i].0.fractions, &present[j].0.fractions)
                        .map(|r| r.p_two_sided)
                        .expect("present cells have finite, non-empty samples");
                    p_values[i][j] = p;
                    p_values[j][i] = p;
                }
            }

            let mut entries = Vec::with_capacity(n);
            let mut letter = 0;
            let mut leader = 0;
            for (i, (cell, m)) in present.iter().enumerate() {
                if i > 0 && p_values[leader][i] < alpha {
                    letter += 1;
                    leader = i;
                }
                entries.push(LeaderboardEntry {
                    sender_id: cell.cell.sender_id.clone(),
                    mean_fraction: *m,
                    games: cell.fractions.len(),
                    rank_letter: rank_letter(letter),
                });
            }

            let ranked: BTreeSet<&str> = entries.iter().map(|e| e.sender_id.as_str()).collect();
            let missing = senders.iter().filter(|s| !ranked.contains(*s)).map(|s| s.to_string()).collect();
            Leaderboard { treatment_key, entries, p_values, missing }
        })
        .collect()
}
