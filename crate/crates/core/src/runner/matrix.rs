use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::SenderSpec;
use crate::observation::ObservationToggles;
use crate::prompting::{Objective, ReasoningStrategy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("matrix dimension '{0}' is empty")]
    EmptyDimension(&'static str),
    #[error("duplicate treatment cell {0}")]
    DuplicateCell(String),
    #[error("receiver level {0} is outside [0, 1]")]
    ReceiverLevel(f64),
    #[error("invalid toggles: {0}")]
    Toggles(String),
    #[error("invalid sender: {0}")]
    Sender(String),
}

/// One point of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentCell {
    pub sender_id: String,
    pub objective: Objective,
    pub strategy: ReasoningStrategy,
    pub receiver_r: f64,
    pub toggles: ObservationToggles,
}

impl TreatmentCell {
    /// Identity string covering all five fields.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|r={}|{}",
            self.sender_id,
            self.objective,
            self.strategy,
            self.receiver_r,
            self.toggles.label()
        )
    }

    /// The cell identity without the sender: cells sharing it are compared
    /// on one leaderboard.
    pub fn treatment_key(&self) -> String {
        format!("{}|{}|r={}|{}", self.objective, self.strategy, self.receiver_r, self.toggles.label())
    }

    pub fn sender(&self) -> Result<SenderSpec, MatrixError> {
        self.sender_id.parse().map_err(|e: crate::agents::AgentError| MatrixError::Sender(e.to_string()))
    }
}

/// Full Cartesian product, ordered sender, objective, strategy, toggles,
/// receiver level (the last varies fastest).
pub fn expand_matrix(
    objectives: &[Objective],
    strategies: &[ReasoningStrategy],
    receiver_levels: &[f64],
    toggle_variants: &[ObservationToggles],
    senders: &[SenderSpec],
) -> Result<Vec<TreatmentCell>, MatrixError> {
    for (len, name) in [
        (objectives.len(), "objectives"),
        (strategies.len(), "strategies"),
        (receiver_levels.len(), "receiver_levels"),
        (toggle_variants.len(), "toggles"),
        (senders.len(), "senders"),
    ] {
        if len == 0 {
            return Err(MatrixError::EmptyDimension(name));
        }
    }
    if let Some(&r) = receiver_levels.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(MatrixError::ReceiverLevel(r));
    }
    for t in toggle_variants {
        t.validate().map_err(MatrixError::Toggles)?;
    }

    let mut cells = Vec::new();
    let mut seen = BTreeSet::new();
    for sender in senders {
        for &objective in objectives {
            for &strategy in strategies {
                for toggles in toggle_variants {
                    for &receiver_r in receiver_levels {
                        let cell = TreatmentCell {
                            sender_id: sender.to_string(),
                            objective,
                            strategy,
                            receiver_r,
                            toggles: *toggles,
                        };
                        if !seen.insert(cell.key()) {
                            return Err(MatrixError::DuplicateCell(cell.key()));
                        }
                        cells.push(cell);
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// Seed for one (cell, iteration) pair; depends only on the cell identity, so
/// reordering the matrix does not change it.
pub fn derive_seed(base_seed: u64, cell_key: &str, iteration: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(cell_key.as_bytes());
    h.update([0]);
    h.update(iteration.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn game_id_for(seed: u64) -> String {
    format!("g{seed:016x}")
}
