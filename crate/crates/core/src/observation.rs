//! What a sender is allowed to see before it acts.

use serde::{Deserialize, Serialize};

use crate::game::{GameConfig, RoundOutcome};
use crate::money::Cents;

/// How the number of remaining rounds is communicated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundInfo {
    Exact,
    None,
    ObfuscatedAlmost,
    /// Announces a per-round termination chance instead of a round count.
    TerminationProbability(f64),
}

impl RoundInfo {
    pub const DEFAULT_TERMINATION_P: f64 = 0.10;

    fn label(&self) -> String {
        match self {
            RoundInfo::Exact => "exact".into(),
            RoundInfo::None => "none".into(),
            RoundInfo::ObfuscatedAlmost => "almost".into(),
            RoundInfo::TerminationProbability(p) => format!("term{p}"),
        }
    }
}

/// Which observation sentences are shown to the sender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationToggles {
    #[serde(default = "default_round_info")]
    pub round_info: RoundInfo,
    #[serde(default = "yes")]
    pub include_same_receiver: bool,
    #[serde(default = "yes")]
    pub include_prev_averages: bool,
    #[serde(default = "yes")]
    pub include_infer_other: bool,
}

fn default_round_info() -> RoundInfo {
    RoundInfo::Exact
}

fn yes() -> bool {
    true
}

impl Default for ObservationToggles {
    /// The baseline treatment: everything shown, exact round count.
    fn default() -> Self {
        Self {
            round_info: RoundInfo::Exact,
            include_same_receiver: true,
            include_prev_averages: true,
            include_infer_other: true,
        }
    }
}

impl ObservationToggles {
    pub fn validate(&self) -> Result<(), String> {
        if let RoundInfo::TerminationProbability(p) = self.round_info {
            if !(p > 0.0 && p < 1.0) {
                return Err(format!("termination probability {p} must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Short stable label used in cell identities and report headers.
    pub fn label(&self) -> String {
        let mut parts = vec![self.round_info.label()];
        for (on, name) in [
            (self.include_same_receiver, "same"),
            (self.include_prev_averages, "prev"),
            (self.include_infer_other, "infer"),
        ] {
            if on {
                parts.push(name.to_string());
            }
        }
        parts.join("+")
    }
}

/// Running totals over the rounds played so far; averages are exact ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreviousRounds {
    pub rounds: u32,
    pub total_sent: Cents,
    pub total_returned: Cents,
}

impl PreviousRounds {
    pub fn from_outcomes(outcomes: &[RoundOutcome]) -> Option<Self> {
        if outcomes.is_empty() {
            return None;
        }
        Some(Self {
            rounds: outcomes.len() as u32,
            total_sent: outcomes.iter().map(|o| o.amount_sent).sum(),
            total_returned: outcomes.iter().map(|o| o.amount_returned).sum(),
        })
    }

    pub fn avg_sent(&self) -> f64 {
        self.total_sent.as_dollars() / self.rounds as f64
    }

    pub fn avg_returned(&self) -> f64 {
        self.total_returned.as_dollars() / self.rounds as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderObservation {
    /// 1-based.
    pub round_index: u32,
    pub round_info: RoundInfo,
    /// Rounds left including the current one; absent when round info is withheld.
    pub rounds_remaining: Option<u32>,
    pub same_receiver_known: bool,
    /// Present only from round 2 on, and only when averages are shown.
    pub previous: Option<PreviousRounds>,
    pub infer_other_enabled: bool,
    pub endowment: Cents,
    pub multiplier: u32,
    pub granularity: Cents,
}

impl SenderObservation {
    /// Builds a fresh observation from the settled history. Nothing is carried
    /// over from earlier observations.
    pub fn build(
        config: &GameConfig,
        toggles: &ObservationToggles,
        round_index: u32,
        history: &[RoundOutcome],
    ) -> Self {
        let rounds_remaining = match toggles.round_info {
            RoundInfo::None => None,
            _ => Some(config.num_rounds + 1 - round_index),
        };
        let previous = if toggles.include_prev_averages {
            PreviousRounds::from_outcomes(history)
        } else {
            None
        };
        Self {
            round_index,
            round_info: toggles.round_info,
            rounds_remaining,
            same_receiver_known: toggles.include_same_receiver,
            previous,
            infer_other_enabled: toggles.include_infer_other,
            endowment: config.endowment_per_round,
            multiplier: config.multiplier,
            granularity: config.amount_granularity,
        }
    }

    /// A baseline observation for the given round with no history, mostly for tests.
    pub fn first_round(config: &GameConfig) -> Self {
        Self::build(config, &ObservationToggles::default(), 1, &[])
    }
}
