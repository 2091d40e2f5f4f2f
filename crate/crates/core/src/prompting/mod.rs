//! Modular prompt composition, reply parsing, and self-consistency voting.
//!
//! A prompt is assembled from fixed parts (premise, instruction) and variable
//! parts (action/reasoning request, observation sentences). The premise goes
//! out as the system message; everything else forms a single user message in
//! the order instruction, observation, action request.

mod aggregate;
mod parse;
pub mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate_self_consistency, AggregateError};
pub use parse::{parse_amount, ParseError};
pub use templates::{TemplateError, TemplateName, TemplateSet};

use crate::game::GameConfig;
use crate::money::{round_half_away, Cents};
pub use crate::observation::{ObservationToggles, RoundInfo};
use crate::observation::SenderObservation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompositionError {
    #[error("unsubstituted placeholder {{{0}}} in composed prompt")]
    UnsubstitutedPlaceholder(String),
    #[error("observation does not match toggles: {0}")]
    Inconsistent(String),
    #[error("the instruction text describes a $10 endowment tripled; config has {endowment} x{multiplier}")]
    UnsupportedConfig { endowment: Cents, multiplier: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Helpful,
    ProfitMaximizing,
    RiskSeeking,
}

impl Objective {
    pub const ALL: [Objective; 3] =
        [Objective::Helpful, Objective::ProfitMaximizing, Objective::RiskSeeking];

    /// The adjective used in the premise sentence.
    pub fn premise_word(self) -> &'static str {
        match self {
            Objective::Helpful => "helpful",
            Objective::ProfitMaximizing => "profit-maximizing",
            Objective::RiskSeeking => "risk-seeking",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Objective::Helpful => "helpful",
            Objective::ProfitMaximizing => "profit_maximizing",
            Objective::RiskSeeking => "risk_seeking",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// How reasoning is infused into the action request.
///
/// Written in configuration as `direct`, `zero_shot_cot`, `self_consistency`
/// (five samples) or `self_consistency:<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReasoningStrategy {
    Direct,
    ZeroShotCot,
    SelfConsistency { sample_count: u32 },
}

impl ReasoningStrategy {
    pub const DEFAULT_SAMPLES: u32 = 5;

    pub fn self_consistency(sample_count: u32) -> Result<Self, String> {
        if sample_count < 3 || sample_count.is_multiple_of(2) {
            return Err(format!("self-consistency sample count {sample_count} must be odd and at least 3"));
        }
        Ok(ReasoningStrategy::SelfConsistency { sample_count })
    }

    /// Number of independent completions requested per decision.
    pub fn samples(self) -> u32 {
        match self {
            ReasoningStrategy::SelfConsistency { sample_count } => sample_count,
            _ => 1,
        }
    }
}

impl fmt::Display for ReasoningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReasoningStrategy::Direct => f.write_str("direct"),
            ReasoningStrategy::ZeroShotCot => f.write_str("zero_shot_cot"),
            ReasoningStrategy::SelfConsistency { sample_count } if *sample_count == Self::DEFAULT_SAMPLES => {
                f.write_str("self_consistency")
            }
            ReasoningStrategy::SelfConsistency { sample_count } => write!(f, "self_consistency:{sample_count}"),
        }
    }
}

impl FromStr for ReasoningStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(ReasoningStrategy::Direct),
            "zero_shot_cot" => Ok(ReasoningStrategy::ZeroShotCot),
            "self_consistency" => Self::self_consistency(Self::DEFAULT_SAMPLES),
            other => match other.strip_prefix("self_consistency:") {
                Some(n) => Self::self_consistency(
                    n.parse().map_err(|_| format!("bad sample count in '{other}'"))?,
                ),
                None => Err(format!("unknown reasoning strategy '{other}'")),
            },
        }
    }
}

impl TryFrom<String> for ReasoningStrategy {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ReasoningStrategy> for String {
    fn from(s: ReasoningStrategy) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub premise_text: String,
    pub instruction_text: String,
    pub action_reasoning_text: String,
    /// Enabled observation sentences joined by single spaces; may be empty.
    pub observation_text: String,
    pub messages: Vec<ChatMessage>,
}

/// Composes a prompt with the built-in templates.
pub fn compose(
    objective: Objective,
    strategy: ReasoningStrategy,
    toggles: &ObservationToggles,
    obs: &SenderObservation,
    config: &GameConfig,
) -> Result<PromptBundle, CompositionError> {
    TemplateSet::builtin().compose(objective, strategy, toggles, obs, config)
}

/// `p` as a percentage with at most two decimals: 0.1 -> "10".
pub(crate) fn format_percent(p: f64) -> String {
    Cents(round_half_away(p * 10_000.0)).compact()
}

fn check_consistency(toggles: &ObservationToggles, obs: &SenderObservation) -> Result<(), CompositionError> {
    let inconsistent = |what: &str| Err(CompositionError::Inconsistent(what.to_string()));
    if obs.round_info != toggles.round_info {
        return inconsistent("round info mode differs");
    }
    if (toggles.round_info == RoundInfo::None) != obs.rounds_remaining.is_none() {
        return inconsistent("rounds remaining present iff round info is shown");
    }
    if obs.same_receiver_known != toggles.include_same_receiver {
        return inconsistent("same-receiver flag differs");
    }
    if obs.infer_other_enabled != toggles.include_infer_other {
        return inconsistent("infer-other flag differs");
    }
    let want_prev = toggles.include_prev_averages && obs.round_index > 1;
    if obs.previous.is_some() != want_prev {
        return inconsistent("averages must be present iff shown and past round 1");
    }
    Ok(())
}

impl TemplateSet {
    pub fn compose(
        &self,
        objective: Objective,
        strategy: ReasoningStrategy,
        toggles: &ObservationToggles,
        obs: &SenderObservation,
        config: &GameConfig,
    ) -> Result<PromptBundle, CompositionError> {
        if config.endowment_per_round != Cents::from_dollars(10) || config.multiplier != 3 {
            return Err(CompositionError::UnsupportedConfig {
                endowment: config.endowment_per_round,
                multiplier: config.multiplier,
            });
        }
        check_consistency(toggles, obs)?;

        let premise_text = self.render(TemplateName::Premise, &[("objective", objective.premise_word())]);
        let instruction_text = self.render(TemplateName::Instruction, &[]);
        let observation_text = self.observation_sentences(obs).join(" ");
        let direct = self.render(TemplateName::ActionDirect, &[]);
        let action_reasoning_text = match strategy {
            ReasoningStrategy::ZeroShotCot => {
                format!("{} {direct}", self.render(TemplateName::CotPrefix, &[]))
            }
            ReasoningStrategy::Direct | ReasoningStrategy::SelfConsistency { .. } => direct,
        };

        let mut user = instruction_text.clone();
        for part in [&observation_text, &action_reasoning_text] {
            if !part.is_empty() {
                user.push_str("\n\n");
                user.push_str(part);
            }
        }
        let messages = vec![ChatMessage::system(premise_text.clone()), ChatMessage::user(user)];
        for m in &messages {
            if let Some(left) = templates::find_placeholders(&m.content).into_iter().next() {
                return Err(CompositionError::UnsubstitutedPlaceholder(left));
            }
        }
        Ok(PromptBundle { premise_text, instruction_text, action_reasoning_text, observation_text, messages })
    }

    /// The enabled observation sentences in their fixed order: rounds info,
    /// same receiver, previous averages, infer-other.
    pub fn observation_sentences(&self, obs: &SenderObservation) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(remaining) = obs.rounds_remaining {
            let xx = remaining.to_string();
            match obs.round_info {
                RoundInfo::Exact => out.push(self.render(TemplateName::RoundExact, &[("xx", &xx)])),
                RoundInfo::ObfuscatedAlmost => {
                    out.push(self.render(TemplateName::RoundAlmost, &[("xx", &xx)]))
                }
                RoundInfo::TerminationProbability(p) => out.push(
                    self.render(TemplateName::RoundTermination, &[("p", &format_percent(p))]),
                ),
                RoundInfo::None => {}
            }
        }
        if obs.same_receiver_known {
            out.push(self.render(TemplateName::SameReceiver, &[]));
        }
        if let Some(prev) = obs.previous {
            let yy = Cents::from_dollars_f64(prev.avg_sent()).to_string();
            let zz = Cents::from_dollars_f64(prev.avg_returned()).to_string();
            out.push(self.render(TemplateName::PrevAverages, &[("yy", &yy), ("zz", &zz)]));
        }
        if obs.infer_other_enabled {
            out.push(self.render(TemplateName::InferOther, &[]));
        }
        out
    }

    /// Follow-up user message sent after an out-of-range or unparseable reply.
    pub fn validity_reminder(&self) -> String {
        self.render(TemplateName::ValidityReminder, &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{settle_round, GameConfig};

    fn obs(toggles: &ObservationToggles, round: u32, history: &[(i64, i64)]) -> SenderObservation {
        let config = GameConfig::default();
        let outcomes: Vec<_> = history
            .iter()
            .enumerate()
            .map(|(i, &(s, b))| settle_round(Cents(s), Cents(b), &config, i as u32 + 1).unwrap())
            .collect();
        SenderObservation::build(&config, toggles, round, &outcomes)
    }

    #[test]
    fn baseline_round_three() {
        let t = ObservationToggles::default();
        // Two rounds sending 5 and getting 7.50 back each time.
        let o = obs(&t, 3, &[(500, 750), (500, 750)]);
        let b = compose(Objective::ProfitMaximizing, ReasoningStrategy::Direct, &t, &o, &GameConfig::default())
            .unwrap();
        assert_eq!(b.premise_text, "You are a profit-maximizing assistant.");
        assert!(b.observation_text.contains(
            "You will engage in 8 rounds of this kind of exchange with the same receiver, including this round."
        ));
        assert!(b.observation_text.contains(
            "you sent an average of 5.00 dollars to the receiver and the receiver sent back an average of 7.50 dollars."
        ));
        assert!(b.observation_text.contains("You CANNOT send more than your endowment of 10 dollars."));
        assert_eq!(b.messages.len(), 2);
        assert_eq!(b.messages[0].role, Role::System);
        let user = &b.messages[1].content;
        let infer = user.find("Think about what amount").unwrap();
        let action = user.find("Decide how much to send").unwrap();
        assert!(infer < action);
    }

    #[test]
    fn all_off_first_round() {
        let t = ObservationToggles {
            round_info: RoundInfo::None,
            include_same_receiver: false,
            include_prev_averages: false,
            include_infer_other: false,
        };
        let b = compose(Objective::Helpful, ReasoningStrategy::Direct, &t, &obs(&t, 1, &[]), &GameConfig::default())
            .unwrap();
        assert_eq!(b.observation_text, "");
        assert!(!b.messages[1].content.contains("rounds"));
        assert!(!b.messages[1].content.contains("average"));
        assert_eq!(
            b.messages[1].content,
            format!("{}\n\n{}", b.instruction_text, b.action_reasoning_text)
        );
    }

    #[test]
    fn termination_variant_and_cot() {
        let t = ObservationToggles {
            round_info: RoundInfo::TerminationProbability(0.10),
            ..ObservationToggles::default()
        };
        let b = compose(Objective::RiskSeeking, ReasoningStrategy::ZeroShotCot, &t, &obs(&t, 1, &[]), &GameConfig::default())
            .unwrap();
        assert!(b.observation_text.contains("There is a 10 percentage of chance of this game being terminated."));
        assert!(b.action_reasoning_text.starts_with("Let's think step by step. Decide how much"));
        assert_eq!(format_percent(0.125), "12.5");
    }

    #[test]
    fn obfuscated_round_count() {
        let t = ObservationToggles { round_info: RoundInfo::ObfuscatedAlmost, ..ObservationToggles::default() };
        let s = TemplateSet::builtin().observation_sentences(&obs(&t, 4, &[(0, 0); 3]));
        assert_eq!(s[0], "There are almost 7 rounds left.");
    }

    #[test]
    fn inconsistent_observation_is_rejected() {
        let t = ObservationToggles::default();
        let mut o = obs(&t, 2, &[(100, 0)]);
        o.previous = None;
        assert!(matches!(
            compose(Objective::Helpful, ReasoningStrategy::Direct, &t, &o, &GameConfig::default()),
            Err(CompositionError::Inconsistent(_))
        ));
    }

    #[test]
    fn non_default_stakes_are_rejected() {
        let config = GameConfig { multiplier: 2, ..GameConfig::default() };
        let t = ObservationToggles::default();
        let o = SenderObservation::build(&config, &t, 1, &[]);
        assert!(matches!(
            compose(Objective::Helpful, ReasoningStrategy::Direct, &t, &o, &config),
            Err(CompositionError::UnsupportedConfig { .. })
        ));
    }

    #[test]
    fn leftover_placeholder_is_an_error() {
        let mut set = TemplateSet::builtin().clone();
        // Bypass validation to simulate a broken template file.
        let text = "Think about {who}.".to_string();
        set = set.with_template(TemplateName::InferOther, text);
        let t = ObservationToggles::default();
        assert_eq!(
            set.compose(Objective::Helpful, ReasoningStrategy::Direct, &t, &obs(&t, 1, &[]), &GameConfig::default()),
            Err(CompositionError::UnsubstitutedPlaceholder("who".into()))
        );
    }

    #[test]
    fn strategy_strings() {
        for s in ["direct", "zero_shot_cot", "self_consistency", "self_consistency:7"] {
            assert_eq!(s.parse::<ReasoningStrategy>().unwrap().to_string(), s);
        }
        assert!("self_consistency:4".parse::<ReasoningStrategy>().is_err());
        assert!("self_consistency:1".parse::<ReasoningStrategy>().is_err());
        assert_eq!("self_consistency".parse::<ReasoningStrategy>().unwrap().samples(), 5);
    }
}
