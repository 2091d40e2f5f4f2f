//! Sender and receiver contracts, plus the rule-based reference agents.
//!
//! The scripted senders here are calibration oracles for the harness: `nash`
//! always sends nothing, `omniscient` knows the receiver's fraction in advance,
//! and `probe` sends a small test amount and then commits fully or not at all
//! depending on what came back.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::{scale_to_cent, Cents};
use crate::observation::SenderObservation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("scripted sender ran out of moves at round {0}")]
    ScriptExhausted(u32),
    #[error("round {0}: previous-round averages are required but were not observed")]
    MissingHistory(u32),
    #[error("invalid agent parameter: {0}")]
    InvalidParameter(String),
    #[error("prompt composition failed: {0}")]
    Composition(String),
    #[error("provider failure: {0}")]
    Provider(String),
}

/// A sender's move for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub amount: Cents,
    /// Transcript entries backing the decision; empty for scripted agents.
    pub exchange_ids: Vec<String>,
}

impl Decision {
    pub fn scripted(amount: Cents) -> Self {
        Self { amount, exchange_ids: Vec::new() }
    }
}

pub trait SenderAgent {
    fn descriptor(&self) -> String;

    /// Called once before round 1 with the game's derived seed.
    fn start_game(&mut self, _seed: u64) {}

    fn decide(&mut self, obs: &SenderObservation) -> Result<Decision, AgentError>;
}

pub trait ReceiverAgent {
    fn return_fraction(&self) -> f64;
    fn respond(&self, tripled_amount: Cents) -> Cents;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverPolicy {
    pub return_fraction: f64,
}

impl ReceiverPolicy {
    /// The three trustworthiness levels of the baseline matrix.
    pub const STANDARD_LEVELS: [f64; 3] = [0.0, 0.5, 1.0];

    pub fn new(return_fraction: f64) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&return_fraction) {
            return Err(AgentError::InvalidParameter(format!(
                "return fraction {return_fraction} is outside [0, 1]"
            )));
        }
        Ok(Self { return_fraction })
    }
}

/// Returns `round(r * tripled)` to the cent; never more than the tripled amount.
pub fn fixed_fraction_respond(tripled_amount: Cents, policy: &ReceiverPolicy) -> Cents {
    scale_to_cent(tripled_amount, policy.return_fraction)
}

#[derive(Debug, Clone)]
pub struct FixedFractionReceiver {
    policy: ReceiverPolicy,
}

impl FixedFractionReceiver {
    pub fn new(policy: ReceiverPolicy) -> Self {
        Self { policy }
    }
}

impl ReceiverAgent for FixedFractionReceiver {
    fn return_fraction(&self) -> f64 {
        self.policy.return_fraction
    }

    fn respond(&self, tripled_amount: Cents) -> Cents {
        fixed_fraction_respond(tripled_amount, &self.policy)
    }
}

/// Subgame-perfect play: never send anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NashSender;

pub fn nash_sender_decide(_obs: &SenderObservation) -> Cents {
    Cents::ZERO
}

impl SenderAgent for NashSender {
    fn descriptor(&self) -> String {
        "nash".into()
    }

    fn decide(&mut self, obs: &SenderObservation) -> Result<Decision, AgentError> {
        Ok(Decision::scripted(nash_sender_decide(obs)))
    }
}

/// Sends everything iff a full send earns back more than the endowment.
///
/// The comparison uses the receiver's cent rounding, which coincides with
/// `multiplier * r > 1` except where rounding erases a sub-cent gain. At exact
/// indifference it sends 0.
pub fn omniscient_sender_decide(obs: &SenderObservation, known_r: f64) -> Cents {
    let full_return = scale_to_cent(obs.endowment * obs.multiplier as i64, known_r);
    if full_return > obs.endowment {
        obs.endowment
    } else {
        Cents::ZERO
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OmniscientSender {
    known_r: f64,
}

impl OmniscientSender {
    pub fn new(known_r: f64) -> Self {
        Self { known_r }
    }
}

impl SenderAgent for OmniscientSender {
    fn descriptor(&self) -> String {
        format!("omniscient(r={})", self.known_r)
    }

    fn decide(&mut self, obs: &SenderObservation) -> Result<Decision, AgentError> {
        Ok(Decision::scripted(omniscient_sender_decide(obs, self.known_r)))
    }
}

pub const DEFAULT_PROBE_AMOUNT: Cents = Cents::from_dollars(2);
pub const DEFAULT_BREAKEVEN: f64 = 1.0 / 3.0;

/// Round 1 sends `probe_amount`; afterwards sends the full endowment when the
/// observed return ratio `avg_returned / (multiplier * avg_sent)` reaches
/// `breakeven`, otherwise nothing.
pub fn probe_sender_decide(
    obs: &SenderObservation,
    probe_amount: Cents,
    breakeven: f64,
) -> Result<Cents, AgentError> {
    if probe_amount <= Cents::ZERO || probe_amount > obs.endowment {
        return Err(AgentError::InvalidParameter(format!(
            "probe amount {probe_amount} must lie in (0, {}]",
            obs.endowment
        )));
    }
    if obs.round_index == 1 {
        return Ok(probe_amount);
    }
    let prev = obs.previous.ok_or(AgentError::MissingHistory(obs.round_index))?;
    if prev.total_sent <= Cents::ZERO {
        return Ok(Cents::ZERO);
    }
    // Ratio of averages equals ratio of totals.
    let ratio = prev.total_returned.0 as f64 / (obs.multiplier as f64 * prev.total_sent.0 as f64);
    if ratio >= breakeven - 1e-12 {
        Ok(obs.endowment)
    } else {
        Ok(Cents::ZERO)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeSender {
    pub probe_amount: Cents,
    pub breakeven: f64,
}

impl Default for ProbeSender {
    fn default() -> Self {
        Self { probe_amount: DEFAULT_PROBE_AMOUNT, breakeven: DEFAULT_BREAKEVEN }
    }
}

impl SenderAgent for ProbeSender {
    fn descriptor(&self) -> String {
        format!("probe({})", self.probe_amount)
    }

    fn decide(&mut self, obs: &SenderObservation) -> Result<Decision, AgentError> {
        probe_sender_decide(obs, self.probe_amount, self.breakeven).map(Decision::scripted)
    }
}

/// Sends the same amount every round.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSender {
    amount: Cents,
}

impl ConstantSender {
    pub fn new(amount: Cents) -> Self {
        Self { amount }
    }
}

impl SenderAgent for ConstantSender {
    fn descriptor(&self) -> String {
        format!("constant({})", self.amount)
    }

    fn decide(&mut self, _obs: &SenderObservation) -> Result<Decision, AgentError> {
        Ok(Decision::scripted(self.amount))
    }
}

/// Plays a fixed list of amounts, one per round. Running out is an error.
#[derive(Debug, Clone)]
pub struct ScriptedSender {
    moves: Vec<Cents>,
}

impl ScriptedSender {
    pub fn new(moves: Vec<Cents>) -> Self {
        Self { moves }
    }
}

impl SenderAgent for ScriptedSender {
    fn descriptor(&self) -> String {
        let moves: Vec<String> = self.moves.iter().map(|m| m.compact()).collect();
        format!("scripted[{}]", moves.join(","))
    }

    fn decide(&mut self, obs: &SenderObservation) -> Result<Decision, AgentError> {
        self.moves
            .get(obs.round_index as usize - 1)
            .copied()
            .map(Decision::scripted)
            .ok_or(AgentError::ScriptExhausted(obs.round_index))
    }
}

/// A sender named in run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SenderSpec {
    Nash,
    Omniscient,
    Probe { probe_amount: Cents },
    Constant { amount: Cents },
    /// LLM-backed sender using the named provider profile.
    Llm { profile: String },
}

impl SenderSpec {
    pub fn is_llm(&self) -> bool {
        matches!(self, SenderSpec::Llm { .. })
    }

    /// Builds a rule-based sender; `None` for LLM senders, which need a gateway.
    pub fn build_scripted(&self, receiver_r: f64) -> Option<Box<dyn SenderAgent + Send>> {
        match self {
            SenderSpec::Nash => Some(Box::new(NashSender)),
            SenderSpec::Omniscient => Some(Box::new(OmniscientSender::new(receiver_r))),
            SenderSpec::Probe { probe_amount } => Some(Box::new(ProbeSender {
                probe_amount: *probe_amount,
                breakeven: DEFAULT_BREAKEVEN,
            })),
            SenderSpec::Constant { amount } => Some(Box::new(ConstantSender::new(*amount))),
            SenderSpec::Llm { .. } => None,
        }
    }
}

fn parse_dollars(s: &str) -> Result<Cents, AgentError> {
    let v: f64 = s
        .parse()
        .map_err(|_| AgentError::InvalidParameter(format!("'{s}' is not a dollar amount")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(AgentError::InvalidParameter(format!("'{s}' is not a dollar amount")));
    }
    Ok(Cents::from_dollars_f64(v))
}

impl FromStr for SenderSpec {
    type Err = AgentError;

    /// Accepts `nash`, `omniscient`, `probe`, `probe:<dollars>`,
    /// `constant:<dollars>` and `llm:<profile>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("nash", None) => Ok(SenderSpec::Nash),
            ("omniscient", None) => Ok(SenderSpec::Omniscient),
            ("probe", None) => Ok(SenderSpec::Probe { probe_amount: DEFAULT_PROBE_AMOUNT }),
            ("probe", Some(a)) => Ok(SenderSpec::Probe { probe_amount: parse_dollars(a)? }),
            ("constant", Some(a)) => Ok(SenderSpec::Constant { amount: parse_dollars(a)? }),
            ("llm", Some(p)) if !p.is_empty() => Ok(SenderSpec::Llm { profile: p.to_string() }),
            _ => Err(AgentError::InvalidParameter(format!("unknown sender id '{s}'"))),
        }
    }
}

impl fmt::Display for SenderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SenderSpec::Nash => write!(f, "nash"),
            SenderSpec::Omniscient => write!(f, "omniscient"),
            SenderSpec::Probe { probe_amount } if *probe_amount == DEFAULT_PROBE_AMOUNT => {
                write!(f, "probe")
            }
            SenderSpec::Probe { probe_amount } => write!(f, "probe:{}", probe_amount.compact()),
            SenderSpec::Constant { amount } => write!(f, "constant:{}", amount.compact()),
            SenderSpec::Llm { profile } => write!(f, "llm:{profile}"),
        }
    }
}
