//! Rules, payoff accounting, and optimality benchmarks of the repeated trust game.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, ReceiverAgent, SenderAgent};
use crate::money::{scale_to_cent, Cents};
use crate::observation::{ObservationToggles, SenderObservation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid game config: {0}")]
    Config(String),
    #[error("round {round}: amount sent {sent} is outside [0, {endowment}]")]
    SendOutOfRange { round: u32, sent: Cents, endowment: Cents },
    #[error("round {round}: amount sent {sent} is not a multiple of the {granularity} granularity")]
    SendOffGrid { round: u32, sent: Cents, granularity: Cents },
    #[error("round {round}: amount returned {returned} is outside [0, {tripled}]")]
    ReturnOutOfRange { round: u32, returned: Cents, tripled: Cents },
    #[error("return fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("game record is incomplete: {played} of {expected} rounds")]
    Incomplete { played: usize, expected: u32 },
    #[error("game record is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub endowment_per_round: Cents,
    pub multiplier: u32,
    pub num_rounds: u32,
    /// Smallest legal send increment.
    pub amount_granularity: Cents,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            endowment_per_round: Cents::from_dollars(10),
            multiplier: 3,
            num_rounds: 10,
            amount_granularity: Cents(1),
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        if self.endowment_per_round <= Cents::ZERO {
            return Err(GameError::Config("endowment must be positive".into()));
        }
        if self.multiplier < 1 {
            return Err(GameError::Config("multiplier must be at least 1".into()));
        }
        if self.num_rounds < 1 {
            return Err(GameError::Config("num_rounds must be at least 1".into()));
        }
        if self.amount_granularity <= Cents::ZERO
            || !self.endowment_per_round.is_multiple_of(self.amount_granularity)
        {
            return Err(GameError::Config(format!(
                "granularity {} must be positive and divide the endowment {}",
                self.amount_granularity, self.endowment_per_round
            )));
        }
        Ok(())
    }

    /// Whole-dollar sends only.
    pub fn integer_dollars(self) -> Self {
        Self { amount_granularity: Cents::from_dollars(1), ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round_index: u32,
    pub amount_sent: Cents,
    pub tripled_amount: Cents,
    pub amount_returned: Cents,
    pub sender_round_payoff: Cents,
    pub receiver_round_payoff: Cents,
    /// Transcript entries (one per provider attempt) behind this round's decision.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchange_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub config: GameConfig,
    pub sender_descriptor: String,
    pub receiver_return_fraction: f64,
    pub outcomes: Vec<RoundOutcome>,
    pub sender_total: Cents,
    pub receiver_total: Cents,
}

impl GameRecord {
    pub fn new(config: GameConfig, sender_descriptor: String, receiver_return_fraction: f64) -> Self {
        Self {
            config,
            sender_descriptor,
            receiver_return_fraction,
            outcomes: Vec::with_capacity(config.num_rounds as usize),
            sender_total: Cents::ZERO,
            receiver_total: Cents::ZERO,
        }
    }

    pub fn push(&mut self, outcome: RoundOutcome) {
        self.sender_total += outcome.sender_round_payoff;
        self.receiver_total += outcome.receiver_round_payoff;
        self.outcomes.push(outcome);
    }

    pub fn is_complete(&self) -> bool {
        self.outcomes.len() == self.config.num_rounds as usize
    }

    pub fn amounts_sent(&self) -> impl Iterator<Item = Cents> + '_ {
        self.outcomes.iter().map(|o| o.amount_sent)
    }

    /// Re-settles every round from its sent/returned amounts and checks that the
    /// stored payoffs, round indices and totals agree.
    pub fn verify(&self) -> Result<(), GameError> {
        let mut sender = Cents::ZERO;
        let mut receiver = Cents::ZERO;
        for (i, stored) in self.outcomes.iter().enumerate() {
            let expected_index = i as u32 + 1;
            if stored.round_index != expected_index {
                return Err(GameError::Inconsistent(format!(
                    "round {} stored at position {expected_index}",
                    stored.round_index
                )));
            }
            let fresh =
                settle_round(stored.amount_sent, stored.amount_returned, &self.config, expected_index)?;
            if fresh.tripled_amount != stored.tripled_amount
                || fresh.sender_round_payoff != stored.sender_round_payoff
                || fresh.receiver_round_payoff != stored.receiver_round_payoff
            {
                return Err(GameError::Inconsistent(format!(
                    "round {expected_index}: stored payoffs ({}, {}) differ from recomputed ({}, {})",
                    stored.sender_round_payoff,
                    stored.receiver_round_payoff,
                    fresh.sender_round_payoff,
                    fresh.receiver_round_payoff
                )));
            }
            sender += fresh.sender_round_payoff;
            receiver += fresh.receiver_round_payoff;
        }
        if sender != self.sender_total || receiver != self.receiver_total {
            return Err(GameError::Inconsistent(format!(
                "stored totals ({}, {}) differ from recomputed ({sender}, {receiver})",
                self.sender_total, self.receiver_total
            )));
        }
        Ok(())
    }
}

/// Settles one round: the send is multiplied in flight, the return comes out of
/// the multiplied amount, and both players keep a fresh endowment.
pub fn settle_round(
    amount_sent: Cents,
    amount_returned: Cents,
    config: &GameConfig,
    round_index: u32,
) -> Result<RoundOutcome, GameError> {
    let endowment = config.endowment_per_round;
    if amount_sent < Cents::ZERO || amount_sent > endowment {
        return Err(GameError::SendOutOfRange { round: round_index, sent: amount_sent, endowment });
    }
    if !amount_sent.is_multiple_of(config.amount_granularity) {
        return Err(GameError::SendOffGrid {
            round: round_index,
            sent: amount_sent,
            granularity: config.amount_granularity,
        });
    }
    let tripled = amount_sent * config.multiplier as i64;
    if amount_returned < Cents::ZERO || amount_returned > tripled {
        return Err(GameError::ReturnOutOfRange {
            round: round_index,
            returned: amount_returned,
            tripled,
        });
    }
    Ok(RoundOutcome {
        round_index,
        amount_sent,
        tripled_amount: tripled,
        amount_returned,
        sender_round_payoff: endowment - amount_sent + amount_returned,
        receiver_round_payoff: endowment + tripled - amount_returned,
        exchange_ids: Vec::new(),
    })
}

fn check_fraction(r: f64) -> Result<(), GameError> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(GameError::FractionOutOfRange(r))
    }
}

/// Best total an omniscient sender can reach against a receiver returning
/// fraction `r` of the multiplied amount (rounded to the cent).
///
/// Per round the sender payoff `E - s + round(r*m*s)` is maximized at an
/// endpoint of the send range, so the maximum is `max(E, round(r*m*E))`.
pub fn theoretical_max(r: f64, config: &GameConfig) -> Result<Cents, GameError> {
    check_fraction(r)?;
    let endowment = config.endowment_per_round;
    let full_send_return = scale_to_cent(endowment * config.multiplier as i64, r);
    Ok(endowment.max(full_send_return) * config.num_rounds as i64)
}

/// Sender total as a share of the omniscient maximum for the same receiver.
pub fn final_fraction(record: &GameRecord) -> Result<f64, GameError> {
    if !record.is_complete() {
        return Err(GameError::Incomplete {
            played: record.outcomes.len(),
            expected: record.config.num_rounds,
        });
    }
    let max = theoretical_max(record.receiver_return_fraction, &record.config)?;
    Ok(record.sender_total.0 as f64 / max.0 as f64)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbortCause {
    #[error(transparent)]
    Domain(#[from] GameError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// A game that stopped before its last round; carries everything settled so far.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("game aborted in round {round_index}: {cause}")]
pub struct AbortedGame {
    pub round_index: u32,
    pub partial: GameRecord,
    pub cause: AbortCause,
}

/// Plays `config.num_rounds` rounds. Each round the sender gets an observation
/// built from scratch out of the settled history and the toggles; no other
/// state is handed over between rounds.
#[allow(clippy::result_large_err)]
pub fn run_game(
    sender: &mut dyn SenderAgent,
    receiver: &dyn ReceiverAgent,
    config: &GameConfig,
    toggles: &ObservationToggles,
    seed: u64,
) -> Result<GameRecord, AbortedGame> {
    let mut record =
        GameRecord::new(*config, sender.descriptor(), receiver.return_fraction());
    let abort = |round_index: u32, record: &GameRecord, cause: AbortCause| AbortedGame {
        round_index,
        partial: record.clone(),
        cause,
    };
    if let Err(e) = config.validate().and_then(|_| check_fraction(receiver.return_fraction())) {
        return Err(abort(1, &record, e.into()));
    }
    if let Err(e) = toggles.validate() {
        return Err(abort(1, &record, GameError::Config(e).into()));
    }
    sender.start_game(seed);

    for round_index in 1..=config.num_rounds {
        let obs = SenderObservation::build(config, toggles, round_index, &record.outcomes);
        let decision = match sender.decide(&obs) {
            Ok(d) => d,
            Err(e) => return Err(abort(round_index, &record, e.into())),
        };
        let sent = decision.amount;
        // Validate the send before asking the receiver.
        if let Err(e) = settle_round(sent, Cents::ZERO, config, round_index) {
            return Err(abort(round_index, &record, e.into()));
        }
        let returned = receiver.respond(sent * config.multiplier as i64);
        match settle_round(sent, returned, config, round_index) {
            Ok(mut outcome) => {
                outcome.exchange_ids = decision.exchange_ids;
                record.push(outcome);
            }
            Err(e) => return Err(abort(round_index, &record, e.into())),
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{
        ConstantSender, FixedFractionReceiver, NashSender, OmniscientSender, ReceiverPolicy,
        ScriptedSender,
    };

    fn dollars(d: i64) -> Cents {
        Cents::from_dollars(d)
    }

    #[test]
    fn settle_round_examples() {
        let c = GameConfig::default();
        let full = settle_round(dollars(10), dollars(15), &c, 1).unwrap();
        assert_eq!(full.tripled_amount, dollars(30));
        assert_eq!(full.sender_round_payoff, dollars(15));
        assert_eq!(full.receiver_round_payoff, dollars(25));

        let zero = settle_round(Cents::ZERO, Cents::ZERO, &c, 1).unwrap();
        assert_eq!((zero.sender_round_payoff, zero.receiver_round_payoff), (dollars(10), dollars(10)));

        let back = settle_round(dollars(4), dollars(12), &c, 1).unwrap();
        assert_eq!(back.tripled_amount, dollars(12));
        assert_eq!(back.sender_round_payoff, dollars(18));
        assert_eq!(back.receiver_round_payoff, dollars(10));
    }

    #[test]
    fn settle_round_names_the_violated_bound() {
        let c = GameConfig::default();
        assert!(matches!(
            settle_round(dollars(11), Cents::ZERO, &c, 2),
            Err(GameError::SendOutOfRange { round: 2, .. })
        ));
        assert!(matches!(
            settle_round(Cents(-1), Cents::ZERO, &c, 1),
            Err(GameError::SendOutOfRange { .. })
        ));
        assert!(matches!(
            settle_round(dollars(1), dollars(4), &c, 1),
            Err(GameError::ReturnOutOfRange { .. })
        ));
        assert!(matches!(
            settle_round(Cents(150), Cents::ZERO, &c.integer_dollars(), 1),
            Err(GameError::SendOffGrid { .. })
        ));
    }

    #[test]
    fn theoretical_max_at_standard_levels() {
        let c = GameConfig::default();
        assert_eq!(theoretical_max(0.0, &c).unwrap(), dollars(100));
        assert_eq!(theoretical_max(0.5, &c).unwrap(), dollars(150));
        assert_eq!(theoretical_max(1.0, &c).unwrap(), dollars(300));
        assert_eq!(theoretical_max(1.0 / 3.0, &c).unwrap(), dollars(100));
        assert!(matches!(theoretical_max(1.2, &c), Err(GameError::FractionOutOfRange(_))));
        assert!(theoretical_max(-0.1, &c).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GameConfig::default().validate().is_ok());
        let bad = GameConfig { amount_granularity: Cents(300), ..GameConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GameConfig { num_rounds: 0, ..GameConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[allow(clippy::result_large_err)]
    fn play(sender: &mut dyn SenderAgent, r: f64) -> Result<GameRecord, AbortedGame> {
        let receiver = FixedFractionReceiver::new(ReceiverPolicy::new(r).unwrap());
        run_game(sender, &receiver, &GameConfig::default(), &ObservationToggles::default(), 7)
    }

    #[test]
    fn nash_and_omniscient_games() {
        let rec = play(&mut NashSender, 0.5).unwrap();
        assert!(rec.amounts_sent().all(|s| s == Cents::ZERO));
        assert_eq!(rec.sender_total, dollars(100));
        assert!((final_fraction(&rec).unwrap() - 100.0 / 150.0).abs() < 1e-12);

        let rec = play(&mut NashSender, 0.0).unwrap();
        assert_eq!(final_fraction(&rec).unwrap(), 1.0);

        let rec = play(&mut OmniscientSender::new(1.0), 1.0).unwrap();
        assert!(rec.amounts_sent().all(|s| s == dollars(10)));
        assert_eq!(rec.sender_total, dollars(300));
        assert_eq!(final_fraction(&rec).unwrap(), 1.0);
        rec.verify().unwrap();
        assert_eq!(rec.outcomes.len(), 10);
        assert!(rec.outcomes.iter().enumerate().all(|(i, o)| o.round_index == i as u32 + 1));
    }

    #[test]
    fn out_of_range_send_aborts_in_round_one() {
        let mut s = ScriptedSender::new(vec![dollars(11)]);
        let err = play(&mut s, 0.5).unwrap_err();
        assert_eq!(err.round_index, 1);
        assert!(err.partial.outcomes.is_empty());
        assert!(matches!(err.cause, AbortCause::Domain(GameError::SendOutOfRange { .. })));
    }

    #[test]
    fn abort_keeps_partial_record() {
        let mut s = ScriptedSender::new(vec![dollars(1), dollars(2)]);
        let err = play(&mut s, 0.5).unwrap_err();
        assert_eq!(err.round_index, 3);
        assert_eq!(err.partial.outcomes.len(), 2);
        assert!(matches!(err.cause, AbortCause::Agent(_)));
        assert!(final_fraction(&err.partial).is_err());
    }

    #[test]
    fn verify_detects_tampering() {
        let mut rec = play(&mut ConstantSender::new(dollars(5)), 0.5).unwrap();
        rec.verify().unwrap();
        rec.outcomes[3].sender_round_payoff += Cents(1);
        assert!(rec.verify().is_err());
    }
}
