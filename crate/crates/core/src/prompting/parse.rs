use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::game::GameConfig;
use crate::money::Cents;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no amount found in reply")]
    NoAmount,
    #[error("amount {value} is outside [0, {endowment}]")]
    OutOfRange { value: String, endowment: Cents },
    #[error("amount {value} is not a multiple of {granularity}")]
    OffGrid { value: Cents, granularity: Cents },
}

impl ParseError {
    /// Out-of-range and off-grid amounts are validity failures: the reply did
    /// contain a decision, just not a legal one.
    pub fn is_validity(&self) -> bool {
        !matches!(self, ParseError::NoAmount)
    }
}

fn structured_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t>*_`]*AMOUNT[*_`]*[ \t]*:[ \t*_`]*\$?[ \t]*(-?\d+(?:\.\d+)?)").unwrap()
    })
}

fn dollar_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\$[ \t]*(-?\d+(?:\.\d+)?)|(-?\d+(?:\.\d+)?)[ \t]*(?:dollars?|usd)\b").unwrap()
    })
}

/// Extracts the sender's decision from a model reply.
///
/// The last `AMOUNT: <number>` line wins; failing that, the last dollar
/// quantity (`$4`, `4 dollars`) in the text. Sub-cent digits are rounded to the
/// cent. Out-of-range values are reported, never clamped.
pub fn parse_amount(response_text: &str, config: &GameConfig) -> Result<Cents, ParseError> {
    let raw = structured_re()
        .captures_iter(response_text)
        .last()
        .map(|c| c[1].to_string())
        .or_else(|| {
            dollar_re().captures_iter(response_text).last().map(|c| {
                c.get(1).or_else(|| c.get(2)).expect("one alternative matched").as_str().to_string()
            })
        })
        .ok_or(ParseError::NoAmount)?;
    let value: f64 = raw.parse().map_err(|_| ParseError::NoAmount)?;
    let cents = Cents::from_dollars_f64(value);
    if cents < Cents::ZERO || cents > config.endowment_per_round {
        return Err(ParseError::OutOfRange { value: raw, endowment: config.endowment_per_round });
    }
    if !cents.is_multiple_of(config.amount_granularity) {
        return Err(ParseError::OffGrid { value: cents, granularity: config.amount_granularity });
    }
    Ok(cents)
}
