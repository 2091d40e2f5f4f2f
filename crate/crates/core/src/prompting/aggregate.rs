use std::collections::BTreeMap;

use thiserror::Error;

use crate::money::{round_half_away, Cents};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("no samples to aggregate")]
    Empty,
}

/// Majority vote over sampled decisions.
///
/// Samples are snapped to the granularity grid and counted. A unique most
/// frequent value wins. When several values share the top count (including
/// the case where every value ties) the lower median of those values is
/// returned. The result does not depend on sample order.
pub fn aggregate_self_consistency(samples: &[Cents], granularity: Cents) -> Result<Cents, AggregateError> {
    if samples.is_empty() {
        return Err(AggregateError::Empty);
    }
    let step = granularity.0.max(1);
    let mut counts: BTreeMap<Cents, usize> = BTreeMap::new();
    for s in samples {
        let bucket = Cents(round_half_away(s.0 as f64 / step as f64) * step);
        *counts.entry(bucket).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let modes: Vec<Cents> = counts.into_iter().filter(|&(_, c)| c == top).map(|(v, _)| v).collect();
    Ok(modes[(modes.len() - 1) / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[i64]) -> Vec<Cents> {
        v.iter().map(|&x| Cents::from_dollars(x)).collect()
    }

    #[test]
    fn examples() {
        let g = Cents(1);
        assert_eq!(aggregate_self_consistency(&d(&[5, 5, 7]), g), Ok(Cents::from_dollars(5)));
        assert_eq!(aggregate_self_consistency(&d(&[2, 4, 6]), g), Ok(Cents::from_dollars(4)));
        assert_eq!(aggregate_self_consistency(&d(&[0; 5]), g), Ok(Cents::ZERO));
        assert_eq!(aggregate_self_consistency(&[], g), Err(AggregateError::Empty));
    }

    #[test]
    fn partial_tie_takes_lower_median_of_modes() {
        let g = Cents(1);
        assert_eq!(aggregate_self_consistency(&d(&[1, 1, 2, 2, 3]), g), Ok(Cents::from_dollars(1)));
        assert_eq!(aggregate_self_consistency(&d(&[1, 1, 2, 2, 3, 3, 9]), g), Ok(Cents::from_dollars(2)));
    }

    #[test]
    fn buckets_to_granularity() {
        let samples = [Cents(240), Cents(260), Cents(300)];
        // Whole-dollar grid: 2.40 -> 2, 2.60 -> 3, 3.00 -> 3.
        assert_eq!(aggregate_self_consistency(&samples, Cents(100)), Ok(Cents(300)));
    }
}
