use proptest::prelude::*;

use trustlab::agents::{FixedFractionReceiver, NashSender, OmniscientSender, ProbeSender, ReceiverPolicy};
use trustlab::analysis::{mann_whitney_u, rank_leaderboard, summarize, CellSummary, Method};
use trustlab::game::{final_fraction, run_game, settle_round, theoretical_max, GameConfig};
use trustlab::observation::ObservationToggles;
use trustlab::prompting::{aggregate_self_consistency, parse_amount, Objective, ReasoningStrategy};
use trustlab::runner::{GameStatus, RunStore, StoreWriter, StoredGame, TreatmentCell};
use trustlab::Cents;

/// Integer-only rounding of k*m*s/100 cents, ties away from zero.
fn oracle_return(k: i64, m: i64, s: i64) -> i64 {
    (2 * k * m * s + 100) / 200
}

/// Best total by scanning every legal send of every round.
fn oracle_max(k: i64, e: i64, m: i64, n: i64, g: i64) -> i64 {
    let best = (0..=e / g).map(|i| i * g).map(|s| e - s + oracle_return(k, m, s)).max().unwrap();
    best * n
}

fn play(sender: &mut dyn trustlab::agents::SenderAgent, r: f64, config: &GameConfig, seed: u64) -> trustlab::game::GameRecord {
    let receiver = FixedFractionReceiver::new(ReceiverPolicy::new(r).unwrap());
    run_game(sender, &receiver, config, &ObservationToggles::default(), seed).unwrap()
}

proptest! {
    #[test]
    fn payoffs_conserve_surplus(s in 0i64..=1000, k in 0i64..=100) {
        let config = GameConfig::default();
        let tripled = Cents(3 * s);
        let returned = trustlab::money::scale_to_cent(tripled, k as f64 / 100.0);
        let o = settle_round(Cents(s), returned, &config, 1).unwrap();
        prop_assert_eq!(o.sender_round_payoff + o.receiver_round_payoff, Cents(2000 + 2 * s));
        prop_assert_eq!(returned.0, oracle_return(k, 3, s));
    }

    #[test]
    fn theoretical_max_matches_grid_scan(
        k in 0i64..=100,
        dollars in 1i64..=20,
        m in 1u32..=5,
        n in 1u32..=12,
        g in prop::sample::select(vec![1i64, 5, 25, 50, 100]),
    ) {
        let config = GameConfig {
            endowment_per_round: Cents(dollars * 100),
            multiplier: m,
            num_rounds: n,
            amount_granularity: Cents(g),
        };
        let got = theoretical_max(k as f64 / 100.0, &config).unwrap();
        prop_assert_eq!(got.0, oracle_max(k, dollars * 100, m as i64, n as i64, g));
    }

    #[test]
    fn omniscient_is_optimal_and_nash_bounded(k in 0i64..=100, seed in any::<u64>()) {
        let r = k as f64 / 100.0;
        let config = GameConfig::default();
        let omni = play(&mut OmniscientSender::new(r), r, &config, seed);
        prop_assert_eq!(final_fraction(&omni).unwrap(), 1.0);
        let nash = play(&mut NashSender, r, &config, seed);
        let f = final_fraction(&nash).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(nash.sender_total, Cents::from_dollars(100));
    }

    #[test]
    fn runs_are_deterministic(k in 0i64..=100, seed in any::<u64>()) {
        let r = k as f64 / 100.0;
        let config = GameConfig::default();
        let a = play(&mut ProbeSender::default(), r, &config, seed);
        let b = play(&mut ProbeSender::default(), r, &config, seed);
        prop_assert_eq!(&a, &b);
        a.verify().unwrap();
    }

    #[test]
    fn parse_roundtrips_grid_amounts(cents in 0i64..=1000, chatter in "[a-zA-Z ,.]{0,40}") {
        let amount = Cents(cents);
        let text = format!("{chatter}\nAMOUNT: {amount}");
        prop_assert_eq!(parse_amount(&text, &GameConfig::default()).unwrap(), amount);
        let compact = format!("AMOUNT: {}", amount.compact());
        prop_assert_eq!(parse_amount(&compact, &GameConfig::default()).unwrap(), amount);
    }

    #[test]
    fn aggregation_ignores_order(
        samples in prop::collection::vec(0i64..=10, 1..9),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut v: Vec<Cents> = samples.iter().map(|&d| Cents::from_dollars(d)).collect();
        let before = aggregate_self_consistency(&v, Cents(1)).unwrap();
        v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let after = aggregate_self_consistency(&v, Cents(1)).unwrap();
        prop_assert_eq!(before, after);
        prop_assert!(v.contains(&after));
    }

    #[test]
    fn mann_whitney_is_swap_symmetric(
        a in prop::collection::vec(0u8..12, 1..15),
        b in prop::collection::vec(0u8..12, 1..15),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
        prop_assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!(ab.p_two_sided > 0.0 && ab.p_two_sided <= 1.0);
    }

    #[test]
    fn leaderboard_ignores_input_order(
        groups in prop::collection::vec(prop::collection::vec(0u8..=10, 1..8), 1..6),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut summaries: Vec<CellSummary> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| summary(&format!("constant:{i}"), g.iter().map(|&x| f64::from(x) / 10.0).collect()))
            .collect();
        let before = rank_leaderboard(&summaries, 0.05);
        summaries.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let after = rank_leaderboard(&summaries, 0.05);
        prop_assert_eq!(&before, &after);
        let entries = &before[0].entries;
        prop_assert_eq!(&entries[0].rank_letter, "A");
        for w in entries.windows(2) {
            prop_assert!(w[0].mean_fraction >= w[1].mean_fraction);
            prop_assert!(w[0].rank_letter.len() < w[1].rank_letter.len()
                || (w[0].rank_letter.len() == w[1].rank_letter.len() && w[0].rank_letter <= w[1].rank_letter));
        }
    }

    #[test]
    fn summaries_survive_persistence(
        rs in prop::collection::vec(0i64..=10, 1..4),
        iterations in 1u32..4,
        seed in any::<u64>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let writer = StoreWriter::open(&path).unwrap();
        let mut store = RunStore::default();
        for (ci, k) in rs.iter().enumerate() {
            let r = *k as f64 / 10.0;
            let cell = TreatmentCell {
                sender_id: ["probe", "omniscient", "nash", "constant:5"][ci].into(),
                objective: Objective::Helpful,
                strategy: ReasoningStrategy::Direct,
                receiver_r: r,
                toggles: ObservationToggles::default(),
            };
            for it in 0..iterations {
                let seed = seed.wrapping_add(it as u64);
                let mut sender = cell.sender().unwrap().build_scripted(cell.receiver_r).unwrap();
                let record = play(sender.as_mut(), cell.receiver_r, &GameConfig::default(), seed);
                let game = StoredGame {
                    game_id: format!("g{ci}-{it}"),
                    cell_key: cell.key(),
                    cell: cell.clone(),
                    iteration: it,
                    seed,
                    template_hash: "t".into(),
                    provider: None,
                    status: GameStatus::Complete,
                    error: None,
                    failed_round: None,
                    record,
                };
                writer.append(&game).unwrap();
                store.games.push(game);
            }
        }
        let loaded = RunStore::load(&path).unwrap();
        prop_assert_eq!(&loaded, &store);
        let direct = summarize(&store).unwrap();
        let reloaded = summarize(&loaded).unwrap();
        prop_assert_eq!(&direct, &reloaded);
        let json = serde_json::to_string(&direct).unwrap();
        let back: Vec<CellSummary> = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &direct);
        for s in &direct {
            prop_assert!(s.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
            prop_assert!(s.per_round_sent.iter().all(|row| row.len() == 10));
        }
    }
}

fn summary(sender: &str, fractions: Vec<f64>) -> CellSummary {
    let cell = TreatmentCell {
        sender_id: sender.into(),
        objective: Objective::ProfitMaximizing,
        strategy: ReasoningStrategy::Direct,
        receiver_r: 0.5,
        toggles: ObservationToggles::default(),
    };
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    CellSummary {
        cell_key: cell.key(),
        cell,
        iterations: (0..fractions.len() as u32).collect(),
        per_round_sent: vec![vec![0.0; 10]; fractions.len()],
        fractions,
        mean_fraction: Some(mean),
        mean_amount_sent_per_game: Some(0.0),
        excluded_failures: 0,
    }
}

/// Two-sided p by listing every way to split the pooled values.
fn enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let u_of = |mask: u32| -> usize {
        let mut u = 0;
        for i in 0..n {
            if mask & (1 << i) == 0 {
                continue;
            }
            for j in 0..n {
                if mask & (1 << j) == 0 && pooled[i] > pooled[j] {
                    u += 1;
                }
            }
        }
        u
    };
    let observed = u_of((1u32 << a.len()) - 1);
    let (mut total, mut le, mut ge) = (0usize, 0usize, 0usize);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let u = u_of(mask);
        total += 1;
        le += usize::from(u <= observed);
        ge += usize::from(u >= observed);
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

proptest! {
    #[test]
    fn exact_p_matches_enumeration(
        values in prop::sample::subsequence((0..40).collect::<Vec<u32>>(), 2..=10),
        split_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut values: Vec<f64> = values.into_iter().map(f64::from).collect();
        values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(split_seed));
        let k = 1 + (split_seed as usize % (values.len() - 1));
        let (a, b) = values.split_at(k);
        let got = mann_whitney_u(a, b).unwrap();
        prop_assert_eq!(got.method, Method::Exact);
        prop_assert!((got.p_two_sided - enumerated_p(a, b)).abs() < 1e-12);
    }
}
