use evoipd_core::evolution::{inject_mutation, reproduce, FitnessReport};
use evoipd_core::{Population, Rational, StrategyId};
use proptest::prelude::*;

const NAMES: [&str; 6] = ["Alpha", "Beta", "Gamma", "Delta", "Random", "Zeta"];

fn id(i: usize) -> StrategyId {
    StrategyId::new(NAMES[i]).unwrap()
}

/// Counts with at least one agent, and `(score, moves)` tallies per strategy.
fn setup() -> impl Strategy<Value = (Vec<u32>, Vec<(i64, u64)>)> {
    (1usize..=6).prop_flat_map(|k| {
        (
            prop::collection::vec(1u32..=20, k),
            prop::collection::vec((0i64..=500, 1u64..=100), k),
        )
    })
}

fn build(counts: &[u32], tallies: &[(i64, u64)]) -> (Population, FitnessReport<Rational>) {
    let pop = Population::new(counts.iter().enumerate().map(|(i, n)| (id(i), *n)));
    let fit = FitnessReport::from_totals(tallies.iter().enumerate().map(|(i, (s, m))| (id(i), *s, *m))).unwrap();
    (pop, fit)
}

proptest! {
    #[test]
    fn size_is_conserved((counts, tallies) in setup()) {
        let (pop, fit) = build(&counts, &tallies);
        let next = reproduce(&pop, &fit).unwrap();
        prop_assert_eq!(next.total(), pop.target_size());
        prop_assert_eq!(next.target_size(), pop.target_size());
    }

    #[test]
    fn scaling_all_fitness_changes_nothing((counts, tallies) in setup(), c in 1i64..=7) {
        let (pop, fit) = build(&counts, &tallies);
        let scaled: Vec<(i64, u64)> = tallies.iter().map(|(s, m)| (s * c, *m)).collect();
        let (_, fit_scaled) = build(&counts, &scaled);
        prop_assert_eq!(reproduce(&pop, &fit).unwrap(), reproduce(&pop, &fit_scaled).unwrap());
    }

    #[test]
    fn fitter_and_no_smaller_never_ends_behind((counts, tallies) in setup()) {
        let (pop, fit) = build(&counts, &tallies);
        let next = reproduce(&pop, &fit).unwrap();
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                let (fi, fj) = (fit.fitness(&id(i)).unwrap(), fit.fitness(&id(j)).unwrap());
                if fi > fj && counts[i] >= counts[j] {
                    prop_assert!(next.count(&id(i)) >= next.count(&id(j)));
                }
            }
        }
    }

    #[test]
    fn a_single_strategy_keeps_everyone(n in 1u32..=50, score in 0i64..=300, moves in 1u64..=100) {
        let (pop, fit) = build(&[n], &[(score, moves)]);
        prop_assert_eq!(reproduce(&pop, &fit).unwrap(), pop);
    }

    #[test]
    fn equal_fitness_is_a_fixed_point(counts in prop::collection::vec(1u32..=20, 1..=6), s in 1i64..=50) {
        let tallies = vec![(s, 10); counts.len()];
        let (pop, fit) = build(&counts, &tallies);
        prop_assert_eq!(reproduce(&pop, &fit).unwrap(), pop);
    }

    #[test]
    fn mutation_keeps_size_and_adds_random((counts, tallies) in setup()) {
        let (pop, fit) = build(&counts, &tallies);
        let mut without_random = pop.clone();
        without_random.set_count(StrategyId::random(), 0);
        if without_random.total() > 0 {
            let mutated = inject_mutation(&without_random, &fit);
            prop_assert_eq!(mutated.total(), without_random.total());
            prop_assert_eq!(mutated.count(&StrategyId::random()), 1);
        }
        let with_random = inject_mutation(&pop, &fit);
        prop_assert_eq!(with_random.total(), pop.total());
    }
}
