use pma_core::identification::{
    average_response, characterize, evaluate_cost, identify, rms, synthesize_runs, Bounds,
    FreeParams, IdentificationProblem, Recording,
};
use pma_core::{PlantParams, PressureSignal, SimClock, Trajectory};
use proptest::prelude::*;

fn truth() -> Trajectory {
    characterize(
        &PlantParams::identified(),
        &PressureSignal::characterization_chirp(),
        &SimClock::new(1e-3, 15.0).unwrap(),
    )
    .unwrap()
}

fn problem(recorded: &Trajectory, n_starts: usize, seed: u64) -> IdentificationProblem {
    let p = PlantParams::identified();
    let mut prob = IdentificationProblem::new(
        Recording::from_trajectory(recorded).unwrap(),
        p,
        Bounds::around(&FreeParams::from_plant(&p), 0.5),
    );
    prob.n_starts = n_starts;
    prob.rng_seed = seed;
    prob
}

#[test]
fn noiseless_recovery_matches_response() {
    let truth = truth();
    let prob = problem(&truth, 20, 7);
    let result = identify(&prob).unwrap();
    assert!(result.cost < 2e-4, "{}", result.cost);
    let fitted = characterize(
        &result.params_hat.apply(&prob.fixed),
        &PressureSignal::characterization_chirp(),
        &SimClock::new(1e-3, 15.0).unwrap(),
    )
    .unwrap();
    let vs_truth = rms(fitted.x.iter().zip(&truth.x).map(|(a, b)| a - b));
    assert!(vs_truth < 2e-4, "{vs_truth}");
    // the winner is no worse than any start, and is the reported start
    for s in &result.starts {
        assert!(result.cost <= s.cost);
    }
    assert_eq!(result.cost, result.starts[result.best_start_index].cost);
    assert_eq!(result.params_hat, result.starts[result.best_start_index].converged);
}

#[test]
fn same_seed_gives_identical_results() {
    let truth = truth();
    let prob = problem(&truth, 3, 11);
    let a = identify(&prob).unwrap();
    let b = identify(&prob).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.starts_csv(), b.starts_csv());
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn recovered_cost_grows_with_noise() {
    let truth = truth();
    let mut medians = Vec::new();
    for sigma in [0.0, 1e-4, 5e-4] {
        let costs = (1..=3u64)
            .map(|seed| {
                let recorded = average_response(&synthesize_runs(&truth, 10, sigma, seed).unwrap()).unwrap();
                identify(&problem(&recorded, 20, seed)).unwrap().cost
            })
            .collect();
        medians.push(median(costs));
    }
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cost_is_non_negative_and_zero_only_on_match(u in prop::array::uniform6(0.0f64..1.0)) {
        let short = characterize(
            &PlantParams::identified(),
            &PressureSignal::characterization_chirp(),
            &SimClock::new(1e-3, 3.0).unwrap(),
        )
        .unwrap();
        let prob = problem(&short, 1, 0);
        let b = prob.bounds;
        let candidate = FreeParams(std::array::from_fn(|i| b.lower[i] + u[i] * (b.upper[i] - b.lower[i])));
        let cost = evaluate_cost(&candidate, &prob).unwrap();
        prop_assert!(cost >= 0.0);
        let params = candidate.apply(&prob.fixed);
        let sim = characterize(&params, &PressureSignal::characterization_chirp(), &SimClock::new(1e-3, 3.0).unwrap());
        if let Ok(sim) = sim {
            let exact = sim.x.iter().zip(&short.x).all(|(a, b)| a == b);
            prop_assert_eq!(cost == 0.0, exact);
        }
    }
}
