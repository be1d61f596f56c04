use irs_crb::experiment::{generate_scenario, ScenarioParams};
use irs_crb::oracles::grid_power_search;
use irs_crb::single_target::{dinkelbach_solve, fractional_problem, solve_stages, two_stage_solve};
use irs_crb::{Error, Network, SolverSettings};

fn network(params: &ScenarioParams, seed: u64) -> Network {
    Network::new(generate_scenario(params, seed).unwrap()).unwrap()
}

#[test]
fn dinkelbach_matches_grid_on_three_irs() {
    let mut params = ScenarioParams::default();
    params.n_irs = 3;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let net = network(&params, seed);
        let prob = fractional_problem(&net, 0, &[0, 1, 2]).unwrap();
        let res = dinkelbach_solve(&prob, &SolverSettings::default()).unwrap();
        let (_, grid) = grid_power_search(&prob, 200).unwrap();
        let ratio = res.objective / grid;
        worst = worst.max(ratio);
        assert!(ratio <= 1.01, "seed {seed}: admm {} grid {grid}", res.objective);
    }
    eprintln!("worst admm/grid ratio {worst}");
}

#[test]
fn single_irs_gets_all_power_but_cannot_localize() {
    let mut params = ScenarioParams::default();
    params.n_irs = 1;
    let net = network(&params, 4);
    let prob = fractional_problem(&net, 0, &[0]).unwrap();
    let res = dinkelbach_solve(&prob, &SolverSettings::default()).unwrap();
    assert!((res.p[0] * prob.h[0] / net.scenario.p_max - 1.0).abs() < 1e-12);
    // One monostatic path observes the target from a single direction.
    assert!(matches!(solve_stages(&net), Err(Error::SingularFim(0))));
}

#[test]
fn two_stage_never_worse_than_first_stage() {
    let params = ScenarioParams::default();
    for seed in 0..10 {
        let net = network(&params, seed);
        let stages = solve_stages(&net).unwrap();
        let (_, best) = two_stage_solve(&net).unwrap();
        assert!(best.worst_crb <= stages[0].worst_crb * (1.0 + 1e-12));
        assert!((best.beams.transmit_power() / net.scenario.p_max - 1.0).abs() < 1e-6);
        assert!(best.beams.max_cross_term(&net.channels) < 1e-9);
    }
}
