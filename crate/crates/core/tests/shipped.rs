use slipdrag::scenario::parse_scenario_str;
use slipdrag::stokes::SolverOptions;
use slipdrag::theory::beta_monotonicity;
use slipdrag::validation::shipped_scenarios;

#[test]
fn shipped_scenarios_round_trip() {
    for (name, s) in shipped_scenarios().unwrap() {
        assert_eq!(parse_scenario_str(&s.to_toml()).unwrap(), s, "{name}");
    }
}

#[test]
fn drag_nondecreasing_in_beta_for_every_shipped_obstacle() {
    for (name, s) in shipped_scenarios().unwrap() {
        let obs = s.obstacle().unwrap();
        let sweep = beta_monotonicity(&obs, &s.phys(), &[0.0, 0.1, 1.0, 10.0, 100.0], &SolverOptions::default()).unwrap();
        assert!(sweep.monotone, "{name}: {:?}", sweep.drags);
    }
}
