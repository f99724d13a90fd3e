use std::path::PathBuf;

use proptest::prelude::*;
use sacbf_core::scenario::{load_scenario, parse_scenario, ScenarioConfig};
use sacbf_core::simulator::ControllerKind;
use sacbf_core::taylor_bound::CandidatePolicy;

fn base(name: &str) -> ScenarioConfig {
    load_scenario(
        &PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("scenarios")
            .join(name),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn config_round_trips(
        dt in 0.01..0.5f64,
        steps in 10usize..300,
        heading in -3.0..3.0f64,
        lambda in 0.1..5.0f64,
        eta in 0.5..3.0f64,
        weight in 0.1..500.0f64,
        center in (-10.0..10.0f64, -10.0..10.0f64),
        seed in any::<u64>(),
        controller in 0usize..3,
        policy in 0usize..4,
        second in any::<bool>(),
    ) {
        let mut cfg = base(if second { "case2.cfg" } else { "case1.cfg" })
            .with_heading(heading).unwrap()
            .with_controller(ControllerKind::ALL[controller])
            .with_seed(seed);
        cfg.dt = dt;
        cfg.horizon = steps as f64 * dt;
        cfg.safety[0].alphas[1].lambda = lambda;
        cfg.safety[0].alphas[0].eta = eta;
        cfg.safety[0].weight = weight;
        cfg.reach[0].center = vec![center.0, center.1];
        cfg.estimator.candidates = [
            CandidatePolicy::BoxVertices,
            CandidatePolicy::PreviousInput,
            CandidatePolicy::CertifiedInput,
            CandidatePolicy::TrustRegion,
        ][policy];
        let text = cfg.to_toml().unwrap();
        let back = parse_scenario(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn shipped_scenarios_load() {
    let c1 = base("case1.cfg");
    assert_eq!(c1.steps(), 50);
    assert_eq!(c1.headings.len(), 4);
    assert_eq!(c1.safety.len(), 1);
    assert_eq!(c1.reach.len(), 1);
    let c2 = base("case2.cfg");
    assert_eq!(c2.steps(), 220);
    assert_eq!(c2.safety.len(), 3);
    assert_eq!(c2.reach.len(), 3);
    assert_eq!(c2.reach[0].t_remain, Some(12.0));
}

#[test]
fn rejects_malformed_documents() {
    let text = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/case1.cfg"),
    )
    .unwrap();
    assert!(parse_scenario(&text.replace("dt = 0.1", "dt = -0.1")).is_err());
    assert!(parse_scenario(&text.replace("radius = 1.0", "radius = 0.0")).is_err());
    assert!(parse_scenario(&text.replace("eps0 = 7.0", "eps0 = 0.5")).is_err());
    assert!(parse_scenario(&text.replace("model = \"unicycle\"", "model = \"bicycle\"")).is_err());
    assert!(parse_scenario(&format!("{text}\nunknown = 1\n")).is_err());
}
