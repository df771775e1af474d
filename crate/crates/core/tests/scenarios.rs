use std::path::PathBuf;

use badsim_core::scenario::Scenario;

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(name: &str) -> badsim_core::scenario::ScenarioRun {
    let run = Scenario::load(bundled(name)).unwrap().run().unwrap();
    assert!(run.passed(), "{}", run.summary());
    run
}

#[test]
fn two_domain_passes() {
    let r = run("two_domain.toml");
    println!("{}", r.summary());
}

#[test]
fn no_adversary_passes() {
    run("no_adversary.toml");
}

#[test]
fn worst_case_matcher_passes() {
    let r = run("worst_case_matcher.toml");
    let w = r.sim.node_by_name("W").unwrap();
    assert_eq!(w.stats().max_step_work, 3 + 1 + 5 + 2);
}
