use imdsec::entities::Reason;
use imdsec::netsim::scenario::{table_scenarios, Preconditions, Scenario};
use imdsec::netsim::Outcome;

#[test]
fn every_table_cell_matches() {
    let mut bad = Vec::new();
    for s in table_scenarios() {
        let v = s.run(7);
        println!("{:<40} {}", s.label(), v);
        if !v.is_ok() {
            bad.push(s.label());
        }
    }
    assert!(bad.is_empty(), "deviations: {bad:?}");
}

#[test]
fn outside_attacker_needs_all_six_preconditions() {
    assert_eq!(Scenario::s6(Preconditions::ALL_TRUE).run(3).outcome(), Outcome::Success);
    for (pre, reason) in Preconditions::single_failures() {
        let v = Scenario::s6(pre).run(3);
        assert_eq!(v.outcome(), Outcome::Rejected(reason), "{pre:?}");
    }
}

#[test]
fn outcomes_round_trip_through_text() {
    for o in [Outcome::Success, Outcome::DetectableInAudit, Outcome::Rejected(Reason::FlagMismatch)] {
        assert_eq!(o.to_string().parse::<Outcome>(), Ok(o));
    }
}
