use imdsec::energy::calibrate::{derive_cost_table, CalibrationTargets};
use imdsec::energy::table::DEFAULT_COST_TABLE_TOML;
use imdsec::energy::{
    auth_energy, daily_energy, estimate_lifetime, protocol_delay, session_energy, CostTable, ProtocolStep,
    SecurityClass, SessionSpec, UsageProfile,
};
use imdsec::report::{energy_report, BATTERY_CAPACITIES_J};
use proptest::prelude::*;

use SecurityClass::{HwAes, None as Plain, SwAes, SwMisty1, SwSpeck};

fn within(actual: f64, expected: f64, rel: f64) -> bool {
    ((actual - expected) / expected).abs() <= rel
}

/// Sums step energies straight from the shipped TOML, without the table types.
fn toml_step_sum(class: &str, steps: &[&str], field: &str) -> f64 {
    let doc: toml::Value = DEFAULT_COST_TABLE_TOML.parse().unwrap();
    let classes = doc["class"].as_array().unwrap();
    let c = classes.iter().find(|c| c["class"].as_str() == Some(class)).unwrap();
    c["step"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| steps.contains(&s["step"].as_str().unwrap()))
        .map(|s| s[field].as_float().unwrap())
        .sum()
}

#[test]
fn basic_session_energy_matches_reference_rows() {
    let t = CostTable::default();
    for (class, uj) in [(Plain, 16.61), (HwAes, 108.31), (SwAes, 217.89)] {
        let e = session_energy(&t, class, &SessionSpec::basic(class)).unwrap();
        assert!(within(e, uj, 0.01), "{class}: {e}");
    }
}

#[test]
fn session_energy_agrees_with_raw_toml_sum() {
    let t = CostTable::default();
    let secure = ["hello-rx", "nonce-tx", "key-delivery-rx", "key-confirm", "command-rx", "answer-tx"];
    let e = session_energy(&t, HwAes, &SessionSpec::basic(HwAes)).unwrap();
    assert!((e - toml_step_sum("hw-aes", &secure, "energy_uj")).abs() < 1e-9);
    let d = protocol_delay(&t, SwAes).unwrap();
    assert!((d - toml_step_sum("sw-aes", &secure, "time_ms")).abs() < 1e-9);
}

#[test]
fn auth_energy_is_exact_in_picojoules() {
    let t = CostTable::default();
    let pj = |c| ProtocolStep::AUTH.iter().map(|s| t.step_energy_pj(c, *s).unwrap()).sum::<u64>();
    assert_eq!(pj(HwAes), 59_600_000);
    assert_eq!(pj(SwAes), 119_400_000);
    assert!((auth_energy(&t, HwAes) - 59.6).abs() < 1e-9);
    assert!((auth_energy(&t, SwAes) - 119.4).abs() < 1e-9);
    assert_eq!(auth_energy(&t, Plain), 0.0);
}

#[test]
fn delays_match_and_no_hardware_step_exceeds_six_ms() {
    let t = CostTable::default();
    for (class, ms) in [(Plain, 2.17), (HwAes, 15.73), (SwAes, 58.99)] {
        let d = protocol_delay(&t, class).unwrap();
        assert!(within(d, ms, 0.01), "{class}: {d}");
    }
    for step in ProtocolStep::SECURE_SESSION {
        assert!(t.step(HwAes, step).unwrap().time_ms <= 6.0, "{step:?}");
    }
}

#[test]
fn daily_energy_and_overheads() {
    let t = CostTable::default();
    let p = UsageProfile::default();
    let d = |c| daily_energy(&t, c, &p).unwrap();
    for (class, j) in [(Plain, 16.60), (HwAes, 17.69), (SwAes, 19.89)] {
        assert!(within(d(class), j, 0.01), "{class}: {}", d(class));
    }
    let hw = (d(HwAes) / d(Plain) - 1.0) * 100.0;
    let sw = (d(SwAes) / d(Plain) - 1.0) * 100.0;
    assert!((hw - 6.57).abs() <= 0.1, "{hw}");
    assert!((sw - 19.82).abs() <= 0.1, "{sw}");
}

#[test]
fn stimulation_term_is_hand_computable() {
    // 20 µJ per beat, 60 bpm, 1440 minutes.
    assert!((UsageProfile::default().stimulation_j_per_day() - 1.728).abs() < 1e-12);
}

#[test]
fn lifetime_ordering_holds_for_every_battery() {
    let t = CostTable::default();
    for cap in BATTERY_CAPACITIES_J {
        let p = UsageProfile { battery_capacity_j: cap, ..UsageProfile::default() };
        let l = |c| estimate_lifetime(&t, &p, c).unwrap();
        assert!(l(Plain) >= l(HwAes) && l(HwAes) > l(SwAes), "{cap}");
        assert!(l(HwAes) > l(SwSpeck) && l(SwSpeck) > l(SwAes), "{cap}");
        assert!(l(SwSpeck) > l(SwMisty1) && l(SwMisty1) > l(SwAes), "{cap}");
        assert!(1.0 - l(HwAes) / l(Plain) <= 0.07);
    }
}

#[test]
fn doubling_capacity_doubles_lifetime() {
    let t = CostTable::default();
    let p = UsageProfile::default();
    let p2 = UsageProfile { battery_capacity_j: 2.0 * p.battery_capacity_j, ..p.clone() };
    let a = estimate_lifetime(&t, &p, HwAes).unwrap();
    let b = estimate_lifetime(&t, &p2, HwAes).unwrap();
    assert!((b - 2.0 * a).abs() < 1e-9 * b);
}

#[test]
fn regenerated_table_equals_shipped_table() {
    assert_eq!(derive_cost_table(&CalibrationTargets::default()), CostTable::default());
}

#[test]
fn report_csv_reparses() {
    let t = CostTable::default();
    let r = energy_report(&t, &UsageProfile::default(), &SecurityClass::ALL, &BATTERY_CAPACITIES_J).unwrap();
    let back = imdsec::report::EnergyReport::from_csv(&r.to_csv()).unwrap();
    assert_eq!(back.classes.len(), r.classes.len());
    assert_eq!(back.lifetimes.len(), r.lifetimes.len());
    for (a, b) in back.classes.iter().zip(&r.classes) {
        assert_eq!(a.class, b.class);
        assert!((a.session_uj - b.session_uj).abs() <= 1e-9 * b.session_uj.abs().max(1.0));
        assert!((a.daily_j - b.daily_j).abs() <= 1e-12 * b.daily_j);
    }
}

fn arb_step() -> impl Strategy<Value = ProtocolStep> {
    prop::sample::select(ProtocolStep::SECURE_SESSION.to_vec())
}

fn arb_spec() -> impl Strategy<Value = SessionSpec> {
    (prop::collection::vec(arb_step(), 0..12), prop::collection::vec(0u64..100_000, 0..3))
        .prop_map(|(steps, bulk_transfers)| SessionSpec { steps, bulk_transfers })
}

proptest! {
    #[test]
    fn session_energy_is_additive(a in arb_spec(), b in arb_spec()) {
        let t = CostTable::default();
        for class in [HwAes, SwAes, SwSpeck] {
            let sum = session_energy(&t, class, &a).unwrap() + session_energy(&t, class, &b).unwrap();
            let joint = session_energy(&t, class, &a.clone().concat(&b)).unwrap();
            prop_assert!((joint - sum).abs() <= 1e-9 * sum.max(1.0));
        }
    }

    #[test]
    fn daily_energy_grows_with_session_rate(r1 in 0.0f64..3.0, r2 in 0.0f64..3.0) {
        let t = CostTable::default();
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let p = |r| UsageProfile { sessions_per_day: r, ..UsageProfile::default() };
        for class in SecurityClass::ALL {
            prop_assert!(daily_energy(&t, class, &p(lo)).unwrap() <= daily_energy(&t, class, &p(hi)).unwrap());
        }
    }
}
