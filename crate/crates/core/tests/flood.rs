use imdsec::energy::{auth_energy, CostTable, ProtocolStep, SecurityClass};
use imdsec::netsim::flood::battery_dos_flood;
use imdsec::netsim::WorldConfig;

fn auth_pj() -> u64 {
    let t = CostTable::default();
    ProtocolStep::AUTH.iter().map(|s| t.step_energy_pj(SecurityClass::HwAes, *s).unwrap()).sum()
}

#[test]
fn zpd_keeps_battery_untouched() {
    let r = battery_dos_flood(WorldConfig::default(), 10_000, true, false);
    assert_eq!(r.battery_spent_pj, 0);
    assert!(r.harvested_spent_pj > 0);
}

#[test]
fn without_zpd_every_attempt_costs_e_auth() {
    let r = battery_dos_flood(WorldConfig::default(), 10_000, false, false);
    assert_eq!(r.battery_spent_pj, 10_000 * auth_pj());
    let e_auth_uj = auth_energy(&CostTable::default(), SecurityClass::HwAes);
    assert!((r.battery_spent_j() - 10_000.0 * e_auth_uj * 1e-6).abs() < 1e-9);
}

#[test]
fn honest_session_survives_the_flood() {
    let r = battery_dos_flood(WorldConfig::default(), 200, true, true);
    assert_eq!(r.honest_completed, Some(true));
    assert_eq!(r.battery_spent_pj, r.honest_battery_pj);
    assert!(r.honest_battery_pj > 0);
}
