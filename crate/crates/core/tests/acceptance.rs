//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines appear in plain `cargo test` output.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use imdsec::energy::{auth_energy, CostTable, ProtocolStep, SecurityClass, UsageProfile};
use imdsec::entities::flash::{overwrite_attempts, SignatureFlash, DEFAULT_FLASH_BYTES, RECORD_LEN};
use imdsec::netsim::flood::battery_dos_flood;
use imdsec::netsim::properties::{run_suite, Phase};
use imdsec::netsim::{table_scenarios, WorldConfig};
use imdsec::report::{energy_report, BATTERY_CAPACITIES_J};

/// Attempt count reported for the overwrite attack on 32 kB of flash.
const STATED_OVERWRITE_ATTEMPTS: u64 = 456;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(actual: f64, expected: f64, rel: f64) -> bool {
    ((actual - expected) / expected).abs() <= rel
}

fn timed(limit: Duration, f: impl FnOnce() -> Result<String, String>) -> Result<String, String> {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(format!("{detail}; {took:.2?}"))
}

fn energy_calibration() -> Result<String, String> {
    timed(Duration::from_secs(1), || {
        let t = CostTable::default();
        let r = energy_report(&t, &UsageProfile::default(), &SecurityClass::ALL[..3], &BATTERY_CAPACITIES_J)
            .map_err(|e| e.to_string())?;
        let expect = [
            (SecurityClass::None, 16.61, 2.17, 16.60),
            (SecurityClass::HwAes, 108.31, 15.73, 17.69),
            (SecurityClass::SwAes, 217.89, 58.99, 19.89),
        ];
        for (class, uj, ms, j) in expect {
            let row = r.row(class).ok_or("missing row")?;
            ensure(within(row.session_uj, uj, 0.01), || format!("{class} session {}", row.session_uj))?;
            ensure(within(row.delay_ms, ms, 0.01), || format!("{class} delay {}", row.delay_ms))?;
            ensure(within(row.daily_j, j, 0.01), || format!("{class} daily {}", row.daily_j))?;
        }
        let pj = |c| ProtocolStep::AUTH.iter().map(|s| t.step_energy_pj(c, *s).unwrap()).sum::<u64>();
        ensure(pj(SecurityClass::HwAes) == 59_600_000, || format!("E_auth hw {} pJ", pj(SecurityClass::HwAes)))?;
        ensure(pj(SecurityClass::SwAes) == 119_400_000, || format!("E_auth sw {} pJ", pj(SecurityClass::SwAes)))?;
        Ok("3 classes within 1%, E_auth 59.6/119.4 uJ exact".into())
    })
}

fn overhead_percentages() -> Result<String, String> {
    let r = energy_report(&CostTable::default(), &UsageProfile::default(), &SecurityClass::ALL[..3], &[])
        .map_err(|e| e.to_string())?;
    let hw = r.row(SecurityClass::HwAes).unwrap().increase_pct;
    let sw = r.row(SecurityClass::SwAes).unwrap().increase_pct;
    ensure((hw - 6.57).abs() <= 0.1, || format!("hw {hw:.3}%"))?;
    ensure((sw - 19.82).abs() <= 0.1, || format!("sw {sw:.3}%"))?;
    Ok(format!("hw {hw:.2}%, sw {sw:.2}%"))
}

fn zpd_battery_invariance() -> Result<String, String> {
    timed(Duration::from_secs(30), || {
        let with = battery_dos_flood(WorldConfig::default(), 10_000, true, false);
        ensure(with.battery_spent_pj == 0, || format!("ZPD on: {} pJ from battery", with.battery_spent_pj))?;
        let without = battery_dos_flood(WorldConfig::default(), 10_000, false, false);
        let t = CostTable::default();
        let e_auth: u64 = ProtocolStep::AUTH.iter().map(|s| t.step_energy_pj(SecurityClass::HwAes, *s).unwrap()).sum();
        ensure(without.battery_spent_pj == 10_000 * e_auth, || {
            format!("ZPD off: {} pJ, expected {}", without.battery_spent_pj, 10_000 * e_auth)
        })?;
        Ok(format!(
            "0 J with ZPD, {:.4} J = 10000 x {} uJ without",
            without.battery_spent_j(),
            auth_energy(&t, SecurityClass::HwAes)
        ))
    })
}

fn signature_record_arithmetic() -> Result<String, String> {
    ensure(RECORD_LEN == 72, || format!("record is {RECORD_LEN} bytes"))?;
    let cap = SignatureFlash::new(DEFAULT_FLASH_BYTES).capacity_records();
    ensure(cap == 455, || format!("capacity {cap}"))?;
    let measured = overwrite_attempts(DEFAULT_FLASH_BYTES).ok_or("flash holds no record")?;
    ensure(measured == 455 || measured == 456, || format!("measured {measured}"))?;
    Ok(format!(
        "72-byte records, 455 per 32 kB; overwrite took {measured} attempts (stated {STATED_OVERWRITE_ATTEMPTS})"
    ))
}

fn scenario_matrix() -> Result<String, String> {
    timed(Duration::from_secs(60), || {
        let cells = table_scenarios();
        let seeds = [7, 19, 23, 101, 4242];
        let mut bad = Vec::new();
        for s in &cells {
            for seed in seeds {
                let v = s.run(seed);
                if !v.is_ok() {
                    bad.push(format!("{} seed {seed}: {v}", s.label()));
                }
            }
        }
        ensure(bad.is_empty(), || bad.join("; "))?;
        let mut names: Vec<_> = cells.iter().map(|c| c.name.clone()).collect();
        names.dedup();
        Ok(format!("{} scenarios, {} cells x {} seeds", names.len(), cells.len(), seeds.len()))
    })
}

fn security_properties() -> Result<String, String> {
    let mut traces = 0;
    let mut violations = Vec::new();
    for phase in Phase::ALL {
        let r = run_suite(phase, 1_000, 1);
        traces += r.traces;
        violations.extend(r.violations);
    }
    ensure(violations.is_empty(), || format!("{} violations, first {:?}", violations.len(), violations[0]))?;
    Ok(format!("{traces} traces over {} phases, 0 violations", Phase::ALL.len()))
}

fn mode_gating() -> Result<String, String> {
    let mut offline = 0;
    let mut bedside = 0;
    for nr in [true, false] {
        let w = common::mode_gating_walk(11, 10_000, nr);
        ensure(w.violations.is_empty(), || w.violations.join("; "))?;
        ensure(w.steps == 10_000, || format!("walk stopped after {}", w.steps))?;
        offline += w.offline_sessions;
        bedside += w.bedside_commands;
    }
    ensure(offline > 0 && bedside > 0, || {
        format!("walk reached {offline} offline sessions, {bedside} bedside commands")
    })?;
    Ok(format!("2 x 10000 events, {offline} offline sessions, {bedside} bedside commands"))
}

fn determinism() -> Result<String, String> {
    let mut compared = 0;
    for s in table_scenarios() {
        for seed in [1, 77] {
            let a = s.execute(seed).setup.world.trace_text();
            let b = s.execute(seed).setup.world.trace_text();
            ensure(a == b, || format!("{} seed {seed} differs", s.label()))?;
            compared += a.len();
        }
    }
    for seed in 0..20 {
        let (a, b) = (
            imdsec::netsim::properties::check_trace(Phase::SessionKey, seed),
            imdsec::netsim::properties::check_trace(Phase::SessionKey, seed),
        );
        ensure(a == b, || format!("attacked trace {seed} differs"))?;
    }
    Ok(format!("{compared} trace bytes identical across reruns"))
}

fn lifetime_ordering() -> Result<String, String> {
    let t = CostTable::default();
    let r = energy_report(&t, &UsageProfile::default(), &SecurityClass::ALL[..3], &BATTERY_CAPACITIES_J)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for cap in BATTERY_CAPACITIES_J {
        let days = |c| r.lifetimes.iter().find(|l| l.class == c && l.capacity_j == cap).map(|l| l.days).unwrap();
        let (none, hw, sw) = (days(SecurityClass::None), days(SecurityClass::HwAes), days(SecurityClass::SwAes));
        ensure(none >= hw && hw > sw, || format!("{cap} J: {none:.0} / {hw:.0} / {sw:.0} days"))?;
        worst = worst.max(1.0 - hw / none);
        ensure(1.0 - hw / none <= 0.07, || format!("{cap} J: hw penalty {:.2}%", (1.0 - hw / none) * 100.0))?;
    }
    Ok(format!("{} capacities ordered, hw penalty at most {:.2}%", BATTERY_CAPACITIES_J.len(), worst * 100.0))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("energy calibration", energy_calibration),
        ("overhead percentages", overhead_percentages),
        ("ZPD battery invariance", zpd_battery_invariance),
        ("signature-record arithmetic", signature_record_arithmetic),
        ("scenario matrix", scenario_matrix),
        ("security property suite", security_properties),
        ("mode gating", mode_gating),
        ("determinism", determinism),
        ("lifetime ordering", lifetime_ordering),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
