use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use imdsec::energy::{CostTable, SecurityClass, UsageProfile};
use imdsec::entities::flash::RECORD_LEN;
use imdsec::netsim::{scenarios_named, Verdict};
use imdsec::report::{audit_flash, energy_report, BATTERY_CAPACITIES_J};

fn imdsec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imdsec"))
        .current_dir(dir)
        .env_remove("IMDSEC_COST_TABLE")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_s2_is_as_expected() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(dir.path(), &["run", "--scenario", "S2", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().all(|l| l.contains("as-expected rejected(cert-revoked)")), "{out}");
}

#[test]
fn unsigned_offline_against_nr_implant_reports_the_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(dir.path(), &["run", "--scenario", "S1", "--mode", "offline", "--nr-offline", "false"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().all(|l| l.ends_with("reported rejected(flag-mismatch)")), "{}", stdout(&o));
}

#[test]
fn wrong_expectation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(dir.path(), &["run", "--scenario", "S2", "--expect", "success"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(dir.path(), &["run", "--scenario", "S1", "--cost-table", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
    assert_eq!(imdsec(dir.path(), &["run", "--scenario", "S9"]).status.code(), Some(2));
    assert_eq!(imdsec(dir.path(), &["run", "--class", "rot13"]).status.code(), Some(2));
    fs::write(dir.path().join("bad.toml"), "seed = \"seven\"").unwrap();
    assert_eq!(imdsec(dir.path(), &["run", "--config", "bad.toml"]).status.code(), Some(2));
}

#[test]
fn cost_table_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_imdsec"))
        .current_dir(dir.path())
        .env("IMDSEC_COST_TABLE", "nowhere.toml")
        .args(["energy-report"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.toml"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "scenario = \"S2\"\nseed = 4\nout_dir = \"from-file\"\n").unwrap();
    let o = imdsec(dir.path(), &["run", "--config", "run.toml", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("S2 ") && out.contains("seed=9"), "{out}");
    assert!(dir.path().join("from-file/energy.txt").exists());
}

#[test]
fn custom_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("late.toml"),
        "name = \"late-shift\"\nuser = \"honest\"\nreader = \"valid\"\nmode = \"online\"\n\
         expected = \"rejected(privilege-violation)\"\n[preconditions]\nin_hours = false\n",
    )
    .unwrap();
    let o = imdsec(dir.path(), &["run", "--scenario", "late.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("as-expected rejected(privilege-violation)"));
}

#[test]
fn run_output_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(dir.path(), &["run", "--scenario", "S3", "--seed", "5", "--out-dir", "o"]);
    assert_eq!(o.status.code(), Some(0));
    for s in scenarios_named("S3") {
        let run = s.execute(5);
        let stem = s.label().to_lowercase().replace([' ', '+'], "-");
        let trace = fs::read_to_string(dir.path().join(format!("o/{stem}.trace"))).unwrap();
        assert_eq!(trace, run.setup.world.trace_text());
        let verdict = s.judge(&run);
        assert!(matches!(verdict, Verdict::AsExpected(_)));
        assert!(stdout(&o).contains(&format!("{} seed=5 {verdict}", s.label())));
        let flash = fs::read(dir.path().join(format!("o/{stem}.flash"))).unwrap();
        assert_eq!(flash, run.setup.world.implant(&run.setup.ids.implant).flash().dump());
    }
}

#[test]
fn energy_report_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let lib =
        energy_report(&CostTable::default(), &UsageProfile::default(), &SecurityClass::ALL, &BATTERY_CAPACITIES_J)
            .unwrap();
    let o = imdsec(dir.path(), &["energy-report", "--format", "csv"]);
    assert_eq!(stdout(&o), lib.to_csv());
    let o = imdsec(dir.path(), &["energy-report"]);
    assert_eq!(stdout(&o), lib.to_text());
}

#[test]
fn speck_lifetime_sits_between_the_aes_variants() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(
        dir.path(),
        &["energy-report", "--class", "hw-aes", "--class", "sw-speck", "--class", "sw-aes", "--format", "csv"],
    );
    let report = imdsec::report::EnergyReport::from_csv(&stdout(&o)).unwrap();
    for cap in BATTERY_CAPACITIES_J {
        let days =
            |c: SecurityClass| report.lifetimes.iter().find(|l| l.class == c && l.capacity_j == cap).unwrap().days;
        assert!(days(SecurityClass::HwAes) > days(SecurityClass::SwSpeck));
        assert!(days(SecurityClass::SwSpeck) > days(SecurityClass::SwAes));
    }
}

#[test]
fn audit_of_honest_dump_passes_and_forgery_is_pinpointed() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(dir.path(), &["run", "--scenario", "S1", "--out-dir", "o"]);
    assert_eq!(o.status.code(), Some(0));
    let base = "o/s1-honest-valid-online";
    let dump_path = format!("{base}.flash");
    let cert_path = format!("{base}.cert");
    let o = imdsec(dir.path(), &["audit-flash", &dump_path, &cert_path]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).ends_with("1 records, 0 failed\n"), "{}", stdout(&o));

    let mut dump = fs::read(dir.path().join(&dump_path)).unwrap();
    let mut forged = dump[..RECORD_LEN].to_vec();
    forged[48] ^= 0x01;
    dump.extend_from_slice(&forged);
    dump.extend_from_slice(&fs::read(dir.path().join(&dump_path)).unwrap());
    fs::write(dir.path().join("forged.flash"), &dump).unwrap();
    let o = imdsec(dir.path(), &["audit-flash", "forged.flash", &cert_path, "--format", "csv"]);
    assert_eq!(o.status.code(), Some(1));
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(str::to_string).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("0,true,") && rows[1].starts_with("1,false,") && rows[2].starts_with("2,true,"));

    let key = imdsec::report::parse_card_key(&fs::read(dir.path().join(&cert_path)).unwrap()).unwrap();
    let o = imdsec(dir.path(), &["audit-flash", "forged.flash", &cert_path]);
    assert_eq!(stdout(&o), audit_flash(&dump, &key).to_text());
}

#[test]
fn empty_dump_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    imdsec(dir.path(), &["run", "--scenario", "S1", "--out-dir", "o"]);
    fs::write(dir.path().join("empty.flash"), []).unwrap();
    let o = imdsec(dir.path(), &["audit-flash", "empty.flash", "o/s1-honest-valid-online.cert"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "0 records, 0 failed\n");
}

#[test]
fn calibrate_reproduces_the_shipped_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = imdsec(dir.path(), &["calibrate", "--out", "costs.toml"]);
    assert_eq!(o.status.code(), Some(0));
    let table = CostTable::load(&dir.path().join("costs.toml")).unwrap();
    assert_eq!(table, CostTable::default());
    let o = imdsec(dir.path(), &["--cost-table", "costs.toml", "energy-report", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
}
