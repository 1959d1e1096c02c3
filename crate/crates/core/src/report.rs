//! Tabular energy and audit reports shared by the CLI and tests.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::energy::{
    auth_energy, daily_energy, estimate_lifetime, lifetime_spread, protocol_delay, session_energy, CostTable,
    EnergyError, SecurityClass, SessionSpec, UsageProfile,
};
use crate::entities::flash::{parse_dump, SignatureRecord, RECORD_LEN};
use crate::types::{Certificate, PublicKeyBytes, PUBKEY_LEN};

/// Battery sizes in J: 0.5 to 2.5 Ah lithium cells at 2.8 V.
pub const BATTERY_CAPACITIES_J: [f64; 5] = [5_040.0, 10_080.0, 15_120.0, 20_160.0, 25_200.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: SecurityClass,
    pub session_uj: f64,
    pub auth_uj: f64,
    pub delay_ms: f64,
    pub daily_j: f64,
    /// Daily increase over the insecure baseline, in percent.
    pub increase_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeRow {
    pub capacity_j: f64,
    pub class: SecurityClass,
    pub days: f64,
    /// Spread across daily to weekly session rates.
    pub min_days: f64,
    pub max_days: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub classes: Vec<ClassRow>,
    pub lifetimes: Vec<LifetimeRow>,
}

pub fn energy_report(
    table: &CostTable,
    profile: &UsageProfile,
    classes: &[SecurityClass],
    capacities_j: &[f64],
) -> Result<EnergyReport, EnergyError> {
    let base = daily_energy(table, SecurityClass::None, profile)?;
    let mut rows = Vec::new();
    for &class in classes {
        let daily_j = daily_energy(table, class, profile)?;
        rows.push(ClassRow {
            class,
            session_uj: session_energy(table, class, &SessionSpec::basic(class))?,
            auth_uj: if class.is_secure() { auth_energy(table, class) } else { 0.0 },
            delay_ms: protocol_delay(table, class)?,
            daily_j,
            increase_pct: (daily_j / base - 1.0) * 100.0,
        });
    }
    let mut lifetimes = Vec::new();
    for &capacity_j in capacities_j {
        let p = UsageProfile { battery_capacity_j: capacity_j, ..profile.clone() };
        for &class in classes {
            let spread = lifetime_spread(table, &p, class)?;
            lifetimes.push(LifetimeRow {
                capacity_j,
                class,
                days: estimate_lifetime(table, &p, class)?,
                min_days: spread.min_days,
                max_days: spread.max_days,
            });
        }
    }
    Ok(EnergyReport { classes: rows, lifetimes })
}

impl EnergyReport {
    pub fn row(&self, class: SecurityClass) -> Option<&ClassRow> {
        self.classes.iter().find(|r| r.class == class)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>12} {:>10} {:>10} {:>10} {:>9}",
            "class", "session_uJ", "auth_uJ", "delay_ms", "daily_J", "increase"
        );
        for r in &self.classes {
            let _ = writeln!(
                out,
                "{:<10} {:>12.2} {:>10.2} {:>10.2} {:>10.2} {:>8.2}%",
                r.class.name(),
                r.session_uj,
                r.auth_uj,
                r.delay_ms,
                r.daily_j,
                r.increase_pct
            );
        }
        out.push('\n');
        let _ = writeln!(out, "{:>10} {:<10} {:>10} {:>10} {:>10}", "battery_J", "class", "days", "min", "max");
        for l in &self.lifetimes {
            let _ = writeln!(
                out,
                "{:>10.0} {:<10} {:>10.1} {:>10.1} {:>10.1}",
                l.capacity_j,
                l.class.name(),
                l.days,
                l.min_days,
                l.max_days
            );
        }
        out
    }

    /// Two CSV tables separated by a blank line: classes, then lifetimes.
    pub fn to_csv(&self) -> String {
        let mut out = write_csv(&self.classes);
        out.push('\n');
        out.push_str(&write_csv(&self.lifetimes));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let (classes, lifetimes) = text.split_once("\n\n").unwrap_or((text, ""));
        Ok(EnergyReport { classes: read_csv(classes)?, lifetimes: read_csv(lifetimes)? })
    }
}

fn write_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("report rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AuditEntry {
    Record {
        index: usize,
        record: SignatureRecord,
        valid: bool,
    },
    /// Trailing bytes that do not form a whole record.
    Malformed {
        index: usize,
        bytes: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("expected a {cert}-byte certificate or a {PUBKEY_LEN}-byte public key, raw or hex, got {0} bytes", cert = Certificate::ENCODED_LEN)]
pub struct CardKeyError(pub usize);

/// Reads the card public key out of a certificate or bare key file.
pub fn parse_card_key(raw: &[u8]) -> Result<PublicKeyBytes, CardKeyError> {
    let text = std::str::from_utf8(raw).ok().map(str::trim);
    let bytes = match text.and_then(|t| hex::decode(t).ok()) {
        Some(b) => b,
        None => raw.to_vec(),
    };
    if bytes.len() == Certificate::ENCODED_LEN {
        return Certificate::from_bytes(&bytes).map(|c| c.public_key).map_err(|_| CardKeyError(bytes.len()));
    }
    let key: [u8; PUBKEY_LEN] = bytes.as_slice().try_into().map_err(|_| CardKeyError(bytes.len()))?;
    Ok(PublicKeyBytes(key))
}

/// Verifies every record of a flash dump against the card public key.
pub fn audit_flash(dump: &[u8], card_pk: &PublicKeyBytes) -> AuditReport {
    let mut entries = Vec::new();
    for (index, rec) in parse_dump(dump).into_iter().enumerate() {
        entries.push(match rec {
            Ok(record) => AuditEntry::Record { index, valid: record.verify(card_pk), record },
            Err(_) => AuditEntry::Malformed { index, bytes: dump.len() - index * RECORD_LEN },
        });
    }
    AuditReport { entries }
}

impl AuditReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| !matches!(e, AuditEntry::Record { valid: true, .. })).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = match e {
                AuditEntry::Record { index, record, valid } => writeln!(
                    out,
                    "{index:>4} {} card={} n_c={:08x} n_r={:08x} cmd={:?}:{}",
                    if *valid { "ok  " } else { "FAIL" },
                    record.card_id.short(),
                    record.card_nonce.0,
                    record.reader_nonce.0,
                    record.cmd.kind,
                    record.cmd.arg
                ),
                AuditEntry::Malformed { index, bytes } => writeln!(out, "{index:>4} FAIL malformed ({bytes} bytes)"),
            };
        }
        let _ = writeln!(out, "{} records, {} failed", self.entries.len(), self.failures());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "valid", "card_id", "card_nonce", "reader_nonce", "cmd", "arg"]).expect("header");
        for e in &self.entries {
            let row = match e {
                AuditEntry::Record { index, record, valid } => vec![
                    index.to_string(),
                    valid.to_string(),
                    hex::encode(record.card_id.as_bytes()),
                    record.card_nonce.0.to_string(),
                    record.reader_nonce.0.to_string(),
                    format!("{:?}", record.cmd.kind),
                    record.cmd.arg.to_string(),
                ],
                AuditEntry::Malformed { index, .. } => {
                    vec![
                        index.to_string(),
                        "false".into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "malformed".into(),
                        String::new(),
                    ]
                }
            };
            w.write_record(&row).expect("row");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }
}
