//! User/reader/mode combinations and their judged outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::setup::{build, Setup, WorldConfig};
use super::world::RunStats;
use crate::entities::{Hack, ProtocolEvent, ReaderKind, Reason, Task};
use crate::types::{Command, CommandKind, NetworkZone, Privilege, SessionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserKind {
    Honest,
    /// Credential holder who wants an action executed without being blamed.
    Malicious,
    /// Holds no credentials of their own.
    Attacker,
}

impl UserKind {
    pub fn name(self) -> &'static str {
        match self {
            UserKind::Honest => "honest",
            UserKind::Malicious => "malicious",
            UserKind::Attacker => "attacker",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The command ran and a verifying signature ties it to the user's card,
    /// or an honest user's card signed something other than what ran.
    DetectableInAudit,
    Rejected(Reason),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Success => f.write_str("success"),
            Outcome::DetectableInAudit => f.write_str("detectable-in-audit"),
            Outcome::Rejected(r) => write!(f, "rejected({r})"),
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success" => Ok(Outcome::Success),
            "detectable-in-audit" => Ok(Outcome::DetectableInAudit),
            _ => {
                let inner = s
                    .strip_prefix("rejected(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("rejected:"))
                    .ok_or_else(|| format!("unknown outcome `{s}`"))?;
                Reason::ALL
                    .into_iter()
                    .find(|r| r.name() == inner)
                    .map(Outcome::Rejected)
                    .ok_or_else(|| format!("unknown reason `{inner}`"))
            }
        }
    }
}

/// The six conditions an outside attacker needs at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preconditions {
    pub valid_reader: bool,
    pub valid_card: bool,
    pub correct_pin: bool,
    pub in_zone: bool,
    pub in_hours: bool,
    pub not_revoked: bool,
}

impl Preconditions {
    pub const ALL_TRUE: Preconditions = Preconditions {
        valid_reader: true,
        valid_card: true,
        correct_pin: true,
        in_zone: true,
        in_hours: true,
        not_revoked: true,
    };

    pub fn all(&self) -> bool {
        *self == Self::ALL_TRUE
    }

    /// The six single-condition failures, each with the refusal it must cause.
    pub fn single_failures() -> Vec<(Preconditions, Reason)> {
        let base = Self::ALL_TRUE;
        vec![
            (Preconditions { valid_reader: false, ..base }, Reason::CertInvalid),
            (Preconditions { valid_card: false, ..base }, Reason::CertInvalid),
            (Preconditions { correct_pin: false, ..base }, Reason::PinMismatch),
            (Preconditions { in_zone: false, ..base }, Reason::PrivilegeViolation),
            (Preconditions { in_hours: false, ..base }, Reason::PrivilegeViolation),
            (Preconditions { not_revoked: false, ..base }, Reason::CardRevoked),
        ]
    }
}

impl Default for Preconditions {
    fn default() -> Self {
        Self::ALL_TRUE
    }
}

/// The write command every scenario is trying to get executed.
pub const TARGET: Command = Command { kind: CommandKind::WriteTherapy, arg: 42 };
/// What a hacked reader substitutes for the target.
pub const HARMFUL: Command = Command { kind: CommandKind::WriteTherapy, arg: 666 };

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub user: UserKind,
    pub reader: ReaderKind,
    pub mode: SessionMode,
    /// Skin contact between reader and implant.
    pub touch: bool,
    /// Offline flavour that involves the card and its signature.
    pub signed_offline: bool,
    pub implant_nr_required: bool,
    pub pre: Preconditions,
    pub expected: Option<Outcome>,
}

impl Scenario {
    fn cell(name: &str, user: UserKind, reader: ReaderKind, mode: SessionMode, expected: Outcome) -> Self {
        Scenario {
            name: name.to_string(),
            user,
            reader,
            mode,
            touch: mode == SessionMode::Offline,
            signed_offline: true,
            implant_nr_required: true,
            pre: Preconditions::ALL_TRUE,
            expected: Some(expected),
        }
    }

    pub fn s6(pre: Preconditions) -> Self {
        let expected = match Preconditions::single_failures().into_iter().find(|(p, _)| *p == pre) {
            Some((_, reason)) => Outcome::Rejected(reason),
            None if pre.all() => Outcome::Success,
            None => Outcome::Rejected(Reason::CertInvalid),
        };
        let reader = if pre.valid_reader { ReaderKind::Valid } else { ReaderKind::Forged };
        let mut s = Scenario::cell("S6", UserKind::Attacker, reader, SessionMode::Online, expected);
        s.pre = pre;
        if !pre.all() && Preconditions::single_failures().iter().all(|(p, _)| *p != pre) {
            s.expected = None;
        }
        s
    }

    pub fn label(&self) -> String {
        let reader = match self.reader {
            ReaderKind::Valid => "valid",
            ReaderKind::Stolen => "stolen",
            ReaderKind::Hacked(Hack::ReplaceCommand(_)) => "hacked-cmd",
            ReaderKind::Hacked(Hack::ReplaceSignature { .. }) => "hacked-sig",
            ReaderKind::Forged => "forged",
        };
        let mode = match self.mode {
            SessionMode::Online => "online",
            SessionMode::Offline if self.touch => "offline+touch",
            SessionMode::Offline => "offline",
            SessionMode::Bedside => "bedside",
            SessionMode::Remote => "remote",
        };
        format!("{} {} {} {}", self.name, self.user.name(), reader, mode)
    }

    /// World the scenario runs in, before any caller overrides.
    pub fn world_config(&self, seed: u64) -> WorldConfig {
        let mut cfg = WorldConfig { seed, reader_kind: self.reader, ..WorldConfig::default() };
        cfg.implant.nr_required = self.implant_nr_required;
        cfg.remote_implant = self.mode == SessionMode::Remote;
        // Attackers present cards nobody issued unless S6 says otherwise.
        cfg.card_issued = self.user != UserKind::Attacker || self.name == "S6";
        cfg.card_issued &= self.pre.valid_card;
        cfg.card_revoked = !self.pre.not_revoked;
        if !self.pre.in_zone {
            cfg.reader_zone = NetworkZone::External;
        }
        if !self.pre.in_hours {
            cfg.server.start_hour = 22;
        }
        cfg
    }

    fn tasks(&self, setup: &Setup) -> Vec<Task> {
        let ids = setup.ids;
        let pin = if self.pre.correct_pin { setup.pin } else { setup.pin.wrapping_add(1) };
        let online_prefix =
            vec![Task::ConnectServer { server: ids.server }, Task::AuthenticateCard, Task::VerifyUser { pin }];
        let mut out = Vec::new();
        match self.mode {
            SessionMode::Online | SessionMode::Remote => {
                out.extend(online_prefix);
                out.push(Task::EstablishSession { implant: ids.implant });
            }
            SessionMode::Offline => {
                let with_card = self.signed_offline && self.reader != ReaderKind::Forged;
                if with_card && self.user != UserKind::Attacker {
                    out.extend(online_prefix);
                }
                out.push(Task::OfflinePair { implant: ids.implant, signed: self.signed_offline });
            }
            SessionMode::Bedside => {
                out.push(Task::ConnectServer { server: ids.server });
                out.push(Task::BedsideSession { implant: ids.implant });
                return out;
            }
        }
        out.push(Task::Command(TARGET));
        out.push(Task::Command(Command::finish()));
        out
    }

    /// Builds and runs the scenario world for one seed.
    pub fn execute(&self, seed: u64) -> ScenarioRun {
        self.execute_with(&self.world_config(seed))
    }

    /// Runs the scenario in a caller-supplied world configuration.
    pub fn execute_with(&self, cfg: &WorldConfig) -> ScenarioRun {
        let mut setup = build(cfg);
        let ids = setup.ids;
        let driver = if self.mode == SessionMode::Bedside { ids.bedside_reader } else { ids.reader };
        if self.touch {
            setup.world.set_touch(driver, ids.implant, true);
        }
        let tasks = self.tasks(&setup);
        setup.world.push_tasks(driver, tasks);
        let stats = setup.world.run_until_quiescent();
        let outcome = classify(&setup, self.user, self.mode);
        ScenarioRun { setup, stats, outcome }
    }

    pub fn run(&self, seed: u64) -> Verdict {
        self.judge(&self.execute(seed))
    }

    pub fn judge(&self, run: &ScenarioRun) -> Verdict {
        match self.expected {
            Some(e) if e == run.outcome => Verdict::AsExpected(run.outcome),
            Some(e) => Verdict::Deviation { expected: e, actual: run.outcome, trace: run.setup.world.trace_text() },
            None => Verdict::Reported(run.outcome),
        }
    }

    /// Parses a custom scenario description. See `docs/formats.md`.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let f: ScenarioFile = toml::from_str(text)?;
        let reader = reader_kind(&f.reader).ok_or_else(|| ScenarioError::Reader(f.reader.clone()))?;
        let expected = f.expected.as_deref().map(str::parse).transpose().map_err(ScenarioError::Outcome)?;
        Ok(Scenario {
            name: f.name,
            user: f.user,
            reader,
            mode: f.mode,
            touch: f.touch.unwrap_or(f.mode == SessionMode::Offline),
            signed_offline: f.signed_offline,
            implant_nr_required: f.nr_required,
            pre: f.preconditions,
            expected,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("unknown reader kind `{0}` (valid, stolen, forged, hacked-cmd, hacked-sig)")]
    Reader(String),
    #[error("{0}")]
    Outcome(String),
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    user: UserKind,
    reader: String,
    mode: SessionMode,
    touch: Option<bool>,
    #[serde(default = "default_true")]
    signed_offline: bool,
    #[serde(default = "default_true")]
    nr_required: bool,
    #[serde(default)]
    preconditions: Preconditions,
    expected: Option<String>,
}

/// Reader kinds by the names used in scenario labels.
pub fn reader_kind(name: &str) -> Option<ReaderKind> {
    Some(match name {
        "valid" => ReaderKind::Valid,
        "stolen" => ReaderKind::Stolen,
        "forged" => ReaderKind::Forged,
        "hacked-cmd" => ReaderKind::Hacked(Hack::ReplaceCommand(HARMFUL)),
        "hacked-sig" => ReaderKind::Hacked(Hack::ReplaceSignature { decoy: Command::read_status() }),
        _ => return None,
    })
}

pub struct ScenarioRun {
    pub setup: Setup,
    pub stats: RunStats,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    AsExpected(Outcome),
    Deviation {
        expected: Outcome,
        actual: Outcome,
        trace: String,
    },
    /// No expectation was attached; the outcome is only reported.
    Reported(Outcome),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        !matches!(self, Verdict::Deviation { .. })
    }

    pub fn outcome(&self) -> Outcome {
        match self {
            Verdict::AsExpected(o) | Verdict::Reported(o) => *o,
            Verdict::Deviation { actual, .. } => *actual,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::AsExpected(o) => write!(f, "as-expected {o}"),
            Verdict::Deviation { expected, actual, .. } => write!(f, "deviation expected={expected} actual={actual}"),
            Verdict::Reported(o) => write!(f, "reported {o}"),
        }
    }
}

/// Judges a finished world from the user's point of view.
pub fn classify(setup: &Setup, user: UserKind, mode: SessionMode) -> Outcome {
    let world = &setup.world;
    if mode == SessionMode::Bedside {
        if world.protocol_events().any(|e| matches!(e, ProtocolEvent::BedsideCollected { .. })) {
            return Outcome::Success;
        }
        return Outcome::Rejected(first_refusal(setup));
    }
    let executed: Vec<Command> = world
        .protocol_events()
        .filter_map(|e| match e {
            ProtocolEvent::CommandExecuted { cmd, .. } if cmd.required_privilege() > Privilege::ReadOnly => Some(*cmd),
            _ => None,
        })
        .collect();
    if executed.is_empty() {
        return Outcome::Rejected(first_refusal(setup));
    }
    let flash = world.implant(&setup.ids.implant).flash();
    let attributed = |cmd: &Command| flash.records().any(|(_, r)| r.cmd == *cmd && r.verify(&setup.card_public));
    match user {
        UserKind::Attacker => Outcome::Success,
        UserKind::Honest if executed.iter().all(attributed) => Outcome::Success,
        UserKind::Honest => Outcome::DetectableInAudit,
        UserKind::Malicious if executed.iter().any(attributed) => Outcome::DetectableInAudit,
        UserKind::Malicious => Outcome::Success,
    }
}

fn first_refusal(setup: &Setup) -> Reason {
    setup
        .world
        .protocol_events()
        .find_map(|e| match e {
            ProtocolEvent::PhaseAborted { reason } => Some(*reason),
            ProtocolEvent::CommandRejected { reason, .. } => Some(*reason),
            _ => None,
        })
        .unwrap_or(Reason::Timeout)
}

/// The attack-scenario matrix: one entry per user, reader and mode cell.
pub fn table_scenarios() -> Vec<Scenario> {
    use Outcome::*;
    use ReaderKind::*;
    use SessionMode::*;
    use UserKind::*;
    let replace_cmd = Hacked(Hack::ReplaceCommand(HARMFUL));
    let replace_sig = Hacked(Hack::ReplaceSignature { decoy: Command::read_status() });
    let mut s7_offline_forged = Scenario::cell("S7", Attacker, Forged, Offline, Rejected(Reason::OobUnavailable));
    s7_offline_forged.touch = false;
    let mut s7_offline_hacked = Scenario::cell("S7", Attacker, replace_cmd, Offline, Rejected(Reason::OobUnavailable));
    s7_offline_hacked.touch = false;
    vec![
        Scenario::cell("S1", Honest, Valid, Online, Success),
        Scenario::cell("S1", Malicious, Valid, Online, DetectableInAudit),
        Scenario::cell("S2", Honest, Stolen, Online, Rejected(Reason::CertRevoked)),
        Scenario::cell("S2", Malicious, Stolen, Online, Rejected(Reason::CertRevoked)),
        Scenario::cell("S2", Attacker, Stolen, Online, Rejected(Reason::CertRevoked)),
        Scenario::cell("S3", Honest, replace_cmd, Online, DetectableInAudit),
        Scenario::cell("S3", Honest, Forged, Online, Rejected(Reason::CertInvalid)),
        Scenario::cell("S4", Malicious, replace_sig, Online, Success),
        Scenario::cell("S5", Malicious, Forged, Online, Rejected(Reason::CertInvalid)),
        Scenario::cell("S5", Malicious, Forged, Offline, Success),
        Scenario::s6(Preconditions::ALL_TRUE),
        Scenario::cell("S7", Attacker, replace_cmd, Online, Rejected(Reason::CertInvalid)),
        Scenario::cell("S7", Attacker, Forged, Online, Rejected(Reason::CertInvalid)),
        s7_offline_forged,
        s7_offline_hacked,
    ]
}

/// Scenario cells whose name matches, case-insensitively.
pub fn scenarios_named(name: &str) -> Vec<Scenario> {
    table_scenarios().into_iter().filter(|s| s.name.eq_ignore_ascii_case(name)).collect()
}
