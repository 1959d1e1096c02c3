//! Randomised attacker runs checked against the protocol's security goals.

use std::collections::HashMap;
use std::fmt;

use super::adversary::Adversary;
use super::knowledge::Atom;
use super::setup::{build, Setup, WorldConfig};
use crate::entities::{Agreement, ProtocolEvent, ReaderKind, Task};
use crate::types::{Command, KeyRole, SessionMode};

/// Protocol phase whose messages the random attacker targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    ServerLink,
    CardToken,
    SessionKey,
    Command,
    Offline,
    Bedside,
    Remote,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::ServerLink,
        Phase::CardToken,
        Phase::SessionKey,
        Phase::Command,
        Phase::Offline,
        Phase::Bedside,
        Phase::Remote,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::ServerLink => "server-link",
            Phase::CardToken => "card-token",
            Phase::SessionKey => "session-key",
            Phase::Command => "command",
            Phase::Offline => "offline",
            Phase::Bedside => "bedside",
            Phase::Remote => "remote",
        }
    }

    pub fn tags(self) -> &'static [u8] {
        match self {
            Phase::ServerLink => &[0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x10],
            Phase::CardToken => &[0x07, 0x08, 0x10],
            Phase::SessionKey => &[0x09, 0x0B, 0x10, 0x40, 0x41, 0x42, 0x43],
            Phase::Command => &[0x44, 0x47, 0x48],
            Phase::Offline => &[0x44, 0x47, 0x48, 0x62, 0x63],
            Phase::Bedside => &[0x0A, 0x0B, 0x0C, 0x0D, 0x0E, 0x0F, 0x40, 0x41, 0x42, 0x43, 0x45, 0x47, 0x48],
            Phase::Remote => &[0x09, 0x0B, 0x10, 0x80, 0x81, 0x82, 0x42],
        }
    }

    fn mode(self) -> SessionMode {
        match self {
            Phase::Offline => SessionMode::Offline,
            Phase::Bedside => SessionMode::Bedside,
            Phase::Remote => SessionMode::Remote,
            _ => SessionMode::Online,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub phase: Phase,
    pub seed: u64,
    pub property: &'static str,
    pub detail: String,
}

/// What one attacked trace achieved, for coverage reporting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraceStats {
    pub sessions: u64,
    pub commands: u64,
    pub frames_offered: u64,
    pub replayed_frames: u64,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub traces: u64,
    pub totals: TraceStats,
    pub violations: Vec<Violation>,
}

const RULES_PER_POLICY: usize = 4;
const NAIVE_CHECK_LIMIT: usize = 80;

fn world_config(phase: Phase, seed: u64) -> WorldConfig {
    let mut cfg = WorldConfig { seed, reader_kind: ReaderKind::Valid, ..WorldConfig::default() };
    cfg.implant.log_bytes = 600;
    cfg.remote_implant = phase == Phase::Remote;
    if phase == Phase::ServerLink {
        cfg.server.force_puzzle = true;
        cfg.server.puzzle_k = 4;
    }
    cfg.server
        .bedside_commands
        .insert(crate::netsim::setup::Ids::default().implant, vec![Command::read_status(), Command::read_log()]);
    cfg
}

fn tasks(phase: Phase, setup: &Setup) -> Vec<Task> {
    let ids = setup.ids;
    let mut out =
        vec![Task::ConnectServer { server: ids.server }, Task::AuthenticateCard, Task::VerifyUser { pin: setup.pin }];
    match phase.mode() {
        SessionMode::Bedside => {
            return vec![Task::ConnectServer { server: ids.server }, Task::BedsideSession { implant: ids.implant }];
        }
        SessionMode::Offline => out.push(Task::OfflinePair { implant: ids.implant, signed: true }),
        _ => out.push(Task::EstablishSession { implant: ids.implant }),
    }
    out.push(Task::Command(super::scenario::TARGET));
    out.push(Task::Command(Command::read_log()));
    out.push(Task::Command(Command::finish()));
    out
}

fn is_success(e: &ProtocolEvent) -> bool {
    matches!(
        e,
        ProtocolEvent::SessionEstablished { .. }
            | ProtocolEvent::CommandExecuted { .. }
            | ProtocolEvent::TokenIssued { .. }
            | ProtocolEvent::KeyGranted { .. }
            | ProtocolEvent::SignatureStored { .. }
            | ProtocolEvent::BedsideCollected { .. }
            | ProtocolEvent::SecretMinted { .. }
            | ProtocolEvent::Request(_)
    )
}

/// Runs one attacked trace and checks every property on it.
pub fn check_trace(phase: Phase, seed: u64) -> (TraceStats, Vec<Violation>) {
    let mut setup = build(&world_config(phase, seed));
    let ids = setup.ids;
    let driver = if phase == Phase::Bedside { ids.bedside_reader } else { ids.reader };
    if phase == Phase::Offline {
        setup.world.set_touch(ids.reader, ids.implant, true);
    }
    setup.world.set_adversary(Adversary::random(seed, phase.tags(), RULES_PER_POLICY));
    let work = tasks(phase, &setup);
    setup.world.push_tasks(driver, work);
    setup.world.run_until_quiescent();

    let mut violations = Vec::new();
    let mut flag =
        |property: &'static str, detail: String| violations.push(Violation { phase, seed, property, detail });
    let events: Vec<ProtocolEvent> = setup.world.protocol_events().cloned().collect();

    // (a) secrecy
    let adv = setup.world.adversary().expect("adversary installed");
    let knowledge = adv.knowledge();
    for e in &events {
        for role in [KeyRole::ReaderCard, KeyRole::ReaderImplant] {
            if let Some(k) = e.secret_key(role) {
                if knowledge.knows_key(k) {
                    flag("secrecy", format!("{role:?} key {}", hex::encode(k.fingerprint())));
                }
            }
        }
        if let ProtocolEvent::CommandExecuted { cmd, ans, .. } = e {
            if cmd.encode().is_ok_and(|c| knowledge.knows(&Atom::Cmd(c))) {
                flag("secrecy", format!("command {cmd:?}"));
            }
            if knowledge.knows(&Atom::Ans(*ans)) {
                flag("secrecy", format!("answer to {cmd:?}"));
            }
        }
    }
    if knowledge.knows(&Atom::Pin(setup.pin)) {
        flag("secrecy", "PIN".into());
    }
    if adv.seen().len() <= NAIVE_CHECK_LIMIT && knowledge.atoms() != &knowledge.naive_closure() {
        flag("closure", "incremental closure differs from naive recomputation".into());
    }

    // (b) agreement: each Request consumes a distinct matching Witness.
    let mut witnesses: HashMap<Agreement, u32> = HashMap::new();
    for e in &events {
        if let ProtocolEvent::Witness(w) = e {
            *witnesses.entry(w.clone()).or_default() += 1;
        }
    }
    for e in &events {
        if let ProtocolEvent::Request(r) = e {
            let mirror = Agreement { by: r.peer, peer: r.by, ..r.clone() };
            match witnesses.get_mut(&mirror) {
                Some(n) if *n > 0 => *n -= 1,
                _ => flag("agreement", format!("{} by {} has no matching witness", r.label, r.by.short())),
            }
        }
    }

    // (d) privilege and (e) attribution
    for e in &events {
        match e {
            ProtocolEvent::CommandExecuted { cmd, granted, .. } if cmd.required_privilege() > *granted => {
                flag("privilege", format!("{cmd:?} executed under {granted:?}"));
            }
            ProtocolEvent::SignatureStored { record, .. } if !record.verify(&setup.card_public) => {
                flag("attribution", format!("stored record for {:?} does not verify", record.cmd));
            }
            _ => {}
        }
    }

    let stats = TraceStats {
        sessions: events.iter().filter(|e| matches!(e, ProtocolEvent::SessionEstablished { .. })).count() as u64,
        commands: events.iter().filter(|e| matches!(e, ProtocolEvent::CommandExecuted { .. })).count() as u64,
        frames_offered: adv.offered(),
        replayed_frames: 0,
    };

    // (c) replay of the whole delivered trace, with the attacker removed.
    setup.world.take_adversary();
    let before = setup.world.events().len();
    let recorded: Vec<_> = setup.world.trace().iter().filter(|c| c.delivered()).cloned().collect();
    for c in &recorded {
        setup.world.replay_raw(c);
    }
    setup.world.run_until_quiescent();
    for t in &setup.world.events()[before..] {
        if is_success(&t.event) {
            flag("replay", format!("replayed trace produced {:?}", t.event));
        }
    }
    let stats = TraceStats { replayed_frames: recorded.len() as u64, ..stats };
    (stats, violations)
}

/// Runs `traces` attacked traces for one phase, seeds `base..base + traces`.
pub fn run_suite(phase: Phase, traces: u64, base_seed: u64) -> SuiteReport {
    use rayon::prelude::*;
    let results: Vec<(TraceStats, Vec<Violation>)> =
        (base_seed..base_seed + traces).into_par_iter().map(|seed| check_trace(phase, seed)).collect();
    let mut report = SuiteReport { traces, ..SuiteReport::default() };
    for (s, v) in results {
        report.totals.sessions += s.sessions;
        report.totals.commands += s.commands;
        report.totals.frames_offered += s.frames_offered;
        report.totals.replayed_frames += s.replayed_frames;
        report.violations.extend(v);
    }
    report
}
