use imdsec::entities::{ProtocolEvent, Task};
use imdsec::netsim::{build, Adversary, Ids, WorldConfig};
use imdsec::types::{Command, CommandKind, Privilege, SessionMode};
use imdsec::wire::Channel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TAGS: [u8; 6] = [0x42, 0x44, 0x45, 0x46, 0x47, 0x62];

#[derive(Debug, Default)]
pub struct WalkReport {
    pub steps: u64,
    pub offline_sessions: u64,
    pub bedside_commands: u64,
    pub violations: Vec<String>,
}

/// Interleaves random online, offline and bedside sessions under a random
/// attacker and checks the mode-gating rules after every single event.
pub fn mode_gating_walk(seed: u64, events: u64, nr_required: bool) -> WalkReport {
    let mut cfg = WorldConfig { seed, ..WorldConfig::default() };
    cfg.implant.nr_required = nr_required;
    cfg.implant.log_bytes = 600;
    cfg.server.bedside_commands.insert(
        Ids::default().implant,
        vec![Command::read_status(), Command::read_log(), Command::new(CommandKind::WriteTherapy, 3)],
    );
    let mut s = build(&cfg);
    let ids = s.ids;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ u64::from(nr_required));
    let mut report = WalkReport::default();
    let mut seen_events = 0;
    let mut seen_frames = 0;
    let mut oob_delivered = false;
    while report.steps < events {
        if s.world.pending() == 0 {
            let policy = if rng.gen_bool(0.5) { Adversary::random(rng.gen(), &TAGS, 2) } else { Adversary::passive(0) };
            s.world.set_adversary(policy);
            s.world.set_touch(ids.reader, ids.implant, rng.gen_bool(0.5));
            let cmd = match rng.gen_range(0..3) {
                0 => Command::read_status(),
                1 => Command::new(CommandKind::WriteTherapy, rng.gen_range(1..100)),
                _ => Command::new(CommandKind::FirmwareUpdate, 1),
            };
            let prefix =
                [Task::ConnectServer { server: ids.server }, Task::AuthenticateCard, Task::VerifyUser { pin: s.pin }];
            let (driver, mut tasks) = match rng.gen_range(0..4) {
                0 => (ids.reader, [&prefix[..], &[Task::EstablishSession { implant: ids.implant }]].concat()),
                1 => (ids.reader, [&prefix[..], &[Task::OfflinePair { implant: ids.implant, signed: true }]].concat()),
                2 => (ids.reader, vec![Task::OfflinePair { implant: ids.implant, signed: false }]),
                _ => (
                    ids.bedside_reader,
                    vec![Task::ConnectServer { server: ids.server }, Task::BedsideSession { implant: ids.implant }],
                ),
            };
            if driver == ids.reader {
                tasks.push(Task::Command(cmd));
            }
            s.world.push_tasks(driver, tasks);
        }
        if !s.world.step() {
            continue;
        }
        report.steps += 1;
        if s.world.implant(&ids.implant).nr_required() != nr_required {
            report.violations.push(format!("step {}: nr flag changed", report.steps));
        }
        let trace = s.world.trace();
        oob_delivered |= trace[seen_frames..].iter().any(|c| c.channel == Channel::Oob && c.delivered());
        seen_frames = trace.len();
        let log = s.world.events();
        for t in &log[seen_events..] {
            match &t.event {
                ProtocolEvent::SessionEstablished { mode: SessionMode::Offline, .. } => {
                    report.offline_sessions += 1;
                    if !oob_delivered {
                        report.violations.push(format!("step {}: offline session without OOB", report.steps));
                    }
                }
                ProtocolEvent::CommandExecuted { mode: SessionMode::Bedside, cmd, granted, .. } => {
                    report.bedside_commands += 1;
                    if *granted != Privilege::ReadOnly || cmd.required_privilege() != Privilege::ReadOnly {
                        report.violations.push(format!("step {}: bedside ran {cmd:?} under {granted:?}", report.steps));
                    }
                }
                _ => {}
            }
        }
        seen_events = log.len();
    }
    report
}
